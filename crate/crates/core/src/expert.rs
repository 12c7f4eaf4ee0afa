//! Rule-based driving controller and the sparse control prior built on it.
//!
//! The controller tracks the route with pure pursuit, follows a speed plan
//! limited by curvature and hazards, and brakes early for red or yellow
//! lights and crossing pedestrians. The sparse prior only evaluates it at
//! anchor points spaced along the route, averaging over simulated sensor
//! noise, and holds the result in between.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::drivesim::{wrap_angle, HazardView, LightPhase, Pose, Route, Scene, VehicleParams, WorldState};
use crate::policy::{ActionGaussian, ACTION_DIM};

/// Tunable constants of the rule controller.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertGains {
    /// Pure-pursuit lookahead per unit speed, seconds.
    pub lookahead_gain: f64,
    pub min_lookahead: f64,
    pub max_lookahead: f64,
    pub cruise_speed: f64,
    /// Lateral acceleration allowed in curves, m/s².
    pub max_lateral_accel: f64,
    /// Distance ahead scanned for curvature when planning speed, meters.
    pub curve_preview: f64,
    /// Throttle per m/s of speed error.
    pub speed_gain: f64,
    /// Deceleration assumed when sizing the braking distance, m/s².
    pub comfort_decel: f64,
    /// Multiplier on the comfortable stopping distance.
    pub braking_margin: f64,
    /// Extra distance kept in front of a stop line or crossing, meters.
    pub standoff: f64,
    /// Hazards closer than this always trigger a stop, meters.
    pub hold_zone: f64,
    /// Speed limit near an obstacle reaching into the lane.
    pub caution_speed: f64,
    pub caution_range: f64,
    /// Bumper gap below which the car stops behind the lead, meters.
    pub min_gap: f64,
    /// Time gap kept to the lead car, seconds.
    pub headway: f64,
    /// Overspeed relative to the lead-following target that triggers braking.
    pub brake_overspeed: f64,
    /// Raw throttle commanded while stopping.
    pub stop_throttle: f64,
    /// Smallest raw throttle used when slowing without the brake.
    pub coast_throttle: f64,
    /// A yellow light closer than this multiple of the hard-braking distance
    /// is crossed instead of stopped for.
    pub commit_factor: f64,
}

impl Default for ExpertGains {
    fn default() -> Self {
        ExpertGains {
            lookahead_gain: 0.6,
            min_lookahead: 4.8,
            max_lookahead: 12.0,
            cruise_speed: 8.0,
            max_lateral_accel: 2.0,
            curve_preview: 30.0,
            speed_gain: 0.3,
            comfort_decel: 3.0,
            braking_margin: 1.5,
            standoff: 4.0,
            hold_zone: 20.0,
            caution_speed: 4.0,
            caution_range: 30.0,
            min_gap: 6.0,
            headway: 1.5,
            brake_overspeed: 2.0,
            stop_throttle: -1.0,
            coast_throttle: 0.01,
            commit_factor: 1.2,
        }
    }
}

impl ExpertGains {
    pub(crate) fn validate(&self, errors: &mut Vec<String>) {
        for (name, v) in [
            ("expert.gains.lookahead_gain", self.lookahead_gain),
            ("expert.gains.min_lookahead", self.min_lookahead),
            ("expert.gains.cruise_speed", self.cruise_speed),
            ("expert.gains.max_lateral_accel", self.max_lateral_accel),
            ("expert.gains.speed_gain", self.speed_gain),
            ("expert.gains.comfort_decel", self.comfort_decel),
            ("expert.gains.braking_margin", self.braking_margin),
            ("expert.gains.headway", self.headway),
        ] {
            if !(v.is_finite() && v > 0.0) {
                errors.push(format!("{name} must be positive (got {v})"));
            }
        }
        if !(self.max_lookahead >= self.min_lookahead) {
            errors.push("expert.gains.max_lookahead must be >= min_lookahead".into());
        }
        for (name, v) in [
            ("expert.gains.curve_preview", self.curve_preview),
            ("expert.gains.standoff", self.standoff),
            ("expert.gains.hold_zone", self.hold_zone),
            ("expert.gains.caution_speed", self.caution_speed),
            ("expert.gains.caution_range", self.caution_range),
            ("expert.gains.min_gap", self.min_gap),
            ("expert.gains.brake_overspeed", self.brake_overspeed),
            ("expert.gains.commit_factor", self.commit_factor),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                errors.push(format!("{name} must be >= 0 (got {v})"));
            }
        }
        if !(self.stop_throttle < crate::policy::BRAKE_THRESHOLD) {
            errors.push("expert.gains.stop_throttle must be below the brake threshold".into());
        }
        if !(self.coast_throttle >= crate::policy::BRAKE_THRESHOLD) {
            errors.push("expert.gains.coast_throttle must be at or above the brake threshold".into());
        }
    }
}

/// Standard deviations of the simulated pose measurement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorNoise {
    /// Applied independently to x and y, meters.
    pub position: f64,
    /// Radians.
    pub heading: f64,
    pub speed: f64,
}

impl Default for SensorNoise {
    fn default() -> Self {
        SensorNoise {
            position: 0.2,
            heading: 1f64.to_radians(),
            speed: 0.2,
        }
    }
}

impl SensorNoise {
    pub const NONE: SensorNoise = SensorNoise {
        position: 0.0,
        heading: 0.0,
        speed: 0.0,
    };

    pub fn is_zero(&self) -> bool {
        self.position == 0.0 && self.heading == 0.0 && self.speed == 0.0
    }
}

/// Parameters of the sparse control prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorParams {
    /// Standard deviation of the prior in both action dimensions.
    pub sigma_psi: f64,
    pub mc_samples: usize,
    pub sensor_noise: SensorNoise,
    /// Distance between anchors, meters.
    pub anchor_spacing: f64,
    /// A car stopped (below `standstill_speed`) re-queries the controller
    /// after this many seconds without reaching a new anchor.
    pub standstill_requery_s: f64,
    pub standstill_speed: f64,
}

impl Default for PriorParams {
    fn default() -> Self {
        PriorParams {
            sigma_psi: 0.01,
            mc_samples: 32,
            sensor_noise: SensorNoise::default(),
            anchor_spacing: 5.0,
            standstill_requery_s: 0.5,
            standstill_speed: 0.1,
        }
    }
}

impl PriorParams {
    pub(crate) fn validate(&self, errors: &mut Vec<String>) {
        if !(self.sigma_psi.is_finite() && self.sigma_psi > 0.0) {
            errors.push(format!(
                "expert.prior.sigma_psi must be positive (got {})",
                self.sigma_psi
            ));
        }
        if self.mc_samples == 0 {
            errors.push("expert.prior.mc_samples must be at least 1".into());
        }
        if !(self.anchor_spacing.is_finite() && self.anchor_spacing > 0.0) {
            errors.push(format!(
                "expert.prior.anchor_spacing must be positive (got {})",
                self.anchor_spacing
            ));
        }
        let n = &self.sensor_noise;
        for (name, v) in [
            ("expert.prior.sensor_noise.position", n.position),
            ("expert.prior.sensor_noise.heading", n.heading),
            ("expert.prior.sensor_noise.speed", n.speed),
            ("expert.prior.standstill_requery_s", self.standstill_requery_s),
            ("expert.prior.standstill_speed", self.standstill_speed),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                errors.push(format!("{name} must be >= 0 (got {v})"));
            }
        }
    }
}

/// Evenly spaced arc-length positions where the sparse expert is queried.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorTable {
    pub anchor_spacing: f64,
    pub anchors: Vec<f64>,
}

impl AnchorTable {
    pub fn new(anchor_spacing: f64, total_length: f64) -> Self {
        assert!(anchor_spacing > 0.0, "anchor spacing must be positive");
        let n = (total_length / anchor_spacing).floor() as usize;
        AnchorTable {
            anchor_spacing,
            anchors: (0..=n).map(|k| k as f64 * anchor_spacing).collect(),
        }
    }

    /// Index of the anchor within half a spacing of `s`.
    pub fn nearest(&self, s: f64) -> usize {
        ((s / self.anchor_spacing).round().max(0.0) as usize).min(self.anchors.len() - 1)
    }
}

/// Raw (pre-clamp) steering and throttle of the rule controller.
///
/// `s_hint` is the arc length near which `pose` is projected onto the route;
/// `view` holds hazard distances measured from the car's true position.
pub fn rule_controller(
    pose: &Pose,
    view: &HazardView,
    route: &Route,
    s_hint: f64,
    vehicle: &VehicleParams,
    gains: &ExpertGains,
) -> [f64; ACTION_DIM] {
    let proj = route.project_near(pose.position(), s_hint, 5.0, 25.0);
    let s = proj.arc_length;
    let v = pose.speed;

    // pure pursuit on the centerline
    let ld = (gains.lookahead_gain * v).clamp(gains.min_lookahead, gains.max_lookahead);
    let (target, _) = route.point_at(s + ld);
    let (dx, dy) = (target[0] - pose.x, target[1] - pose.y);
    let dist = dx.hypot(dy).max(1e-6);
    let alpha = wrap_angle(dy.atan2(dx) - pose.heading);
    let delta = (2.0 * vehicle.wheelbase * alpha.sin() / dist).atan();
    let steer = delta / vehicle.max_steer_angle;

    // speed plan
    let kappa = route.max_abs_curvature(s, s + gains.curve_preview);
    let mut v_target = gains.cruise_speed;
    if kappa > 1e-9 {
        v_target = v_target.min((gains.max_lateral_accel / kappa).sqrt());
    }
    if view.obstacle.is_some_and(|d| d < gains.caution_range) {
        v_target = v_target.min(gains.caution_speed);
    }
    let mut brake = false;
    if let Some((gap, _)) = view.lead {
        let follow = ((gap - gains.min_gap) / gains.headway).max(0.0);
        v_target = v_target.min(follow);
        if gap < gains.min_gap || v - follow > gains.brake_overspeed {
            brake = true;
        }
    }

    let stop_zone = (gains.braking_margin * v * v / (2.0 * gains.comfort_decel) + gains.standoff).max(gains.hold_zone);
    let commit = gains.commit_factor * v * v / (2.0 * vehicle.max_brake);
    if let Some((d, phase)) = view.light {
        let must_stop = match phase {
            LightPhase::Red => true,
            LightPhase::Yellow => d >= commit,
            LightPhase::Green => false,
        };
        if must_stop && d < stop_zone {
            brake = true;
        }
    }
    if view.pedestrian.is_some_and(|d| d < stop_zone) {
        brake = true;
    }

    let throttle = if brake {
        gains.stop_throttle
    } else {
        (vehicle.holding_throttle(v) + gains.speed_gain * (v_target - v)).max(gains.coast_throttle)
    };
    [steer, throttle]
}

/// Mean of the rule controller over perturbed pose measurements.
///
/// Each sample perturbs x, y, heading and speed, re-projects the perturbed
/// position near `s`, and shifts the hazard distances by the change in
/// arc length.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_mean<R: Rng + ?Sized>(
    pose: &Pose,
    s: f64,
    view: &HazardView,
    route: &Route,
    vehicle: &VehicleParams,
    gains: &ExpertGains,
    noise: &SensorNoise,
    samples: usize,
    rng: &mut R,
) -> [f64; ACTION_DIM] {
    if noise.is_zero() {
        return rule_controller(pose, view, route, s, vehicle, gains);
    }
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut sum = [0.0; ACTION_DIM];
    for _ in 0..samples {
        let mut z = [0.0; 4];
        for zi in &mut z {
            *zi = std_normal.sample(rng);
        }
        let noisy = Pose::new(
            pose.x + noise.position * z[0],
            pose.y + noise.position * z[1],
            pose.heading + noise.heading * z[2],
            pose.speed + noise.speed * z[3],
        );
        let s_noisy = route.project_near(noisy.position(), s, 5.0, 25.0).arc_length;
        let a = rule_controller(&noisy, &view.shifted(s_noisy - s), route, s, vehicle, gains);
        sum[0] += a[0];
        sum[1] += a[1];
    }
    sum.map(|x| x / samples as f64)
}

/// Rule controller on the true state at every tick.
pub fn dense_expert_mean(world: &WorldState, scene: &Scene, gains: &ExpertGains) -> [f64; ACTION_DIM] {
    let view = HazardView::compute(world, scene);
    rule_controller(
        &world.pose,
        &view,
        &scene.route,
        world.arc_length,
        &scene.vehicle,
        gains,
    )
}

/// The sparse expert for one episode: anchor cache plus its own noise stream.
#[derive(Clone, Debug)]
pub struct SparseExpert {
    params: PriorParams,
    gains: ExpertGains,
    rng: ChaCha8Rng,
    anchors: Option<AnchorTable>,
    last_anchor: Option<usize>,
    last_query_time: f64,
    held_mean: [f64; ACTION_DIM],
    queries: usize,
}

impl SparseExpert {
    pub fn new(params: PriorParams, gains: ExpertGains, seed: u64) -> Self {
        SparseExpert {
            params,
            gains,
            rng: ChaCha8Rng::seed_from_u64(seed),
            anchors: None,
            last_anchor: None,
            last_query_time: 0.0,
            held_mean: [0.0; ACTION_DIM],
            queries: 0,
        }
    }

    pub fn params(&self) -> &PriorParams {
        &self.params
    }

    pub fn gains(&self) -> &ExpertGains {
        &self.gains
    }

    /// Clears the anchor cache and reseeds the noise stream for a new episode.
    pub fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.anchors = None;
        self.last_anchor = None;
        self.last_query_time = 0.0;
        self.held_mean = [0.0; ACTION_DIM];
        self.queries = 0;
    }

    /// Number of controller evaluations so far this episode.
    pub fn queries(&self) -> usize {
        self.queries
    }

    /// Held prior mean, if any anchor has been evaluated.
    pub fn held_mean(&self) -> Option<[f64; ACTION_DIM]> {
        self.last_anchor.map(|_| self.held_mean)
    }

    /// Prior ψ at the current state: the held anchor command with fixed
    /// variance `sigma_psi²`. Reaching a new anchor (or standing still for
    /// `standstill_requery_s`) refreshes the command.
    pub fn prior_distribution(&mut self, world: &WorldState, scene: &Scene) -> ActionGaussian {
        let anchors = self
            .anchors
            .get_or_insert_with(|| AnchorTable::new(self.params.anchor_spacing, scene.route.total_length));
        let k = anchors.nearest(world.arc_length);
        let new_anchor = self.last_anchor.is_none_or(|last| k > last);
        let standstill = self.last_anchor.is_some()
            && world.pose.speed < self.params.standstill_speed
            && world.time - self.last_query_time >= self.params.standstill_requery_s - 1e-9;
        if new_anchor || standstill {
            let view = HazardView::compute(world, scene);
            self.held_mean = monte_carlo_mean(
                &world.pose,
                world.arc_length,
                &view,
                &scene.route,
                &scene.vehicle,
                &self.gains,
                &self.params.sensor_noise,
                self.params.mc_samples,
                &mut self.rng,
            );
            self.last_anchor = Some(self.last_anchor.map_or(k, |last| last.max(k)));
            self.last_query_time = world.time;
            self.queries += 1;
        }
        ActionGaussian::isotropic(self.held_mean, self.params.sigma_psi).expect("valid prior")
    }
}
