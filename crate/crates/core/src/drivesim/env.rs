use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kinematics::{bicycle_step, wrap_angle, Pose, VehicleParams};
use super::route::{LeadVehicleProfile, LightPhase, Obstacle, PedestrianEvent, Route, RouteRegistry, TrafficLight};
use super::SimError;
use crate::policy::VehicleAction;

pub const OBS_DIM: usize = 12;
pub type Observation = [f64; OBS_DIM];

/// Distance at which hazard features saturate, meters.
pub const HAZARD_RANGE: f64 = 50.0;
/// Curvature of `1 / CURVATURE_SCALE` maps to a feature value of 1.
const CURVATURE_SCALE: f64 = 10.0;
/// Contact is kept while discs are within this distance of touching.
const CONTACT_TOL: f64 = 0.01;
/// Arc-length search window used to track the vehicle along the route.
const TRACK_BACK: f64 = 5.0;
const TRACK_AHEAD: f64 = 25.0;

/// Per-episode scenario switches and seeded jitter magnitudes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub max_steps: usize,
    pub traffic_lights: bool,
    pub obstacles: bool,
    pub pedestrians: bool,
    pub lead_vehicle: bool,
    /// Uniform `[0, x)` seconds added to every light's phase offset.
    pub light_offset_jitter_s: f64,
    /// Pedestrian speed is scaled by a uniform factor in `[1 - x, 1 + x]`.
    pub pedestrian_speed_jitter: f64,
    /// Pedestrians trigger up to this many meters earlier than scripted.
    pub pedestrian_trigger_jitter_m: f64,
    /// Lead-car speed is scaled by a uniform factor in `[1 - x, 1 + x]`.
    pub lead_speed_jitter: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            max_steps: 4000,
            traffic_lights: true,
            obstacles: true,
            pedestrians: true,
            lead_vehicle: true,
            light_offset_jitter_s: 5.0,
            pedestrian_speed_jitter: 0.1,
            pedestrian_trigger_jitter_m: 5.0,
            lead_speed_jitter: 0.1,
        }
    }
}

impl ScenarioConfig {
    /// Scenario with every hazard disabled.
    pub fn empty() -> Self {
        ScenarioConfig {
            traffic_lights: false,
            obstacles: false,
            pedestrians: false,
            lead_vehicle: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let mut errors = Vec::new();
        if self.max_steps == 0 {
            errors.push("scenario.max_steps must be at least 1".to_string());
        }
        for (name, v, upper) in [
            (
                "scenario.light_offset_jitter_s",
                self.light_offset_jitter_s,
                f64::INFINITY,
            ),
            ("scenario.pedestrian_speed_jitter", self.pedestrian_speed_jitter, 0.9),
            (
                "scenario.pedestrian_trigger_jitter_m",
                self.pedestrian_trigger_jitter_m,
                f64::INFINITY,
            ),
            ("scenario.lead_speed_jitter", self.lead_speed_jitter, 0.9),
        ] {
            if !(v.is_finite() && v >= 0.0 && v <= upper) {
                errors.push(format!("{name} must be finite and in [0, {upper}] (got {v})"));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(SimError::InvalidScenario(errors))
        }
    }
}

/// Reward shaping constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub position_threshold: f64,
    pub rotation_threshold_deg: f64,
    pub step_penalty: f64,
    pub completion_bonus: f64,
    /// Lateral deviation that ends the episode, meters.
    pub deviation_limit: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            position_threshold: 0.5,
            rotation_threshold_deg: 10.0,
            step_penalty: 0.01,
            completion_bonus: 20.0,
            deviation_limit: 5.0,
        }
    }
}

/// Vehicle and reward constants shared by every episode.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub vehicle: VehicleParams,
    pub reward: RewardConfig,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let mut errors = Vec::new();
        self.vehicle.validate(&mut errors);
        let r = &self.reward;
        for (name, v) in [
            ("reward.position_threshold", r.position_threshold),
            ("reward.rotation_threshold_deg", r.rotation_threshold_deg),
            ("reward.deviation_limit", r.deviation_limit),
        ] {
            if !(v.is_finite() && v > 0.0) {
                errors.push(format!("{name} must be positive (got {v})"));
            }
        }
        if !(r.step_penalty.is_finite() && r.step_penalty >= 0.0) {
            errors.push("reward.step_penalty must be >= 0".into());
        }
        if !r.completion_bonus.is_finite() {
            errors.push("reward.completion_bonus must be finite".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(SimError::InvalidScenario(errors))
        }
    }
}

/// Route plus the hazard layout realized for one episode.
#[derive(Clone, Debug)]
pub struct Scene {
    pub route: Arc<Route>,
    pub vehicle: VehicleParams,
    pub lights: Vec<TrafficLight>,
    pub light_offsets: Vec<f64>,
    pub obstacles: Vec<Obstacle>,
    pub pedestrians: Vec<PedestrianEvent>,
    pub lead: Option<LeadVehicleProfile>,
}

impl Scene {
    fn realize(route: Arc<Route>, vehicle: VehicleParams, scenario: &ScenarioConfig, seed: u64) -> Scene {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lights: Vec<TrafficLight> = if scenario.traffic_lights {
            route.traffic_lights.clone()
        } else {
            Vec::new()
        };
        let light_offsets = lights
            .iter()
            .map(|_| rng.random::<f64>() * scenario.light_offset_jitter_s)
            .collect();
        let obstacles = if scenario.obstacles {
            route.obstacles.clone()
        } else {
            Vec::new()
        };
        let pedestrians = if scenario.pedestrians {
            route
                .pedestrians
                .iter()
                .map(|p| {
                    let speed_f = 1.0 + scenario.pedestrian_speed_jitter * (2.0 * rng.random::<f64>() - 1.0);
                    let early = scenario.pedestrian_trigger_jitter_m * rng.random::<f64>();
                    PedestrianEvent {
                        trigger_s: (p.trigger_s - early).max(0.0),
                        speed: p.speed * speed_f,
                        ..p.clone()
                    }
                })
                .collect()
        } else {
            Vec::new()
        };
        let lead = match (&route.lead_vehicle, scenario.lead_vehicle) {
            (Some(l), true) => {
                let f = 1.0 + scenario.lead_speed_jitter * (2.0 * rng.random::<f64>() - 1.0);
                Some(LeadVehicleProfile {
                    speed: l.speed * f,
                    ..l.clone()
                })
            }
            _ => None,
        };
        Scene {
            route,
            vehicle,
            lights,
            light_offsets,
            obstacles,
            pedestrians,
            lead,
        }
    }

    /// Scene with no hazards at all.
    pub fn bare(route: Arc<Route>, vehicle: VehicleParams) -> Scene {
        Scene {
            route,
            vehicle,
            lights: Vec::new(),
            light_offsets: Vec::new(),
            obstacles: Vec::new(),
            pedestrians: Vec::new(),
            lead: None,
        }
    }

    fn obstacle_radius(&self, o: &Obstacle) -> f64 {
        o.radius.unwrap_or(self.vehicle.obstacle_radius)
    }

    pub fn contact_count(&self) -> usize {
        self.obstacles.len() + self.pedestrians.len() + usize::from(self.lead.is_some())
    }

    /// Center and radius of every collidable disc, indexed like
    /// `WorldState::contacts`. Absent hazards yield `None`.
    pub fn discs(&self, world: &WorldState) -> Vec<Option<([f64; 2], f64)>> {
        let mut out = Vec::with_capacity(self.contact_count());
        for o in &self.obstacles {
            out.push(Some((o.position, self.obstacle_radius(o))));
        }
        for (p, st) in self.pedestrians.iter().zip(&world.pedestrians) {
            out.push((st.status == PedestrianStatus::Walking).then(|| {
                (
                    self.route.offset_point(p.crossing_s, st.lateral),
                    self.vehicle.pedestrian_radius,
                )
            }));
        }
        if self.lead.is_some() {
            out.push(
                world
                    .lead
                    .map(|l| (self.route.point_at(l.s).0, self.vehicle.vehicle_radius)),
            );
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PedestrianStatus {
    Waiting,
    Walking,
    Gone,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PedestrianState {
    pub status: PedestrianStatus,
    pub lateral: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeadState {
    pub s: f64,
    pub speed: f64,
}

/// Full dynamic state of one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub time: f64,
    pub steps: usize,
    pub pose: Pose,
    /// Progress along the route; never decreases within an episode.
    pub arc_length: f64,
    pub lateral_offset: f64,
    pub heading_error: f64,
    pub heading_ref: f64,
    pub light_phases: Vec<LightPhase>,
    pub pedestrians: Vec<PedestrianState>,
    /// `None` when the route has no lead car or it has left the route.
    pub lead: Option<LeadState>,
    /// Touching flags for obstacles, then pedestrians, then the lead car.
    pub contacts: Vec<bool>,
    pub prev_steer: f64,
}

/// Distances to the hazards relevant for driving decisions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HazardView {
    /// Stop line of the next light, when it shows red or yellow.
    pub light: Option<(f64, LightPhase)>,
    /// Nearest obstacle ahead that reaches into the lane.
    pub obstacle: Option<f64>,
    /// Crossing point of a pedestrian currently in or approaching the lane.
    pub pedestrian: Option<f64>,
    /// Bumper gap and speed of the lead car.
    pub lead: Option<(f64, f64)>,
}

impl HazardView {
    pub fn compute(world: &WorldState, scene: &Scene) -> HazardView {
        let s = world.arc_length;
        let route = &scene.route;
        let light = scene
            .lights
            .iter()
            .zip(&world.light_phases)
            .find(|(l, _)| l.stop_line_s > s)
            .and_then(|(l, ph)| (*ph != LightPhase::Green).then_some((l.stop_line_s - s, *ph)));
        let obstacle = scene
            .obstacles
            .iter()
            .filter(|o| o.s >= s && o.lateral.abs() - scene.obstacle_radius(o) < route.lane_half_width)
            .map(|o| o.s - s)
            .reduce(f64::min);
        let conflict_hw = route.lane_half_width + scene.vehicle.vehicle_radius;
        let pedestrian = scene
            .pedestrians
            .iter()
            .zip(&world.pedestrians)
            .filter(|(p, st)| {
                let dir = (p.end_lateral - p.start_lateral).signum();
                st.status == PedestrianStatus::Walking && dir * st.lateral < conflict_hw && p.crossing_s >= s
            })
            .map(|(p, _)| p.crossing_s - s)
            .reduce(f64::min);
        let lead = world.lead.map(|l| {
            let gap = (l.s - s - 2.0 * scene.vehicle.vehicle_radius).max(0.0);
            (gap, l.speed)
        });
        HazardView {
            light,
            obstacle,
            pedestrian,
            lead,
        }
    }

    /// View from a point `ds` meters further along the route.
    pub fn shifted(&self, ds: f64) -> HazardView {
        let sh = |d: f64| (d - ds).max(0.0);
        HazardView {
            light: self.light.map(|(d, ph)| (sh(d), ph)),
            obstacle: self.obstacle.map(sh),
            pedestrian: self.pedestrian.map(sh),
            lead: self.lead.map(|(g, v)| (sh(g), v)),
        }
    }
}

/// Normalized 12-dimensional observation, every component in `[-1, 1]`:
///
/// | idx | feature |
/// |-----|---------|
/// | 0 | lateral offset / 5 m |
/// | 1 | heading error / pi |
/// | 2 | speed / max speed |
/// | 3, 4 | route curvature 5 m and 15 m ahead, times 10 m |
/// | 5 | distance to a red or yellow stop line / 50 m (1 if none) |
/// | 6 | distance to an in-lane obstacle ahead / 50 m (1 if none) |
/// | 7 | distance to an active pedestrian conflict / 50 m (1 if none) |
/// | 8 | lead-car gap / 50 m (1 if none) |
/// | 9 | lead-car speed minus ego speed, / max speed (0 if none) |
/// | 10 | fraction of the route completed |
/// | 11 | previous steering command |
pub fn build_observation(world: &WorldState, scene: &Scene) -> Observation {
    let v = HazardView::compute(world, scene);
    let route = &scene.route;
    let vmax = scene.vehicle.max_speed;
    let dist = |d: Option<f64>| d.map_or(1.0, |d| (d / HAZARD_RANGE).clamp(0.0, 1.0));
    let s = world.arc_length;
    let obs = [
        world.lateral_offset / 5.0,
        world.heading_error / std::f64::consts::PI,
        world.pose.speed / vmax,
        route.curvature_at(s + 5.0) * CURVATURE_SCALE,
        route.curvature_at(s + 15.0) * CURVATURE_SCALE,
        dist(v.light.map(|l| l.0)),
        dist(v.obstacle),
        dist(v.pedestrian),
        dist(v.lead.map(|l| l.0)),
        v.lead.map_or(0.0, |(_, ls)| (ls - world.pose.speed) / vmax),
        s / route.total_length,
        world.prev_steer,
    ];
    obs.map(|x| x.clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Infraction {
    /// First contact with a hazard disc; index into `WorldState::contacts`.
    Collision {
        hazard: usize,
    },
    RedLight {
        light: usize,
    },
    /// Distance driven this step with the car outside its lane.
    OutsideLane {
        distance: f64,
    },
}

/// Infractions between two consecutive world states of one episode.
pub fn detect_infractions(world: &WorldState, prev: &WorldState, scene: &Scene) -> Vec<Infraction> {
    let mut out = Vec::new();
    for (j, l) in scene.lights.iter().enumerate() {
        if prev.arc_length < l.stop_line_s
            && world.arc_length >= l.stop_line_s
            && world.light_phases[j] == LightPhase::Red
        {
            out.push(Infraction::RedLight { light: j });
        }
    }
    for (i, (now, before)) in world.contacts.iter().zip(&prev.contacts).enumerate() {
        if *now && !*before {
            out.push(Infraction::Collision { hazard: i });
        }
    }
    if world.lateral_offset.abs() > scene.route.lane_half_width {
        let d = (world.pose.x - prev.pose.x).hypot(world.pose.y - prev.pose.y);
        out.push(Infraction::OutsideLane { distance: d });
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Complete,
    Deviation,
    MaxSteps,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub arc_length_s: f64,
    pub lateral_offset: f64,
    pub heading_error: f64,
    pub infractions: Vec<Infraction>,
    pub route_complete: bool,
    pub termination: Option<Termination>,
}

/// Per-step reward from deviation thresholds plus the completion bonus.
pub fn compute_reward(info: &StepInfo, route_complete_event: bool, cfg: &RewardConfig) -> f64 {
    let mut r = 0.0;
    if info.lateral_offset.abs() > cfg.position_threshold {
        r -= cfg.step_penalty;
    }
    if info.heading_error.abs() > cfg.rotation_threshold_deg.to_radians() {
        r -= cfg.step_penalty;
    }
    if route_complete_event {
        r += cfg.completion_bonus;
    }
    r
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Total reward, route completion and infraction counters for one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub total_reward: f64,
    /// Fraction of the route length reached, in `[0, 1]`.
    pub route_completion: f64,
    pub collisions: u32,
    pub red_light_violations: u32,
    /// Share of driven distance spent outside the lane, in `[0, 1]`.
    pub outside_lane_fraction: f64,
    pub steps: usize,
    pub termination: Option<Termination>,
}

#[derive(Clone, Debug, Default)]
struct Accumulators {
    total_reward: f64,
    collisions: u32,
    red_lights: u32,
    driven: f64,
    outside: f64,
    termination: Option<Termination>,
}

/// One environment instance. Not shared across threads; create one per
/// worker.
#[derive(Clone, Debug)]
pub struct DriveEnv {
    config: SimConfig,
    scenario: ScenarioConfig,
    scene: Option<Scene>,
    world: Option<WorldState>,
    acc: Accumulators,
    done: bool,
}

impl DriveEnv {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        Ok(DriveEnv {
            config,
            scenario: ScenarioConfig::default(),
            scene: None,
            world: None,
            acc: Accumulators::default(),
            done: false,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Looks up `route_id` and starts an episode on it.
    pub fn reset_by_id(
        &mut self,
        registry: &RouteRegistry,
        route_id: &str,
        scenario: &ScenarioConfig,
        seed: u64,
    ) -> Result<Observation, SimError> {
        let route = registry.get(route_id)?;
        self.reset(route, scenario, seed)
    }

    /// Places the car at the start of `route` at rest, heading along the
    /// first segment, and zeroes every counter.
    pub fn reset(&mut self, route: Arc<Route>, scenario: &ScenarioConfig, seed: u64) -> Result<Observation, SimError> {
        scenario.validate()?;
        let scene = Scene::realize(route, self.config.vehicle, scenario, seed);
        let start = scene.route.waypoints[0];
        let heading = scene.route.seg_heading[0];
        let mut world = WorldState {
            time: 0.0,
            steps: 0,
            pose: Pose::new(start[0], start[1], heading, 0.0),
            arc_length: 0.0,
            lateral_offset: 0.0,
            heading_error: 0.0,
            heading_ref: heading,
            light_phases: Vec::new(),
            pedestrians: scene
                .pedestrians
                .iter()
                .map(|p| PedestrianState {
                    status: PedestrianStatus::Waiting,
                    lateral: p.start_lateral,
                })
                .collect(),
            lead: scene.lead.as_ref().map(|l| LeadState {
                s: l.start_s,
                speed: l.speed,
            }),
            contacts: vec![false; scene.contact_count()],
            prev_steer: 0.0,
        };
        world.light_phases = light_phases(&scene, 0.0);
        self.scenario = scenario.clone();
        self.acc = Accumulators::default();
        self.done = false;
        let obs = build_observation(&world, &scene);
        self.scene = Some(scene);
        self.world = Some(world);
        Ok(obs)
    }

    pub fn scene(&self) -> Option<&Scene> {
        self.scene.as_ref()
    }

    pub fn world(&self) -> Option<&WorldState> {
        self.world.as_ref()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn observation(&self) -> Option<Observation> {
        Some(build_observation(self.world.as_ref()?, self.scene.as_ref()?))
    }

    /// Metrics of the episode so far (final once `done`).
    pub fn metrics(&self) -> EpisodeMetrics {
        let (completion, steps) = match (&self.world, &self.scene) {
            (Some(w), Some(sc)) => {
                let rc = if self.acc.termination == Some(Termination::Complete) {
                    1.0
                } else {
                    (w.arc_length / sc.route.total_length).clamp(0.0, 1.0)
                };
                (rc, w.steps)
            }
            _ => (0.0, 0),
        };
        let outside = if self.acc.driven > 0.0 {
            (self.acc.outside / self.acc.driven).clamp(0.0, 1.0)
        } else {
            0.0
        };
        EpisodeMetrics {
            total_reward: self.acc.total_reward,
            route_completion: completion,
            collisions: self.acc.collisions,
            red_light_violations: self.acc.red_lights,
            outside_lane_fraction: outside,
            steps,
            termination: self.acc.termination,
        }
    }

    /// Advances hazards and the car by one tick.
    pub fn step(&mut self, action: &VehicleAction) -> Result<StepOutcome, SimError> {
        if self.done {
            return Err(SimError::StepAfterDone);
        }
        let (Some(scene), Some(prev)) = (self.scene.as_ref(), self.world.as_ref()) else {
            return Err(SimError::NotReset);
        };
        let params = &self.config.vehicle;
        let dt = params.dt;
        let mut world = prev.clone();
        world.time += dt;
        world.steps += 1;
        world.light_phases = light_phases(scene, world.time);

        for (p, st) in scene.pedestrians.iter().zip(world.pedestrians.iter_mut()) {
            if st.status == PedestrianStatus::Waiting && prev.arc_length >= p.trigger_s {
                st.status = PedestrianStatus::Walking;
            }
            if st.status == PedestrianStatus::Walking {
                let dir = (p.end_lateral - p.start_lateral).signum();
                st.lateral += dir * p.speed * dt;
                if dir * (st.lateral - p.end_lateral) >= 0.0 {
                    st.lateral = p.end_lateral;
                    st.status = PedestrianStatus::Gone;
                }
            }
        }
        if let (Some(profile), Some(lead)) = (&scene.lead, world.lead.as_mut()) {
            lead.s += lead.speed * dt;
            if lead.s >= profile.exit_s {
                world.lead = None;
            }
        }

        // vehicle motion with contact resolution against hazard discs: a new
        // contact stops the car where the discs touch; while contact persists
        // the car may slide along the disc but not into it
        let tentative = bicycle_step(&prev.pose, action, params, dt);
        let discs = scene.discs(&world);
        let rv = params.vehicle_radius;
        let from = prev.pose.position();
        let to = tentative.position();
        let lerp = |f: f64| [from[0] + f * (to[0] - from[0]), from[1] + f * (to[1] - from[1])];
        let dist = |p: [f64; 2], c: [f64; 2]| (p[0] - c[0]).hypot(p[1] - c[1]);
        let mut frac = 1.0f64;
        for (i, disc) in discs.iter().enumerate() {
            let Some((c, r)) = disc else { continue };
            let reach = rv + r;
            let (d_from, d_to) = (dist(from, *c), dist(to, *c));
            if prev.contacts[i] || !(d_to < reach && d_to < d_from) {
                continue;
            }
            let target = reach + 0.5 * CONTACT_TOL;
            let f = if d_from <= target {
                0.0
            } else {
                let (mut lo, mut hi) = (0.0, 1.0);
                for _ in 0..40 {
                    let mid = 0.5 * (lo + hi);
                    if dist(lerp(mid), *c) >= target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                lo
            };
            frac = frac.min(f);
        }
        let mut pose = tentative;
        if frac < 1.0 {
            let p = lerp(frac);
            pose = Pose {
                x: p[0],
                y: p[1],
                heading: wrap_angle(prev.pose.heading + frac * wrap_angle(tentative.heading - prev.pose.heading)),
                speed: 0.0,
            };
        } else {
            for (i, disc) in discs.iter().enumerate() {
                let Some((c, r)) = disc else { continue };
                let target = rv + r + 0.5 * CONTACT_TOL;
                let d = dist(pose.position(), *c);
                if prev.contacts[i] && d < target {
                    let u = if d > 1e-12 {
                        [(pose.x - c[0]) / d, (pose.y - c[1]) / d]
                    } else {
                        [(from[0] - c[0]) / target, (from[1] - c[1]) / target]
                    };
                    pose.x = c[0] + target * u[0];
                    pose.y = c[1] + target * u[1];
                }
            }
        }
        for (i, disc) in discs.iter().enumerate() {
            world.contacts[i] = match disc {
                Some((c, r)) => dist(pose.position(), *c) <= rv + r + CONTACT_TOL,
                None => false,
            };
            if world.contacts[i] && !prev.contacts[i] {
                pose.speed = 0.0;
            }
        }
        world.pose = pose;
        world.prev_steer = action.steer;

        let route = &scene.route;
        let proj = route.project_near(pose.position(), prev.arc_length, TRACK_BACK, TRACK_AHEAD);
        world.arc_length = prev.arc_length.max(proj.arc_length);
        world.lateral_offset = proj.lateral_offset;
        world.heading_ref = proj.heading_ref;
        world.heading_error = wrap_angle(pose.heading - proj.heading_ref);

        let infractions = detect_infractions(&world, prev, scene);
        let route_complete = world.arc_length >= 0.999 * route.total_length;
        let rcfg = &self.config.reward;
        let termination = if route_complete {
            Some(Termination::Complete)
        } else if world.lateral_offset.abs() > rcfg.deviation_limit {
            Some(Termination::Deviation)
        } else if world.steps >= self.scenario.max_steps {
            Some(Termination::MaxSteps)
        } else {
            None
        };
        let info = StepInfo {
            arc_length_s: world.arc_length,
            lateral_offset: world.lateral_offset,
            heading_error: world.heading_error,
            infractions,
            route_complete,
            termination,
        };
        let reward = compute_reward(&info, route_complete, rcfg);

        let acc = &mut self.acc;
        acc.total_reward += reward;
        acc.driven += (pose.x - prev.pose.x).hypot(pose.y - prev.pose.y);
        for inf in &info.infractions {
            match inf {
                Infraction::Collision { .. } => acc.collisions += 1,
                Infraction::RedLight { .. } => acc.red_lights += 1,
                Infraction::OutsideLane { distance } => acc.outside += distance,
            }
        }
        acc.termination = termination;
        self.done = termination.is_some();
        let observation = build_observation(&world, scene);
        self.world = Some(world);
        Ok(StepOutcome {
            observation,
            reward,
            done: self.done,
            info,
        })
    }
}

fn light_phases(scene: &Scene, t: f64) -> Vec<LightPhase> {
    scene
        .lights
        .iter()
        .zip(&scene.light_offsets)
        .map(|(l, off)| l.phase_at(t, *off))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivesim::route::{RouteFile, SegmentSpec, StartPose};
    use approx::assert_abs_diff_eq;

    fn act(steer: f64, throttle: f64) -> VehicleAction {
        VehicleAction::from_raw([steer, throttle])
    }

    fn straight_env(len: f64) -> DriveEnv {
        let mut env = DriveEnv::new(SimConfig::default()).unwrap();
        env.reset(
            Arc::new(Route::straight("straight", len, 2.0)),
            &ScenarioConfig::empty(),
            1,
        )
        .unwrap();
        env
    }

    #[test]
    fn reset_starts_on_centerline() {
        let reg = RouteRegistry::builtin();
        let mut env = DriveEnv::new(SimConfig::default()).unwrap();
        let a = env.reset_by_id(&reg, "route00", &ScenarioConfig::default(), 7).unwrap();
        assert_eq!(a[0], 0.0);
        assert_eq!(a[1], 0.0);
        let b = env.reset_by_id(&reg, "route00", &ScenarioConfig::default(), 7).unwrap();
        assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
        assert!(matches!(
            env.reset_by_id(&reg, "route99", &ScenarioConfig::default(), 7),
            Err(SimError::UnknownRoute(_))
        ));
    }

    #[test]
    fn malformed_scenario_names_field() {
        let mut env = DriveEnv::new(SimConfig::default()).unwrap();
        let bad = ScenarioConfig {
            max_steps: 0,
            lead_speed_jitter: -1.0,
            ..Default::default()
        };
        let err = env
            .reset(Arc::new(Route::straight("s", 50.0, 2.0)), &bad, 0)
            .unwrap_err();
        match err {
            SimError::InvalidScenario(fields) => {
                assert!(fields.iter().any(|f| f.contains("max_steps")));
                assert!(fields.iter().any(|f| f.contains("lead_speed_jitter")));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn empty_straight_observation() {
        let env = straight_env(100.0);
        let obs = env.observation().unwrap();
        assert_eq!(obs, [0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn lateral_offset_normalization() {
        let env = straight_env(100.0);
        let mut world = env.world().unwrap().clone();
        world.pose.y = 2.5;
        world.lateral_offset = 2.5;
        let obs = build_observation(&world, env.scene().unwrap());
        assert_abs_diff_eq!(obs[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn centerline_driving_only_earns_completion_bonus() {
        let mut env = straight_env(60.0);
        let mut rewards = Vec::new();
        loop {
            let out = env.step(&act(0.0, 0.6)).unwrap();
            rewards.push(out.reward);
            if out.done {
                assert_eq!(out.info.termination, Some(Termination::Complete));
                break;
            }
        }
        let (last, rest) = rewards.split_last().unwrap();
        assert!(rest.iter().all(|r| *r == 0.0));
        assert_eq!(*last, 20.0);
        let m = env.metrics();
        assert_eq!(m.route_completion, 1.0);
        assert_eq!(m.total_reward, 20.0);
        assert!(matches!(env.step(&act(0.0, 0.0)), Err(SimError::StepAfterDone)));
    }

    #[test]
    fn held_full_steer_deviates() {
        let mut env = straight_env(300.0);
        let mut steps = 0;
        loop {
            let out = env.step(&act(1.0, 0.5)).unwrap();
            steps += 1;
            if out.done {
                assert_eq!(out.info.termination, Some(Termination::Deviation));
                break;
            }
            assert!(steps < 4000);
        }
        assert!(env.metrics().route_completion < 1.0);
    }

    #[test]
    fn step_before_reset_is_an_error() {
        let mut env = DriveEnv::new(SimConfig::default()).unwrap();
        assert!(matches!(env.step(&act(0.0, 0.0)), Err(SimError::NotReset)));
    }

    #[test]
    fn reward_examples() {
        let cfg = RewardConfig::default();
        let mut info = StepInfo {
            arc_length_s: 0.0,
            lateral_offset: 0.0,
            heading_error: 0.0,
            infractions: vec![],
            route_complete: false,
            termination: None,
        };
        assert_eq!(compute_reward(&info, false, &cfg), 0.0);
        info.lateral_offset = 2.0;
        info.heading_error = 0.5;
        assert_abs_diff_eq!(compute_reward(&info, false, &cfg), -0.02, epsilon = 1e-15);
        info.lateral_offset = 0.0;
        info.heading_error = 0.0;
        assert_eq!(compute_reward(&info, true, &cfg), 20.0);
    }

    fn light_route(phase_offset: f64) -> Arc<Route> {
        Arc::new(
            RouteFile {
                id: "light".into(),
                lane_half_width: 2.0,
                start: StartPose::default(),
                segments: vec![SegmentSpec::Straight { length: 120.0 }],
                waypoints: vec![],
                traffic_lights: vec![TrafficLight {
                    stop_line_s: 30.0,
                    green_s: 1.0,
                    yellow_s: 1.0,
                    red_s: 100.0,
                    phase_offset_s: phase_offset,
                }],
                obstacles: vec![],
                pedestrians: vec![],
                lead_vehicle: None,
            }
            .build()
            .unwrap(),
        )
    }

    fn lights_only() -> ScenarioConfig {
        ScenarioConfig {
            traffic_lights: true,
            light_offset_jitter_s: 0.0,
            ..ScenarioConfig::empty()
        }
    }

    #[test]
    fn full_throttle_through_red_counts_once() {
        // the light is red from t = 2 s for 100 s; at full throttle the car
        // reaches the stop line after roughly 4.5 s
        let mut env = DriveEnv::new(SimConfig::default()).unwrap();
        env.reset(light_route(0.0), &lights_only(), 3).unwrap();
        let mut red = 0;
        while !env.is_done() {
            let out = env.step(&act(0.0, 1.0)).unwrap();
            red += out
                .info
                .infractions
                .iter()
                .filter(|i| matches!(i, Infraction::RedLight { .. }))
                .count();
        }
        assert_eq!(red, 1);
        assert_eq!(env.metrics().red_light_violations, 1);
    }

    #[test]
    fn green_crossing_and_waiting_are_clean() {
        // offset puts the light at the start of its cycle every 102 s:
        // green during t in [100, 101) -> use offset so green covers the crossing
        let mut env = DriveEnv::new(SimConfig::default()).unwrap();
        let route = light_route(-4.2);
        env.reset(route.clone(), &lights_only(), 3).unwrap();
        // green for t in [4.2, 5.2); yellow until 6.2
        let mut crossed_phase = None;
        while !env.is_done() {
            let prev = env.world().unwrap().arc_length;
            let out = env.step(&act(0.0, 1.0)).unwrap();
            if prev < 30.0 && out.info.arc_length_s >= 30.0 {
                crossed_phase = Some(env.world().unwrap().light_phases[0]);
            }
            assert!(!out
                .info
                .infractions
                .iter()
                .any(|i| matches!(i, Infraction::RedLight { .. })));
        }
        assert_ne!(crossed_phase, Some(LightPhase::Red));

        // waiting before the line for the whole red phase
        let mut env = DriveEnv::new(SimConfig::default()).unwrap();
        env.reset(light_route(0.0), &lights_only(), 3).unwrap();
        for _ in 0..2000 {
            let s = env.world().unwrap().arc_length;
            let a = if s < 20.0 { act(0.0, 0.4) } else { act(0.0, 0.0) };
            let out = env.step(&a).unwrap();
            assert!(out.info.infractions.is_empty());
        }
        assert_eq!(env.metrics().red_light_violations, 0);
    }

    fn obstacle_route() -> Arc<Route> {
        Arc::new(
            RouteFile {
                id: "obstacle".into(),
                lane_half_width: 2.0,
                start: StartPose::default(),
                segments: vec![SegmentSpec::Straight { length: 200.0 }],
                waypoints: vec![],
                traffic_lights: vec![],
                obstacles: vec![crate::drivesim::ObstacleSpec {
                    s: 40.0,
                    lateral: 2.5,
                    radius: None,
                }],
                pedestrians: vec![],
                lead_vehicle: None,
            }
            .build()
            .unwrap(),
        )
    }

    #[test]
    fn graze_separate_regraze_counts_two_collisions() {
        // obstacle center (40, 2.5); driving along y = 0.8 overlaps its disc
        let scenario = ScenarioConfig {
            obstacles: true,
            ..ScenarioConfig::empty()
        };
        let mut env = DriveEnv::new(SimConfig::default()).unwrap();
        env.reset(obstacle_route(), &scenario, 0).unwrap();
        let mut collisions = 0;
        let mut touching_steps = 0;
        for pass in 0..2 {
            let mut w = env.world().unwrap().clone();
            w.pose = Pose::new(30.0, 0.8, 0.0, 4.0);
            env.world = Some(w);
            for _ in 0..80 {
                let out = env.step(&act(0.0, 0.2)).unwrap();
                collisions += out
                    .info
                    .infractions
                    .iter()
                    .filter(|i| matches!(i, Infraction::Collision { .. }))
                    .count();
                touching_steps += usize::from(env.world().unwrap().contacts[0]);
            }
            assert_eq!(collisions, pass + 1);
            // separate: move the car sideways, clear of the disc
            let mut w = env.world().unwrap().clone();
            w.pose.y = -1.5;
            env.world = Some(w);
            env.step(&act(0.0, 0.0)).unwrap();
            assert!(!env.world().unwrap().contacts[0]);
        }
        assert!(touching_steps > 1, "contact should persist while sliding");
        assert_eq!(env.metrics().collisions, 2);
    }

    #[test]
    fn contact_stops_the_car_at_the_disc_boundary() {
        let scenario = ScenarioConfig {
            obstacles: true,
            ..ScenarioConfig::empty()
        };
        let mut env = DriveEnv::new(SimConfig::default()).unwrap();
        let route = obstacle_route();
        env.reset(route.clone(), &scenario, 0).unwrap();
        // aim straight at the obstacle center
        let mut w = env.world().unwrap().clone();
        w.pose.y = 2.5;
        env.world = Some(w);
        for _ in 0..400 {
            env.step(&act(0.0, 0.5)).unwrap();
        }
        let w = env.world().unwrap();
        let c = route.obstacles[0].position;
        let d = (w.pose.x - c[0]).hypot(w.pose.y - c[1]);
        assert!((2.0 - 1e-9..=2.0 + CONTACT_TOL).contains(&d), "distance {d}");
        assert_eq!(env.metrics().collisions, 1);
    }

    #[test]
    fn observations_stay_bounded_over_random_rollouts() {
        use rand::Rng;
        let reg = RouteRegistry::builtin();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut env = DriveEnv::new(SimConfig::default()).unwrap();
        let mut seen = 0;
        let mut episode = 0u64;
        while seen < 10_000 {
            let id = ["route00", "route01", "route02", "route03", "route_test"][episode as usize % 5];
            let mut obs = env.reset_by_id(&reg, id, &ScenarioConfig::default(), episode).unwrap();
            let bias: f64 = rng.random_range(-0.2..0.2);
            loop {
                assert!(obs.iter().all(|x| (-1.0..=1.0).contains(x)), "{obs:?}");
                seen += 1;
                let a = act(bias + rng.random_range(-0.3..0.3), rng.random_range(-0.2..1.0));
                let out = env.step(&a).unwrap();
                obs = out.observation;
                if out.done || seen >= 10_000 {
                    break;
                }
            }
            episode += 1;
        }
    }

    #[test]
    fn arc_length_is_monotone_and_reward_bounded() {
        use rand::Rng;
        let reg = RouteRegistry::builtin();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut env = DriveEnv::new(SimConfig::default()).unwrap();
        for ep in 0..6u64 {
            env.reset_by_id(&reg, "route02", &ScenarioConfig::default(), ep)
                .unwrap();
            let mut last = 0.0;
            let mut bonus = 0;
            while !env.is_done() {
                let w = env.world().unwrap();
                let steer = -0.5 * w.lateral_offset - 1.0 * w.heading_error + rng.random_range(-0.5..0.5);
                let out = env.step(&act(steer, rng.random_range(0.0..0.6))).unwrap();
                assert!(out.info.arc_length_s >= last);
                last = out.info.arc_length_s;
                let base = out.reward - if out.info.route_complete { 20.0 } else { 0.0 };
                assert!([0.0, -0.01, -0.02].iter().any(|v| (base - v).abs() < 1e-12));
                bonus += usize::from(out.info.route_complete);
            }
            assert!(bonus <= 1);
            let m = env.metrics();
            assert!(m.total_reward <= 20.0);
            assert!((0.0..=1.0).contains(&m.route_completion));
            assert!((0.0..=1.0).contains(&m.outside_lane_fraction));
            assert!(m.termination.is_some());
        }
    }

    #[test]
    fn identical_inputs_identical_trajectories() {
        let reg = RouteRegistry::builtin();
        let run = || {
            let mut env = DriveEnv::new(SimConfig::default()).unwrap();
            env.reset_by_id(&reg, "route01", &ScenarioConfig::default(), 21)
                .unwrap();
            let mut trace = Vec::new();
            for k in 0..600 {
                let out = env.step(&act(0.05 * ((k as f64) * 0.1).sin(), 0.5)).unwrap();
                trace.extend(out.observation.map(f64::to_bits));
                trace.push(out.reward.to_bits());
                if out.done {
                    break;
                }
            }
            trace
        };
        assert_eq!(run(), run());
    }
}
