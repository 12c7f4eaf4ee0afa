use serde::{Deserialize, Serialize};

use crate::policy::VehicleAction;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut w = a.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    w
}

/// Rear-axle reference state of the ego vehicle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Radians in `(-pi, pi]`.
    pub heading: f64,
    /// Meters per second, never negative.
    pub speed: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64, speed: f64) -> Self {
        Pose {
            x,
            y,
            heading: wrap_angle(heading),
            speed: speed.max(0.0),
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Kinematic constants of the simulated car.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    pub dt: f64,
    pub wheelbase: f64,
    /// Road-wheel angle at `steer = 1`, radians.
    pub max_steer_angle: f64,
    pub max_accel: f64,
    pub max_brake: f64,
    pub drag: f64,
    pub max_speed: f64,
    pub vehicle_radius: f64,
    pub obstacle_radius: f64,
    pub pedestrian_radius: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            dt: 0.05,
            wheelbase: 2.5,
            max_steer_angle: 30f64.to_radians(),
            max_accel: 3.0,
            max_brake: 8.0,
            drag: 0.05,
            max_speed: 15.0,
            vehicle_radius: 1.0,
            obstacle_radius: 1.0,
            pedestrian_radius: 0.4,
        }
    }
}

impl VehicleParams {
    /// Throttle that exactly balances drag at `speed`.
    pub fn holding_throttle(&self, speed: f64) -> f64 {
        self.drag * speed / self.max_accel
    }

    pub(crate) fn validate(&self, errors: &mut Vec<String>) {
        let positive = [
            ("vehicle.dt", self.dt),
            ("vehicle.wheelbase", self.wheelbase),
            ("vehicle.max_steer_angle", self.max_steer_angle),
            ("vehicle.max_accel", self.max_accel),
            ("vehicle.max_brake", self.max_brake),
            ("vehicle.max_speed", self.max_speed),
            ("vehicle.vehicle_radius", self.vehicle_radius),
            ("vehicle.obstacle_radius", self.obstacle_radius),
            ("vehicle.pedestrian_radius", self.pedestrian_radius),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                errors.push(format!("{name} must be positive and finite (got {v})"));
            }
        }
        if !(self.drag.is_finite() && self.drag >= 0.0) {
            errors.push(format!("vehicle.drag must be >= 0 (got {})", self.drag));
        }
        if self.max_steer_angle >= std::f64::consts::FRAC_PI_2 {
            errors.push("vehicle.max_steer_angle must be below pi/2".to_string());
        }
    }
}

/// Advances the kinematic bicycle model by one explicit Euler step of `dt`.
///
/// Position and heading integrate with the speed at the start of the step.
pub fn bicycle_step(pose: &Pose, action: &VehicleAction, params: &VehicleParams, dt: f64) -> Pose {
    let v = pose.speed;
    let x = pose.x + v * pose.heading.cos() * dt;
    let y = pose.y + v * pose.heading.sin() * dt;
    let delta = params.max_steer_angle * action.steer;
    let heading = wrap_angle(pose.heading + v / params.wheelbase * delta.tan() * dt);
    let brake = if action.brake { params.max_brake } else { 0.0 };
    let accel = params.max_accel * action.throttle - brake - params.drag * v;
    let speed = (v + accel * dt).clamp(0.0, params.max_speed);
    Pose { x, y, heading, speed }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cmd(steer: f64, throttle: f64, brake: bool) -> VehicleAction {
        VehicleAction { steer, throttle, brake }
    }

    #[test]
    fn straight_line_without_drag() {
        let params = VehicleParams {
            drag: 0.0,
            ..Default::default()
        };
        let p = bicycle_step(&Pose::new(0.0, 0.0, 0.0, 10.0), &cmd(0.0, 0.0, false), &params, 0.05);
        assert_abs_diff_eq!(p.x, 0.5, epsilon = 1e-15);
        assert_eq!((p.y, p.heading, p.speed), (0.0, 0.0, 10.0));
    }

    #[test]
    fn full_steer_heading_rate() {
        let params = VehicleParams::default();
        let p = bicycle_step(&Pose::new(0.0, 0.0, 0.0, 5.0), &cmd(1.0, 0.0, false), &params, 0.05);
        // (5 / 2.5) * tan(0.5236) * 0.05
        assert_abs_diff_eq!(p.heading, 0.057_735, epsilon = 1e-5);
    }

    #[test]
    fn left_right_symmetry() {
        let params = VehicleParams::default();
        let mut l = Pose::new(0.0, 0.0, 0.0, 6.0);
        let mut r = l;
        let mut c = l;
        for _ in 0..40 {
            l = bicycle_step(&l, &cmd(0.4, 0.3, false), &params, 0.05);
            r = bicycle_step(&r, &cmd(-0.4, 0.3, false), &params, 0.05);
            c = bicycle_step(&c, &cmd(0.0, 0.3, false), &params, 0.05);
        }
        assert_abs_diff_eq!(l.y, -r.y, epsilon = 1e-12);
        assert_eq!(c.y, 0.0);
        assert!(l.y > 0.0);
    }

    #[test]
    fn brake_never_reverses() {
        let params = VehicleParams::default();
        let p = bicycle_step(&Pose::new(0.0, 0.0, 0.0, 0.1), &cmd(0.0, 0.0, true), &params, 0.05);
        assert_eq!(p.speed, 0.0);
    }

    #[test]
    fn wrap_angle_range() {
        use std::f64::consts::PI;
        assert_abs_diff_eq!(wrap_angle(PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_angle(-PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn state_invariants(
            speed in 0.0..15.0f64, heading in -3.0..3.0f64,
            steer in -1.0..1.0f64, throttle in 0.0..1.0f64, brake: bool
        ) {
            let params = VehicleParams::default();
            let a = cmd(steer, if brake { 0.0 } else { throttle }, brake);
            let p = bicycle_step(&Pose::new(1.0, 2.0, heading, speed), &a, &params, params.dt);
            prop_assert!(p.speed >= 0.0 && p.speed <= params.max_speed);
            prop_assert!(p.heading > -std::f64::consts::PI && p.heading <= std::f64::consts::PI);
        }
    }
}
