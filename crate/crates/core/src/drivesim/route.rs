//! Route geometry, hazard layout and the route-file schema.
//!
//! A route file is a TOML document. Geometry is either a chain of
//! `segments` (straights and constant-radius arcs, starting from `start`)
//! or an explicit list of `waypoints`; either way it is densified to a
//! polyline with at most [`MAX_WAYPOINT_SPACING`] meters between points.
//! See the README for a complete example.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::kinematics::wrap_angle;
use super::SimError;

pub const MAX_WAYPOINT_SPACING: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LightPhase {
    Green,
    Yellow,
    Red,
}

/// Fixed-cycle traffic light guarding a stop line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficLight {
    pub stop_line_s: f64,
    pub green_s: f64,
    pub yellow_s: f64,
    pub red_s: f64,
    #[serde(default)]
    pub phase_offset_s: f64,
}

impl TrafficLight {
    pub fn cycle_length(&self) -> f64 {
        self.green_s + self.yellow_s + self.red_s
    }

    /// Phase at simulation time `t` with an extra offset (seeded jitter).
    pub fn phase_at(&self, t: f64, extra_offset: f64) -> LightPhase {
        let tc = (t + self.phase_offset_s + extra_offset).rem_euclid(self.cycle_length());
        if tc < self.green_s {
            LightPhase::Green
        } else if tc < self.green_s + self.yellow_s {
            LightPhase::Yellow
        } else {
            LightPhase::Red
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    /// Arc length of the obstacle center along the route.
    pub s: f64,
    /// Signed offset from the centerline, left positive.
    pub lateral: f64,
    /// Overrides the default obstacle radius.
    #[serde(default)]
    pub radius: Option<f64>,
}

/// Static obstacle placed in world coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub s: f64,
    pub lateral: f64,
    pub radius: Option<f64>,
    pub position: [f64; 2],
}

/// A pedestrian that appears once the ego vehicle reaches `trigger_s` and
/// walks across the road at `crossing_s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PedestrianEvent {
    pub trigger_s: f64,
    pub crossing_s: f64,
    pub start_lateral: f64,
    pub end_lateral: f64,
    pub speed: f64,
}

/// Scripted vehicle ahead of the ego car, driving along the centerline at
/// constant speed until it leaves the route at `exit_s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeadVehicleProfile {
    pub start_s: f64,
    pub speed: f64,
    pub exit_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartPose {
    #[serde(default)]
    pub x: f64,
    #[serde(default)]
    pub y: f64,
    #[serde(default)]
    pub heading_deg: f64,
}

impl Default for StartPose {
    fn default() -> Self {
        StartPose {
            x: 0.0,
            y: 0.0,
            heading_deg: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SegmentSpec {
    Straight {
        length: f64,
    },
    /// Positive angle turns left.
    Arc {
        radius: f64,
        angle_deg: f64,
    },
}

/// On-disk route document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteFile {
    pub id: String,
    pub lane_half_width: f64,
    #[serde(default)]
    pub start: StartPose,
    #[serde(default)]
    pub segments: Vec<SegmentSpec>,
    #[serde(default)]
    pub waypoints: Vec<[f64; 2]>,
    #[serde(default)]
    pub traffic_lights: Vec<TrafficLight>,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    #[serde(default)]
    pub pedestrians: Vec<PedestrianEvent>,
    #[serde(default)]
    pub lead_vehicle: Option<LeadVehicleProfile>,
}

/// Result of projecting a point onto the route polyline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub arc_length: f64,
    /// Signed, left of the direction of travel is positive.
    pub lateral_offset: f64,
    pub heading_ref: f64,
    pub segment: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub id: String,
    pub waypoints: Vec<[f64; 2]>,
    /// Cumulative arc length at each waypoint.
    pub cum_s: Vec<f64>,
    /// Heading of segment `i` (waypoint `i` to `i + 1`).
    pub seg_heading: Vec<f64>,
    /// Discrete curvature at each waypoint, 1/m, left positive.
    pub curvature: Vec<f64>,
    pub lane_half_width: f64,
    pub total_length: f64,
    pub traffic_lights: Vec<TrafficLight>,
    pub obstacles: Vec<Obstacle>,
    pub pedestrians: Vec<PedestrianEvent>,
    pub lead_vehicle: Option<LeadVehicleProfile>,
}

fn densify_segments(start: &StartPose, segments: &[SegmentSpec]) -> Vec<[f64; 2]> {
    let mut pts = vec![[start.x, start.y]];
    let (mut x, mut y, mut th) = (start.x, start.y, start.heading_deg.to_radians());
    for seg in segments {
        match *seg {
            SegmentSpec::Straight { length } => {
                let n = (length / MAX_WAYPOINT_SPACING).ceil().max(1.0) as usize;
                let (x0, y0) = (x, y);
                for k in 1..=n {
                    let d = length * k as f64 / n as f64;
                    pts.push([x0 + d * th.cos(), y0 + d * th.sin()]);
                }
                x = x0 + length * th.cos();
                y = y0 + length * th.sin();
            }
            SegmentSpec::Arc { radius, angle_deg } => {
                let sweep = angle_deg.to_radians();
                let len = radius * sweep.abs();
                let n = (len / MAX_WAYPOINT_SPACING).ceil().max(1.0) as usize;
                let sign = sweep.signum();
                // center of the turning circle, to the left for positive sweep
                let cx = x - sign * radius * th.sin();
                let cy = y + sign * radius * th.cos();
                let phi0 = (y - cy).atan2(x - cx);
                for k in 1..=n {
                    let phi = phi0 + sweep * k as f64 / n as f64;
                    pts.push([cx + radius * phi.cos(), cy + radius * phi.sin()]);
                }
                let phi = phi0 + sweep;
                x = cx + radius * phi.cos();
                y = cy + radius * phi.sin();
                th += sweep;
            }
        }
    }
    pts
}

fn densify_polyline(raw: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts = Vec::with_capacity(raw.len());
    if let Some(first) = raw.first() {
        pts.push(*first);
    }
    for w in raw.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let n = (len / MAX_WAYPOINT_SPACING).ceil().max(1.0) as usize;
        for k in 1..=n {
            let f = k as f64 / n as f64;
            pts.push([a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])]);
        }
    }
    pts
}

fn check_finite(errors: &mut Vec<String>, name: &str, v: f64) {
    if !v.is_finite() {
        errors.push(format!("{name} must be finite (got {v})"));
    }
}

impl RouteFile {
    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        toml::from_str(text).map_err(|e| SimError::RouteParse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("route file serializes")
    }

    /// Builds the densified route, validating every field.
    pub fn build(&self) -> Result<Route, SimError> {
        let mut errors = Vec::new();
        let id = self.id.clone();
        if self.id.trim().is_empty() {
            errors.push("id must not be empty".into());
        }
        if !(self.lane_half_width.is_finite() && self.lane_half_width > 0.0) {
            errors.push(format!(
                "lane_half_width must be positive (got {})",
                self.lane_half_width
            ));
        }
        match (self.segments.is_empty(), self.waypoints.is_empty()) {
            (true, true) => errors.push("one of segments or waypoints is required".into()),
            (false, false) => errors.push("segments and waypoints are mutually exclusive".into()),
            _ => {}
        }
        for (i, seg) in self.segments.iter().enumerate() {
            match *seg {
                SegmentSpec::Straight { length } if !(length.is_finite() && length > 0.0) => {
                    errors.push(format!("segments[{i}].length must be positive"))
                }
                SegmentSpec::Arc { radius, angle_deg }
                    if !(radius.is_finite() && radius > 0.0 && angle_deg.is_finite() && angle_deg != 0.0) =>
                {
                    errors.push(format!("segments[{i}] needs positive radius and non-zero angle"))
                }
                _ => {}
            }
        }
        for (i, w) in self.waypoints.iter().enumerate() {
            check_finite(&mut errors, &format!("waypoints[{i}].x"), w[0]);
            check_finite(&mut errors, &format!("waypoints[{i}].y"), w[1]);
        }
        if !errors.is_empty() {
            return Err(SimError::InvalidRoute { id, errors });
        }

        let mut pts = if self.segments.is_empty() {
            densify_polyline(&self.waypoints)
        } else {
            densify_segments(&self.start, &self.segments)
        };
        pts.dedup_by(|b, a| (b[0] - a[0]).hypot(b[1] - a[1]) < 1e-9);
        if pts.len() < 2 {
            return Err(SimError::InvalidRoute {
                id,
                errors: vec!["route needs at least two distinct waypoints".into()],
            });
        }
        let mut route = Route::from_polyline(&id, pts, self.lane_half_width);
        let total = route.total_length;
        let in_range = |s: f64| s.is_finite() && (0.0..=total).contains(&s);

        for (i, l) in self.traffic_lights.iter().enumerate() {
            if !in_range(l.stop_line_s) {
                errors.push(format!("traffic_lights[{i}].stop_line_s outside [0, {total:.2}]"));
            }
            for (name, v) in [("green_s", l.green_s), ("yellow_s", l.yellow_s), ("red_s", l.red_s)] {
                if !(v.is_finite() && v > 0.0) {
                    errors.push(format!("traffic_lights[{i}].{name} must be positive"));
                }
            }
            check_finite(
                &mut errors,
                &format!("traffic_lights[{i}].phase_offset_s"),
                l.phase_offset_s,
            );
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if !in_range(o.s) {
                errors.push(format!("obstacles[{i}].s outside [0, {total:.2}]"));
            }
            check_finite(&mut errors, &format!("obstacles[{i}].lateral"), o.lateral);
            if let Some(r) = o.radius {
                if !(r.is_finite() && r > 0.0) {
                    errors.push(format!("obstacles[{i}].radius must be positive"));
                }
            }
        }
        for (i, p) in self.pedestrians.iter().enumerate() {
            if !in_range(p.trigger_s) {
                errors.push(format!("pedestrians[{i}].trigger_s outside [0, {total:.2}]"));
            }
            if !in_range(p.crossing_s) {
                errors.push(format!("pedestrians[{i}].crossing_s outside [0, {total:.2}]"));
            }
            if p.trigger_s > p.crossing_s {
                errors.push(format!("pedestrians[{i}].trigger_s must not exceed crossing_s"));
            }
            if !(p.speed.is_finite() && p.speed > 0.0) {
                errors.push(format!("pedestrians[{i}].speed must be positive"));
            }
            if !(p.start_lateral.is_finite() && p.end_lateral.is_finite()) || p.start_lateral == p.end_lateral {
                errors.push(format!("pedestrians[{i}] start_lateral and end_lateral must differ"));
            }
        }
        if let Some(lead) = &self.lead_vehicle {
            if !in_range(lead.start_s) {
                errors.push(format!("lead_vehicle.start_s outside [0, {total:.2}]"));
            }
            if !in_range(lead.exit_s) || lead.exit_s <= lead.start_s {
                errors.push("lead_vehicle.exit_s must lie in (start_s, total_length]".into());
            }
            if !(lead.speed.is_finite() && lead.speed >= 0.0) {
                errors.push("lead_vehicle.speed must be >= 0".into());
            }
        }
        if !errors.is_empty() {
            return Err(SimError::InvalidRoute { id, errors });
        }

        route.traffic_lights = self.traffic_lights.clone();
        route
            .traffic_lights
            .sort_by(|a, b| a.stop_line_s.total_cmp(&b.stop_line_s));
        route.obstacles = self
            .obstacles
            .iter()
            .map(|o| Obstacle {
                s: o.s,
                lateral: o.lateral,
                radius: o.radius,
                position: route.offset_point(o.s, o.lateral),
            })
            .collect();
        route.pedestrians = self.pedestrians.clone();
        route.lead_vehicle = self.lead_vehicle.clone();
        Ok(route)
    }
}

impl Route {
    /// Route without hazards through an already-dense polyline.
    pub fn from_polyline(id: &str, waypoints: Vec<[f64; 2]>, lane_half_width: f64) -> Route {
        assert!(waypoints.len() >= 2, "route needs at least two waypoints");
        let n = waypoints.len();
        let mut cum_s = Vec::with_capacity(n);
        let mut seg_heading = Vec::with_capacity(n - 1);
        cum_s.push(0.0);
        for w in waypoints.windows(2) {
            let (dx, dy) = (w[1][0] - w[0][0], w[1][1] - w[0][1]);
            cum_s.push(cum_s.last().unwrap() + dx.hypot(dy));
            seg_heading.push(dy.atan2(dx));
        }
        let mut curvature = vec![0.0; n];
        for i in 1..n - 1 {
            let turn = wrap_angle(seg_heading[i] - seg_heading[i - 1]);
            let ds = 0.5 * (cum_s[i + 1] - cum_s[i - 1]);
            curvature[i] = turn / ds;
        }
        Route {
            id: id.to_string(),
            total_length: cum_s[n - 1],
            waypoints,
            cum_s,
            seg_heading,
            curvature,
            lane_half_width,
            traffic_lights: Vec::new(),
            obstacles: Vec::new(),
            pedestrians: Vec::new(),
            lead_vehicle: None,
        }
    }

    /// Straight route along +x, useful for tests and calibration.
    pub fn straight(id: &str, length: f64, lane_half_width: f64) -> Route {
        let file = RouteFile {
            id: id.to_string(),
            lane_half_width,
            start: StartPose::default(),
            segments: vec![SegmentSpec::Straight { length }],
            waypoints: Vec::new(),
            traffic_lights: Vec::new(),
            obstacles: Vec::new(),
            pedestrians: Vec::new(),
            lead_vehicle: None,
        };
        file.build().expect("straight route is valid")
    }

    fn segment_at(&self, s: f64) -> usize {
        let s = s.clamp(0.0, self.total_length);
        match self.cum_s.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(self.seg_heading.len() - 1),
            Err(i) => (i.max(1) - 1).min(self.seg_heading.len() - 1),
        }
    }

    /// Centerline point and tangent heading at arc length `s` (clamped).
    pub fn point_at(&self, s: f64) -> ([f64; 2], f64) {
        let i = self.segment_at(s);
        let s = s.clamp(0.0, self.total_length);
        let len = self.cum_s[i + 1] - self.cum_s[i];
        let f = if len > 0.0 { (s - self.cum_s[i]) / len } else { 0.0 };
        let (a, b) = (self.waypoints[i], self.waypoints[i + 1]);
        (
            [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])],
            self.seg_heading[i],
        )
    }

    /// World point at arc length `s` displaced `lateral` meters to the left.
    pub fn offset_point(&self, s: f64, lateral: f64) -> [f64; 2] {
        let (p, h) = self.point_at(s);
        [p[0] - lateral * h.sin(), p[1] + lateral * h.cos()]
    }

    /// Curvature at `s`, linearly interpolated between waypoints.
    pub fn curvature_at(&self, s: f64) -> f64 {
        let i = self.segment_at(s);
        let s = s.clamp(0.0, self.total_length);
        let len = self.cum_s[i + 1] - self.cum_s[i];
        let f = if len > 0.0 { (s - self.cum_s[i]) / len } else { 0.0 };
        self.curvature[i] * (1.0 - f) + self.curvature[i + 1] * f
    }

    /// Largest |curvature| over `[s0, s1]`.
    pub fn max_abs_curvature(&self, s0: f64, s1: f64) -> f64 {
        let i0 = self.segment_at(s0);
        let i1 = self.segment_at(s1) + 1;
        self.curvature[i0..=i1.min(self.curvature.len() - 1)]
            .iter()
            .fold(0.0f64, |m, k| m.max(k.abs()))
    }

    fn project_onto(&self, p: [f64; 2], seg: usize) -> (f64, Projection) {
        let (a, b) = (self.waypoints[seg], self.waypoints[seg + 1]);
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len2 = dx * dx + dy * dy;
        let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
        let (qx, qy) = (a[0] + t * dx, a[1] + t * dy);
        let d2 = (p[0] - qx).powi(2) + (p[1] - qy).powi(2);
        let len = len2.sqrt();
        let cross = (dx * (p[1] - qy) - dy * (p[0] - qx)) / len;
        let dist = d2.sqrt();
        let lateral = if cross >= 0.0 { dist } else { -dist };
        (
            d2,
            Projection {
                arc_length: self.cum_s[seg] + t * len,
                lateral_offset: lateral,
                heading_ref: self.seg_heading[seg],
                segment: seg,
            },
        )
    }

    fn project_range(&self, p: [f64; 2], lo: usize, hi: usize) -> Projection {
        let mut best: Option<(f64, Projection)> = None;
        for seg in lo..=hi {
            let cand = self.project_onto(p, seg);
            if best.as_ref().is_none_or(|b| cand.0 < b.0) {
                best = Some(cand);
            }
        }
        best.expect("non-empty segment range").1
    }

    /// Closest point on the whole polyline.
    pub fn project(&self, p: [f64; 2]) -> Projection {
        self.project_range(p, 0, self.seg_heading.len() - 1)
    }

    /// Closest point restricted to arc lengths in `[hint - back, hint + ahead]`.
    pub fn project_near(&self, p: [f64; 2], hint: f64, back: f64, ahead: f64) -> Projection {
        let lo = self.segment_at(hint - back);
        let hi = self.segment_at(hint + ahead);
        self.project_range(p, lo, hi)
    }

    /// Number of direction changes of at least 30 degrees, counting
    /// contiguous curved stretches once.
    pub fn turn_count(&self) -> usize {
        let mut turns = 0;
        let mut acc = 0.0f64;
        for i in 1..self.seg_heading.len() {
            let d = wrap_angle(self.seg_heading[i] - self.seg_heading[i - 1]);
            if d.abs() < 1e-9 {
                if acc.abs() >= 30f64.to_radians() {
                    turns += 1;
                }
                acc = 0.0;
            } else {
                acc += d;
            }
        }
        if acc.abs() >= 30f64.to_radians() {
            turns += 1;
        }
        turns
    }
}

const BUILTIN_ROUTES: [(&str, &str); 5] = [
    ("route00", include_str!("../../routes/route00.toml")),
    ("route01", include_str!("../../routes/route01.toml")),
    ("route02", include_str!("../../routes/route02.toml")),
    ("route03", include_str!("../../routes/route03.toml")),
    ("route_test", include_str!("../../routes/route_test.toml")),
];

/// Training routes shipped with the crate.
pub const TRAINING_ROUTES: [&str; 4] = ["route00", "route01", "route02", "route03"];
/// Route reserved for generalization tests.
pub const HELD_OUT_ROUTE: &str = "route_test";

/// Named routes available to the environment.
#[derive(Clone, Debug, Default)]
pub struct RouteRegistry {
    routes: BTreeMap<String, Arc<Route>>,
}

impl RouteRegistry {
    /// Registry holding the five shipped routes.
    pub fn builtin() -> Self {
        let mut reg = RouteRegistry::default();
        for (_, text) in BUILTIN_ROUTES {
            let route = RouteFile::from_toml_str(text)
                .and_then(|f| f.build())
                .expect("shipped route files are valid");
            reg.insert(route);
        }
        reg
    }

    /// Raw text of a shipped route file.
    pub fn builtin_source(id: &str) -> Option<&'static str> {
        BUILTIN_ROUTES.iter().find(|(k, _)| *k == id).map(|(_, t)| *t)
    }

    pub fn insert(&mut self, route: Route) {
        self.routes.insert(route.id.clone(), Arc::new(route));
    }

    /// Loads every `*.toml` file in `dir`, replacing routes with the same id.
    pub fn load_dir(&mut self, dir: &Path) -> Result<Vec<String>, SimError> {
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| SimError::Io(format!("{}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        entries.sort();
        let mut ids = Vec::new();
        for path in entries {
            let text = std::fs::read_to_string(&path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
            let route = RouteFile::from_toml_str(&text)?.build()?;
            ids.push(route.id.clone());
            self.insert(route);
        }
        Ok(ids)
    }

    pub fn get(&self, id: &str) -> Result<Arc<Route>, SimError> {
        self.routes
            .get(id)
            .cloned()
            .ok_or_else(|| SimError::UnknownRoute(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.routes.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn curvy() -> Route {
        RouteFile {
            id: "curvy".into(),
            lane_half_width: 2.0,
            start: StartPose::default(),
            segments: vec![
                SegmentSpec::Straight { length: 20.0 },
                SegmentSpec::Arc {
                    radius: 15.0,
                    angle_deg: 120.0,
                },
                SegmentSpec::Straight { length: 10.0 },
                SegmentSpec::Arc {
                    radius: 25.0,
                    angle_deg: -150.0,
                },
                SegmentSpec::Straight { length: 15.0 },
            ],
            waypoints: vec![],
            traffic_lights: vec![],
            obstacles: vec![],
            pedestrians: vec![],
            lead_vehicle: None,
        }
        .build()
        .unwrap()
    }

    #[test]
    fn densified_geometry() {
        let r = curvy();
        let expected = 20.0 + 15.0 * 120f64.to_radians() + 10.0 + 25.0 * 150f64.to_radians() + 15.0;
        assert!((r.total_length - expected).abs() < 0.05);
        for w in r.cum_s.windows(2) {
            assert!(w[1] > w[0]);
            assert!(w[1] - w[0] <= MAX_WAYPOINT_SPACING + 1e-9);
        }
        assert_eq!(*r.cum_s.last().unwrap(), r.total_length);
        assert_eq!(r.turn_count(), 2);
        // mid-arc curvature close to 1/R with the left turn positive
        let k = r.curvature_at(20.0 + 15.0 * 60f64.to_radians());
        assert_abs_diff_eq!(k, 1.0 / 15.0, epsilon = 1e-3);
        let k = r.curvature_at(r.total_length - 15.0 - 25.0);
        assert_abs_diff_eq!(k, -1.0 / 25.0, epsilon = 1e-3);
    }

    #[test]
    fn projection_on_waypoints() {
        let r = curvy();
        for k in [0, 7, 40, 101, r.waypoints.len() - 1] {
            let p = r.project(r.waypoints[k]);
            assert!(p.lateral_offset.abs() < 1e-9);
            assert_abs_diff_eq!(p.arc_length, r.cum_s[k], epsilon = 1e-9);
        }
    }

    #[test]
    fn lateral_sign_left_positive() {
        let r = Route::straight("s", 50.0, 2.0);
        let p = r.project([10.0, 1.0]);
        assert_abs_diff_eq!(p.lateral_offset, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.arc_length, 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.project([10.0, -0.7]).lateral_offset, -0.7, epsilon = 1e-12);
    }

    #[test]
    fn projection_matches_dense_sampling_oracle() {
        // oracle: sample the centerline every centimeter and take the nearest sample
        let r = curvy();
        let n = (r.total_length / 0.01).ceil() as usize;
        let samples: Vec<[f64; 2]> = (0..=n).map(|k| r.point_at(k as f64 * 0.01).0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let s = rng.random_range(0.0..r.total_length);
            let lat = rng.random_range(-3.0..3.0);
            let p = r.offset_point(s, lat);
            let proj = r.project(p);
            let (best_k, best_d) = samples
                .iter()
                .enumerate()
                .map(|(k, q)| (k, (q[0] - p[0]).hypot(q[1] - p[1])))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            assert!((proj.lateral_offset.abs() - best_d).abs() <= 0.02);
            let oracle_pt = samples[best_k];
            let mine = r.point_at(proj.arc_length).0;
            assert!((mine[0] - oracle_pt[0]).hypot(mine[1] - oracle_pt[1]) <= 0.02 + 1e-9);
        }
    }

    #[test]
    fn light_phases_cycle() {
        let l = TrafficLight {
            stop_line_s: 10.0,
            green_s: 5.0,
            yellow_s: 1.0,
            red_s: 4.0,
            phase_offset_s: 0.0,
        };
        assert_eq!(l.phase_at(0.0, 0.0), LightPhase::Green);
        assert_eq!(l.phase_at(5.5, 0.0), LightPhase::Yellow);
        assert_eq!(l.phase_at(7.0, 0.0), LightPhase::Red);
        assert_eq!(l.phase_at(10.0, 0.0), LightPhase::Green);
        assert_eq!(l.phase_at(0.0, 7.0), LightPhase::Red);
    }

    #[test]
    fn invalid_route_lists_fields() {
        let mut f = RouteFile::from_toml_str(RouteRegistry::builtin_source("route00").unwrap()).unwrap();
        f.lane_half_width = -1.0;
        f.traffic_lights[0].stop_line_s = 1e6;
        match f.build() {
            Err(SimError::InvalidRoute { errors, .. }) => {
                assert!(errors.iter().any(|e| e.contains("lane_half_width")));
            }
            other => panic!("expected validation error, got {other:?}"),
        }
        let mut f = RouteFile::from_toml_str(RouteRegistry::builtin_source("route00").unwrap()).unwrap();
        f.traffic_lights[0].stop_line_s = 1e6;
        match f.build() {
            Err(SimError::InvalidRoute { errors, .. }) => {
                assert!(errors.iter().any(|e| e.contains("traffic_lights[0].stop_line_s")));
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_field_rejected() {
        let err = RouteFile::from_toml_str("id = \"x\"\nlane_half_width = 2.0\nbogus = 1\n");
        assert!(matches!(err, Err(SimError::RouteParse(_))));
    }

    #[test]
    fn shipped_routes_meet_layout_requirements() {
        let reg = RouteRegistry::builtin();
        for id in TRAINING_ROUTES.iter().chain([HELD_OUT_ROUTE].iter()) {
            let r = reg.get(id).unwrap();
            assert!(
                (400.0..=800.0).contains(&r.total_length),
                "{id} length {}",
                r.total_length
            );
            assert!(r.turn_count() >= 2, "{id} turns");
            assert!(!r.traffic_lights.is_empty(), "{id} lights");
            assert!(!r.obstacles.is_empty(), "{id} obstacles");
            assert_eq!(r.pedestrians.len(), 1, "{id} pedestrians");
        }
        assert!(matches!(reg.get("route99"), Err(SimError::UnknownRoute(_))));
    }
}
