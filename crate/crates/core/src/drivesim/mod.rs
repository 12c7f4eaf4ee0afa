//! Deterministic 2D driving environment.
//!
//! The ego car follows a kinematic bicycle model along a densified route.
//! Scripted hazards (fixed-cycle traffic lights, static obstacles, crossing
//! pedestrians, a lead car) are laid out by the route file; a seed jitters
//! their timing at reset. Rewards penalize lateral and heading deviation
//! from the route and pay a bonus on completion.

mod env;
mod kinematics;
mod route;

pub use env::{
    build_observation, compute_reward, detect_infractions, DriveEnv, EpisodeMetrics, HazardView, Infraction, LeadState,
    Observation, PedestrianState, PedestrianStatus, RewardConfig, ScenarioConfig, Scene, SimConfig, StepInfo,
    StepOutcome, Termination, WorldState, HAZARD_RANGE, OBS_DIM,
};
pub use kinematics::{bicycle_step, wrap_angle, Pose, VehicleParams};
pub use route::{
    LeadVehicleProfile, LightPhase, Obstacle, ObstacleSpec, PedestrianEvent, Projection, Route, RouteFile,
    RouteRegistry, SegmentSpec, StartPose, TrafficLight, HELD_OUT_ROUTE, MAX_WAYPOINT_SPACING, TRAINING_ROUTES,
};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SimError {
    #[error("unknown route id `{0}`")]
    UnknownRoute(String),
    #[error("route file could not be parsed: {0}")]
    RouteParse(String),
    #[error("route `{id}` is invalid: {}", errors.join("; "))]
    InvalidRoute { id: String, errors: Vec<String> },
    #[error("invalid scenario: {}", .0.join("; "))]
    InvalidScenario(Vec<String>),
    #[error("step called after the episode finished")]
    StepAfterDone,
    #[error("step called before reset")]
    NotReset,
    #[error("i/o error: {0}")]
    Io(String),
}
