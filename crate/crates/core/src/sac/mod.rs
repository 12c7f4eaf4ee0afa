//! Soft actor-critic learner built on small hand-differentiated MLPs, and
//! the ensemble policy head.

mod adam;
mod agent;
mod ensemble;
mod mlp;
mod replay;

pub use adam::Adam;
pub use agent::{ActorEval, AlphaMode, Batch, BatchNoise, LossReport, SacAgent, SacConfig};
pub use ensemble::{act_sirl, ensemble_policy, SirlAction};
pub use mlp::{Mlp, MlpCache};
pub use replay::{ReplayBuffer, Transition};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SacError {
    #[error("non-finite {what} in update {update}; update rejected")]
    NonFinite { what: String, update: u64 },
}
