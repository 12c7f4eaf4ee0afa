use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::HarnessError;
use crate::baselines::{act_residual, act_sac, Method};
use crate::drivesim::{DriveEnv, EpisodeMetrics, Observation, Route, ScenarioConfig, Termination};
use crate::expert::{dense_expert_mean, ExpertGains, SparseExpert};
use crate::policy::{realize, ActionGaussian, VehicleAction, ACTION_DIM};
use crate::sac::{act_sirl, SacAgent};

/// Named random streams. Every seed used anywhere is derived from a run (or
/// evaluation) seed, a stream tag and an index.
pub mod streams {
    pub const AGENT_INIT: u64 = 1;
    pub const SCENARIO: u64 = 2;
    pub const EXPERT_NOISE: u64 = 3;
    pub const BEHAVIOR: u64 = 4;
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for `(base, stream, index)`.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let golden = 0x9e37_79b9_7f4a_7c15u64;
    mix64(mix64(mix64(base.wrapping_add(golden)) ^ stream.wrapping_mul(golden)) ^ index)
}

/// Stable numeric key for a route id.
pub fn route_key(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// The acting rule of one method together with its learned parameters.
#[derive(Clone, Copy)]
pub struct Policy<'a> {
    pub method: Method,
    pub agents: &'a [SacAgent],
    pub residual_scale: f64,
    pub gains: &'a ExpertGains,
}

/// Everything observed at one environment step.
#[derive(Clone, Debug)]
pub struct StepData {
    pub step: usize,
    pub arc_length: f64,
    pub s: Observation,
    /// The learner's own action: the raw behavior sample, or the residual
    /// sample for residual RL.
    pub agent_action: [f64; ACTION_DIM],
    pub raw: [f64; ACTION_DIM],
    pub action: VehicleAction,
    pub reward: f64,
    pub s_next: Observation,
    pub terminal: bool,
    pub prior_t: ActionGaussian,
    pub prior_next: ActionGaussian,
    /// Learned policy distribution, when the method has one.
    pub pi: Option<ActionGaussian>,
    /// Distribution the executed action is drawn from, when there is one.
    pub phi: Option<ActionGaussian>,
}

/// Seeds of one episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EpisodeSeeds {
    pub scenario: u64,
    pub expert: u64,
    pub behavior: u64,
}

/// Rolls out one full episode, reporting each step to `observer`.
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    env: &mut DriveEnv,
    expert: &mut SparseExpert,
    policy: Policy<'_>,
    route: Arc<Route>,
    scenario: &ScenarioConfig,
    seeds: EpisodeSeeds,
    deterministic: bool,
    observer: &mut dyn FnMut(&StepData),
) -> Result<EpisodeMetrics, HarnessError> {
    let mut s = env.reset(route, scenario, seeds.scenario)?;
    expert.reset(seeds.expert);
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.behavior);
    let mut prior = {
        let (w, sc) = (env.world().expect("reset"), env.scene().expect("reset"));
        expert.prior_distribution(w, sc)
    };
    let mut step = 0;
    loop {
        let (pi, phi, raw, agent_action, action) = match policy.method {
            Method::Sirl => {
                let d = act_sirl(policy.agents, &prior, &s, &mut rng, deterministic);
                (Some(d.rl), Some(d.fused), d.raw, d.raw, d.action)
            }
            Method::Sac | Method::Kl => {
                let (action, raw, pi) = act_sac(&policy.agents[0], &s, &mut rng, deterministic);
                (Some(pi), Some(pi), raw, raw, action)
            }
            Method::Residual => {
                let d = act_residual(
                    &policy.agents[0],
                    prior.mean,
                    &s,
                    &mut rng,
                    deterministic,
                    policy.residual_scale,
                );
                let k = policy.residual_scale;
                let phi = ActionGaussian {
                    mean: [
                        prior.mean[0] + k * d.policy.mean[0],
                        prior.mean[1] + k * d.policy.mean[1],
                    ],
                    var: [k * k * d.policy.var[0], k * k * d.policy.var[1]],
                };
                (
                    Some(d.policy),
                    phi.is_valid().then_some(phi),
                    d.raw,
                    d.residual,
                    d.action,
                )
            }
            Method::SparseExpert => {
                let (action, raw) = realize(&prior, &mut rng, true);
                (None, Some(prior), raw, raw, action)
            }
            Method::DenseExpert => {
                let raw = dense_expert_mean(env.world().expect("reset"), env.scene().expect("reset"), policy.gains);
                (None, None, raw, raw, VehicleAction::from_raw(raw))
            }
        };
        let out = env.step(&action)?;
        let prior_next = {
            let (w, sc) = (env.world().expect("reset"), env.scene().expect("reset"));
            expert.prior_distribution(w, sc)
        };
        let terminal = out.done && out.info.termination != Some(Termination::MaxSteps);
        observer(&StepData {
            step,
            arc_length: out.info.arc_length_s,
            s,
            agent_action,
            raw,
            action,
            reward: out.reward,
            s_next: out.observation,
            terminal,
            prior_t: prior,
            prior_next,
            pi,
            phi,
        });
        step += 1;
        s = out.observation;
        prior = prior_next;
        if out.done {
            return Ok(env.metrics());
        }
    }
}
