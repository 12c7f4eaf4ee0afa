//! Comparison policies sharing the environment and learner: plain SAC,
//! residual RL on the sparse prior, KL-regularized SAC, and the two expert
//! rollouts.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::drivesim::{Observation, Scene, WorldState};
use crate::expert::{dense_expert_mean, ExpertGains};
use crate::policy::{realize, ActionGaussian, VehicleAction, ACTION_DIM};
use crate::sac::{Batch, SacAgent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sirl,
    Sac,
    Residual,
    Kl,
    SparseExpert,
    DenseExpert,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Sirl,
        Method::Sac,
        Method::Residual,
        Method::Kl,
        Method::SparseExpert,
        Method::DenseExpert,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Sirl => "sirl",
            Method::Sac => "sac",
            Method::Residual => "residual",
            Method::Kl => "kl",
            Method::SparseExpert => "sparse_expert",
            Method::DenseExpert => "dense_expert",
        }
    }

    /// Whether the method has learned parameters.
    pub fn learns(&self) -> bool {
        matches!(self, Method::Sirl | Method::Sac | Method::Residual | Method::Kl)
    }

    /// Number of SAC agents the method trains, given the configured
    /// ensemble size for the composite policy.
    pub fn agent_count(&self, ensemble_size: usize) -> usize {
        match self {
            Method::Sirl => ensemble_size,
            Method::Sac | Method::Residual | Method::Kl => 1,
            Method::SparseExpert | Method::DenseExpert => 0,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| {
            format!("unknown method `{s}` (expected one of sirl, sac, residual, kl, sparse_expert, dense_expert)")
        })
    }
}

/// Plain SAC acting: the agent's own policy realized directly.
pub fn act_sac<R: Rng + ?Sized>(
    agent: &SacAgent,
    s: &Observation,
    rng: &mut R,
    deterministic: bool,
) -> (VehicleAction, [f64; ACTION_DIM], ActionGaussian) {
    let pi = agent.actor_forward(s);
    let (action, raw) = realize(&pi, rng, deterministic);
    (action, raw, pi)
}

/// Residual RL decision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualAction {
    pub action: VehicleAction,
    /// `prior_mean + scale * residual`, before clamping.
    pub raw: [f64; ACTION_DIM],
    /// The agent's own sample; this is what its critics are trained on.
    pub residual: [f64; ACTION_DIM],
    pub policy: ActionGaussian,
}

impl ResidualAction {
    pub fn residual_norm(&self) -> f64 {
        self.residual.iter().map(|r| r * r).sum::<f64>().sqrt()
    }
}

/// Residual RL acting: the prior mean plus a scaled actor sample, clamped
/// only after the sum.
pub fn act_residual<R: Rng + ?Sized>(
    agent: &SacAgent,
    prior_mean: [f64; ACTION_DIM],
    s: &Observation,
    rng: &mut R,
    deterministic: bool,
    scale: f64,
) -> ResidualAction {
    let policy = agent.actor_forward(s);
    let residual = if deterministic { policy.mean } else { policy.sample(rng) };
    let raw = [prior_mean[0] + scale * residual[0], prior_mean[1] + scale * residual[1]];
    ResidualAction {
        action: VehicleAction::from_raw(raw),
        raw,
        residual,
        policy,
    }
}

/// KL-regularized actor objective: the SAC actor loss plus
/// `beta * KL(pi(.|s) || prior(.|s))`, averaged over the batch.
pub fn kl_actor_loss(agent: &SacAgent, batch: &Batch, noise: &ndarray::Array2<f64>, beta: f64) -> f64 {
    agent.actor_loss_grad(batch, noise, beta).loss
}

/// Dense expert acting: the rule controller on the true state every tick.
pub fn act_dense_expert(world: &WorldState, scene: &Scene, gains: &ExpertGains) -> VehicleAction {
    VehicleAction::from_raw(dense_expert_mean(world, scene, gains))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sac::{BatchNoise, Mlp, SacConfig, Transition};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_actor(agent: &mut SacAgent, log_std: f64) {
        agent.actor = Mlp::zeros(agent.actor.sizes());
        agent.actor.set_output_bias(&[0.0, 0.0, log_std, log_std]);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("ppo".parse::<Method>().is_err());
    }

    #[test]
    fn residual_adds_then_clamps() {
        let mut agent = SacAgent::new(SacConfig::default(), 0);
        agent.actor = Mlp::zeros(agent.actor.sizes());
        agent.actor.set_output_bias(&[0.1, -0.1, -5.0, -5.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = [0.0; 12];
        let r = act_residual(&agent, [0.0, 0.5], &s, &mut rng, true, 1.0);
        assert!((r.raw[0] - 0.1).abs() < 1e-15 && (r.raw[1] - 0.4).abs() < 1e-15);

        agent.actor.set_output_bias(&[0.5, 0.5, -5.0, -5.0]);
        let r = act_residual(&agent, [0.9, 1.0], &s, &mut rng, true, 1.0);
        assert_eq!((r.action.steer, r.action.throttle, r.action.brake), (1.0, 1.0, false));
    }

    #[test]
    fn zero_residual_is_the_prior() {
        let mut agent = SacAgent::new(SacConfig::default(), 0);
        zero_actor(&mut agent, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = act_residual(&agent, [0.3, 0.2], &[0.5; 12], &mut rng, true, 1.0);
        assert_eq!(r.action, VehicleAction::from_raw([0.3, 0.2]));
    }

    #[test]
    fn deterministic_sac_is_clamped_mean() {
        let agent = SacAgent::new(SacConfig::default(), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = [0.2; 12];
        let (a, raw, pi) = act_sac(&agent, &s, &mut rng, true);
        assert_eq!(raw, pi.mean);
        assert_eq!(a, VehicleAction::from_raw(pi.mean));
    }

    #[test]
    fn kl_term_vanishes_when_policy_equals_prior() {
        let mut agent = SacAgent::new(SacConfig::default(), 0);
        zero_actor(&mut agent, -1.0);
        let prior = ActionGaussian::isotropic([0.0, 0.0], (-1.0f64).exp()).unwrap();
        let ts: Vec<Transition> = (0..4)
            .map(|i| Transition {
                s: [i as f64 * 0.1; 12],
                a: [0.0, 0.0],
                r: 0.0,
                s_next: [0.0; 12],
                done: false,
                prior_t: prior,
                prior_next: prior,
            })
            .collect();
        let batch = Batch::from_transitions(&ts.iter().collect::<Vec<_>>());
        let noise = BatchNoise::sample(4, &mut ChaCha8Rng::seed_from_u64(1)).current;
        let plain = kl_actor_loss(&agent, &batch, &noise, 0.0);
        let reg = kl_actor_loss(&agent, &batch, &noise, 0.1);
        assert!((plain - reg).abs() < 1e-12);
    }

    #[test]
    fn kl_closed_form_matches_monte_carlo() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draw = |rng: &mut ChaCha8Rng| {
            ActionGaussian::new(
                [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                [rng.random_range(0.05..1.0), rng.random_range(0.05..1.0)],
            )
            .unwrap()
        };
        for _ in 0..10 {
            let p = draw(&mut rng);
            let q = draw(&mut rng);
            let n = 100_000;
            let samples: Vec<f64> = (0..n)
                .map(|_| {
                    let x = p.sample(&mut rng);
                    p.log_density(x) - q.log_density(x)
                })
                .collect();
            let mean = samples.iter().sum::<f64>() / n as f64;
            let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            let kl = p.kl_divergence(&q);
            assert!((kl - mean).abs() <= 3.0 * se, "closed form {kl}, MC {mean} +- {se}");
        }
    }
}
