#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sirl_core::drivesim::OBS_DIM;
use sirl_core::policy::ActionGaussian;
use sirl_core::sac::{Batch, BatchNoise, SacAgent, SacConfig, Transition};

pub const FD_EPS: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Denominator floor for the relative error so that gradients that are zero
/// up to rounding do not divide by zero.
pub const FD_FLOOR: f64 = 1e-7;

#[derive(Debug, Default)]
pub struct GradCheck {
    pub checked: usize,
    pub failed: Vec<(usize, f64, f64)>,
    pub worst: f64,
}

impl GradCheck {
    pub fn merge(&mut self, other: GradCheck) {
        self.checked += other.checked;
        self.failed.extend(other.failed);
        self.worst = self.worst.max(other.worst);
    }
}

/// Central-difference check of `analytic` against `f` around `params`.
pub fn fd_check(mut f: impl FnMut(&[f64]) -> f64, params: &[f64], analytic: &[f64]) -> GradCheck {
    assert_eq!(params.len(), analytic.len());
    let mut out = GradCheck::default();
    let mut p = params.to_vec();
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + FD_EPS;
        let up = f(&p);
        p[i] = orig - FD_EPS;
        let down = f(&p);
        p[i] = orig;
        let num = (up - down) / (2.0 * FD_EPS);
        let rel = (num - analytic[i]).abs() / num.abs().max(analytic[i].abs()).max(FD_FLOOR);
        out.checked += 1;
        out.worst = out.worst.max(rel);
        if rel > FD_REL_TOL {
            out.failed.push((i, analytic[i], num));
        }
    }
    out
}

pub fn small_config() -> SacConfig {
    SacConfig {
        hidden: vec![16, 16],
        batch_size: 4,
        ..Default::default()
    }
}

pub fn random_transitions(n: usize, seed: u64) -> Vec<Transition> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut s = [0.0; OBS_DIM];
            let mut s2 = [0.0; OBS_DIM];
            for j in 0..OBS_DIM {
                s[j] = rng.random_range(-1.0..1.0);
                s2[j] = rng.random_range(-1.0..1.0);
            }
            let prior = ActionGaussian::new(
                [rng.random_range(-0.5..0.5), rng.random_range(0.0..1.0)],
                [rng.random_range(0.05..0.3), rng.random_range(0.05..0.3)],
            )
            .unwrap();
            Transition {
                s,
                a: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                r: rng.random_range(-0.02..0.0),
                s_next: s2,
                done: i % 3 == 1,
                prior_t: prior,
                prior_next: prior,
            }
        })
        .collect()
}

pub fn random_batch(n: usize, seed: u64) -> Batch {
    let ts = random_transitions(n, seed);
    Batch::from_transitions(&ts.iter().collect::<Vec<_>>())
}

/// Checks actor, both critics and the temperature for one agent and batch.
pub fn check_agent(agent: &SacAgent, batch: &Batch, noise: &BatchNoise, kl_beta: f64) -> GradCheck {
    let mut report = GradCheck::default();

    let eval = agent.actor_loss_grad(batch, &noise.current, kl_beta);
    let mut probe = agent.clone();
    report.merge(fd_check(
        |p| {
            probe.actor.params_mut().copy_from_slice(p);
            probe.actor_loss_grad(batch, &noise.current, kl_beta).loss
        },
        agent.actor.params(),
        &eval.grads,
    ));

    let y = agent.critic_targets(batch, &noise.next);
    for which in 0..2 {
        let net = if which == 0 { &agent.q1 } else { &agent.q2 };
        let (_, grads) = SacAgent::critic_loss_grad(net, batch, &y);
        let mut probe = net.clone();
        report.merge(fd_check(
            |p| {
                probe.params_mut().copy_from_slice(p);
                SacAgent::critic_loss_grad(&probe, batch, &y).0
            },
            net.params(),
            &grads,
        ));
    }

    let (_, g_alpha) = agent.alpha_loss_grad(eval.mean_log_prob);
    let mut probe = agent.clone();
    report.merge(fd_check(
        |p| {
            probe.set_log_alpha(p[0]);
            probe.alpha_loss_grad(eval.mean_log_prob).0
        },
        &[agent.log_alpha()],
        &[g_alpha],
    ));
    report
}

pub fn noise(n: usize, seed: u64) -> BatchNoise {
    BatchNoise::sample(n, &mut ChaCha8Rng::seed_from_u64(seed))
}
