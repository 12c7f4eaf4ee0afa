use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::mlp::Mlp;
use super::replay::{ReplayBuffer, Transition};
use super::SacError;
use crate::drivesim::{Observation, OBS_DIM};
use crate::policy::{ActionGaussian, ACTION_DIM};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    /// Temperature tuned toward `target_entropy`.
    Auto,
    /// Temperature held at `init_alpha`.
    Fixed,
}

/// Hyperparameters of one soft actor-critic learner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub tau: f64,
    pub lr: f64,
    pub batch_size: usize,
    /// Environment steps collected before the first update.
    pub warmup_steps: usize,
    /// Environment steps per gradient update.
    pub update_every: usize,
    pub alpha_mode: AlphaMode,
    pub init_alpha: f64,
    pub target_entropy: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub buffer_capacity: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            hidden: vec![64, 64],
            gamma: 0.99,
            tau: 0.005,
            lr: 1e-3,
            batch_size: 64,
            warmup_steps: 1000,
            update_every: 16,
            alpha_mode: AlphaMode::Auto,
            init_alpha: 0.1,
            target_entropy: -(ACTION_DIM as f64),
            log_std_min: -5.0,
            log_std_max: 1.0,
            buffer_capacity: 200_000,
        }
    }
}

impl SacConfig {
    pub(crate) fn validate(&self, errors: &mut Vec<String>) {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            errors.push("sac.hidden must list positive layer widths".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            errors.push(format!("sac.gamma must be in [0, 1] (got {})", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            errors.push(format!("sac.tau must be in (0, 1] (got {})", self.tau));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            errors.push(format!("sac.lr must be >= 0 (got {})", self.lr));
        }
        if self.batch_size == 0 {
            errors.push("sac.batch_size must be at least 1".into());
        }
        if self.update_every == 0 {
            errors.push("sac.update_every must be at least 1".into());
        }
        let alpha_ok = match self.alpha_mode {
            AlphaMode::Auto => self.init_alpha > 0.0,
            AlphaMode::Fixed => self.init_alpha >= 0.0,
        };
        if !(alpha_ok && self.init_alpha.is_finite()) {
            errors.push(format!("sac.init_alpha out of range (got {})", self.init_alpha));
        }
        if !self.target_entropy.is_finite() {
            errors.push("sac.target_entropy must be finite".into());
        }
        if !(self.log_std_min < self.log_std_max) {
            errors.push("sac.log_std_min must be below sac.log_std_max".into());
        }
        if self.buffer_capacity < self.batch_size {
            errors.push("sac.buffer_capacity must be at least sac.batch_size".into());
        }
    }
}

/// Column-stacked minibatch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub s: Array2<f64>,
    pub a: Array2<f64>,
    pub r: Array1<f64>,
    pub s_next: Array2<f64>,
    pub done: Array1<f64>,
    pub prior_mean: Array2<f64>,
    pub prior_var: Array2<f64>,
}

impl Batch {
    pub fn from_transitions(ts: &[&Transition]) -> Batch {
        let n = ts.len();
        let mut b = Batch {
            s: Array2::zeros((n, OBS_DIM)),
            a: Array2::zeros((n, ACTION_DIM)),
            r: Array1::zeros(n),
            s_next: Array2::zeros((n, OBS_DIM)),
            done: Array1::zeros(n),
            prior_mean: Array2::zeros((n, ACTION_DIM)),
            prior_var: Array2::zeros((n, ACTION_DIM)),
        };
        for (i, t) in ts.iter().enumerate() {
            for j in 0..OBS_DIM {
                b.s[[i, j]] = t.s[j];
                b.s_next[[i, j]] = t.s_next[j];
            }
            for j in 0..ACTION_DIM {
                b.a[[i, j]] = t.a[j];
                b.prior_mean[[i, j]] = t.prior_t.mean[j];
                b.prior_var[[i, j]] = t.prior_t.var[j];
            }
            b.r[i] = t.r;
            b.done[i] = if t.done { 1.0 } else { 0.0 };
        }
        b
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}

/// Standard-normal draws used by one update: for the next-state action in
/// the critic target and for the reparameterized action in the actor loss.
#[derive(Clone, Debug)]
pub struct BatchNoise {
    pub next: Array2<f64>,
    pub current: Array2<f64>,
}

impl BatchNoise {
    pub fn sample<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut draw = || Array2::from_shape_simple_fn((n, ACTION_DIM), || rng.sample::<f64, _>(StandardNormal));
        let next = draw();
        let current = draw();
        BatchNoise { next, current }
    }
}

/// Losses of one accepted update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub critic1: f64,
    pub critic2: f64,
    pub actor: f64,
    pub alpha_loss: f64,
    pub alpha: f64,
    /// Batch mean of `-log pi(a|s)` for fresh actor samples.
    pub entropy: f64,
}

/// Actor outputs for a batch: means, clamped log-stds and the clamp mask.
struct ActorHead {
    cache: super::mlp::MlpCache,
    mean: Array2<f64>,
    log_std: Array2<f64>,
    in_range: Array2<bool>,
}

/// Value and gradient of the actor objective.
pub struct ActorEval {
    pub loss: f64,
    pub grads: Vec<f64>,
    pub mean_log_prob: f64,
}

/// Soft actor-critic learner: actor, twin critics, target critics, entropy
/// temperature and their optimizer states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SacAgent {
    config: SacConfig,
    pub actor: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    log_alpha: f64,
    opt_actor: Adam,
    opt_q1: Adam,
    opt_q2: Adam,
    opt_alpha: Adam,
    rng: ChaCha8Rng,
    updates: u64,
    rejected: u64,
}

impl SacAgent {
    /// Fresh agent; `seed` drives both initialization and the agent's own
    /// minibatch and noise stream.
    pub fn new(config: SacConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut actor_sizes = vec![OBS_DIM];
        actor_sizes.extend(&config.hidden);
        actor_sizes.push(2 * ACTION_DIM);
        let mut critic_sizes = vec![OBS_DIM + ACTION_DIM];
        critic_sizes.extend(&config.hidden);
        critic_sizes.push(1);
        let actor = Mlp::new(&actor_sizes, &mut rng);
        let q1 = Mlp::new(&critic_sizes, &mut rng);
        let q2 = Mlp::new(&critic_sizes, &mut rng);
        let lr = config.lr;
        SacAgent {
            opt_actor: Adam::new(actor.param_count(), lr),
            opt_q1: Adam::new(q1.param_count(), lr),
            opt_q2: Adam::new(q2.param_count(), lr),
            opt_alpha: Adam::new(1, lr),
            log_alpha: config.init_alpha.ln(),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            actor,
            q1,
            q2,
            config,
            rng,
            updates: 0,
            rejected: 0,
        }
    }

    pub fn config(&self) -> &SacConfig {
        &self.config
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn log_alpha(&self) -> f64 {
        self.log_alpha
    }

    pub fn set_log_alpha(&mut self, v: f64) {
        self.log_alpha = v;
    }

    /// Accepted and rejected update counts.
    pub fn update_counts(&self) -> (u64, u64) {
        (self.updates, self.rejected)
    }

    pub fn is_finite(&self) -> bool {
        [&self.actor, &self.q1, &self.q2, &self.q1_target, &self.q2_target]
            .iter()
            .all(|n| n.is_finite())
            && self.log_alpha.is_finite()
    }

    fn actor_head(&self, s: &Array2<f64>) -> ActorHead {
        let cache = self.actor.forward(s);
        let out = cache.output();
        let mean = out.slice(s![.., 0..ACTION_DIM]).to_owned();
        let raw = out.slice(s![.., ACTION_DIM..]);
        let (lo, hi) = (self.config.log_std_min, self.config.log_std_max);
        let log_std = raw.mapv(|x| x.clamp(lo, hi));
        let in_range = raw.mapv(|x| (lo..=hi).contains(&x));
        ActorHead {
            cache,
            mean,
            log_std,
            in_range,
        }
    }

    /// Policy distribution at `s`.
    pub fn actor_forward(&self, s: &Observation) -> ActionGaussian {
        let out = self.actor.forward_one(s);
        let (lo, hi) = (self.config.log_std_min, self.config.log_std_max);
        let mut mean = [0.0; ACTION_DIM];
        let mut var = [0.0; ACTION_DIM];
        for d in 0..ACTION_DIM {
            mean[d] = out[d];
            var[d] = (2.0 * out[ACTION_DIM + d].clamp(lo, hi)).exp();
        }
        ActionGaussian { mean, var }
    }

    fn q_input(s: &Array2<f64>, a: &Array2<f64>) -> Array2<f64> {
        concatenate(Axis(1), &[s.view(), a.view()]).expect("matching batch sizes")
    }

    /// Reparameterized samples and their log densities.
    fn sample_actions(head: &ActorHead, noise: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
        let std = head.log_std.mapv(f64::exp);
        let a = &head.mean + &(&std * noise);
        let n = noise.nrows();
        let mut logp = Array1::zeros(n);
        for i in 0..n {
            for d in 0..ACTION_DIM {
                logp[i] += -0.5 * noise[[i, d]].powi(2) - head.log_std[[i, d]] - 0.5 * LN_2PI;
            }
        }
        (a, logp)
    }

    /// Soft Bellman targets `r + gamma (1 - done) (min Q'(s', a') - alpha log pi(a'|s'))`.
    pub fn critic_targets(&self, batch: &Batch, noise_next: &Array2<f64>) -> Array1<f64> {
        let head = self.actor_head(&batch.s_next);
        let (a_next, logp) = Self::sample_actions(&head, noise_next);
        let x = Self::q_input(&batch.s_next, &a_next);
        let q1 = self.q1_target.forward(&x);
        let q2 = self.q2_target.forward(&x);
        let alpha = self.alpha();
        let mut y = batch.r.clone();
        for i in 0..batch.len() {
            if batch.done[i] == 0.0 && self.config.gamma != 0.0 {
                let soft = q1.output()[[i, 0]].min(q2.output()[[i, 0]]) - alpha * logp[i];
                y[i] += self.config.gamma * soft;
            }
        }
        y
    }

    /// Mean squared error of `q` against `y`, with its parameter gradient.
    pub fn critic_loss_grad(q: &Mlp, batch: &Batch, y: &Array1<f64>) -> (f64, Vec<f64>) {
        let cache = q.forward(&Self::q_input(&batch.s, &batch.a));
        let n = batch.len() as f64;
        let mut grad_out = Array2::zeros((batch.len(), 1));
        let mut loss = 0.0;
        for i in 0..batch.len() {
            let e = cache.output()[[i, 0]] - y[i];
            loss += e * e / n;
            grad_out[[i, 0]] = 2.0 * e / n;
        }
        let mut grads = vec![0.0; q.param_count()];
        q.backward(&cache, &grad_out, &mut grads);
        (loss, grads)
    }

    /// Actor objective `mean(alpha log pi(a|s) - min Q(s, a))`, plus
    /// `kl_beta * mean KL(pi || prior)` when `kl_beta > 0`, with its gradient
    /// with respect to the actor parameters.
    pub fn actor_loss_grad(&self, batch: &Batch, noise: &Array2<f64>, kl_beta: f64) -> ActorEval {
        let n = batch.len();
        let nf = n as f64;
        let alpha = self.alpha();
        let head = self.actor_head(&batch.s);
        let (a, logp) = Self::sample_actions(&head, noise);
        let x = Self::q_input(&batch.s, &a);
        let c1 = self.q1.forward(&x);
        let c2 = self.q2.forward(&x);
        let mut g1 = Array2::zeros((n, 1));
        let mut g2 = Array2::zeros((n, 1));
        let mut loss = 0.0;
        for i in 0..n {
            let (v1, v2) = (c1.output()[[i, 0]], c2.output()[[i, 0]]);
            if v1 <= v2 {
                g1[[i, 0]] = -1.0 / nf;
            } else {
                g2[[i, 0]] = -1.0 / nf;
            }
            loss += (alpha * logp[i] - v1.min(v2)) / nf;
        }
        // gradients of the min-Q term with respect to the sampled action
        let mut scratch1 = vec![0.0; self.q1.param_count()];
        let mut scratch2 = vec![0.0; self.q2.param_count()];
        let gx1 = self.q1.backward(&c1, &g1, &mut scratch1);
        let gx2 = self.q2.backward(&c2, &g2, &mut scratch2);
        let ga = &gx1.slice(s![.., OBS_DIM..]) + &gx2.slice(s![.., OBS_DIM..]);

        let mut grad_out = Array2::zeros((n, 2 * ACTION_DIM));
        for i in 0..n {
            for d in 0..ACTION_DIM {
                let std = head.log_std[[i, d]].exp();
                let mut g_mean = ga[[i, d]];
                let mut g_ls = ga[[i, d]] * std * noise[[i, d]] - alpha / nf;
                if kl_beta > 0.0 {
                    let (pm, pv) = (batch.prior_mean[[i, d]], batch.prior_var[[i, d]]);
                    let var = std * std;
                    let diff = head.mean[[i, d]] - pm;
                    loss += kl_beta / nf * 0.5 * ((pv / var).ln() + (var + diff * diff) / pv - 1.0);
                    g_mean += kl_beta / nf * diff / pv;
                    g_ls += kl_beta / nf * (var / pv - 1.0);
                }
                grad_out[[i, d]] = g_mean;
                grad_out[[i, ACTION_DIM + d]] = if head.in_range[[i, d]] { g_ls } else { 0.0 };
            }
        }
        let mut grads = vec![0.0; self.actor.param_count()];
        self.actor.backward(&head.cache, &grad_out, &mut grads);
        ActorEval {
            loss,
            grads,
            mean_log_prob: logp.sum() / nf,
        }
    }

    /// Temperature objective `-log(alpha) (mean log pi + target_entropy)` and
    /// its derivative with respect to `log(alpha)`.
    pub fn alpha_loss_grad(&self, mean_log_prob: f64) -> (f64, f64) {
        let c = mean_log_prob + self.config.target_entropy;
        (-self.log_alpha * c, -c)
    }

    /// One update on `batch` with explicit noise. All gradients are computed
    /// from the current parameters first and applied only if every loss and
    /// gradient is finite; otherwise nothing changes and the update is
    /// reported as rejected.
    pub fn update_with_noise(
        &mut self,
        batch: &Batch,
        noise: &BatchNoise,
        kl_beta: f64,
    ) -> Result<LossReport, SacError> {
        let y = self.critic_targets(batch, &noise.next);
        let (l1, g1) = Self::critic_loss_grad(&self.q1, batch, &y);
        let (l2, g2) = Self::critic_loss_grad(&self.q2, batch, &y);
        let actor = self.actor_loss_grad(batch, &noise.current, kl_beta);
        let (alpha_loss, g_alpha) = self.alpha_loss_grad(actor.mean_log_prob);

        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        let auto = self.config.alpha_mode == AlphaMode::Auto;
        let checks = [
            ("critic1", l1.is_finite() && finite(&g1)),
            ("critic2", l2.is_finite() && finite(&g2)),
            ("actor", actor.loss.is_finite() && finite(&actor.grads)),
            ("alpha", !auto || (alpha_loss.is_finite() && g_alpha.is_finite())),
        ];
        if let Some((what, _)) = checks.iter().find(|(_, ok)| !ok) {
            self.rejected += 1;
            return Err(SacError::NonFinite {
                what: what.to_string(),
                update: self.updates + self.rejected,
            });
        }

        self.opt_q1.step(self.q1.params_mut(), &g1);
        self.opt_q2.step(self.q2.params_mut(), &g2);
        self.opt_actor.step(self.actor.params_mut(), &actor.grads);
        if auto {
            let mut la = [self.log_alpha];
            self.opt_alpha.step(&mut la, &[g_alpha]);
            self.log_alpha = la[0];
        }
        self.q1_target.soft_update_from(&self.q1, self.config.tau);
        self.q2_target.soft_update_from(&self.q2, self.config.tau);
        if !self.is_finite() {
            return Err(SacError::NonFinite {
                what: "parameters".into(),
                update: self.updates + self.rejected,
            });
        }
        self.updates += 1;
        Ok(LossReport {
            critic1: l1,
            critic2: l2,
            actor: actor.loss,
            alpha_loss,
            alpha: self.alpha(),
            entropy: -actor.mean_log_prob,
        })
    }

    /// Samples a minibatch and noise from the agent's own stream and updates.
    /// Returns `None` while the buffer holds fewer than `batch_size` items.
    pub fn update(&mut self, buffer: &ReplayBuffer, kl_beta: f64) -> Option<Result<LossReport, SacError>> {
        let idx = buffer.sample_indices(self.config.batch_size, &mut self.rng)?;
        let ts: Vec<&Transition> = idx.iter().map(|&i| buffer.get(i)).collect();
        let batch = Batch::from_transitions(&ts);
        let noise = BatchNoise::sample(batch.len(), &mut self.rng);
        Some(self.update_with_noise(&batch, &noise, kl_beta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small_config() -> SacConfig {
        SacConfig {
            hidden: vec![8, 6],
            batch_size: 4,
            ..Default::default()
        }
    }

    fn random_batch(n: usize, seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ts: Vec<Transition> = (0..n)
            .map(|i| {
                let mut s = [0.0; OBS_DIM];
                let mut s2 = [0.0; OBS_DIM];
                for j in 0..OBS_DIM {
                    s[j] = rng.random_range(-1.0..1.0);
                    s2[j] = rng.random_range(-1.0..1.0);
                }
                let prior = ActionGaussian::new(
                    [rng.random_range(-0.5..0.5), rng.random_range(0.0..1.0)],
                    [rng.random_range(0.01..0.2), rng.random_range(0.01..0.2)],
                )
                .unwrap();
                Transition {
                    s,
                    a: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                    r: rng.random_range(-0.02..0.0),
                    s_next: s2,
                    done: i == 1,
                    prior_t: prior,
                    prior_next: prior,
                }
            })
            .collect();
        Batch::from_transitions(&ts.iter().collect::<Vec<_>>())
    }

    #[test]
    fn zero_actor_outputs_bias() {
        let mut agent = SacAgent::new(small_config(), 0);
        agent.actor = Mlp::zeros(agent.actor.sizes());
        agent.actor.set_output_bias(&[0.2, -0.3, -1.0, 0.5]);
        let g = agent.actor_forward(&[0.7; OBS_DIM]);
        assert_eq!(g.mean, [0.2, -0.3]);
        assert_eq!(g.var, [(-2.0f64).exp(), 1f64.exp()]);
    }

    #[test]
    fn variance_respects_log_std_clamp() {
        let mut agent = SacAgent::new(small_config(), 0);
        agent.actor = Mlp::zeros(agent.actor.sizes());
        agent.actor.set_output_bias(&[0.0, 0.0, -40.0, 9.0]);
        let g = agent.actor_forward(&[0.0; OBS_DIM]);
        assert_eq!(g.var, [(-10.0f64).exp(), 2f64.exp()]);
    }

    #[test]
    fn zero_discount_zero_temperature_target_is_reward() {
        let cfg = SacConfig {
            gamma: 0.0,
            alpha_mode: AlphaMode::Fixed,
            init_alpha: 0.0,
            ..small_config()
        };
        let agent = SacAgent::new(cfg, 5);
        let batch = random_batch(6, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let noise = BatchNoise::sample(6, &mut rng);
        assert_eq!(agent.critic_targets(&batch, &noise.next), batch.r);
    }

    #[test]
    fn unit_tau_copies_critics_into_targets() {
        let cfg = SacConfig {
            tau: 1.0,
            ..small_config()
        };
        let mut agent = SacAgent::new(cfg, 9);
        let batch = random_batch(4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        agent
            .update_with_noise(&batch, &BatchNoise::sample(4, &mut rng), 0.0)
            .unwrap();
        assert_eq!(agent.q1_target, agent.q1);
        assert_eq!(agent.q2_target, agent.q2);
    }

    #[test]
    fn non_finite_update_is_rejected_without_side_effects() {
        let mut agent = SacAgent::new(small_config(), 1);
        let mut batch = random_batch(4, 3);
        batch.r[0] = f64::NAN;
        let before = agent.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let err = agent.update_with_noise(&batch, &BatchNoise::sample(4, &mut rng), 0.0);
        assert!(matches!(err, Err(SacError::NonFinite { .. })));
        assert_eq!(agent.actor, before.actor);
        assert_eq!(agent.q1, before.q1);
        assert_eq!(agent.update_counts(), (0, 1));
    }

    #[test]
    fn critic_loss_decreases_on_a_fixed_transition() {
        let mut agent = SacAgent::new(SacConfig::default(), 11);
        let one = random_batch(1, 8);
        let idx = vec![0usize; 32];
        let batch = Batch {
            s: one.s.select(Axis(0), &idx),
            a: one.a.select(Axis(0), &idx),
            r: one.r.select(Axis(0), &idx).mapv(|_| 10.0),
            s_next: one.s_next.select(Axis(0), &idx),
            done: Array1::ones(32),
            prior_mean: one.prior_mean.select(Axis(0), &idx),
            prior_var: one.prior_var.select(Axis(0), &idx),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let noise = BatchNoise::sample(32, &mut rng);
        let mut last = f64::INFINITY;
        for _ in 0..50 {
            let rep = agent.update_with_noise(&batch, &noise, 0.0).unwrap();
            assert!(rep.critic1 < last, "{} !< {last}", rep.critic1);
            last = rep.critic1;
        }
    }

    #[test]
    fn kl_weight_zero_matches_plain_update() {
        let batch = random_batch(4, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let noise = BatchNoise::sample(4, &mut rng);
        let mut a = SacAgent::new(small_config(), 3);
        let mut b = a.clone();
        a.update_with_noise(&batch, &noise, 0.0).unwrap();
        b.update_with_noise(&batch, &noise, 0.0).unwrap();
        assert_eq!(a, b);
        let mut c = SacAgent::new(small_config(), 3);
        c.update_with_noise(&batch, &noise, 0.5).unwrap();
        assert_ne!(a.actor, c.actor);
        assert_eq!(a.q1, c.q1);
    }
}
