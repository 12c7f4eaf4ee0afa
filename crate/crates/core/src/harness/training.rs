use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::rollout::{derive_seed, route_key, run_episode, streams, EpisodeSeeds, Policy};
use super::{ExperimentConfig, HarnessError};
use crate::baselines::Method;
use crate::drivesim::{DriveEnv, EpisodeMetrics, RouteRegistry, Termination};
use crate::expert::SparseExpert;
use crate::sac::{LossReport, ReplayBuffer, SacAgent, Transition};

/// Bumped whenever the checkpoint layout changes.
pub const CHECKPOINT_VERSION: u32 = 1;

/// One training episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: usize,
    pub route: String,
    pub total_reward: f64,
    pub route_completion: f64,
    pub collisions: u32,
    pub red_light_violations: u32,
    pub outside_lane_fraction: f64,
    pub steps: usize,
    pub termination: String,
    /// Accepted updates per agent after this episode's update phase.
    pub updates: u64,
}

impl EpisodeRow {
    pub fn new(episode: usize, route: &str, m: &EpisodeMetrics, updates: u64) -> Self {
        EpisodeRow {
            episode,
            route: route.to_string(),
            total_reward: m.total_reward,
            route_completion: m.route_completion,
            collisions: m.collisions,
            red_light_violations: m.red_light_violations,
            outside_lane_fraction: m.outside_lane_fraction,
            steps: m.steps,
            termination: termination_name(m.termination),
            updates,
        }
    }
}

pub fn termination_name(t: Option<Termination>) -> String {
    match t {
        Some(Termination::Complete) => "complete",
        Some(Termination::Deviation) => "deviation",
        Some(Termination::MaxSteps) => "max_steps",
        None => "running",
    }
    .to_string()
}

/// One logged update of one agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub update: u64,
    pub episode: usize,
    pub agent: usize,
    pub critic1: f64,
    pub critic2: f64,
    pub actor: f64,
    pub alpha_loss: f64,
    pub alpha: f64,
    pub entropy: f64,
}

impl LossRow {
    fn new(update: u64, episode: usize, agent: usize, r: &LossReport) -> Self {
        LossRow {
            update,
            episode,
            agent,
            critic1: r.critic1,
            critic2: r.critic2,
            actor: r.actor,
            alpha_loss: r.alpha_loss,
            alpha: r.alpha,
            entropy: r.entropy,
        }
    }
}

/// Per-episode metrics and the update log of one (config, seed) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub seed: u64,
    pub config_hash: String,
    pub episodes: Vec<EpisodeRow>,
    pub losses: Vec<LossRow>,
    pub total_steps: u64,
    pub updates: u64,
    pub rejected_updates: u64,
    /// Seconds spent in this process; not part of any written file.
    #[serde(skip)]
    pub wall_clock_s: f64,
}

/// Everything needed to evaluate a policy and, when `buffers` is present,
/// to resume training bit-exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub episodes_done: usize,
    pub total_steps: u64,
    pub agents: Vec<SacAgent>,
    pub buffers: Option<Vec<ReplayBuffer>>,
    pub record: RunRecord,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        bincode::serialize(self).expect("checkpoint serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HarnessError> {
        let ck: Checkpoint = bincode::deserialize(bytes).map_err(|e| HarnessError::Checkpoint(e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(HarnessError::Checkpoint(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| HarnessError::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, HarnessError> {
        let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn policy(&self) -> Policy<'_> {
        Policy {
            method: self.config.method,
            agents: &self.agents,
            residual_scale: self.config.residual_scale,
            gains: &self.config.expert,
        }
    }
}

/// Seeds of training episode `episode` on `route`. Scenario jitter and
/// expert sensor noise depend only on the run seed and the route, so a
/// policy that does not learn repeats itself exactly; behavior sampling
/// changes every episode.
pub fn training_seeds(seed: u64, route: &str, episode: usize) -> EpisodeSeeds {
    EpisodeSeeds {
        scenario: derive_seed(seed, streams::SCENARIO, route_key(route)),
        expert: derive_seed(seed, streams::EXPERT_NOISE, route_key(route)),
        behavior: derive_seed(seed, streams::BEHAVIOR, episode as u64),
    }
}

/// Training loop for one (config, seed): alternates collecting a full
/// episode with the method's behavior policy and an update phase.
pub struct Trainer {
    config: ExperimentConfig,
    seed: u64,
    registry: RouteRegistry,
    env: DriveEnv,
    expert: SparseExpert,
    agents: Vec<SacAgent>,
    buffers: Vec<ReplayBuffer>,
    episodes_done: usize,
    total_steps: u64,
    record: RunRecord,
    started: Instant,
}

impl Trainer {
    pub fn new(config: &ExperimentConfig, seed: u64) -> Result<Self, HarnessError> {
        config.validate()?;
        let n = config.method.agent_count(config.ensemble_size);
        let agents = (0..n)
            .map(|k| SacAgent::new(config.sac.clone(), derive_seed(seed, streams::AGENT_INIT, k as u64)))
            .collect();
        let n_buffers = match (config.method.learns(), config.share_replay) {
            (false, _) => 0,
            (true, true) => 1,
            (true, false) => n,
        };
        let buffers = (0..n_buffers)
            .map(|_| ReplayBuffer::new(config.sac.buffer_capacity))
            .collect();
        let record = RunRecord {
            method: config.method,
            seed,
            config_hash: config.hash(),
            episodes: Vec::new(),
            losses: Vec::new(),
            total_steps: 0,
            updates: 0,
            rejected_updates: 0,
            wall_clock_s: 0.0,
        };
        Self::assemble(config.clone(), seed, agents, buffers, 0, 0, record)
    }

    /// Continues a run from a checkpoint that includes replay buffers.
    pub fn resume(ck: Checkpoint) -> Result<Self, HarnessError> {
        ck.config.validate()?;
        let buffers = ck.buffers.ok_or_else(|| {
            HarnessError::Checkpoint("checkpoint has no replay buffers; it cannot resume training".into())
        })?;
        Self::assemble(
            ck.config,
            ck.seed,
            ck.agents,
            buffers,
            ck.episodes_done,
            ck.total_steps,
            ck.record,
        )
    }

    fn assemble(
        config: ExperimentConfig,
        seed: u64,
        agents: Vec<SacAgent>,
        buffers: Vec<ReplayBuffer>,
        episodes_done: usize,
        total_steps: u64,
        record: RunRecord,
    ) -> Result<Self, HarnessError> {
        let registry = config.registry()?;
        let env = DriveEnv::new(config.sim.clone())?;
        let expert = SparseExpert::new(config.prior.clone(), config.expert.clone(), 0);
        Ok(Trainer {
            config,
            seed,
            registry,
            env,
            expert,
            agents,
            buffers,
            episodes_done,
            total_steps,
            record,
            started: Instant::now(),
        })
    }

    pub fn total_episodes(&self) -> usize {
        self.config.training_episodes * self.config.routes.len()
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes_done
    }

    pub fn is_finished(&self) -> bool {
        self.episodes_done >= self.total_episodes()
    }

    pub fn agents(&self) -> &[SacAgent] {
        &self.agents
    }

    pub fn record(&self) -> &RunRecord {
        &self.record
    }

    /// Number of update rounds due when the step counter moves from
    /// `before` to `after`: one round at every `update_every`-th step from
    /// `warmup_steps` on.
    fn rounds_between(&self, before: u64, after: u64) -> u64 {
        let warm = self.config.sac.warmup_steps.max(self.config.sac.batch_size) as u64;
        let every = self.config.sac.update_every as u64;
        let due = |t: u64| if t < warm { 0 } else { (t - warm) / every + 1 };
        due(after) - due(before)
    }

    /// Collects one episode and runs its update phase.
    pub fn run_episode(&mut self) -> Result<&EpisodeRow, HarnessError> {
        let e = self.episodes_done;
        let route_id = self.config.routes[e % self.config.routes.len()].clone();
        let route = self.registry.get(&route_id)?;
        let seeds = training_seeds(self.seed, &route_id, e);
        let policy = Policy {
            method: self.config.method,
            agents: &self.agents,
            residual_scale: self.config.residual_scale,
            gains: &self.config.expert,
        };
        let target = match self.buffers.len() {
            0 => None,
            1 => Some(0),
            n => Some(e % n),
        };
        let buffers = &mut self.buffers;
        let metrics = run_episode(
            &mut self.env,
            &mut self.expert,
            policy,
            route,
            &self.config.scenario,
            seeds,
            false,
            &mut |d| {
                if let Some(b) = target {
                    buffers[b].push(Transition {
                        s: d.s,
                        a: d.agent_action,
                        r: d.reward,
                        s_next: d.s_next,
                        done: d.terminal,
                        prior_t: d.prior_t,
                        prior_next: d.prior_next,
                    });
                }
            },
        )?;
        let before = self.total_steps;
        self.total_steps += metrics.steps as u64;
        self.record.total_steps = self.total_steps;

        if self.config.method.learns() {
            let rounds = self.rounds_between(before, self.total_steps);
            let beta = if self.config.method == Method::Kl {
                self.config.kl_beta
            } else {
                0.0
            };
            for _ in 0..rounds {
                for (k, agent) in self.agents.iter_mut().enumerate() {
                    let buffer = &self.buffers[k.min(self.buffers.len() - 1)];
                    match agent.update(buffer, beta) {
                        None => {}
                        Some(Ok(rep)) => {
                            if k == 0 {
                                self.record.updates += 1;
                            }
                            let u = self.record.updates;
                            if u.is_multiple_of(self.config.loss_log_every as u64) {
                                self.record.losses.push(LossRow::new(u, e, k, &rep));
                            }
                        }
                        Some(Err(err)) => {
                            self.record.rejected_updates += 1;
                            log::error!("seed {} episode {e} agent {k}: {err}", self.seed);
                            return Err(HarnessError::Diverged {
                                seed: self.seed,
                                episode: e,
                                detail: err.to_string(),
                            });
                        }
                    }
                }
            }
        }
        let updates = self.record.updates;
        self.record
            .episodes
            .push(EpisodeRow::new(e, &route_id, &metrics, updates));
        self.episodes_done += 1;
        log::debug!(
            "{} seed {} episode {e} {route_id}: TR {:.3} RC {:.3} steps {}",
            self.config.method,
            self.seed,
            metrics.total_reward,
            metrics.route_completion,
            metrics.steps
        );
        Ok(self.record.episodes.last().expect("just pushed"))
    }

    /// Snapshot of the current state. Replay buffers make it resumable but
    /// large; evaluation does not need them.
    pub fn checkpoint(&self, with_buffers: bool) -> Checkpoint {
        let mut record = self.record.clone();
        record.wall_clock_s = 0.0;
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            seed: self.seed,
            episodes_done: self.episodes_done,
            total_steps: self.total_steps,
            agents: self.agents.clone(),
            buffers: with_buffers.then(|| self.buffers.clone()),
            record,
        }
    }

    /// Final record and a policy-only checkpoint.
    pub fn finish(mut self) -> (RunRecord, Checkpoint) {
        self.record.wall_clock_s += self.started.elapsed().as_secs_f64();
        let ck = self.checkpoint(false);
        (self.record, ck)
    }
}
