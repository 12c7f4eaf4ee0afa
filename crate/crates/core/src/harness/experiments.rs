use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::output::{run_dir, write_csv, write_json, write_text};
use super::rollout::{derive_seed, route_key, run_episode, streams, EpisodeSeeds, Policy};
use super::training::{termination_name, training_seeds, Checkpoint, RunRecord, Trainer};
use super::{ExperimentConfig, HarnessError};
use crate::baselines::Method;
use crate::drivesim::{DriveEnv, EpisodeMetrics};
use crate::expert::SparseExpert;
use crate::sac::SacAgent;

pub const DEFAULT_SIGMAS: [f64; 5] = [0.1, 0.05, 0.01, 0.005, 0.001];

#[derive(Serialize)]
struct RouteSummary {
    route: String,
    episodes: usize,
    mean_total_reward: f64,
    mean_route_completion: f64,
    last_total_reward: f64,
    last_route_completion: f64,
}

#[derive(Serialize)]
struct RunSummary<'a> {
    format_version: u32,
    method: Method,
    seed: u64,
    config_hash: &'a str,
    episodes: usize,
    total_steps: u64,
    updates: u64,
    rejected_updates: u64,
    routes: Vec<RouteSummary>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn write_run(
    dir: &Path,
    config: &ExperimentConfig,
    record: &RunRecord,
    policy: &Checkpoint,
) -> Result<(), HarnessError> {
    write_text(&dir.join("config.toml"), &config.to_toml_string())?;
    write_csv(&dir.join("episodes.csv"), &record.episodes)?;
    write_csv(&dir.join("losses.csv"), &record.losses)?;
    let mut by_route: BTreeMap<&str, Vec<_>> = BTreeMap::new();
    for e in &record.episodes {
        by_route.entry(e.route.as_str()).or_default().push(e);
    }
    let routes = by_route
        .into_iter()
        .map(|(route, eps)| RouteSummary {
            route: route.to_string(),
            episodes: eps.len(),
            mean_total_reward: mean(eps.iter().map(|e| e.total_reward)),
            mean_route_completion: mean(eps.iter().map(|e| e.route_completion)),
            last_total_reward: eps.last().map_or(f64::NAN, |e| e.total_reward),
            last_route_completion: eps.last().map_or(f64::NAN, |e| e.route_completion),
        })
        .collect();
    write_json(
        &dir.join("summary.json"),
        &RunSummary {
            format_version: 1,
            method: record.method,
            seed: record.seed,
            config_hash: &record.config_hash,
            episodes: record.episodes.len(),
            total_steps: record.total_steps,
            updates: record.updates,
            rejected_updates: record.rejected_updates,
            routes,
        },
    )?;
    policy.save(&dir.join("policy.bin"))
}

/// Trains one seed (optionally resuming from a checkpoint file) and writes
/// its run directory.
pub fn train_seed(
    config: &ExperimentConfig,
    seed: u64,
    resume: Option<&Path>,
) -> Result<(RunRecord, Checkpoint), HarnessError> {
    let mut trainer = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.config.hash() != config.hash() || ck.seed != seed {
                return Err(HarnessError::Checkpoint(format!(
                    "{} was written for a different config or seed",
                    path.display()
                )));
            }
            Trainer::resume(ck)?
        }
        None => Trainer::new(config, seed)?,
    };
    let dir = run_dir(&config.output_dir, config.method, seed);
    while !trainer.is_finished() {
        trainer.run_episode()?;
        let done = trainer.episodes_done();
        if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 {
            let path = dir.join(format!("checkpoint_ep{done:05}.bin"));
            std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
            trainer.checkpoint(true).save(&path)?;
        }
    }
    let (record, policy) = trainer.finish();
    write_run(&dir, config, &record, &policy)?;
    log::info!(
        "{} seed {seed}: {} episodes, {} steps, {} updates in {:.1}s",
        config.method,
        record.episodes.len(),
        record.total_steps,
        record.updates,
        record.wall_clock_s
    );
    Ok((record, policy))
}

/// Trains every configured seed in turn.
pub fn run_training(config: &ExperimentConfig) -> Result<Vec<(RunRecord, Checkpoint)>, HarnessError> {
    config.validate()?;
    config.seeds.iter().map(|&s| train_seed(config, s, None)).collect()
}

/// One deterministic evaluation rollout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: Method,
    /// Training seed of the evaluated policy; absent for expert rows.
    pub train_seed: Option<u64>,
    pub route: String,
    pub eval_seed: u64,
    pub total_reward: f64,
    pub route_completion: f64,
    pub collisions: u32,
    pub red_light_violations: u32,
    pub outside_lane_fraction: f64,
    pub steps: usize,
    pub termination: String,
}

impl EvalRow {
    fn new(method: Method, train_seed: Option<u64>, route: &str, eval_seed: u64, m: &EpisodeMetrics) -> Self {
        EvalRow {
            method,
            train_seed,
            route: route.to_string(),
            eval_seed,
            total_reward: m.total_reward,
            route_completion: m.route_completion,
            collisions: m.collisions,
            red_light_violations: m.red_light_violations,
            outside_lane_fraction: m.outside_lane_fraction,
            steps: m.steps,
            termination: termination_name(m.termination),
        }
    }
}

/// Seeds of an evaluation episode; shared by every method so rows are
/// paired.
pub fn eval_seeds(eval_seed: u64, route: &str) -> EpisodeSeeds {
    let k = route_key(route);
    EpisodeSeeds {
        scenario: derive_seed(eval_seed, streams::SCENARIO, k),
        expert: derive_seed(eval_seed, streams::EXPERT_NOISE, k),
        behavior: derive_seed(eval_seed, streams::BEHAVIOR, k),
    }
}

/// Deterministic rollouts of `policy` on every route for every seed.
pub fn evaluate_policy(
    config: &ExperimentConfig,
    policy: Policy<'_>,
    train_seed: Option<u64>,
    routes: &[String],
    seeds: &[u64],
) -> Result<Vec<EvalRow>, HarnessError> {
    let registry = config.registry()?;
    let mut env = DriveEnv::new(config.sim.clone())?;
    let mut expert = SparseExpert::new(config.prior.clone(), config.expert.clone(), 0);
    let mut rows = Vec::new();
    for route in routes {
        let r = registry.get(route)?;
        for &seed in seeds {
            let m = run_episode(
                &mut env,
                &mut expert,
                policy,
                r.clone(),
                &config.scenario,
                eval_seeds(seed, route),
                true,
                &mut |_| {},
            )?;
            rows.push(EvalRow::new(policy.method, train_seed, route, seed, &m));
        }
    }
    Ok(rows)
}

/// Acting rule of a non-learning method.
pub fn expert_policy(config: &ExperimentConfig, method: Method) -> Policy<'_> {
    Policy {
        method,
        agents: &[],
        residual_scale: config.residual_scale,
        gains: &config.expert,
    }
}

/// Evaluates a checkpoint, followed by sparse- and dense-expert reference
/// rows when `expert_rows` is set.
pub fn run_evaluation(
    ck: &Checkpoint,
    routes: &[String],
    seeds: &[u64],
    expert_rows: bool,
) -> Result<Vec<EvalRow>, HarnessError> {
    let mut rows = evaluate_policy(&ck.config, ck.policy(), Some(ck.seed), routes, seeds)?;
    if expert_rows {
        for m in [Method::SparseExpert, Method::DenseExpert] {
            if m != ck.config.method {
                rows.extend(evaluate_policy(
                    &ck.config,
                    expert_policy(&ck.config, m),
                    None,
                    routes,
                    seeds,
                )?);
            }
        }
    }
    Ok(rows)
}

/// Seed-averaged evaluation table row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummaryRow {
    pub method: Method,
    pub route: String,
    pub rollouts: usize,
    pub mean_total_reward: f64,
    pub mean_route_completion: f64,
    pub min_route_completion: f64,
    pub collisions: u32,
    pub red_light_violations: u32,
}

/// Groups evaluation rows by (method, route), in first-appearance order.
pub fn summarize_eval(rows: &[EvalRow]) -> Vec<EvalSummaryRow> {
    let mut keys: Vec<(Method, &str)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.method, r.route.as_str())) {
            keys.push((r.method, r.route.as_str()));
        }
    }
    keys.into_iter()
        .map(|(method, route)| {
            let g: Vec<&EvalRow> = rows.iter().filter(|r| r.method == method && r.route == route).collect();
            EvalSummaryRow {
                method,
                route: route.to_string(),
                rollouts: g.len(),
                mean_total_reward: mean(g.iter().map(|r| r.total_reward)),
                mean_route_completion: mean(g.iter().map(|r| r.route_completion)),
                min_route_completion: g.iter().map(|r| r.route_completion).fold(f64::INFINITY, f64::min),
                collisions: g.iter().map(|r| r.collisions).sum(),
                red_light_violations: g.iter().map(|r| r.red_light_violations).sum(),
            }
        })
        .collect()
}

/// One line of the prior-width sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma_psi: f64,
    /// A route id, or `all` for the average over routes.
    pub route: String,
    pub rollouts: usize,
    pub mean_route_completion: f64,
    pub min_route_completion: f64,
    pub mean_total_reward: f64,
}

/// Per-route rows plus the `all` row for one prior width.
pub fn sweep_rows(sigma: f64, rows: &[EvalRow]) -> Vec<SweepRow> {
    let mut out: Vec<SweepRow> = summarize_eval(rows)
        .into_iter()
        .map(|s| SweepRow {
            sigma_psi: sigma,
            route: s.route,
            rollouts: s.rollouts,
            mean_route_completion: s.mean_route_completion,
            min_route_completion: s.min_route_completion,
            mean_total_reward: s.mean_total_reward,
        })
        .collect();
    out.push(SweepRow {
        sigma_psi: sigma,
        route: "all".into(),
        rollouts: rows.len(),
        mean_route_completion: mean(rows.iter().map(|r| r.route_completion)),
        min_route_completion: rows.iter().map(|r| r.route_completion).fold(f64::INFINITY, f64::min),
        mean_total_reward: mean(rows.iter().map(|r| r.total_reward)),
    });
    out
}

/// Trains and evaluates the composite policy for each prior width with
/// shared seeds. Runs go to `<output_dir>/sweep/sigma_<value>/`; the table
/// to `<output_dir>/sweep/sweep.csv`.
pub fn sigma_sweep(config: &ExperimentConfig, sigmas: &[f64]) -> Result<Vec<SweepRow>, HarnessError> {
    config.validate()?;
    let mut table = Vec::new();
    for &sigma in sigmas {
        let mut c = config.clone();
        c.method = Method::Sirl;
        c.prior.sigma_psi = sigma;
        c.output_dir = config.output_dir.join("sweep").join(format!("sigma_{sigma}"));
        c.validate()?;
        let mut rows = Vec::new();
        for &seed in &c.seeds {
            let (_, ck) = train_seed(&c, seed, None)?;
            rows.extend(run_evaluation(&ck, &c.evaluation.routes, &c.evaluation.seeds, false)?);
        }
        write_csv(&c.output_dir.join("eval.csv"), &rows)?;
        table.extend(sweep_rows(sigma, &rows));
    }
    write_csv(&config.output_dir.join("sweep").join("sweep.csv"), &table)?;
    Ok(table)
}

/// First training episode of one method on one route.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstEpisodeRow {
    pub method: Method,
    pub route: String,
    pub seed: u64,
    pub route_completion: f64,
    pub outside_lane_pct: f64,
    pub collisions: u32,
    pub red_light_violations: u32,
    pub total_reward: f64,
    pub steps: usize,
}

/// Runs exactly the first training episode of each method on each route
/// for each seed: fresh agents, stochastic behavior, same seeds training
/// would use. Writes `<output_dir>/first_episode.csv`.
pub fn first_episode_report(
    config: &ExperimentConfig,
    methods: &[Method],
) -> Result<Vec<FirstEpisodeRow>, HarnessError> {
    config.validate()?;
    let registry = config.registry()?;
    let mut env = DriveEnv::new(config.sim.clone())?;
    let mut expert = SparseExpert::new(config.prior.clone(), config.expert.clone(), 0);
    let mut rows = Vec::new();
    for &method in methods {
        for &seed in &config.seeds {
            let agents: Vec<SacAgent> = (0..method.agent_count(config.ensemble_size))
                .map(|k| SacAgent::new(config.sac.clone(), derive_seed(seed, streams::AGENT_INIT, k as u64)))
                .collect();
            let policy = Policy {
                method,
                agents: &agents,
                residual_scale: config.residual_scale,
                gains: &config.expert,
            };
            for (i, route) in config.routes.iter().enumerate() {
                let m = run_episode(
                    &mut env,
                    &mut expert,
                    policy,
                    registry.get(route)?,
                    &config.scenario,
                    training_seeds(seed, route, i),
                    false,
                    &mut |_| {},
                )?;
                rows.push(FirstEpisodeRow {
                    method,
                    route: route.clone(),
                    seed,
                    route_completion: m.route_completion,
                    outside_lane_pct: 100.0 * m.outside_lane_fraction,
                    collisions: m.collisions,
                    red_light_violations: m.red_light_violations,
                    total_reward: m.total_reward,
                    steps: m.steps,
                });
            }
        }
    }
    write_csv(&config.output_dir.join("first_episode.csv"), &rows)?;
    Ok(rows)
}

/// Per-step distributions of a deterministic rollout. Columns of absent
/// distributions are empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub arc_length: f64,
    pub mu_pi_steer: Option<f64>,
    pub mu_pi_throttle: Option<f64>,
    pub sigma_pi_steer: Option<f64>,
    pub sigma_pi_throttle: Option<f64>,
    pub mu_psi_steer: f64,
    pub mu_psi_throttle: f64,
    pub sigma_psi_steer: f64,
    pub sigma_psi_throttle: f64,
    pub mu_phi_steer: Option<f64>,
    pub mu_phi_throttle: Option<f64>,
    pub sigma_phi_steer: Option<f64>,
    pub sigma_phi_throttle: Option<f64>,
    pub steer: f64,
    pub throttle: f64,
    pub brake: bool,
}

/// Deterministic rollout of a checkpoint on `route` with full distribution
/// logging.
pub fn emit_policy_trace(
    ck: &Checkpoint,
    route: &str,
    eval_seed: u64,
) -> Result<(Vec<TraceRow>, EpisodeMetrics), HarnessError> {
    let config = &ck.config;
    let registry = config.registry()?;
    let mut env = DriveEnv::new(config.sim.clone())?;
    let mut expert = SparseExpert::new(config.prior.clone(), config.expert.clone(), 0);
    let mut rows = Vec::new();
    let m = run_episode(
        &mut env,
        &mut expert,
        ck.policy(),
        registry.get(route)?,
        &config.scenario,
        eval_seeds(eval_seed, route),
        true,
        &mut |d| {
            let pi_std = d.pi.map(|g| g.std());
            let phi_std = d.phi.map(|g| g.std());
            let psi_std = d.prior_t.std();
            rows.push(TraceRow {
                step: d.step,
                arc_length: d.arc_length,
                mu_pi_steer: d.pi.map(|g| g.mean[0]),
                mu_pi_throttle: d.pi.map(|g| g.mean[1]),
                sigma_pi_steer: pi_std.map(|s| s[0]),
                sigma_pi_throttle: pi_std.map(|s| s[1]),
                mu_psi_steer: d.prior_t.mean[0],
                mu_psi_throttle: d.prior_t.mean[1],
                sigma_psi_steer: psi_std[0],
                sigma_psi_throttle: psi_std[1],
                mu_phi_steer: d.phi.map(|g| g.mean[0]),
                mu_phi_throttle: d.phi.map(|g| g.mean[1]),
                sigma_phi_steer: phi_std.map(|s| s[0]),
                sigma_phi_throttle: phi_std.map(|s| s[1]),
                steer: d.action.steer,
                throttle: d.action.throttle,
                brake: d.action.brake,
            });
        },
    )?;
    Ok((rows, m))
}
