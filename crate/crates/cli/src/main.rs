use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use sirl_core::baselines::Method;
use sirl_core::drivesim::{Route, RouteFile, RouteRegistry};
use sirl_core::harness::{
    emit_policy_trace, first_episode_report, run_evaluation, sigma_sweep, summarize_eval, train_seed, write_csv,
    write_json, Checkpoint, ExperimentConfig, DEFAULT_SIGMAS,
};

#[derive(Parser)]
#[command(
    name = "sirl",
    version,
    about = "Train and evaluate composite expert-prior + SAC driving policies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run per seed and write CSV series, a summary and a policy checkpoint.
    Train {
        #[command(flatten)]
        common: ConfigArgs,
        /// Continue from a resumable checkpoint (single seed only).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Deterministic evaluation of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated route ids; defaults to the config's evaluation routes.
        #[arg(long, value_delimiter = ',')]
        routes: Vec<String>,
        /// Comma-separated evaluation seeds; defaults to the config's.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Skip the sparse and dense expert reference rows.
        #[arg(long)]
        no_experts: bool,
        /// Output directory; defaults to the checkpoint's directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train and evaluate the composite policy for several prior widths.
    SweepSigma {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long, value_delimiter = ',')]
        sigmas: Vec<f64>,
    },
    /// One training episode per method, route and seed.
    FirstEpisode {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long, value_delimiter = ',')]
        methods: Vec<Method>,
    },
    /// Per-step distribution log of a deterministic rollout.
    Trace {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        route: String,
        #[arg(long, default_value_t = 1000)]
        seed: u64,
        /// CSV file to write; a `.summary.json` is written beside it.
        #[arg(long)]
        output: PathBuf,
    },
    /// Print the resolved configuration as TOML.
    Config {
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Route file utilities.
    Routes {
        #[command(subcommand)]
        command: RoutesCommand,
    },
}

#[derive(Subcommand)]
enum RoutesCommand {
    /// Check route files and print their lengths and hazard counts.
    Validate {
        /// Directory of route TOML files; defaults to the shipped routes.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

/// Config file plus flag overrides.
#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    /// Comma-separated or repeated; replaces the config's seed list.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    #[arg(long, value_delimiter = ',')]
    routes: Vec<String>,
    /// Training episodes per route per seed.
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    sigma_psi: Option<f64>,
    #[arg(long)]
    output: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(m) = self.method {
            c.method = m;
        }
        if !self.seed.is_empty() {
            c.seeds = self.seed.clone();
        }
        if !self.routes.is_empty() {
            c.routes = self.routes.clone();
        }
        if let Some(n) = self.episodes {
            c.training_episodes = n;
        }
        if let Some(s) = self.sigma_psi {
            c.prior.sigma_psi = s;
        }
        if let Some(o) = &self.output {
            c.output_dir = o.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

fn train(common: &ConfigArgs, resume: Option<&Path>) -> Result<()> {
    let config = common.resolve()?;
    if resume.is_some() && config.seeds.len() != 1 {
        bail!("--resume needs exactly one seed");
    }
    for &seed in &config.seeds {
        let (record, _) = train_seed(&config, seed, resume)?;
        let last = record.episodes.last();
        println!(
            "{} seed {seed}: {} episodes, {} steps, {} updates; last TR {:.3} RC {:.3}",
            config.method,
            record.episodes.len(),
            record.total_steps,
            record.updates,
            last.map_or(f64::NAN, |e| e.total_reward),
            last.map_or(f64::NAN, |e| e.route_completion),
        );
    }
    Ok(())
}

fn eval(checkpoint: &Path, routes: &[String], seeds: &[u64], no_experts: bool, output: Option<&Path>) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let routes = if routes.is_empty() {
        ck.config.evaluation.routes.clone()
    } else {
        routes.to_vec()
    };
    let seeds = if seeds.is_empty() {
        ck.config.evaluation.seeds.clone()
    } else {
        seeds.to_vec()
    };
    let rows = run_evaluation(&ck, &routes, &seeds, !no_experts)?;
    let summary = summarize_eval(&rows);
    let dir = output
        .map(Path::to_path_buf)
        .unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf());
    write_csv(&dir.join("eval.csv"), &rows)?;
    write_csv(&dir.join("eval_summary.csv"), &summary)?;
    write_json(&dir.join("eval_summary.json"), &summary)?;
    for s in &summary {
        println!(
            "{:14} {:12} TR {:9.3} RC {:6.1}% collisions {} red lights {}",
            s.method.as_str(),
            s.route,
            s.mean_total_reward,
            100.0 * s.mean_route_completion,
            s.collisions,
            s.red_light_violations
        );
    }
    Ok(())
}

fn trace(checkpoint: &Path, route: &str, seed: u64, output: &Path) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let (rows, metrics) = emit_policy_trace(&ck, route, seed)?;
    write_csv(output, &rows)?;
    write_json(&output.with_extension("summary.json"), &metrics)?;
    println!(
        "{} rows; TR {:.3} RC {:.3}",
        rows.len(),
        metrics.total_reward,
        metrics.route_completion
    );
    Ok(())
}

fn describe(route: &Route) -> String {
    format!(
        "{:12} length {:8.2} m  lights {}  obstacles {}  pedestrians {}  lead vehicle {}",
        route.id,
        route.total_length,
        route.traffic_lights.len(),
        route.obstacles.len(),
        route.pedestrians.len(),
        u8::from(route.lead_vehicle.is_some())
    )
}

fn validate_routes(dir: Option<&Path>) -> Result<()> {
    let mut failures = 0;
    match dir {
        None => {
            let reg = RouteRegistry::builtin();
            for id in reg.ids() {
                println!("{}", describe(&*reg.get(id)?));
            }
        }
        Some(dir) => {
            let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
                .with_context(|| format!("reading {}", dir.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "toml"))
                .collect();
            paths.sort();
            if paths.is_empty() {
                bail!("no route files in {}", dir.display());
            }
            for p in paths {
                let built = std::fs::read_to_string(&p)
                    .map_err(anyhow::Error::from)
                    .and_then(|text| Ok(RouteFile::from_toml_str(&text)?.build()?));
                match built {
                    Ok(route) => println!("{}", describe(&route)),
                    Err(e) => {
                        failures += 1;
                        eprintln!("{}: {e}", p.display());
                    }
                }
            }
        }
    }
    if failures > 0 {
        bail!("{failures} route file(s) failed validation");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, resume } => train(&common, resume.as_deref()),
        Command::Eval {
            checkpoint,
            routes,
            seeds,
            no_experts,
            output,
        } => eval(&checkpoint, &routes, &seeds, no_experts, output.as_deref()),
        Command::SweepSigma { common, sigmas } => {
            let config = common.resolve()?;
            let sigmas = if sigmas.is_empty() {
                DEFAULT_SIGMAS.to_vec()
            } else {
                sigmas
            };
            for row in sigma_sweep(&config, &sigmas)?.iter().filter(|r| r.route == "all") {
                println!(
                    "sigma_psi {:<6} RC {:6.1}% (min {:6.1}%) TR {:9.3}",
                    row.sigma_psi,
                    100.0 * row.mean_route_completion,
                    100.0 * row.min_route_completion,
                    row.mean_total_reward
                );
            }
            Ok(())
        }
        Command::FirstEpisode { common, methods } => {
            let config = common.resolve()?;
            let methods = if methods.is_empty() {
                vec![Method::Sirl, Method::Sac]
            } else {
                methods
            };
            for r in first_episode_report(&config, &methods)? {
                println!(
                    "{:14} {:12} seed {:3} RC {:6.1}% outside lane {:5.1}% collisions {} red lights {}",
                    r.method.as_str(),
                    r.route,
                    r.seed,
                    100.0 * r.route_completion,
                    r.outside_lane_pct,
                    r.collisions,
                    r.red_light_violations
                );
            }
            Ok(())
        }
        Command::Trace {
            checkpoint,
            route,
            seed,
            output,
        } => trace(&checkpoint, &route, seed, &output),
        Command::Config { common } => {
            print!("{}", common.resolve()?.to_toml_string());
            Ok(())
        }
        Command::Routes {
            command: RoutesCommand::Validate { dir },
        } => validate_routes(dir.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
