use std::fs::File;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use intersim::config::{load_config, ExperimentConfig};
use intersim::error::ReportError;
use intersim::geometry::VehicleKind;
use intersim::learner::read_qtable;
use intersim::planner::{Announcement, PlanRequest, Planner};
use intersim::report::{
    energy_stats_for, read_vehicles_csv, run_experiment, write_energy_csv, EnergyGroup, Mode, Scenario,
};

#[derive(Debug, Parser)]
#[command(name = "intersim", version, about = "Signalized intersection simulator and light-controller trainer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Mixed50,
    HdvOnly,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::Mixed50 => Scenario::Mixed50,
            ScenarioArg::HdvOnly => Scenario::HdvOnly,
        }
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML configuration; defaults apply to every missing key.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "mixed50")]
    scenario: ScenarioArg,
    /// Simulated seconds per episode and for the evaluation run.
    #[arg(long)]
    horizon_s: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a Q-table, then evaluate its greedy policy.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        episodes: Option<u64>,
    },
    /// Evaluate a saved Q-table, or the fixed cycle when none is given.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        qtable: Option<PathBuf>,
    },
    /// Plan a single AV approach and print the trajectory.
    Plan {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        t_now: f64,
        #[arg(long, default_value_t = 0.0)]
        p0: f64,
        #[arg(long, default_value_t = 10.0)]
        v0: f64,
        /// Announced green; otherwise red is announced.
        #[arg(long)]
        green: bool,
        /// An amber precedes the announced phase.
        #[arg(long)]
        amber: bool,
        /// Write the trajectory CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Energy statistics of a vehicles.csv.
    Stats {
        input: PathBuf,
        /// Group labelling; by default mixed when any AV is present.
        #[arg(long, value_enum)]
        scenario: Option<ScenarioArg>,
        /// Write energy_stats.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: Option<&PathBuf>) -> Result<ExperimentConfig, ReportError> {
    Ok(match path {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    })
}

fn prepare(run: &RunArgs) -> Result<ExperimentConfig, ReportError> {
    let mut cfg = load(run.config.as_ref())?;
    if let Some(seed) = run.seed {
        cfg.sim.seed = seed;
    }
    if let Some(h) = run.horizon_s {
        cfg.sim.horizon_s = h;
        let blocks = (h / cfg.intersection.t_rl).ceil();
        cfg.learner.episode_length_blocks = if blocks.is_finite() && blocks >= 0.0 { blocks as u64 } else { 0 };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn open(path: &PathBuf) -> Result<File, ReportError> {
    File::open(path).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn report(out: &intersim::report::ExperimentOutcome, dir: &std::path::Path) {
    let t = &out.summary.totals;
    println!(
        "{} blocks, {} exited, {} in system, cumulative reward {}, mean wait {}",
        t.blocks,
        t.exited,
        t.in_system,
        t.cumulative_reward,
        t.mean_wait_s.map_or("n/a".to_string(), |w| format!("{w:.3} s"))
    );
    for e in &out.energy {
        println!(
            "{:<10} n={:<5} mean={:.4} median={:.4} mode={:.4} std={:.4}",
            e.group.as_str(),
            e.count,
            e.mean,
            e.median,
            e.mode,
            e.std_dev
        );
    }
    println!("artifacts in {}", dir.display());
}

fn run(cli: Cli) -> Result<(), ReportError> {
    match cli.command {
        Command::Train { run, episodes } => {
            let mut cfg = prepare(&run)?;
            if let Some(n) = episodes {
                cfg.learner.episodes = n;
            }
            let out = run_experiment(&cfg, run.scenario.into(), Mode::Train, &run.out, None)?;
            report(&out, &run.out);
        }
        Command::Eval { run, qtable } => {
            let cfg = prepare(&run)?;
            let q = match &qtable {
                Some(p) => Some(read_qtable(open(p)?)?),
                None => None,
            };
            let out = run_experiment(&cfg, run.scenario.into(), Mode::Eval, &run.out, q)?;
            report(&out, &run.out);
        }
        Command::Plan {
            config,
            t_now,
            p0,
            v0,
            green,
            amber,
            out,
        } => {
            let cfg = load(config.as_ref())?;
            let mut planner = Planner::new(cfg.intersection.clone());
            planner.weights = cfg.planner.weights();
            planner.settings = cfg.planner.settings();
            let at = t_now + cfg.intersection.t_delay();
            let req = PlanRequest {
                t_now,
                p_now: p0,
                v_now: v0,
                announced: if green { Announcement::GreenAt(at) } else { Announcement::RedAt(at) },
                amber_applies: amber,
            };
            let plan = planner.plan(&req)?;
            eprintln!(
                "{:?}: {} steps, terminal t={}, objective {:.6}, energy {:.6}, max violation {:.3e}",
                plan.kind,
                plan.len(),
                plan.t_terminal,
                plan.objective_value,
                plan.energy,
                plan.max_violation
            );
            match out {
                Some(p) => {
                    let f = File::create(&p).map_err(|source| ReportError::Io {
                        path: p.display().to_string(),
                        source,
                    })?;
                    plan.write_csv(f)?;
                }
                None => plan.write_csv(std::io::stdout().lock())?,
            }
        }
        Command::Stats { input, scenario, out } => {
            let vehicles = read_vehicles_csv(open(&input)?)?;
            let has_av = vehicles.iter().any(|v| v.kind == VehicleKind::Av);
            let scenario = scenario.map(Scenario::from).unwrap_or(if has_av { Scenario::Mixed50 } else { Scenario::HdvOnly });
            let log = intersim::engine::MetricsLog {
                vehicles,
                ..Default::default()
            };
            let stats: Vec<_> = scenario
                .groups()
                .iter()
                .filter_map(|&g: &EnergyGroup| match energy_stats_for(&log, g) {
                    Ok(s) => Some(s),
                    Err(e) => {
                        eprintln!("{e}");
                        None
                    }
                })
                .collect();
            match out {
                Some(p) => {
                    let f = File::create(&p).map_err(|source| ReportError::Io {
                        path: p.display().to_string(),
                        source,
                    })?;
                    write_energy_csv(&stats, f)?;
                }
                None => write_energy_csv(&stats, std::io::stdout().lock())?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let ReportError::Engine(intersim::error::EngineError::Collision { .. }) = e {
                eprintln!("partial vehicles.csv and blocks.csv were written before the halt");
            }
            ExitCode::FAILURE
        }
    }
}
