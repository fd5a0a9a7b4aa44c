//! Statistics, CSV/JSON artifacts and the end-to-end experiment driver.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::engine::{Engine, MetricsLog, VehicleRecord};
use crate::error::{EngineError, ReportError, StatsError};
use crate::geometry::{Phase, VehicleKind};
use crate::learner::{fixed_cycle, greedy_policy, run_policy, train, write_qtable, AugmentedState, QTable, TrainingRow};

pub const MODE_BINS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EnergyGroup {
    #[serde(rename = "AV_mixed")]
    AvMixed,
    #[serde(rename = "HDV_mixed")]
    HdvMixed,
    #[serde(rename = "HDV_only")]
    HdvOnly,
}

impl EnergyGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            EnergyGroup::AvMixed => "AV_mixed",
            EnergyGroup::HdvMixed => "HDV_mixed",
            EnergyGroup::HdvOnly => "HDV_only",
        }
    }

    pub fn kind(self) -> VehicleKind {
        match self {
            EnergyGroup::AvMixed => VehicleKind::Av,
            _ => VehicleKind::Hdv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyStats {
    pub group: EnergyGroup,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub mode: f64,
    pub std_dev: f64,
}

/// Midpoint of the fullest of [`MODE_BINS`] bins spanning `[min, max]`, ties
/// to the lowest bin. Bins are log-spaced with geometric midpoints when every
/// value is positive, linear otherwise.
fn histogram_mode(sorted: &[f64]) -> f64 {
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if lo == hi {
        return lo;
    }
    let log = lo > 0.0;
    let map = |x: f64| if log { x.ln() } else { x };
    let (a, b) = (map(lo), map(hi));
    let width = (b - a) / MODE_BINS as f64;
    let mut counts = [0usize; MODE_BINS];
    for &x in sorted {
        let i = (((map(x) - a) / width) as usize).min(MODE_BINS - 1);
        counts[i] += 1;
    }
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    let mid = a + (best as f64 + 0.5) * width;
    if log {
        mid.exp()
    } else {
        mid
    }
}

pub fn energy_stats(values: &[f64], group: EnergyGroup) -> Result<EnergyStats, StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptyGroup(group.as_str().into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let std_dev = if n > 1 {
        (sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(EnergyStats {
        group,
        count: n,
        mean,
        median,
        mode: histogram_mode(&sorted),
        std_dev,
    })
}

/// Statistics over completed journeys of the group's vehicle kind.
pub fn energy_stats_for(log: &MetricsLog, group: EnergyGroup) -> Result<EnergyStats, StatsError> {
    let values: Vec<f64> = log
        .vehicles
        .iter()
        .filter(|r| r.kind == group.kind())
        .map(|r| r.energy)
        .collect();
    energy_stats(&values, group)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WaitWindow {
    pub k: u64,
    pub t_start: f64,
    pub t_end: f64,
    pub exits: usize,
    /// Empty when nobody exited in the window.
    pub mean_wait_s: Option<f64>,
}

/// Mean waiting time of the vehicles that exited in each block.
pub fn waiting_time_stats(log: &MetricsLog, t_rl: f64) -> Vec<WaitWindow> {
    let n = log.blocks.len();
    let mut sums = vec![(0usize, 0.0f64); n];
    for r in &log.vehicles {
        let k = (r.t_exit / t_rl).floor();
        if k >= 0.0 && (k as usize) < n {
            let slot = &mut sums[k as usize];
            slot.0 += 1;
            slot.1 += r.wait_time;
        }
    }
    sums.into_iter()
        .enumerate()
        .map(|(k, (c, s))| WaitWindow {
            k: k as u64,
            t_start: k as f64 * t_rl,
            t_end: (k + 1) as f64 * t_rl,
            exits: c,
            mean_wait_s: (c > 0).then(|| s / c as f64),
        })
        .collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, ReportError> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_vehicles_csv<W: Write>(vehicles: &[VehicleRecord], out: W) -> Result<(), ReportError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["id", "lane", "kind", "t_entry", "t_exit", "wait_time", "energy"])?;
    for v in vehicles {
        w.serialize(v)?;
    }
    w.flush().map_err(io_err(Path::new("vehicles.csv")))?;
    Ok(())
}

pub fn read_vehicles_csv<R: std::io::Read>(input: R) -> Result<Vec<VehicleRecord>, ReportError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(ReportError::from))
        .collect()
}

fn phase_label(phase: Phase, amber: bool) -> String {
    if amber {
        format!("amber_{}", phase.as_str())
    } else {
        phase.as_str().to_string()
    }
}

/// `k,t,X1..Xn,action,reward,phase1..phasen`; `action` is the one decided at `k`.
pub fn write_blocks_csv<W: Write>(log: &MetricsLog, n_lanes: usize, out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["k".to_string(), "t".to_string()];
    header.extend((1..=n_lanes).map(|l| format!("X{l}")));
    header.push("action".into());
    header.push("reward".into());
    header.extend((1..=n_lanes).map(|l| format!("phase{l}")));
    w.write_record(&header)?;
    for b in &log.blocks {
        let mut row = vec![b.k.to_string(), b.t.to_string()];
        row.extend(b.queues.iter().map(u32::to_string));
        row.push(b.action.to_string());
        row.push(fmt_opt(b.reward));
        row.extend(b.phases.iter().zip(&b.amber).map(|(&p, &a)| phase_label(p, a)));
        w.write_record(&row)?;
    }
    w.flush().map_err(io_err(Path::new("blocks.csv")))?;
    Ok(())
}

pub fn write_training_csv<W: Write>(rows: &[TrainingRow], out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["episode", "cumulative_reward", "avg_wait_s", "avg_queue_per_lane"])?;
    for r in rows {
        w.write_record([
            r.episode.to_string(),
            r.cumulative_reward.to_string(),
            fmt_opt(r.avg_wait_s),
            fmt_opt(r.avg_queue_per_lane),
        ])?;
    }
    w.flush().map_err(io_err(Path::new("training.csv")))?;
    Ok(())
}

pub fn write_energy_csv<W: Write>(stats: &[EnergyStats], out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["group", "count", "mean", "median", "mode", "std_dev"])?;
    for s in stats {
        w.write_record([
            s.group.as_str().to_string(),
            s.count.to_string(),
            s.mean.to_string(),
            s.median.to_string(),
            s.mode.to_string(),
            s.std_dev.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(Path::new("energy_stats.csv")))?;
    Ok(())
}

pub fn write_waiting_csv<W: Write>(windows: &[WaitWindow], out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "t_start", "t_end", "exits", "mean_wait_s"])?;
    for x in windows {
        w.write_record([
            x.k.to_string(),
            x.t_start.to_string(),
            x.t_end.to_string(),
            x.exits.to_string(),
            fmt_opt(x.mean_wait_s),
        ])?;
    }
    w.flush().map_err(io_err(Path::new("waiting.csv")))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Scenario {
    #[serde(rename = "mixed50")]
    Mixed50,
    #[serde(rename = "hdv-only")]
    HdvOnly,
}

impl Scenario {
    pub fn p_av(self) -> f64 {
        match self {
            Scenario::Mixed50 => 0.5,
            Scenario::HdvOnly => 0.0,
        }
    }

    pub fn groups(self) -> &'static [EnergyGroup] {
        match self {
            Scenario::Mixed50 => &[EnergyGroup::AvMixed, EnergyGroup::HdvMixed],
            Scenario::HdvOnly => &[EnergyGroup::HdvOnly],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mode {
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "eval")]
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Totals {
    pub blocks: usize,
    pub spawned: u64,
    pub exited: u64,
    pub in_system: u64,
    pub dropped_capacity: u64,
    pub dropped_jam: u64,
    pub fallbacks: u64,
    pub plan_failures: u64,
    pub red_entries: usize,
    pub cumulative_reward: f64,
    pub mean_wait_s: Option<f64>,
    pub mean_queue_per_lane: Option<f64>,
    pub max_queue: u32,
}

impl Totals {
    pub fn of(log: &MetricsLog) -> Self {
        Self {
            blocks: log.blocks.len(),
            spawned: log.spawned,
            exited: log.exited(),
            in_system: log.in_system,
            dropped_capacity: log.dropped_capacity,
            dropped_jam: log.dropped_jam,
            fallbacks: log.fallbacks,
            plan_failures: log.plan_failures,
            red_entries: log.red_entries.len(),
            cumulative_reward: log.cumulative_reward(),
            mean_wait_s: log.mean_wait(),
            mean_queue_per_lane: log.mean_queue_per_lane(),
            max_queue: log.blocks.iter().flat_map(|b| b.queues.iter().copied()).max().unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub scenario: Scenario,
    pub mode: Mode,
    pub seed: u64,
    pub policy: String,
    pub config: ExperimentConfig,
    pub totals: Totals,
    pub energy: Vec<EnergyStats>,
    pub qtable_entries: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub log: MetricsLog,
    pub energy: Vec<EnergyStats>,
    pub training: Vec<TrainingRow>,
    pub qtable: Option<QTable<AugmentedState>>,
    pub summary: Summary,
}

/// Runs one evaluation hour with the greedy policy of `q`, or the fixed cycle without one.
pub fn evaluate(
    cfg: &ExperimentConfig,
    scenario: Scenario,
    seed: u64,
    q: Option<&QTable<AugmentedState>>,
) -> Result<MetricsLog, (EngineError, Option<MetricsLog>)> {
    let mut engine: Engine = cfg.engine(seed, scenario.p_av()).map_err(|e| (e, None))?;
    let result = match q {
        Some(q) => {
            let pi = greedy_policy(q, cfg.learner.actions());
            run_policy(&mut engine, &cfg.learner, |_, s| pi(s))
        }
        None => run_policy(
            &mut engine,
            &cfg.learner,
            fixed_cycle(cfg.eval.fixed_cycle_blocks, cfg.sim.initial_action),
        ),
    };
    match result {
        Ok(()) => Ok(engine.finish()),
        Err(e) => Err((e, Some(engine.finish()))),
    }
}

pub fn energy_table(log: &MetricsLog, scenario: Scenario) -> Vec<EnergyStats> {
    scenario
        .groups()
        .iter()
        .filter_map(|&g| energy_stats_for(log, g).ok())
        .collect()
}

fn write_run(dir: &Path, log: &MetricsLog, cfg: &ExperimentConfig, energy: &[EnergyStats]) -> Result<(), ReportError> {
    let n = cfg.intersection.n_lanes;
    let mut f = create(&dir.join("vehicles.csv"))?;
    write_vehicles_csv(&log.vehicles, &mut f)?;
    f.flush().map_err(io_err(&dir.join("vehicles.csv")))?;
    let mut f = create(&dir.join("blocks.csv"))?;
    write_blocks_csv(log, n, &mut f)?;
    f.flush().map_err(io_err(&dir.join("blocks.csv")))?;
    let mut f = create(&dir.join("energy_stats.csv"))?;
    write_energy_csv(energy, &mut f)?;
    f.flush().map_err(io_err(&dir.join("energy_stats.csv")))?;
    let mut f = create(&dir.join("waiting.csv"))?;
    write_waiting_csv(&waiting_time_stats(log, cfg.intersection.t_rl), &mut f)?;
    f.flush().map_err(io_err(&dir.join("waiting.csv")))?;
    Ok(())
}

/// Train mode learns a table on `sim.seed` and then evaluates it greedily on
/// the same seed; eval mode uses `qtable` or the fixed cycle.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    scenario: Scenario,
    mode: Mode,
    out_dir: &Path,
    qtable: Option<QTable<AugmentedState>>,
) -> Result<ExperimentOutcome, ReportError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let seed = cfg.sim.seed;
    let p_av = scenario.p_av();
    let (q, training) = match mode {
        Mode::Train => {
            let (q, rows) = train(|s| cfg.engine(s, p_av), &cfg.learner, seed)?;
            let mut f = create(&out_dir.join("training.csv"))?;
            write_training_csv(&rows, &mut f)?;
            f.flush().map_err(io_err(&out_dir.join("training.csv")))?;
            let mut f = create(&out_dir.join("qtable.csv"))?;
            write_qtable(&q, &mut f)?;
            f.flush().map_err(io_err(&out_dir.join("qtable.csv")))?;
            (Some(q), rows)
        }
        Mode::Eval => (qtable, Vec::new()),
    };
    let log = match evaluate(cfg, scenario, seed, q.as_ref()) {
        Ok(log) => log,
        Err((e, partial)) => {
            if let Some(log) = partial {
                write_run(out_dir, &log, cfg, &energy_table(&log, scenario))?;
            }
            return Err(e.into());
        }
    };
    let energy = energy_table(&log, scenario);
    write_run(out_dir, &log, cfg, &energy)?;
    let summary = Summary {
        scenario,
        mode,
        seed,
        policy: if q.is_some() { "greedy".into() } else { "fixed_cycle".into() },
        config: ExperimentConfig {
            sim: crate::engine::SimConfig { p_av, ..cfg.sim.clone() },
            ..cfg.clone()
        },
        totals: Totals::of(&log),
        energy: energy.clone(),
        qtable_entries: q.as_ref().map(QTable::len),
    };
    let path = out_dir.join("summary.json");
    let mut f = create(&path)?;
    serde_json::to_writer_pretty(&mut f, &summary)?;
    writeln!(f).map_err(io_err(&path))?;
    f.flush().map_err(io_err(&path))?;
    Ok(ExperimentOutcome {
        log,
        energy,
        training,
        qtable: q,
        summary,
    })
}

/// Output paths written by [`run_experiment`].
pub fn artifact_paths(out_dir: &Path, mode: Mode) -> Vec<PathBuf> {
    let mut names = vec!["vehicles.csv", "blocks.csv", "energy_stats.csv", "waiting.csv", "summary.json"];
    if mode == Mode::Train {
        names.extend(["training.csv", "qtable.csv"]);
    }
    names.into_iter().map(|n| out_dir.join(n)).collect()
}
