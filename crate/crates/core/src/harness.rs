//! Experiment driver: metrics, run loop, snapshot comparison and the
//! radius sweep.
//!
//! `metrics.csv` has one row per step with the columns
//! `step,detect_s,resolve_s,reduce_s,integrate_s,sync_s,total_s,messages,blocks,bytes,shadows,contacts,pupcs`.
//! Message counters cover both the force reduction and the sync exchanges
//! of that step; `pupcs` is the running value up to and including the step.
//!
//! `sweep.csv` has the columns `fill,radius,strategy,edge,ranks,particles,steps,seconds,pupcs`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use thiserror::Error;

use crate::particle::ParticleId;
use crate::scenario::{Fill, ScenarioConfig, ScenarioKind};
use crate::sync::SyncStrategy;
use crate::world::{PhaseTimes, Snapshot, StepReport, World};
use crate::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("division by zero: {0}")]
    DivisionByZero(&'static str),
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),
    #[error("snapshots hold different particles ({only_a} only in first, {only_b} only in second)")]
    IdSetMismatch { only_a: usize, only_b: usize },
    #[error("{0}")]
    Parse(String),
}

/// Particle updates per core second: `steps * particles / (seconds * cores)`.
/// Zero steps give zero.
pub fn pupcs(steps: u64, particles: u64, seconds: f64, cores: u64) -> Result<f64, HarnessError> {
    if cores == 0 || seconds == 0.0 {
        return Err(HarnessError::DivisionByZero("seconds and cores must be non-zero"));
    }
    if !(seconds > 0.0) {
        return Err(HarnessError::InvalidInput("seconds must be positive"));
    }
    if steps == 0 {
        return Ok(0.0);
    }
    Ok(steps as f64 * particles as f64 / (seconds * cores as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scaling {
    Weak,
    Strong,
}

/// Parallel efficiency from the single-process time `t1` and the time `tp`
/// on `p` processes. Weak: `t1 / tp`; strong: `t1 / (p * tp)`.
pub fn efficiency(t1: f64, tp: f64, p: u64, mode: Scaling) -> Result<f64, HarnessError> {
    if tp == 0.0 || p == 0 {
        return Err(HarnessError::DivisionByZero("tp and p must be non-zero"));
    }
    if !(t1 > 0.0 && tp > 0.0) {
        return Err(HarnessError::InvalidInput("times must be positive"));
    }
    Ok(match mode {
        Scaling::Weak => t1 / tp,
        Scaling::Strong => t1 / (p as f64 * tp),
    })
}

/// One row of `metrics.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRow {
    pub step: u64,
    pub phases: PhaseTimes,
    pub total: Duration,
    pub messages: u64,
    pub blocks: u64,
    pub bytes: u64,
    pub shadows: usize,
    pub contacts: usize,
    pub pupcs: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunMetrics {
    pub scenario: ScenarioKind,
    pub strategy: SyncStrategy,
    pub ranks: u64,
    pub particles: u64,
    pub startup_syncs: usize,
    pub steps: u64,
    /// Time spent in the step loop, excluding setup and startup syncs.
    pub seconds: f64,
    pub phases: PhaseTimes,
    pub messages: u64,
    pub blocks: u64,
    pub bytes: u64,
    pub sync_exchanges: u64,
    pub shadows: Vec<usize>,
    pub pupcs: f64,
    pub rows: Vec<StepRow>,
}

impl RunMetrics {
    fn new(cfg: &ScenarioConfig, world: &World, startup_syncs: usize) -> RunMetrics {
        RunMetrics {
            scenario: cfg.kind,
            strategy: cfg.sync,
            ranks: cfg.rank_count() as u64,
            particles: world.master_count() as u64,
            startup_syncs,
            steps: 0,
            seconds: 0.0,
            phases: PhaseTimes::default(),
            messages: 0,
            blocks: 0,
            bytes: 0,
            sync_exchanges: 0,
            shadows: Vec::new(),
            pupcs: 0.0,
            rows: Vec::new(),
        }
    }

    fn record(&mut self, r: &StepReport) {
        self.steps += 1;
        self.seconds += r.total.as_secs_f64();
        self.phases.add(&r.phases);
        let messages = r.reduce.stats.messages + r.sync.stats.messages;
        let blocks = r.reduce.stats.blocks + r.sync.stats.blocks;
        let bytes = r.reduce.stats.bytes + r.sync.stats.bytes;
        self.messages += messages;
        self.blocks += blocks;
        self.bytes += bytes;
        self.sync_exchanges += r.sync.exchanges;
        self.shadows.push(r.shadows);
        self.pupcs = self.recomputed_pupcs();
        self.rows.push(StepRow {
            step: r.step,
            phases: r.phases,
            total: r.total,
            messages,
            blocks,
            bytes,
            shadows: r.shadows,
            contacts: r.contacts,
            pupcs: self.pupcs,
        });
    }

    /// PUpCS from the raw fields; equals [`RunMetrics::pupcs`].
    pub fn recomputed_pupcs(&self) -> f64 {
        if self.seconds <= 0.0 {
            return 0.0;
        }
        pupcs(self.steps, self.particles, self.seconds, self.ranks).unwrap_or(0.0)
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("step,detect_s,resolve_s,reduce_s,integrate_s,sync_s,total_s,messages,blocks,bytes,shadows,contacts,pupcs\n");
        for r in &self.rows {
            let p = &r.phases;
            out.push_str(&format!(
                "{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{},{},{},{},{},{:.3}\n",
                r.step,
                p.detect.as_secs_f64(),
                p.resolve.as_secs_f64(),
                p.reduce.as_secs_f64(),
                p.integrate.as_secs_f64(),
                p.sync.as_secs_f64(),
                r.total.as_secs_f64(),
                r.messages,
                r.blocks,
                r.bytes,
                r.shadows,
                r.contacts,
                r.pupcs
            ));
        }
        out
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Where `metrics.csv`, `config.txt` and `snapshots/` go. Nothing is
    /// written when absent.
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub final_snapshot: Snapshot,
    pub snapshot_files: Vec<PathBuf>,
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Error {
    let context = context.into();
    move |source| Error::Io { context, source }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Error> {
    fs::write(path, contents).map_err(io_err(format!("writing {}", path.display())))
}

pub fn snapshot_file_name(step: u64) -> String {
    format!("step_{step:06}.txt")
}

/// Build the world, run the startup syncs and the step loop, and write the
/// configured outputs.
pub fn run(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<RunOutput, Error> {
    let mut world = cfg.build()?;
    let startup = world.startup_syncs()?;
    let mut metrics = RunMetrics::new(cfg, &world, startup);

    let snap_dir = match &opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
            write_file(&dir.join("config.txt"), &cfg.to_text())?;
            if cfg.snapshot_every > 0 {
                let s = dir.join("snapshots");
                fs::create_dir_all(&s).map_err(io_err(format!("creating {}", s.display())))?;
                Some(s)
            } else {
                None
            }
        }
        None => None,
    };

    let mut snapshot_files = Vec::new();
    for _ in 0..cfg.steps {
        let report = world.step(cfg.dt)?;
        metrics.record(&report);
        if let Some(dir) = &snap_dir {
            if report.step % cfg.snapshot_every == 0 {
                let path = dir.join(snapshot_file_name(report.step));
                write_file(&path, &world.snapshot().to_text())?;
                snapshot_files.push(path);
            }
        }
    }
    if let Some(dir) = &opts.out_dir {
        write_file(&dir.join("metrics.csv"), &metrics.csv())?;
    }
    Ok(RunOutput {
        metrics,
        final_snapshot: world.snapshot(),
        snapshot_files,
    })
}

/// Per-id deviations between two snapshots.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    /// id → (|Δposition|, |Δvelocity|)
    pub per_id: BTreeMap<ParticleId, (f64, f64)>,
    pub max_position: f64,
    pub max_velocity: f64,
    pub tolerance: f64,
}

impl Comparison {
    pub fn max(&self) -> f64 {
        self.max_position.max(self.max_velocity)
    }

    pub fn passed(&self) -> bool {
        self.max() <= self.tolerance
    }
}

/// Id-keyed comparison; row order in the inputs does not matter.
pub fn compare_snapshots(a: &Snapshot, b: &Snapshot, tol: f64) -> Result<Comparison, HarnessError> {
    let only_a = a.rows.keys().filter(|k| !b.rows.contains_key(k)).count();
    let only_b = b.rows.keys().filter(|k| !a.rows.contains_key(k)).count();
    if only_a + only_b > 0 {
        return Err(HarnessError::IdSetMismatch { only_a, only_b });
    }
    let mut per_id = BTreeMap::new();
    let (mut max_position, mut max_velocity) = (0.0f64, 0.0f64);
    for (id, sa) in &a.rows {
        let sb = &b.rows[id];
        let dp = (sa.position - sb.position).norm();
        let dv = (sa.velocity - sb.velocity).norm();
        max_position = max_position.max(dp);
        max_velocity = max_velocity.max(dv);
        per_id.insert(*id, (dp, dv));
    }
    Ok(Comparison {
        per_id,
        max_position,
        max_velocity,
        tolerance: tol,
    })
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot, Error> {
    let text = fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
    Ok(Snapshot::parse(&text).map_err(|e| HarnessError::Parse(format!("{}: {e}", path.display())))?)
}

/// Radius sweep over the bidisperse building block.
#[derive(Clone, Debug)]
pub struct SweepConfig {
    /// Large-scenario configuration; `grid` and `radius_large` are set per point.
    pub base: ScenarioConfig,
    pub radii: Vec<f64>,
    /// Ranks per building-block axis, e.g. 4 (edge 20) and 8 (edge 10).
    pub divisions: Vec<usize>,
    pub strategies: Vec<SyncStrategy>,
    pub steps: u64,
    /// Timed repetitions per point; the median PUpCS is reported.
    pub repetitions: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub fill: Fill,
    pub radius: f64,
    pub strategy: SyncStrategy,
    pub edge: f64,
    pub ranks: u64,
    pub particles: u64,
    pub steps: u64,
    pub seconds: f64,
    pub pupcs: f64,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("fill,radius,strategy,edge,ranks,particles,steps,seconds,pupcs\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{:.6},{:.3}\n",
            match r.fill {
                Fill::Sparse => "sparse",
                Fill::Dense => "dense",
            },
            r.radius,
            r.strategy.short_name(),
            r.edge,
            r.ranks,
            r.particles,
            r.steps,
            r.seconds,
            r.pupcs
        ));
    }
    out
}

/// Run every legal (radius, division, strategy) point. NNS points with
/// radius ≥ subdomain edge are skipped. Strategies are interleaved within
/// each repetition so slow drifts in machine load affect both alike.
pub fn sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>, Error> {
    if cfg.repetitions == 0 {
        return Err(HarnessError::InvalidInput("repetitions must be positive").into());
    }
    let mut rows = Vec::new();
    for &div in &cfg.divisions {
        for &radius in &cfg.radii {
            let mut point = cfg.base.clone();
            point.kind = ScenarioKind::Large;
            point.grid = [div * point.blocks[0], div * point.blocks[1], div * point.blocks[2]];
            point.radius_large = Some(radius);
            point.steps = cfg.steps;
            let edge = point.partition()?.min_subdomain_edge();
            let legal: Vec<SyncStrategy> = cfg
                .strategies
                .iter()
                .copied()
                .filter(|s| *s == SyncStrategy::ShadowOwner || radius < edge)
                .collect();
            let mut samples: Vec<Vec<(f64, f64, u64)>> = vec![Vec::new(); legal.len()];
            for _ in 0..cfg.repetitions {
                for (i, &s) in legal.iter().enumerate() {
                    let c = ScenarioConfig { sync: s, ..point.clone() };
                    let out = run(&c, &RunOptions::default())?;
                    samples[i].push((out.metrics.pupcs, out.metrics.seconds, out.metrics.particles));
                }
            }
            for (i, &s) in legal.iter().enumerate() {
                let mut v = samples[i].clone();
                v.sort_by(|a, b| a.0.total_cmp(&b.0));
                let (p, secs, particles) = v[v.len() / 2];
                rows.push(SweepRow {
                    fill: point.fill,
                    radius,
                    strategy: s,
                    edge,
                    ranks: point.rank_count() as u64,
                    particles,
                    steps: cfg.steps,
                    seconds: secs,
                    pupcs: p,
                });
            }
        }
    }
    Ok(rows)
}

/// Write `sweep.csv` into `dir`.
pub fn write_sweep(dir: &Path, rows: &[SweepRow]) -> Result<PathBuf, Error> {
    fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
    let path = dir.join("sweep.csv");
    let mut f = fs::File::create(&path).map_err(io_err(format!("creating {}", path.display())))?;
    f.write_all(sweep_csv(rows).as_bytes())
        .map_err(io_err(format!("writing {}", path.display())))?;
    Ok(path)
}
