use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use shadowsync::harness::{self, RunOptions, SweepConfig};
use shadowsync::scenario::{ScenarioConfig, ScenarioKind};
use shadowsync::SyncStrategy;

/// Distributed rigid-particle simulation with next-neighbor (nn) and
/// shadow-owner (so) synchronization on a simulated message-passing machine.
///
/// PUpCS figures count one core per simulated rank.
#[derive(Parser, Debug)]
#[command(name = "shadowsync", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one scenario and write metrics.csv and snapshots.
    Run(RunArgs),
    /// Compare two snapshot files, or every same-named snapshot in two directories.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Largest accepted position or velocity deviation.
        #[arg(long, default_value_t = 0.0)]
        tol: f64,
    },
    /// Large-sphere radius sweep comparing both strategies; writes sweep.csv.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct Overrides {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// sparse, dense or large.
    #[arg(long)]
    scenario: Option<String>,
    /// Rank grid such as 2x2x2.
    #[arg(long)]
    grid: Option<String>,
    /// Rank count; a near-cubic grid is chosen when --grid is absent.
    #[arg(long)]
    ranks: Option<usize>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    radius_large: Option<f64>,
    /// nn or so.
    #[arg(long)]
    sync: Option<String>,
    /// seq or threads.
    #[arg(long)]
    transport: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Any further configuration key, e.g. --set fill=dense.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Overrides {
    fn resolve(&self, default: ScenarioKind) -> Result<ScenarioConfig, String> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
                ScenarioConfig::parse(&text).map_err(|e| format!("{}: {e}", path.display()))?
            }
            None => ScenarioConfig::defaults(default),
        };
        let mut pairs: Vec<(String, String)> = Vec::new();
        if let Some(s) = &self.scenario {
            pairs.push(("scenario".into(), s.clone()));
        }
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                pairs.push((k.into(), v));
            }
        };
        push("ranks", self.ranks.map(|v| v.to_string()));
        push("grid", self.grid.clone());
        push("steps", self.steps.map(|v| v.to_string()));
        push("dt", self.dt.map(|v| v.to_string()));
        push("radius_large", self.radius_large.map(|v| v.to_string()));
        push("sync", self.sync.clone());
        push("transport", self.transport.clone());
        push("seed", self.seed.map(|v| v.to_string()));
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
            pairs.push((k.trim().into(), v.trim().into()));
        }
        for (k, v) in pairs {
            cfg.set(&k, &v).map_err(|e| e.to_string())?;
        }
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Snapshot interval in steps; 0 disables snapshots.
    #[arg(long)]
    snapshot_every: Option<u64>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Large-sphere radii, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [2.5, 5.0, 7.5, 10.0, 15.0, 20.0, 30.0])]
    radii: Vec<f64>,
    /// Ranks per building-block axis, comma separated (4 gives edge 20 on an 80 block).
    #[arg(long, value_delimiter = ',', default_values_t = [4, 8])]
    divisions: Vec<usize>,
    /// Timed repetitions per point; the median is reported.
    #[arg(long, default_value_t = 3)]
    repetitions: usize,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

fn run(args: RunArgs) -> Result<ExitCode, String> {
    let mut cfg = args.overrides.resolve(ScenarioKind::Sparse)?;
    if let Some(n) = args.snapshot_every {
        cfg.snapshot_every = n;
    }
    let out = harness::run(
        &cfg,
        &RunOptions {
            out_dir: Some(args.out_dir.clone()),
        },
    )
    .map_err(|e| e.to_string())?;
    let m = &out.metrics;
    println!(
        "{} {} ranks={} particles={} startup_syncs={} steps={} seconds={:.3} messages={} bytes={} pupcs={:.1}",
        m.scenario,
        m.strategy.short_name(),
        m.ranks,
        m.particles,
        m.startup_syncs,
        m.steps,
        m.seconds,
        m.messages,
        m.bytes,
        m.pupcs
    );
    println!("wrote {}", args.out_dir.join("metrics.csv").display());
    Ok(ExitCode::SUCCESS)
}

fn snapshot_pairs(a: &Path, b: &Path) -> Result<Vec<(PathBuf, PathBuf)>, String> {
    if !a.is_dir() {
        return Ok(vec![(a.to_path_buf(), b.to_path_buf())]);
    }
    let mut names: Vec<_> = std::fs::read_dir(a)
        .map_err(|e| format!("reading {}: {e}", a.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name())
        .filter(|n| n.to_string_lossy().ends_with(".txt"))
        .collect();
    names.sort();
    Ok(names.into_iter().map(|n| (a.join(&n), b.join(&n))).collect())
}

fn compare(a: &Path, b: &Path, tol: f64) -> Result<ExitCode, String> {
    let pairs = snapshot_pairs(a, b)?;
    if pairs.is_empty() {
        return Err(format!("no snapshots found in {}", a.display()));
    }
    let mut worst = 0.0f64;
    for (pa, pb) in &pairs {
        let sa = harness::read_snapshot(pa).map_err(|e| e.to_string())?;
        let sb = harness::read_snapshot(pb).map_err(|e| e.to_string())?;
        let c = harness::compare_snapshots(&sa, &sb, tol).map_err(|e| format!("{}: {e}", pa.display()))?;
        println!(
            "{} max_position={:e} max_velocity={:e} {}",
            pa.file_name().unwrap_or_default().to_string_lossy(),
            c.max_position,
            c.max_velocity,
            if c.passed() { "pass" } else { "FAIL" }
        );
        worst = worst.max(c.max());
    }
    println!("overall max deviation {worst:e} (tolerance {tol:e})");
    Ok(if worst <= tol { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn sweep(args: SweepArgs) -> Result<ExitCode, String> {
    let mut base = args.overrides.resolve(ScenarioKind::Large)?;
    base.kind = ScenarioKind::Large;
    let cfg = SweepConfig {
        steps: base.steps,
        base,
        radii: args.radii,
        divisions: args.divisions,
        strategies: vec![SyncStrategy::NextNeighbor, SyncStrategy::ShadowOwner],
        repetitions: args.repetitions,
    };
    let rows = harness::sweep(&cfg).map_err(|e| e.to_string())?;
    for r in &rows {
        println!("radius={} edge={} {} pupcs={:.1}", r.radius, r.edge, r.strategy.short_name(), r.pupcs);
    }
    let path = harness::write_sweep(&args.out_dir, &rows).map_err(|e| e.to_string())?;
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Compare { a, b, tol } => compare(&a, &b, tol),
        Command::Sweep(a) => sweep(a),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
