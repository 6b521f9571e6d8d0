//! Acceptance suite. Runs every criterion in sequence (the relative-cost
//! criterion is timing based and must not share the core with other
//! tests), prints one `criterion N: PASS|FAIL` line each and exits non-zero
//! if any failed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use rand_chacha::rand_core::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shadowsync::dynamics::ContactParams;
use shadowsync::harness::{self, RunOptions, Scaling};
use shadowsync::scenario::{ScenarioConfig, ScenarioKind};
use shadowsync::sync::{SyncError, TraceKind};
use shadowsync::transport::MessageKind;
use shadowsync::{Aabb, DomainBox, Error, ParticleId, ParticleState, Partition, Rank, SyncStrategy, Vec3, World};

type Outcome = Result<String, String>;

fn main() -> ExitCode {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, fn() -> Outcome); 10] = [
        (1, shadow_placement_matches_oracle),
        (2, next_neighbor_guard),
        (3, protocols_agree_bitwise),
        (4, rank_count_independence),
        (5, diffusion_one_hop_per_call),
        (6, cache_soundness_and_duplicate_discard),
        (7, communication_structure),
        (8, relative_cost_trend),
        (9, conservation),
        (10, formula_identities),
    ];
    let mut failed = 0;
    for (n, f) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n}: PASS ({secs:.1}s) {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n}: FAIL ({secs:.1}s) {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// independent oracles

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit(rng)
}

fn below(rng: &mut ChaCha8Rng, n: usize) -> usize {
    (rng.next_u64() % n as u64) as usize
}

/// Distance along one axis from `c` to `[lo, hi]`, minimized over periodic
/// images of period `len` when `len` is given.
fn axis_gap(c: f64, lo: f64, hi: f64, len: Option<f64>) -> f64 {
    let gap = |x: f64| {
        if x < lo {
            lo - x
        } else if x > hi {
            x - hi
        } else {
            0.0
        }
    };
    match len {
        None => gap(c),
        Some(l) => (-3..=3).map(|k| gap(c + k as f64 * l)).fold(f64::INFINITY, f64::min),
    }
}

/// Axis-aligned boxes of a uniform grid, computed without the library.
fn grid_boxes(extent: Vec3, grid: [usize; 3]) -> Vec<Aabb> {
    let mut out = Vec::new();
    for z in 0..grid[2] {
        for y in 0..grid[1] {
            for x in 0..grid[0] {
                let c = [x, y, z];
                let lo: Vec<f64> = (0..3).map(|a| extent[a] * c[a] as f64 / grid[a] as f64).collect();
                let hi: Vec<f64> = (0..3).map(|a| extent[a] * (c[a] + 1) as f64 / grid[a] as f64).collect();
                out.push(Aabb::new(Vec3::new(lo[0], lo[1], lo[2]), Vec3::new(hi[0], hi[1], hi[2])));
            }
        }
    }
    out
}

fn rank_of_box(boxes: &[Aabb], p: Vec3) -> usize {
    boxes
        .iter()
        .position(|b| (0..3).all(|a| p[a] >= b.min[a] && p[a] < b.max[a]))
        .expect("point inside the domain")
}

/// Every (id, rank) other than the owner whose box the sphere overlaps.
fn placement_oracle(masters: &BTreeMap<ParticleId, ParticleState>, extent: Vec3, grid: [usize; 3], periodic: [bool; 3]) -> BTreeSet<(ParticleId, Rank)> {
    let boxes = grid_boxes(extent, grid);
    let mut out = BTreeSet::new();
    for (id, s) in masters {
        let owner = rank_of_box(&boxes, s.position);
        for (r, b) in boxes.iter().enumerate() {
            if r == owner {
                continue;
            }
            let d2: f64 = (0..3)
                .map(|a| axis_gap(s.position[a], b.min[a], b.max[a], periodic[a].then_some(extent[a])).powi(2))
                .sum();
            if d2 < s.radius * s.radius {
                out.insert((*id, Rank(r as u32)));
            }
        }
    }
    out
}

/// Grid-index Chebyshev distance with periodic wrap.
fn hops(a: usize, b: usize, grid: [usize; 3], periodic: [bool; 3]) -> usize {
    let coords = |r: usize| [r % grid[0], (r / grid[0]) % grid[1], r / (grid[0] * grid[1])];
    let (ca, cb) = (coords(a), coords(b));
    (0..3)
        .map(|k| {
            let d = ca[k].abs_diff(cb[k]);
            if periodic[k] {
                d.min(grid[k] - d)
            } else {
                d
            }
        })
        .max()
        .unwrap()
}

fn max_deviation(a: &BTreeMap<ParticleId, ParticleState>, b: &BTreeMap<ParticleId, ParticleState>) -> Option<f64> {
    if a.len() != b.len() || a.keys().ne(b.keys()) {
        return None;
    }
    let mut worst = 0.0f64;
    for (id, sa) in a {
        let sb = &b[id];
        for k in 0..3 {
            worst = worst.max((sa.position[k] - sb.position[k]).abs());
            worst = worst.max((sa.velocity[k] - sb.velocity[k]).abs());
        }
    }
    Some(worst)
}

fn world(extent: Vec3, grid: [usize; 3], periodic: [bool; 3], strategy: SyncStrategy, params: ContactParams) -> World {
    let domain = DomainBox::new(Aabb::new(Vec3::ZERO, extent), periodic).unwrap();
    World::new(Partition::new(domain, grid).unwrap(), strategy, params, Vec::new())
}

fn no_forces() -> ContactParams {
    ContactParams {
        stiffness: 0.0,
        damping: 0.0,
        gravity: Vec3::ZERO,
    }
}

struct RandomWorld {
    extent: Vec3,
    grid: [usize; 3],
    periodic: [bool; 3],
    particles: Vec<ParticleState>,
}

/// Subdomain edge 10, grids up to 4x4x4, radii mostly small with a share
/// up to 1.5 edges.
fn random_world(rng: &mut ChaCha8Rng, speed: f64) -> RandomWorld {
    let edge = 10.0;
    let grid = [1 + below(rng, 4), 1 + below(rng, 4), 1 + below(rng, 4)];
    let periodic = [rng.next_u64() % 2 == 0, rng.next_u64() % 2 == 0, rng.next_u64() % 2 == 0];
    let extent = Vec3::new(edge * grid[0] as f64, edge * grid[1] as f64, edge * grid[2] as f64);
    let n = 5 + below(rng, 26);
    let particles = (0..n)
        .map(|i| {
            let radius = if unit(rng) < 0.3 { uniform(rng, 3.0, 1.5 * edge) } else { uniform(rng, 0.3, 3.0) };
            let pos = Vec3::new(uniform(rng, 0.0, extent.x), uniform(rng, 0.0, extent.y), uniform(rng, 0.0, extent.z));
            let vel = Vec3::new(uniform(rng, -speed, speed), uniform(rng, -speed, speed), uniform(rng, -speed, speed));
            ParticleState::sphere(ParticleId::setup(i as u32), pos, vel, radius, 1.0)
        })
        .collect();
    RandomWorld {
        extent,
        grid,
        periodic,
        particles,
    }
}

fn quiesce(w: &mut World) {
    for _ in 0..w.required_startup_syncs() {
        w.sync().unwrap();
    }
}

fn placement_problems(w: &World, rw: &RandomWorld) -> Option<String> {
    let oracle = placement_oracle(&w.masters(), rw.extent, rw.grid, rw.periodic);
    let placed = w.shadow_placement();
    if oracle != placed {
        return Some(format!(
            "grid {:?}: {} missing, {} superfluous",
            rw.grid,
            oracle.difference(&placed).count(),
            placed.difference(&oracle).count()
        ));
    }
    w.check_consistency().into_iter().next()
}

// ---------------------------------------------------------------------------
// criteria

fn shadow_placement_matches_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    let mut shadows = 0;
    for case in 0..200 {
        let rw = random_world(&mut rng, 0.05);
        let mut w = world(rw.extent, rw.grid, rw.periodic, SyncStrategy::ShadowOwner, no_forces());
        for p in &rw.particles {
            w.insert(*p).unwrap();
        }
        quiesce(&mut w);
        if let Some(p) = placement_problems(&w, &rw) {
            return Err(format!("case {case} after insertion: {p}"));
        }
        // motion, migration and removal at open faces, then quiesce again
        for _ in 0..5 {
            w.step(1.0).unwrap();
        }
        quiesce(&mut w);
        if let Some(p) = placement_problems(&w, &rw) {
            return Err(format!("case {case} after motion: {p}"));
        }
        shadows += w.shadow_count();
    }
    Ok(format!("200 worlds match the overlap oracle ({shadows} shadows checked)"))
}

fn is_assumption_violation(e: &Error) -> bool {
    matches!(e, Error::Sync(SyncError::AssumptionViolated { .. }))
}

fn next_neighbor_guard() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC2);
    for case in 0..50 {
        let mut rw = random_world(&mut rng, 0.0);
        let min_edge = 10.0;
        let big = below(&mut rng, rw.particles.len());
        rw.particles[big].radius = uniform(&mut rng, min_edge, 1.5 * min_edge);

        // direct insertion into an NNS world
        let mut nn = world(rw.extent, rw.grid, rw.periodic, SyncStrategy::NextNeighbor, no_forces());
        let mut rejected = false;
        for p in &rw.particles {
            match nn.insert(*p) {
                Ok(_) => {}
                Err(e) if is_assumption_violation(&e) => rejected = true,
                Err(e) => return Err(format!("case {case}: unexpected error {e}")),
            }
        }
        if !rejected || nn.transport().exchange_count() != 0 {
            return Err(format!("case {case}: NNS accepted radius {} >= edge {min_edge}", rw.particles[big].radius));
        }

        // the same world is fine under SOS
        let mut so = world(rw.extent, rw.grid, rw.periodic, SyncStrategy::ShadowOwner, no_forces());
        for p in &rw.particles {
            so.insert(*p).map_err(|e| format!("case {case}: SOS rejected insertion: {e}"))?;
        }
        quiesce(&mut so);
        if let Some(p) = placement_problems(&so, &rw) {
            return Err(format!("case {case}: SOS placement wrong: {p}"));
        }

        // switching the populated world to NNS fails before any exchange
        so.set_strategy(SyncStrategy::NextNeighbor);
        let before = so.transport().exchange_count();
        match so.sync() {
            Err(e) if is_assumption_violation(&e) => {}
            other => return Err(format!("case {case}: NNS sync returned {other:?}")),
        }
        if so.transport().exchange_count() != before {
            return Err(format!("case {case}: exchange happened before rejection"));
        }
    }
    Ok("50/50 worlds rejected by NNS before any exchange and accepted by SOS".into())
}

fn protocols_agree_bitwise() -> Outcome {
    let mut cfg = ScenarioConfig::defaults(ScenarioKind::Sparse);
    cfg.grid = [2, 2, 2];
    cfg.block = Vec3::new(20.0, 10.0, 10.0);
    let mut nn = ScenarioConfig {
        sync: SyncStrategy::NextNeighbor,
        ..cfg.clone()
    }
    .build()
    .unwrap();
    let mut so = ScenarioConfig {
        sync: SyncStrategy::ShadowOwner,
        ..cfg.clone()
    }
    .build()
    .unwrap();
    let n = nn.master_count();
    nn.startup_syncs().unwrap();
    so.startup_syncs().unwrap();
    let mut contacts = 0;
    for step in 1..=200 {
        let a = nn.step(cfg.dt).unwrap();
        so.step(cfg.dt).unwrap();
        contacts += a.contacts;
        if nn.snapshot().to_text() != so.snapshot().to_text() {
            return Err(format!("snapshots differ at step {step}"));
        }
    }
    check(
        n == 16000,
        format!("{n} particles on 8 ranks, 200 steps, snapshots bitwise identical every step ({contacts} contacts)"),
    )
}

fn rank_count_independence() -> Outcome {
    let sparse = ScenarioConfig {
        domain: Some(Vec3::splat(24.0)),
        ..ScenarioConfig::defaults(ScenarioKind::Sparse)
    };
    let dense = {
        let d = ScenarioConfig::defaults(ScenarioKind::Dense);
        ScenarioConfig {
            domain: Some(Vec3::new(40.0, 40.0 * 0.866_025_403_784_438_6, d.block.z)),
            ..d
        }
    };
    let large = ScenarioConfig {
        block: Vec3::splat(24.0),
        radius_large: Some(9.0),
        ..ScenarioConfig::defaults(ScenarioKind::Large)
    };
    let cases = [
        ("sparse", sparse, [[1, 1, 1], [2, 2, 2], [4, 4, 4]]),
        ("dense", dense, [[1, 1, 1], [4, 2, 1], [8, 8, 1]]),
        ("large", large, [[1, 1, 1], [2, 2, 2], [4, 4, 4]]),
    ];
    let mut notes = Vec::new();
    for (name, base, grids) in cases {
        let mut serial: Option<BTreeMap<ParticleId, ParticleState>> = None;
        let mut worst = 0.0f64;
        let mut bitwise = true;
        let mut n = 0;
        for g in grids {
            let cfg = ScenarioConfig { grid: g, ..base.clone() };
            let mut w = cfg.build().unwrap();
            n = w.master_count();
            if n > 16000 {
                return Err(format!("{name}: {n} particles exceeds the reduced size"));
            }
            w.startup_syncs().unwrap();
            for _ in 0..100 {
                w.step(cfg.dt).unwrap();
            }
            let problems = w.check_consistency();
            if let Some(p) = problems.first() {
                return Err(format!("{name} {g:?}: {p}"));
            }
            let m = w.masters();
            match &serial {
                None => serial = Some(m),
                Some(s) => {
                    let d = max_deviation(s, &m).ok_or_else(|| format!("{name} {g:?}: particle sets differ"))?;
                    worst = worst.max(d);
                    bitwise &= s == &m;
                }
            }
        }
        if worst > 1e-12 {
            return Err(format!("{name}: max deviation {worst:e} > 1e-12"));
        }
        notes.push(format!("{name} n={n} max_dev={worst:e}{}", if bitwise { " (bitwise)" } else { "" }));
    }
    Ok(format!("1/8/64 ranks after 100 steps: {}", notes.join(", ")))
}

fn diffusion_one_hop_per_call() -> Outcome {
    let edge = 10.0;
    let grid = [8, 8, 8];
    let periodic = [true; 3];
    let extent = Vec3::splat(80.0);
    let mut rng = ChaCha8Rng::seed_from_u64(0xC5);
    let mut notes = Vec::new();
    for (i, ratio) in [0.5f64, 1.5, 2.5].into_iter().enumerate() {
        let mut w = world(extent, grid, periodic, SyncStrategy::ShadowOwner, no_forces());
        for k in 0..40 {
            let p = Vec3::new(uniform(&mut rng, 0.0, 80.0), uniform(&mut rng, 0.0, 80.0), uniform(&mut rng, 0.0, 80.0));
            w.insert(ParticleState::sphere(ParticleId::setup(k), p, Vec3::ZERO, 0.5, 1.0)).unwrap();
        }
        quiesce(&mut w);
        let id = ParticleId::setup(1000 + i as u32);
        let center = Vec3::new(uniform(&mut rng, 0.0, 80.0), uniform(&mut rng, 0.0, 80.0), uniform(&mut rng, 0.0, 80.0));
        let r = ratio * edge;
        let owner = w.insert(ParticleState::sphere(id, center, Vec3::ZERO, r, 1.0)).unwrap().index();

        let single: BTreeMap<_, _> = w.masters().into_iter().filter(|(k, _)| *k == id).collect();
        let full = placement_oracle(&single, extent, grid, periodic);
        let deepest = full.iter().map(|(_, rk)| hops(owner, rk.index(), grid, periodic)).max().unwrap_or(0);
        let bound = (r / edge).ceil() as usize + 1;
        let mut complete_at = None;
        for k in 1..=bound {
            w.sync().unwrap();
            let placed: BTreeSet<_> = w.shadow_placement().into_iter().filter(|(p, _)| *p == id).collect();
            let expected: BTreeSet<_> = full.iter().copied().filter(|(_, rk)| hops(owner, rk.index(), grid, periodic) <= k).collect();
            if placed != expected {
                return Err(format!("r/edge {ratio}: after {k} calls {} shadows, expected {}", placed.len(), expected.len()));
            }
            if complete_at.is_none() && placed == full {
                complete_at = Some(k);
            }
        }
        match complete_at {
            Some(k) if k == deepest.max(1) => notes.push(format!("r/edge {ratio}: {} shadows complete after {k} calls (bound {bound})", full.len())),
            other => return Err(format!("r/edge {ratio}: completion at {other:?}, deepest hop {deepest}, bound {bound}")),
        }
        if let Some(p) = w.check_consistency().first() {
            return Err(format!("r/edge {ratio}: {p}"));
        }
    }
    Ok(notes.join("; "))
}

fn cache_soundness_and_duplicate_discard() -> Outcome {
    let cfg = ScenarioConfig {
        block: Vec3::splat(24.0),
        radius_large: Some(9.0),
        ..ScenarioConfig::defaults(ScenarioKind::Large)
    };
    let mut w = cfg.build().unwrap();
    let masters = w.master_count();
    w.enable_trace();
    w.startup_syncs().unwrap();
    for _ in 0..500 {
        w.step(cfg.dt).unwrap();
    }
    let trace = w.take_trace();
    if w.master_count() != masters {
        return Err("master count changed".into());
    }
    if let Some(p) = w.check_consistency().first() {
        return Err(p.clone());
    }

    // per sender: (id, dst) pairs requested and not yet invalidated
    let mut live: HashMap<Rank, BTreeSet<(ParticleId, Rank)>> = HashMap::new();
    let (mut creates, mut discards, mut mismatches, mut repeats) = (0u64, 0u64, 0u64, 0u64);
    for e in &trace {
        let set = live.entry(e.rank).or_default();
        match e.kind {
            TraceKind::Send(MessageKind::CreateShadow) => {
                creates += 1;
                if !set.insert((e.id, e.dst)) {
                    repeats += 1;
                }
            }
            TraceKind::LocalRemove => set.retain(|(id, _)| *id != e.id),
            TraceKind::CacheClear => {
                set.remove(&(e.id, e.dst));
            }
            TraceKind::Discard => discards += 1,
            TraceKind::DiscardMismatch => mismatches += 1,
            _ => {}
        }
    }
    check(
        repeats == 0 && mismatches == 0 && creates > 0,
        format!(
            "{} events over 500 steps: {creates} CreateShadow, {repeats} repeats without deletion, {discards} duplicates discarded, {mismatches} with differing payload",
            trace.len()
        ),
    )
}

fn pearson_r2(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    sxy * sxy / (sxx * syy)
}

fn communication_structure() -> Outcome {
    for (strategy, expected) in [(SyncStrategy::ShadowOwner, 2u64), (SyncStrategy::NextNeighbor, 1)] {
        let cfg = ScenarioConfig {
            grid: [2, 2, 2],
            block: Vec3::splat(8.0),
            sync: strategy,
            ..ScenarioConfig::defaults(ScenarioKind::Sparse)
        };
        let mut w = cfg.build().unwrap();
        w.startup_syncs().unwrap();
        for _ in 0..20 {
            let before = w.transport().exchange_count();
            let r = w.step(cfg.dt).unwrap();
            let total = w.transport().exchange_count() - before;
            if r.sync.exchanges != expected || total != expected + r.reduce.exchanges {
                return Err(format!("{}: {} sync exchanges in a step ({total} in total)", strategy.short_name(), r.sync.exchanges));
            }
        }
    }

    // shadow population grows with the number of cuts through a fixed box
    let grids = [[2, 1, 1], [2, 2, 1], [2, 2, 2], [3, 2, 2], [3, 3, 2], [3, 3, 3], [4, 3, 3], [4, 4, 3], [4, 4, 4]];
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for g in grids {
        let cfg = ScenarioConfig {
            grid: g,
            domain: Some(Vec3::splat(24.0)),
            ..ScenarioConfig::defaults(ScenarioKind::Sparse)
        };
        let mut w = cfg.build().unwrap();
        w.startup_syncs().unwrap();
        let (mut shadows, mut messages) = (0.0, 0.0);
        for _ in 0..30 {
            let r = w.step(cfg.dt).unwrap();
            shadows += r.shadows as f64;
            messages += r.sync.stats.messages as f64;
        }
        xs.push(shadows / 30.0);
        ys.push(messages / 30.0);
    }
    let r2 = pearson_r2(&xs, &ys);
    check(
        r2 >= 0.95,
        format!(
            "SOS 2 and NNS 1 exchanges per step; messages vs shadows over {} grids (shadows {:.0}..{:.0}): R^2 = {r2:.4}",
            grids.len(),
            xs.first().unwrap(),
            xs.last().unwrap()
        ),
    )
}

/// PUpCS of the fastest of `reps` timed runs at one sweep point.
fn best_pupcs(cfg: &ScenarioConfig, reps: usize) -> (f64, u64) {
    let mut best = f64::INFINITY;
    let mut particles = 0;
    for _ in 0..reps {
        let out = harness::run(cfg, &RunOptions::default()).unwrap();
        best = best.min(out.metrics.seconds);
        particles = out.metrics.particles;
    }
    (harness::pupcs(cfg.steps, particles, best, cfg.rank_count() as u64).unwrap(), particles)
}

fn relative_cost_trend() -> Outcome {
    // a 40-edge building block cut 2 and 4 times per axis gives edges 20 and 10
    let points: [(usize, &[f64]); 2] = [(2, &[2.5, 5.0, 10.0, 15.0]), (4, &[2.5, 5.0, 7.5])];
    let reps = 5;
    let mut means = Vec::new();
    let mut worst = f64::INFINITY;
    let mut detail = Vec::new();
    for fill in ["sparse", "dense"] {
        let mut base = ScenarioConfig::defaults(ScenarioKind::Large);
        base.block = Vec3::splat(40.0);
        base.set("fill", fill).unwrap();
        base.steps = 10;
        let mut ratios = Vec::new();
        for (div, radii) in points {
            for &radius in radii {
                let point = ScenarioConfig {
                    grid: [div; 3],
                    radius_large: Some(radius),
                    ..base.clone()
                };
                // interleave strategies so load drift hits both alike
                let mut nn_best = 0.0f64;
                let mut so_best = 0.0f64;
                for _ in 0..reps {
                    nn_best = nn_best.max(best_pupcs(&ScenarioConfig { sync: SyncStrategy::NextNeighbor, ..point.clone() }, 1).0);
                    so_best = so_best.max(best_pupcs(&ScenarioConfig { sync: SyncStrategy::ShadowOwner, ..point.clone() }, 1).0);
                }
                let ratio = so_best / nn_best;
                worst = worst.min(ratio);
                ratios.push(ratio);
                detail.push(format!("{fill}/e{}/r{radius}={ratio:.2}", 40 / div));
            }
        }
        means.push(ratios.iter().sum::<f64>() / ratios.len() as f64);
    }
    let (sparse, dense) = (means[0], means[1]);
    check(
        worst >= 0.5 && dense >= sparse,
        format!("SOS/NNS PUpCS min {worst:.3}, mean sparse {sparse:.3}, mean dense {dense:.3} [{}]", detail.join(" ")),
    )
}

fn conservation() -> Outcome {
    let mut cfg = ScenarioConfig::defaults(ScenarioKind::Sparse);
    cfg.grid = [2, 2, 2];
    cfg.block = Vec3::splat(10.0);
    cfg.set("periodic", "xyz").unwrap();
    let mut w = cfg.build().unwrap();
    w.startup_syncs().unwrap();
    let momentum = |w: &World| {
        w.masters().values().fold(Vec3::ZERO, |acc, s| {
            let m = s.mass();
            Vec3::new(acc.x + m * s.velocity.x, acc.y + m * s.velocity.y, acc.z + m * s.velocity.z)
        })
    };
    let n = w.master_count();
    let mut prev = momentum(&w);
    let mut worst = 0.0f64;
    let mut contacts = 0;
    for step in 1..=1000 {
        contacts += w.step(cfg.dt).unwrap().contacts;
        if w.master_count() != n {
            return Err(format!("master count {} != {n} at step {step}", w.master_count()));
        }
        let p = momentum(&w);
        let d = (0..3).map(|k| (p[k] - prev[k]).abs()).fold(0.0, f64::max);
        worst = worst.max(d);
        prev = p;
    }
    check(
        worst <= 1e-12,
        format!("{n} masters over 1000 steps, {contacts} contacts, max per-step momentum change {worst:e}"),
    )
}

fn formula_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC10);
    for i in 0..100 {
        let steps = rng.next_u64() % 1_000_000;
        let particles = 1 + rng.next_u64() % 10_000_000_000;
        let cores = 1 + rng.next_u64() % 2_000_000;
        let seconds = uniform(&mut rng, 1e-3, 1e5);
        let expected = steps as f64 * particles as f64 / (seconds * cores as f64);
        let got = harness::pupcs(steps, particles, seconds, cores).map_err(|e| e.to_string())?;
        if got.to_bits() != expected.to_bits() && !(steps == 0 && got == 0.0) {
            return Err(format!("input {i}: pupcs {got} != {expected}"));
        }

        let t1 = uniform(&mut rng, 1e-3, 1e4);
        let tp = uniform(&mut rng, 1e-3, 1e4);
        let p = 1 + rng.next_u64() % 100_000;
        let weak = harness::efficiency(t1, tp, p, Scaling::Weak).map_err(|e| e.to_string())?;
        let strong = harness::efficiency(t1, tp, p, Scaling::Strong).map_err(|e| e.to_string())?;
        if weak.to_bits() != (t1 / tp).to_bits() || strong.to_bits() != (t1 / (p as f64 * tp)).to_bits() {
            return Err(format!("input {i}: efficiency weak {weak} strong {strong}"));
        }
    }
    let guarded = harness::pupcs(1, 1, 0.0, 1).is_err() && harness::pupcs(1, 1, 1.0, 0).is_err() && harness::efficiency(1.0, 0.0, 1, Scaling::Weak).is_err();
    check(guarded, "100 random inputs reproduced exactly; zero divisors rejected".into())
}
