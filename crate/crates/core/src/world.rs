//! A complete simulated machine: partition, one [`RankState`] per rank, the
//! transport between them and the time-step loop.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::dynamics::{self, Contact, ContactParams, Wall};
use crate::geometry::sphere_overlaps_aabb;
use crate::particle::{ParticleId, ParticleState};
use crate::partition::{Partition, Rank};
use crate::store::StoreError;
use crate::sync::{self, RankState, SyncError, SyncStrategy, TraceEvent};
use crate::transport::{ExchangeStats, Inbox, Message, Outbox, Transport};
use crate::Error;

/// How per-rank work between two exchanges is executed. Both modes produce
/// identical results.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ExecMode {
    #[default]
    Sequential,
    Threads,
}

impl std::str::FromStr for ExecMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "seq" | "sequential" => Ok(ExecMode::Sequential),
            "threads" | "threaded" => Ok(ExecMode::Threads),
            other => Err(format!("unknown transport mode `{other}` (expected seq or threads)")),
        }
    }
}

/// Wall-clock time spent in each phase of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PhaseTimes {
    pub detect: Duration,
    pub resolve: Duration,
    pub reduce: Duration,
    pub integrate: Duration,
    pub sync: Duration,
}

impl PhaseTimes {
    pub fn sum(&self) -> Duration {
        self.detect + self.resolve + self.reduce + self.integrate + self.sync
    }

    pub fn add(&mut self, o: &PhaseTimes) {
        self.detect += o.detect;
        self.resolve += o.resolve;
        self.reduce += o.reduce;
        self.integrate += o.integrate;
        self.sync += o.sync;
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SyncReport {
    pub exchanges: u64,
    pub stats: ExchangeStats,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub phases: PhaseTimes,
    pub total: Duration,
    pub contacts: usize,
    pub reduce: SyncReport,
    pub sync: SyncReport,
    pub shadows: usize,
}

pub struct World {
    partition: Partition,
    ranks: Vec<RankState>,
    transport: Transport,
    strategy: SyncStrategy,
    params: ContactParams,
    walls: Vec<Wall>,
    mode: ExecMode,
    step: u64,
    min_radius: f64,
    max_radius: f64,
    trace: Option<Vec<TraceEvent>>,
}

impl std::fmt::Debug for World {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("World")
            .field("grid", &self.partition.grid())
            .field("strategy", &self.strategy)
            .field("mode", &self.mode)
            .field("step", &self.step)
            .field("masters", &self.master_count())
            .finish()
    }
}

/// Run `f` once per rank with that rank's outbox.
fn per_rank<F>(mode: ExecMode, ranks: &mut [RankState], outboxes: &mut [Outbox], f: F) -> Result<(), Error>
where
    F: Fn(&mut RankState, &mut Outbox) -> Result<(), Error> + Sync,
{
    match mode {
        ExecMode::Sequential => ranks.iter_mut().zip(outboxes).try_for_each(|(rs, ob)| f(rs, ob)),
        ExecMode::Threads => ranks.par_iter_mut().zip(outboxes).try_for_each(|(rs, ob)| f(rs, ob)),
    }
}

fn deliver(mode: ExecMode, ranks: &mut [RankState], inboxes: Vec<Inbox>) -> Result<(), Error> {
    let apply = |(rs, inbox): (&mut RankState, Inbox)| -> Result<(), Error> {
        for (src, msg) in inbox {
            sync::handle_message(rs, src, msg)?;
        }
        Ok(())
    };
    match mode {
        ExecMode::Sequential => ranks.iter_mut().zip(inboxes).try_for_each(apply),
        ExecMode::Threads => ranks.par_iter_mut().zip(inboxes).try_for_each(apply),
    }
}

impl World {
    pub fn new(partition: Partition, strategy: SyncStrategy, params: ContactParams, walls: Vec<Wall>) -> World {
        let n = partition.rank_count();
        World {
            ranks: partition.ranks().map(RankState::new).collect(),
            transport: Transport::new(n),
            partition,
            strategy,
            params,
            walls,
            mode: ExecMode::Sequential,
            step: 0,
            min_radius: f64::INFINITY,
            max_radius: 0.0,
            trace: None,
        }
    }

    pub fn set_mode(&mut self, mode: ExecMode) {
        self.mode = mode;
    }

    pub fn mode(&self) -> ExecMode {
        self.mode
    }

    /// Start recording protocol events. Collected events are available via
    /// [`World::take_trace`].
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
        for rs in &mut self.ranks {
            rs.trace = Some(Vec::new());
        }
    }

    pub fn take_trace(&mut self) -> Vec<TraceEvent> {
        self.collect_trace();
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    fn collect_trace(&mut self) {
        if let Some(all) = self.trace.as_mut() {
            for rs in &mut self.ranks {
                if let Some(t) = rs.trace.as_mut() {
                    all.append(t);
                }
            }
        }
    }

    pub fn set_dump(&mut self, w: Box<dyn std::io::Write + Send>) {
        self.transport.set_dump(w);
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn strategy(&self) -> SyncStrategy {
        self.strategy
    }

    /// Switch protocols on a quiesced world. Both keep the same per-master
    /// shadow-owner lists, so the switch needs no extra communication.
    pub fn set_strategy(&mut self, strategy: SyncStrategy) {
        self.strategy = strategy;
    }

    pub fn params(&self) -> &ContactParams {
        &self.params
    }

    pub fn walls(&self) -> &[Wall] {
        &self.walls
    }

    pub fn ranks(&self) -> &[RankState] {
        &self.ranks
    }

    pub fn rank(&self, r: Rank) -> &RankState {
        &self.ranks[r.index()]
    }

    pub fn transport(&self) -> &Transport {
        &self.transport
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn min_radius(&self) -> f64 {
        self.min_radius
    }

    pub fn max_radius(&self) -> f64 {
        self.max_radius
    }

    pub fn master_count(&self) -> usize {
        self.ranks.iter().map(|r| r.store.master_count()).sum()
    }

    pub fn shadow_count(&self) -> usize {
        self.ranks.iter().map(|r| r.store.shadow_count()).sum()
    }

    /// Place a new master on the rank owning its center. Under NNS the size
    /// assumption is checked first.
    pub fn insert(&mut self, state: ParticleState) -> Result<Rank, Error> {
        if self.strategy == SyncStrategy::NextNeighbor {
            let min_edge = self.partition.min_subdomain_edge();
            if state.radius >= min_edge {
                return Err(SyncError::AssumptionViolated {
                    id: state.id,
                    radius: state.radius,
                    min_edge,
                }
                .into());
            }
        }
        let state = ParticleState {
            position: self.partition.domain().wrap(state.position),
            ..state
        };
        let owner = self.partition.owner_of(state.position)?;
        self.ranks[owner.index()].store.insert_master(state, &self.partition)?;
        self.min_radius = self.min_radius.min(state.radius);
        self.max_radius = self.max_radius.max(state.radius);
        Ok(owner)
    }

    fn set_clock(&mut self, superstep: u64) {
        let step = self.step;
        for rs in &mut self.ranks {
            rs.clock = (step, superstep);
        }
    }

    fn exchange_and_deliver(&mut self) -> Result<ExchangeStats, Error> {
        let (inboxes, stats) = self.transport.exchange()?;
        deliver(self.mode, &mut self.ranks, inboxes)?;
        Ok(stats)
    }

    /// One synchronization call under the configured strategy.
    pub fn sync(&mut self) -> Result<SyncReport, Error> {
        let mut report = SyncReport::default();
        let part = &self.partition;
        match self.strategy {
            SyncStrategy::NextNeighbor => {
                // reject before anything is sent
                for rs in &self.ranks {
                    sync::check_next_neighbor_assumption(&rs.store, part)?;
                }
                self.set_clock(1);
                let part = &self.partition;
                per_rank(self.mode, &mut self.ranks, self.transport.outboxes_mut(), |rs, ob| {
                    Ok(sync::sync_next_neighbor(rs, part, ob)?)
                })?;
                report.stats.merge(&self.exchange_and_deliver()?);
                report.exchanges += 1;
            }
            SyncStrategy::ShadowOwner => {
                self.set_clock(1);
                let part = &self.partition;
                per_rank(self.mode, &mut self.ranks, self.transport.outboxes_mut(), |rs, ob| {
                    Ok(sync::sync_shadow_owners_update(rs, part, ob)?)
                })?;
                report.stats.merge(&self.exchange_and_deliver()?);
                self.set_clock(2);
                let part = &self.partition;
                per_rank(self.mode, &mut self.ranks, self.transport.outboxes_mut(), |rs, ob| {
                    Ok(sync::sync_shadow_owners_create(rs, part, ob)?)
                })?;
                report.stats.merge(&self.exchange_and_deliver()?);
                report.exchanges += 2;
            }
        }
        self.collect_trace();
        Ok(report)
    }

    /// Number of sync calls needed after inserting the current particles.
    pub fn required_startup_syncs(&self) -> usize {
        if self.max_radius <= 0.0 {
            return 1;
        }
        sync::required_startup_syncs(self.max_radius, self.partition.min_subdomain_edge())
    }

    pub fn startup_syncs(&mut self) -> Result<usize, Error> {
        let n = self.required_startup_syncs();
        for _ in 0..n {
            self.sync()?;
        }
        Ok(n)
    }

    /// One time step: detect, resolve, reduce, integrate, sync.
    pub fn step(&mut self, dt: f64) -> Result<StepReport, Error> {
        self.step += 1;
        self.set_clock(0);
        let mode = self.mode;
        let t0 = Instant::now();

        let part = &self.partition;
        let contacts: Vec<Vec<Contact>> = match mode {
            ExecMode::Sequential => self
                .ranks
                .iter()
                .map(|rs| dynamics::detect_contacts(&rs.store, part, rs.rank()))
                .collect::<Result<_, _>>()?,
            ExecMode::Threads => self
                .ranks
                .par_iter()
                .map(|rs| dynamics::detect_contacts(&rs.store, part, rs.rank()))
                .collect::<Result<_, _>>()?,
        };
        let t1 = Instant::now();

        let (walls, params) = (&self.walls, &self.params);
        let resolve = |(rs, c): (&mut RankState, &Vec<Contact>)| dynamics::resolve_contacts(c, walls, params, &mut rs.store);
        match mode {
            ExecMode::Sequential => self.ranks.iter_mut().zip(&contacts).try_for_each(resolve)?,
            ExecMode::Threads => self.ranks.par_iter_mut().zip(&contacts).try_for_each(resolve)?,
        }
        let t2 = Instant::now();

        per_rank(mode, &mut self.ranks, self.transport.outboxes_mut(), |rs, ob| {
            rs.store.send_force_contributions(ob)?;
            Ok(())
        })?;
        let (inboxes, reduce_stats) = self.transport.exchange()?;
        let merge = |(rs, inbox): (&mut RankState, Inbox)| -> Result<(), Error> {
            for (src, msg) in inbox {
                match msg {
                    Message::ForceContribution { id, entries } => rs.store.apply_force_contribution(id, entries)?,
                    other => {
                        return Err(StoreError::InvariantViolation(format!(
                            "{} from rank {src} during force reduction",
                            other.kind().name()
                        ))
                        .into())
                    }
                }
            }
            Ok(())
        };
        match mode {
            ExecMode::Sequential => self.ranks.iter_mut().zip(inboxes).try_for_each(merge)?,
            ExecMode::Threads => self.ranks.par_iter_mut().zip(inboxes).try_for_each(merge)?,
        }
        let t3 = Instant::now();

        let (domain, min_r) = (self.partition.domain(), self.min_radius);
        let integrate = |rs: &mut RankState| dynamics::integrate(&mut rs.store, dt, params, domain, min_r);
        match mode {
            ExecMode::Sequential => self.ranks.iter_mut().try_for_each(integrate)?,
            ExecMode::Threads => self.ranks.par_iter_mut().try_for_each(integrate)?,
        }
        let t4 = Instant::now();

        let sync = self.sync()?;
        let t5 = Instant::now();

        Ok(StepReport {
            step: self.step,
            phases: PhaseTimes {
                detect: t1 - t0,
                resolve: t2 - t1,
                reduce: t3 - t2,
                integrate: t4 - t3,
                sync: t5 - t4,
            },
            total: t5 - t0,
            contacts: contacts.iter().map(Vec::len).sum(),
            reduce: SyncReport {
                exchanges: 1,
                stats: reduce_stats,
            },
            sync,
            shadows: self.shadow_count(),
        })
    }

    /// Master states keyed by id.
    pub fn masters(&self) -> BTreeMap<ParticleId, ParticleState> {
        self.ranks
            .iter()
            .flat_map(|rs| rs.store.masters().map(|p| (p.id(), p.state)))
            .collect()
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            rows: self.masters(),
        }
    }

    /// Every `(id, rank)` at which a shadow currently lives.
    pub fn shadow_placement(&self) -> BTreeSet<(ParticleId, Rank)> {
        self.ranks
            .iter()
            .flat_map(|rs| rs.store.shadows().map(move |p| (p.id(), rs.rank())))
            .collect()
    }

    /// Brute-force placement: every rank other than the owner whose
    /// subdomain the sphere overlaps.
    pub fn overlap_oracle(&self) -> BTreeSet<(ParticleId, Rank)> {
        let part = &self.partition;
        let boxes: Vec<_> = part.ranks().map(|r| (r, part.subdomain(r))).collect();
        let mut out = BTreeSet::new();
        for rs in &self.ranks {
            for p in rs.store.masters() {
                for (r, b) in &boxes {
                    if *r != rs.rank() && sphere_overlaps_aabb(p.state.position, p.state.radius, b, part.domain()) {
                        out.insert((p.id(), *r));
                    }
                }
            }
        }
        out
    }

    /// Full cross-rank consistency check for a quiesced world. Returns a
    /// description of every violation found.
    pub fn check_consistency(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let part = &self.partition;
        let mut master_at: BTreeMap<ParticleId, Rank> = BTreeMap::new();
        for rs in &self.ranks {
            for p in rs.store.masters() {
                if let Some(prev) = master_at.insert(p.id(), rs.rank()) {
                    problems.push(format!("{} has masters on ranks {} and {}", p.id(), prev, rs.rank()));
                }
                if p.owner != rs.rank() {
                    problems.push(format!("master {} on rank {} names owner {}", p.id(), rs.rank(), p.owner));
                }
                match part.owner_of(p.state.position) {
                    Ok(r) if r == rs.rank() => {}
                    other => problems.push(format!("master {} on rank {} but center maps to {:?}", p.id(), rs.rank(), other)),
                }
            }
        }
        let placed = self.shadow_placement();
        let oracle = self.overlap_oracle();
        for missing in oracle.difference(&placed) {
            problems.push(format!("missing shadow of {} on rank {}", missing.0, missing.1));
        }
        for extra in placed.difference(&oracle) {
            problems.push(format!("superfluous shadow of {} on rank {}", extra.0, extra.1));
        }
        for rs in &self.ranks {
            for s in rs.store.shadows() {
                let Some(&owner) = master_at.get(&s.id()) else {
                    problems.push(format!("shadow {} on rank {} has no master", s.id(), rs.rank()));
                    continue;
                };
                if s.owner != owner {
                    problems.push(format!("shadow {} on rank {} names owner {}, master is on {}", s.id(), rs.rank(), s.owner, owner));
                }
                let m = self.ranks[owner.index()].store.get(s.id()).expect("master present");
                if m.state != s.state {
                    problems.push(format!("shadow {} on rank {} is stale", s.id(), rs.rank()));
                }
            }
            for p in rs.store.masters() {
                let registered: BTreeSet<Rank> = rs.store.shadow_owners(p.id()).unwrap_or(&[]).iter().copied().collect();
                let actual: BTreeSet<Rank> = placed.range((p.id(), Rank(0))..=(p.id(), Rank(u32::MAX))).map(|x| x.1).collect();
                if registered != actual {
                    problems.push(format!("master {} registers {:?} but shadows live on {:?}", p.id(), registered, actual));
                }
            }
        }
        problems
    }
}

/// Masters-only global state keyed by id. Its text form lists one particle
/// per line in id order with round-trip exact floats, so equal snapshots
/// have identical bytes regardless of rank count.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Snapshot {
    pub rows: BTreeMap<ParticleId, ParticleState>,
}

impl Snapshot {
    pub const HEADER: &'static str = "# id x y z vx vy vz wx wy wz qw qx qy qz radius";

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.rows.len() * 200);
        out.push_str(Self::HEADER);
        out.push('\n');
        for s in self.rows.values() {
            let q = s.orientation.0;
            let _ = writeln!(
                out,
                "{} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?} {:?}",
                s.id,
                s.position.x,
                s.position.y,
                s.position.z,
                s.velocity.x,
                s.velocity.y,
                s.velocity.z,
                s.angular_velocity.x,
                s.angular_velocity.y,
                s.angular_velocity.z,
                q[0],
                q[1],
                q[2],
                q[3],
                s.radius
            );
        }
        out
    }

    /// Parse [`Snapshot::to_text`] output. Mass properties are not stored and
    /// come back as zero.
    pub fn parse(text: &str) -> Result<Snapshot, String> {
        use crate::geometry::Vec3;
        use crate::particle::Quat;
        let mut rows = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let id: u64 = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| format!("line {}: bad id", n + 1))?;
            let v: Vec<f64> = it
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|e| format!("line {}: {e}", n + 1))?;
            if v.len() != 14 {
                return Err(format!("line {}: expected 15 fields, got {}", n + 1, v.len() + 1));
            }
            let state = ParticleState {
                id: ParticleId(id),
                position: Vec3::new(v[0], v[1], v[2]),
                velocity: Vec3::new(v[3], v[4], v[5]),
                angular_velocity: Vec3::new(v[6], v[7], v[8]),
                orientation: Quat([v[9], v[10], v[11], v[12]]),
                radius: v[13],
                inv_mass: 0.0,
                inv_inertia: 0.0,
            };
            if rows.insert(ParticleId(id), state).is_some() {
                return Err(format!("line {}: duplicate id {id}", n + 1));
            }
        }
        Ok(Snapshot { rows })
    }
}
