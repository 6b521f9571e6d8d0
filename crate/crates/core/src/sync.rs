//! Shadow synchronization protocols.
//!
//! Both strategies run as per-rank passes that only enqueue messages; the
//! caller (see [`crate::world::World`]) performs the exchange and then feeds
//! each rank its inbox through [`handle_message`].
//!
//! * Next-neighbor synchronization (NNS): masters alone drive creation,
//!   update and removal of their shadows on adjacent subdomains. One
//!   exchange per call. Only valid when every radius is smaller than the
//!   smallest subdomain edge.
//! * Shadow-owner synchronization (SOS): part one pushes updates from each
//!   master to its registered shadow owners and migrates ownership; part two
//!   lets every copy, master or shadow, request shadows on adjacent
//!   subdomains it overlaps, and retires shadows that no longer touch their
//!   rank. Shadows therefore spread one subdomain per call. A per-rank
//!   cache of issued requests suppresses repeats.

use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::geometry::{axis_distance_squared, contains_point, sphere_inside_aabb, sphere_overlaps_aabb, Aabb, Vec3};
use crate::particle::ParticleId;
use crate::partition::{Partition, PartitionError, Rank};
use crate::store::{CreateOutcome, ParticleStore, StoreError};
use crate::transport::{Message, MessageKind, Outbox, TransportError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SyncStrategy {
    NextNeighbor,
    ShadowOwner,
}

impl SyncStrategy {
    /// Exchanges one call performs.
    pub fn exchanges_per_call(self) -> usize {
        match self {
            SyncStrategy::NextNeighbor => 1,
            SyncStrategy::ShadowOwner => 2,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            SyncStrategy::NextNeighbor => "nn",
            SyncStrategy::ShadowOwner => "so",
        }
    }
}

impl std::str::FromStr for SyncStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "nn" | "nns" | "next-neighbor" => Ok(SyncStrategy::NextNeighbor),
            "so" | "sos" | "shadow-owner" => Ok(SyncStrategy::ShadowOwner),
            other => Err(format!("unknown sync strategy '{other}' (expected nn or so)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum SyncError {
    #[error(
        "next-neighbor synchronization needs radius < smallest subdomain edge: particle {id} has radius {radius}, edge is {min_edge}"
    )]
    AssumptionViolated { id: ParticleId, radius: f64, min_edge: f64 },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
}

/// Per-rank record of `(particle, neighbor)` pairs for which this rank has
/// already requested shadow creation.
#[derive(Clone, Debug, Default)]
pub struct NeighborCache {
    entries: FxHashMap<ParticleId, Vec<Rank>>,
}

impl NeighborCache {
    pub fn contains(&self, id: ParticleId, r: Rank) -> bool {
        self.entries.get(&id).is_some_and(|v| v.contains(&r))
    }

    pub fn insert(&mut self, id: ParticleId, r: Rank) -> bool {
        let v = self.entries.entry(id).or_default();
        if v.contains(&r) {
            false
        } else {
            v.push(r);
            true
        }
    }

    pub fn remove(&mut self, id: ParticleId, r: Rank) -> bool {
        let Some(v) = self.entries.get_mut(&id) else {
            return false;
        };
        let before = v.len();
        v.retain(|&x| x != r);
        let removed = v.len() != before;
        if v.is_empty() {
            self.entries.remove(&id);
        }
        removed
    }

    pub fn forget(&mut self, id: ParticleId) {
        self.entries.remove(&id);
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (ParticleId, Rank)> + '_ {
        self.entries.iter().flat_map(|(&id, v)| v.iter().map(move |&r| (id, r)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TraceKind {
    Send(MessageKind),
    /// A delivered `CreateShadow` found an identical shadow and was dropped.
    Discard,
    /// Same as `Discard` but the payload differed from the stored shadow.
    DiscardMismatch,
    /// The local copy was deleted.
    LocalRemove,
    /// A cache entry was cleared by a deletion notice.
    CacheClear,
}

impl TraceKind {
    pub fn label(self) -> &'static str {
        match self {
            TraceKind::Send(k) => k.name(),
            TraceKind::Discard => "Discard",
            TraceKind::DiscardMismatch => "DiscardMismatch",
            TraceKind::LocalRemove => "LocalRemove",
            TraceKind::CacheClear => "CacheClear",
        }
    }
}

/// One protocol event. `superstep` is the index of the exchange that
/// delivers (for sends) or delivered (for receive-side events) the message.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    pub step: u64,
    pub superstep: u64,
    pub rank: Rank,
    pub kind: TraceKind,
    pub id: ParticleId,
    pub dst: Rank,
}

impl TraceEvent {
    /// `step,rank,kind,id,dst`
    pub fn to_line(&self) -> String {
        format!("{},{},{},{},{}", self.step, self.rank, self.kind.label(), self.id, self.dst)
    }
}

/// Everything one logical process owns.
#[derive(Clone, Debug)]
pub struct RankState {
    pub store: ParticleStore,
    pub cache: NeighborCache,
    pub trace: Option<Vec<TraceEvent>>,
    /// Step and superstep stamped on trace events.
    pub clock: (u64, u64),
}

impl RankState {
    pub fn new(rank: Rank) -> Self {
        Self {
            store: ParticleStore::new(rank),
            cache: NeighborCache::default(),
            trace: None,
            clock: (0, 0),
        }
    }

    pub fn rank(&self) -> Rank {
        self.store.rank()
    }

    fn record(&mut self, kind: TraceKind, id: ParticleId, dst: Rank) {
        let rank = self.rank();
        let (step, superstep) = self.clock;
        if let Some(t) = self.trace.as_mut() {
            t.push(TraceEvent {
                step,
                superstep,
                rank,
                kind,
                id,
                dst,
            });
        }
    }

    fn send(&mut self, outbox: &mut Outbox, dst: Rank, msg: Message) -> Result<(), SyncError> {
        if self.trace.is_some() {
            self.record(TraceKind::Send(msg.kind()), msg.id(), dst);
        }
        outbox.enqueue(dst, msg)?;
        Ok(())
    }

    /// Drop the local copy of `id` together with everything cached for it.
    fn drop_local(&mut self, id: ParticleId) -> Option<crate::store::Removed> {
        let removed = self.store.remove(id)?;
        self.cache.forget(id);
        self.record(TraceKind::LocalRemove, id, self.rank());
        Some(removed)
    }
}

/// Upper bound on the sync calls a new particle needs before its shadow set
/// is complete: `ceil(radius / min_edge) + 1`.
pub fn required_startup_syncs(radius: f64, min_edge: f64) -> usize {
    (radius / min_edge).ceil() as usize + 1
}

/// NNS precondition for one rank: every local radius below the smallest
/// subdomain edge.
pub fn check_next_neighbor_assumption(store: &ParticleStore, part: &Partition) -> Result<(), SyncError> {
    let min_edge = part.min_subdomain_edge();
    match store.particles().find(|p| p.state.radius >= min_edge) {
        Some(p) => Err(SyncError::AssumptionViolated {
            id: p.id(),
            radius: p.state.radius,
            min_edge,
        }),
        None => Ok(()),
    }
}

/// Adjacent ranks other than `me`. Each neighbor box is stored as one
/// interval index per axis; an axis has at most three distinct intervals,
/// so a sphere needs nine axis terms instead of 26 box distances.
struct NeighborTable {
    ranks: Vec<(Rank, [usize; 3])>,
    slabs: [Vec<(f64, f64)>; 3],
    period: [Option<f64>; 3],
}

impl NeighborTable {
    fn new(part: &Partition, me: Rank) -> Self {
        let mut slabs: [Vec<(f64, f64)>; 3] = Default::default();
        let mut ranks = Vec::new();
        for n in part.neighbors_of(me).iter().filter(|n| n.rank != me) {
            let b = part.subdomain(n.rank);
            let mut idx = [0; 3];
            for (axis, list) in slabs.iter_mut().enumerate() {
                let iv = (b.min[axis], b.max[axis]);
                idx[axis] = list.iter().position(|&x| x == iv).unwrap_or_else(|| {
                    list.push(iv);
                    list.len() - 1
                });
            }
            ranks.push((n.rank, idx));
        }
        let d = part.domain();
        let ext = d.extent();
        let period = [0, 1, 2].map(|a| d.periodic[a].then_some(ext[a]));
        Self { ranks, slabs, period }
    }

    /// Neighbors whose subdomain the open ball overlaps, in rank order.
    /// Same predicate as [`sphere_overlaps_aabb`], term for term.
    fn overlapping(&self, center: Vec3, radius: f64) -> impl Iterator<Item = Rank> + '_ {
        let mut terms = [[0.0f64; 3]; 3];
        for axis in 0..3 {
            for (k, &(lo, hi)) in self.slabs[axis].iter().enumerate() {
                terms[axis][k] = axis_distance_squared(center[axis], lo, hi, self.period[axis]);
            }
        }
        let r2 = radius * radius;
        self.ranks.iter().filter_map(move |&(r, [x, y, z])| {
            let mut d2 = 0.0;
            d2 += terms[0][x];
            d2 += terms[1][y];
            d2 += terms[2][z];
            (d2 < r2).then_some(r)
        })
    }
}

/// Outcome of the ownership check for one master.
enum Migration {
    Stay,
    Transfer(Rank),
    Leave,
}

fn migration(part: &Partition, own_box: &Aabb, p: &crate::particle::Particle) -> Result<Migration, SyncError> {
    if contains_point(own_box, p.state.position) {
        return Ok(Migration::Stay);
    }
    match part.owner_of(p.state.position) {
        Ok(r) if r == p.owner => Ok(Migration::Stay),
        Ok(r) => Ok(Migration::Transfer(r)),
        Err(PartitionError::OutOfDomain(_)) => Ok(Migration::Leave),
        Err(e) => Err(e.into()),
    }
}

/// Hand the master of `id` to `new_owner`: ship the full state and the
/// shadow-owner list, tell the other shadow owners, keep a local shadow when
/// the particle still overlaps this subdomain.
fn transfer_ownership(
    rs: &mut RankState,
    part: &Partition,
    outbox: &mut Outbox,
    id: ParticleId,
    new_owner: Rank,
) -> Result<(), SyncError> {
    let me = rs.rank();
    let own_box = part.subdomain(me);
    let p = rs.store.get(id).ok_or(StoreError::UnknownId(id))?;
    let state = p.state;
    let keep = sphere_overlaps_aabb(state.position, state.radius, &own_box, part.domain());
    let owners = rs.store.demote_to_shadow(id, new_owner)?;
    let mut list: Vec<Rank> = owners.iter().copied().filter(|&r| r != new_owner).collect();
    if keep {
        list.push(me);
        list.sort();
    }
    rs.send(
        outbox,
        new_owner,
        Message::TransferOwnership {
            state,
            shadow_owners: list,
        },
    )?;
    for &r in owners.iter().filter(|&&r| r != new_owner) {
        rs.send(outbox, r, Message::OwnerChanged { id, new_owner })?;
    }
    if !keep {
        if let Some(removed) = rs.drop_local(id) {
            for r in removed.requesters.into_iter().filter(|&r| r != me) {
                rs.send(outbox, r, Message::ShadowDeleted { id })?;
            }
        }
    }
    Ok(())
}

/// Particle left a non-periodic domain: remove it and all its shadows.
fn remove_everywhere(rs: &mut RankState, outbox: &mut Outbox, id: ParticleId) -> Result<(), SyncError> {
    let owners = rs.store.shadow_owners(id).map(<[Rank]>::to_vec).unwrap_or_default();
    for r in owners {
        rs.send(outbox, r, Message::RemoveShadow { id })?;
    }
    rs.drop_local(id);
    Ok(())
}

/// NNS pass for one rank. The caller must have verified the size
/// assumption on every rank before any rank runs this.
pub fn sync_next_neighbor(rs: &mut RankState, part: &Partition, outbox: &mut Outbox) -> Result<(), SyncError> {
    let me = rs.rank();
    let own_box = part.subdomain(me);
    let neighbors = NeighborTable::new(part, me);
    let masters: Vec<ParticleId> = rs.store.masters().map(|p| p.id()).collect();
    let mut overlapped: Vec<Rank> = Vec::new();

    for id in masters {
        let p = rs.store.get(id).expect("listed above");
        let state = p.state;
        let registered = rs.store.shadow_owners(id).map(<[Rank]>::to_vec).unwrap_or_default();

        // step 1: shadows on adjacent subdomains
        let interior = sphere_inside_aabb(state.position, state.radius, &own_box);
        if !(interior && registered.is_empty()) {
            overlapped.clear();
            if !interior {
                overlapped.extend(neighbors.overlapping(state.position, state.radius));
            }
            for &n in &overlapped {
                if registered.binary_search(&n).is_ok() {
                    rs.send(
                        outbox,
                        n,
                        Message::UpdateShadow {
                            id,
                            kinematics: state.kinematics(),
                        },
                    )?;
                } else {
                    rs.send(outbox, n, Message::CreateShadow { state, owner: me })?;
                    rs.store.register_shadow_owner(id, n)?;
                }
            }
            // stale or no longer adjacent (possible after a transfer)
            for r in registered {
                if overlapped.binary_search(&r).is_err() {
                    rs.send(outbox, r, Message::RemoveShadow { id })?;
                    rs.store.deregister_shadow_owner(id, r)?;
                }
            }
        }

        // step 2: ownership
        let p = rs.store.get(id).expect("still present");
        match migration(part, &own_box, p)? {
            Migration::Stay => {}
            Migration::Transfer(r) => transfer_ownership(rs, part, outbox, id, r)?,
            Migration::Leave => remove_everywhere(rs, outbox, id)?,
        }
    }
    Ok(())
}

/// SOS part one for one rank: update every registered shadow, then migrate
/// masters whose center left the subdomain.
pub fn sync_shadow_owners_update(rs: &mut RankState, part: &Partition, outbox: &mut Outbox) -> Result<(), SyncError> {
    let me = rs.rank();
    let own_box = part.subdomain(me);
    let masters: Vec<ParticleId> = rs.store.masters().map(|p| p.id()).collect();
    for id in masters {
        let p = rs.store.get(id).expect("listed above");
        let kinematics = p.state.kinematics();
        let owners = rs.store.shadow_owners(id).map(<[Rank]>::to_vec).unwrap_or_default();
        for r in owners {
            rs.send(outbox, r, Message::UpdateShadow { id, kinematics })?;
        }
        let p = rs.store.get(id).expect("still present");
        match migration(part, &own_box, p)? {
            Migration::Stay => {}
            Migration::Transfer(r) => transfer_ownership(rs, part, outbox, id, r)?,
            Migration::Leave => remove_everywhere(rs, outbox, id)?,
        }
    }
    Ok(())
}

/// SOS part two for one rank: every local copy requests shadows on adjacent
/// subdomains it overlaps (unless that neighbor owns it or was already
/// asked), and shadows that no longer touch this subdomain are deleted with
/// a notice to the owner and to every rank that requested them.
pub fn sync_shadow_owners_create(rs: &mut RankState, part: &Partition, outbox: &mut Outbox) -> Result<(), SyncError> {
    let me = rs.rank();
    let own_box = part.subdomain(me);
    let domain = part.domain();
    let neighbors = NeighborTable::new(part, me);
    let mut overlapped: Vec<Rank> = Vec::new();
    // interior masters can neither spread nor go stale
    let boundary: Vec<(ParticleId, crate::particle::ParticleState, Rank, bool)> = rs
        .store
        .particles()
        .filter(|p| !(p.is_master() && sphere_inside_aabb(p.state.position, p.state.radius, &own_box)))
        .map(|p| (p.id(), p.state, p.owner, p.is_master()))
        .collect();

    for (id, state, owner, is_master) in boundary {
        if !sphere_inside_aabb(state.position, state.radius, &own_box) {
            overlapped.clear();
            overlapped.extend(neighbors.overlapping(state.position, state.radius));
            for &n in &overlapped {
                if n == owner || rs.cache.contains(id, n) {
                    continue;
                }
                if is_master && rs.store.shadow_owners(id).is_some_and(|o| o.binary_search(&n).is_ok()) {
                    continue;
                }
                rs.send(outbox, n, Message::CreateShadow { state, owner })?;
                rs.cache.insert(id, n);
                if is_master {
                    rs.store.register_shadow_owner(id, n)?;
                } else {
                    rs.send(outbox, owner, Message::RegisterShadowOwner { id, shadow_owner: n })?;
                }
            }
        }

        if !is_master && !sphere_overlaps_aabb(state.position, state.radius, &own_box, domain) {
            let removed = rs.drop_local(id).expect("present");
            rs.send(outbox, owner, Message::ShadowDeleted { id })?;
            for r in removed.requesters {
                if r != owner && r != me {
                    rs.send(outbox, r, Message::ShadowDeleted { id })?;
                }
            }
        }
    }
    Ok(())
}

/// Apply one delivered message to a rank.
pub fn handle_message(rs: &mut RankState, src: Rank, msg: Message) -> Result<(), SyncError> {
    let me = rs.rank();
    match msg {
        Message::CreateShadow { state, owner } => {
            let id = state.id;
            match rs.store.apply_create_shadow(state, owner, src)? {
                CreateOutcome::Created => {}
                CreateOutcome::Duplicate { identical: true } => rs.record(TraceKind::Discard, id, src),
                CreateOutcome::Duplicate { identical: false } => rs.record(TraceKind::DiscardMismatch, id, src),
            }
        }
        Message::UpdateShadow { id, kinematics } => rs.store.update_shadow(id, &kinematics)?,
        Message::RemoveShadow { id } => {
            if rs.drop_local(id).is_none() {
                return Err(StoreError::UnknownId(id).into());
            }
        }
        Message::TransferOwnership { state, shadow_owners } => {
            rs.store.accept_ownership(state, &shadow_owners)?;
        }
        Message::OwnerChanged { id, new_owner } => rs.store.set_owner(id, new_owner)?,
        Message::ForceContribution { id, entries } => rs.store.apply_force_contribution(id, entries)?,
        Message::ShadowDeleted { id } => {
            if rs.store.get(id).is_some_and(|p| p.is_master()) {
                rs.store.deregister_shadow_owner(id, src)?;
            }
            if rs.cache.remove(id, src) {
                rs.record(TraceKind::CacheClear, id, src);
            }
        }
        Message::RegisterShadowOwner { id, shadow_owner } => {
            match rs.store.get(id) {
                Some(p) if p.is_master() => {}
                _ => {
                    return Err(StoreError::InvariantViolation(format!(
                        "RegisterShadowOwner for {id} reached rank {me}, which does not hold its master"
                    ))
                    .into())
                }
            }
            rs.store.register_shadow_owner(id, shadow_owner)?;
        }
    }
    Ok(())
}
