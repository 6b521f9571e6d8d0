//! Per-rank particle storage.
//!
//! Each rank keeps its master particles and the shadows of masters owned
//! elsewhere. For every master the store records the sorted set of ranks
//! holding a shadow ("shadow owners"); every shadow records the rank of its
//! master in [`Particle::owner`]. Shadows are read-only apart from their
//! force accumulators, which are shipped to the master by
//! [`ParticleStore::send_force_contributions`].

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::geometry::Vec3;
use crate::particle::{ForceEntry, ForceSource, Kinematics, Particle, ParticleId, ParticleState, Role};
use crate::partition::{Partition, PartitionError, Rank};
use crate::transport::{Message, Outbox, Transport, TransportError};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("particle {0} already stored on this rank")]
    DuplicateId(ParticleId),
    #[error("particle {id} belongs to rank {owner}, not rank {rank}")]
    WrongDomain { id: ParticleId, owner: Rank, rank: Rank },
    #[error("particle {0} is not stored on this rank")]
    UnknownId(ParticleId),
    #[error("protocol invariant violated: {0}")]
    InvariantViolation(String),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

#[derive(Clone, Debug)]
struct Record {
    particle: Particle,
    /// Sorted; only meaningful on masters.
    shadow_owners: Vec<Rank>,
    /// Ranks that asked this rank to create its copy. They are told when the
    /// copy goes away so they can forget the request.
    requesters: Vec<Rank>,
}

/// What happened to a `CreateShadow` delivery.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CreateOutcome {
    Created,
    /// A shadow with this id already existed. `identical` reports whether the
    /// delivered state matched the stored one bit for bit.
    Duplicate { identical: bool },
}

/// Removed copy of a particle, handed back to the caller.
#[derive(Clone, Debug)]
pub struct Removed {
    pub particle: Particle,
    pub shadow_owners: Vec<Rank>,
    pub requesters: Vec<Rank>,
}

/// Registry view: master → shadow owners, shadow → master owner.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ShadowRegistry {
    pub shadow_owners: BTreeMap<ParticleId, Vec<Rank>>,
    pub master_owner: BTreeMap<ParticleId, Rank>,
}

#[derive(Clone, Debug)]
pub struct ParticleStore {
    rank: Rank,
    records: Vec<Record>,
    index: FxHashMap<ParticleId, usize>,
}

fn insert_sorted(v: &mut Vec<Rank>, r: Rank) -> bool {
    match v.binary_search(&r) {
        Ok(_) => false,
        Err(pos) => {
            v.insert(pos, r);
            true
        }
    }
}

fn remove_sorted(v: &mut Vec<Rank>, r: Rank) -> bool {
    match v.binary_search(&r) {
        Ok(pos) => {
            v.remove(pos);
            true
        }
        Err(_) => false,
    }
}

impl ParticleStore {
    pub fn new(rank: Rank) -> Self {
        Self {
            rank,
            records: Vec::new(),
            index: FxHashMap::default(),
        }
    }

    pub fn rank(&self) -> Rank {
        self.rank
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn master_count(&self) -> usize {
        self.records.iter().filter(|r| r.particle.is_master()).count()
    }

    pub fn shadow_count(&self) -> usize {
        self.len() - self.master_count()
    }

    pub fn contains(&self, id: ParticleId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn get(&self, id: ParticleId) -> Option<&Particle> {
        self.index.get(&id).map(|&i| &self.records[i].particle)
    }

    pub fn get_mut(&mut self, id: ParticleId) -> Option<&mut Particle> {
        let i = *self.index.get(&id)?;
        Some(&mut self.records[i].particle)
    }

    /// Particle at a storage slot. Slots are stable until the next removal.
    pub fn at(&self, slot: usize) -> &Particle {
        &self.records[slot].particle
    }

    pub fn at_mut(&mut self, slot: usize) -> &mut Particle {
        &mut self.records[slot].particle
    }

    pub fn particles(&self) -> impl Iterator<Item = &Particle> {
        self.records.iter().map(|r| &r.particle)
    }

    pub fn particles_mut(&mut self) -> impl Iterator<Item = &mut Particle> {
        self.records.iter_mut().map(|r| &mut r.particle)
    }

    pub fn masters(&self) -> impl Iterator<Item = &Particle> {
        self.particles().filter(|p| p.is_master())
    }

    pub fn shadows(&self) -> impl Iterator<Item = &Particle> {
        self.particles().filter(|p| !p.is_master())
    }

    pub fn ids(&self) -> Vec<ParticleId> {
        self.records.iter().map(|r| r.particle.id()).collect()
    }

    pub fn shadow_owners(&self, id: ParticleId) -> Option<&[Rank]> {
        let i = *self.index.get(&id)?;
        let r = &self.records[i];
        r.particle.is_master().then_some(r.shadow_owners.as_slice())
    }

    pub fn requesters(&self, id: ParticleId) -> Option<&[Rank]> {
        self.index.get(&id).map(|&i| self.records[i].requesters.as_slice())
    }

    pub fn registry(&self) -> ShadowRegistry {
        let mut reg = ShadowRegistry::default();
        for r in &self.records {
            match r.particle.role {
                Role::Master => {
                    reg.shadow_owners.insert(r.particle.id(), r.shadow_owners.clone());
                }
                Role::Shadow => {
                    reg.master_owner.insert(r.particle.id(), r.particle.owner);
                }
            }
        }
        reg
    }

    fn push(&mut self, rec: Record) {
        self.index.insert(rec.particle.id(), self.records.len());
        self.records.push(rec);
    }

    fn slot(&self, id: ParticleId) -> Result<usize, StoreError> {
        self.index.get(&id).copied().ok_or(StoreError::UnknownId(id))
    }

    /// Store a new master. The partition decides whether it belongs here.
    pub fn insert_master(&mut self, state: ParticleState, part: &Partition) -> Result<(), StoreError> {
        if self.contains(state.id) {
            return Err(StoreError::DuplicateId(state.id));
        }
        let owner = part.owner_of(state.position)?;
        if owner != self.rank {
            return Err(StoreError::WrongDomain {
                id: state.id,
                owner,
                rank: self.rank,
            });
        }
        self.push(Record {
            particle: Particle {
                state,
                role: Role::Master,
                owner: self.rank,
                forces: Default::default(),
            },
            shadow_owners: Vec::new(),
            requesters: Vec::new(),
        });
        Ok(())
    }

    /// Handle a `CreateShadow` delivery from `from`. A second copy of an
    /// existing shadow is discarded.
    pub fn apply_create_shadow(
        &mut self,
        state: ParticleState,
        owner: Rank,
        from: Rank,
    ) -> Result<CreateOutcome, StoreError> {
        if let Some(&i) = self.index.get(&state.id) {
            let rec = &mut self.records[i];
            if rec.particle.is_master() {
                return Err(StoreError::InvariantViolation(format!(
                    "CreateShadow for {} which is a master on rank {}",
                    state.id, self.rank
                )));
            }
            insert_sorted(&mut rec.requesters, from);
            let identical = rec.particle.state == state && rec.particle.owner == owner;
            return Ok(CreateOutcome::Duplicate { identical });
        }
        if owner == self.rank {
            return Err(StoreError::InvariantViolation(format!(
                "shadow of {} would point back at its own rank {}",
                state.id, self.rank
            )));
        }
        self.push(Record {
            particle: Particle {
                state,
                role: Role::Shadow,
                owner,
                forces: Default::default(),
            },
            shadow_owners: Vec::new(),
            requesters: vec![from],
        });
        Ok(CreateOutcome::Created)
    }

    pub fn update_shadow(&mut self, id: ParticleId, k: &Kinematics) -> Result<(), StoreError> {
        let i = self.slot(id)?;
        let p = &mut self.records[i].particle;
        if p.is_master() {
            return Err(StoreError::InvariantViolation(format!(
                "UpdateShadow for master {id} on rank {}",
                self.rank
            )));
        }
        p.state.apply_kinematics(k);
        Ok(())
    }

    pub fn set_owner(&mut self, id: ParticleId, owner: Rank) -> Result<(), StoreError> {
        let i = self.slot(id)?;
        let p = &mut self.records[i].particle;
        if p.is_master() || owner == self.rank {
            return Err(StoreError::InvariantViolation(format!(
                "OwnerChanged({owner}) for {id} on rank {} holding a {:?}",
                self.rank, p.role
            )));
        }
        p.owner = owner;
        Ok(())
    }

    /// Turn a shadow into the master and install the shadow-owner list
    /// received from the previous owner.
    pub fn promote_shadow(&mut self, id: ParticleId, shadow_owners: &[Rank]) -> Result<(), StoreError> {
        let i = self.slot(id)?;
        let me = self.rank;
        let rec = &mut self.records[i];
        if rec.particle.is_master() {
            return Err(StoreError::InvariantViolation(format!("{id} is already a master on rank {me}")));
        }
        rec.particle.role = Role::Master;
        rec.particle.owner = me;
        rec.shadow_owners = shadow_owners.iter().copied().filter(|&r| r != me).collect();
        rec.shadow_owners.sort();
        rec.shadow_owners.dedup();
        Ok(())
    }

    /// Install a master received by ownership transfer, promoting an existing
    /// shadow or creating the master directly.
    pub fn accept_ownership(&mut self, state: ParticleState, shadow_owners: &[Rank]) -> Result<(), StoreError> {
        if self.contains(state.id) {
            self.promote_shadow(state.id, shadow_owners)?;
            let i = self.slot(state.id)?;
            self.records[i].particle.state = state;
        } else {
            let me = self.rank;
            let mut owners: Vec<Rank> = shadow_owners.iter().copied().filter(|&r| r != me).collect();
            owners.sort();
            owners.dedup();
            self.push(Record {
                particle: Particle {
                    state,
                    role: Role::Master,
                    owner: me,
                    forces: Default::default(),
                },
                shadow_owners: owners,
                requesters: Vec::new(),
            });
        }
        Ok(())
    }

    /// Turn a master into a shadow of the master now living on `new_owner`.
    /// Returns the shadow-owner list it had.
    pub fn demote_to_shadow(&mut self, id: ParticleId, new_owner: Rank) -> Result<Vec<Rank>, StoreError> {
        let i = self.slot(id)?;
        let rec = &mut self.records[i];
        if !rec.particle.is_master() || new_owner == self.rank {
            return Err(StoreError::InvariantViolation(format!("cannot demote {id} on rank {}", self.rank)));
        }
        rec.particle.role = Role::Shadow;
        rec.particle.owner = new_owner;
        Ok(std::mem::take(&mut rec.shadow_owners))
    }

    pub fn register_shadow_owner(&mut self, id: ParticleId, r: Rank) -> Result<bool, StoreError> {
        let i = self.slot(id)?;
        let rec = &mut self.records[i];
        if !rec.particle.is_master() {
            return Err(StoreError::InvariantViolation(format!(
                "registering shadow owner {r} for non-master {id} on rank {}",
                self.rank
            )));
        }
        if r == self.rank {
            return Ok(false);
        }
        Ok(insert_sorted(&mut rec.shadow_owners, r))
    }

    pub fn deregister_shadow_owner(&mut self, id: ParticleId, r: Rank) -> Result<bool, StoreError> {
        let i = self.slot(id)?;
        Ok(remove_sorted(&mut self.records[i].shadow_owners, r))
    }

    pub fn forget_requester(&mut self, id: ParticleId, r: Rank) {
        if let Some(&i) = self.index.get(&id) {
            remove_sorted(&mut self.records[i].requesters, r);
        }
    }

    pub fn remove(&mut self, id: ParticleId) -> Option<Removed> {
        let i = self.index.remove(&id)?;
        let rec = self.records.swap_remove(i);
        if i < self.records.len() {
            let moved = self.records[i].particle.id();
            self.index.insert(moved, i);
        }
        Some(Removed {
            particle: rec.particle,
            shadow_owners: rec.shadow_owners,
            requesters: rec.requesters,
        })
    }

    pub fn add_force_contribution(
        &mut self,
        id: ParticleId,
        source: ForceSource,
        force: Vec3,
        torque: Vec3,
    ) -> Result<(), StoreError> {
        let i = self.slot(id)?;
        self.records[i].particle.forces.add(source, force, torque);
        Ok(())
    }

    /// Merge contributions shipped from a shadow into the local master.
    pub fn apply_force_contribution(&mut self, id: ParticleId, entries: Vec<ForceEntry>) -> Result<(), StoreError> {
        let i = self.slot(id)?;
        let p = &mut self.records[i].particle;
        if !p.is_master() {
            return Err(StoreError::InvariantViolation(format!(
                "ForceContribution for shadow {id} on rank {}",
                self.rank
            )));
        }
        p.forces.extend(entries);
        Ok(())
    }

    /// First half of the force reduction: every shadow with contributions
    /// sends them to its master's rank and starts over at zero.
    pub fn send_force_contributions(&mut self, outbox: &mut Outbox) -> Result<usize, StoreError> {
        let mut sent = 0;
        for rec in &mut self.records {
            let p = &mut rec.particle;
            if p.is_master() || p.forces.is_empty() {
                continue;
            }
            outbox.enqueue(
                p.owner,
                Message::ForceContribution {
                    id: p.id(),
                    entries: p.forces.take(),
                },
            )?;
            sent += 1;
        }
        Ok(sent)
    }

    /// One line per particle, sorted by id:
    /// `id role owner x y z vx vy vz radius`. Reals use shortest round-trip
    /// formatting so the text is lossless.
    pub fn export_snapshot(&self) -> String {
        let mut rows: Vec<&Particle> = self.particles().collect();
        rows.sort_by_key(|p| p.id());
        let mut out = String::new();
        for p in rows {
            let s = &p.state;
            let role = match p.role {
                Role::Master => "M",
                Role::Shadow => "S",
            };
            let _ = writeln!(
                out,
                "{} {} {} {:?} {:?} {:?} {:?} {:?} {:?} {:?}",
                s.id,
                role,
                p.owner,
                s.position.x,
                s.position.y,
                s.position.z,
                s.velocity.x,
                s.velocity.y,
                s.velocity.z,
                s.radius
            );
        }
        out
    }
}

/// Full force reduction across a set of rank stores: ship shadow
/// contributions, exchange once, merge into masters.
pub fn reduce_forces(stores: &mut [ParticleStore], transport: &mut Transport) -> Result<(), StoreError> {
    for store in stores.iter_mut() {
        let outbox = transport.outbox_mut(store.rank())?;
        store.send_force_contributions(outbox)?;
    }
    let (inboxes, _) = transport.exchange()?;
    for (store, inbox) in stores.iter_mut().zip(inboxes) {
        for (_, msg) in inbox {
            match msg {
                Message::ForceContribution { id, entries } => store.apply_force_contribution(id, entries)?,
                other => {
                    return Err(StoreError::InvariantViolation(format!(
                        "unexpected {:?} during force reduction",
                        other.kind()
                    )))
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DomainBox;

    fn part() -> Partition {
        Partition::new(DomainBox::cube(80.0, [false; 3]).unwrap(), [4, 4, 4]).unwrap()
    }

    fn sphere(id: u64, x: f64, y: f64, z: f64) -> ParticleState {
        ParticleState::sphere(ParticleId(id), Vec3::new(x, y, z), Vec3::ZERO, 0.4, 1.0)
    }

    #[test]
    fn insert_master_checks_domain_and_duplicates() {
        let p = part();
        let mut s = ParticleStore::new(Rank(0));
        s.insert_master(sphere(1, 5.0, 5.0, 5.0), &p).unwrap();
        assert_eq!(s.shadow_owners(ParticleId(1)), Some(&[][..]));
        assert!(matches!(
            s.insert_master(sphere(1, 5.0, 5.0, 5.0), &p),
            Err(StoreError::DuplicateId(_))
        ));
        assert!(matches!(
            s.insert_master(sphere(2, 25.0, 5.0, 5.0), &p),
            Err(StoreError::WrongDomain { owner: Rank(1), .. })
        ));
    }

    #[test]
    fn duplicate_create_is_discarded() {
        let mut s = ParticleStore::new(Rank(1));
        let st = sphere(7, 19.9, 5.0, 5.0);
        assert_eq!(s.apply_create_shadow(st, Rank(0), Rank(0)).unwrap(), CreateOutcome::Created);
        assert_eq!(s.get(ParticleId(7)).unwrap().owner, Rank(0));
        let before = s.get(ParticleId(7)).cloned();
        assert_eq!(
            s.apply_create_shadow(st, Rank(0), Rank(5)).unwrap(),
            CreateOutcome::Duplicate { identical: true }
        );
        assert_eq!(s.len(), 1);
        assert_eq!(s.get(ParticleId(7)).cloned(), before);
        assert_eq!(s.requesters(ParticleId(7)).unwrap(), &[Rank(0), Rank(5)]);
    }

    #[test]
    fn create_for_local_master_is_corruption() {
        let p = part();
        let mut s = ParticleStore::new(Rank(0));
        let st = sphere(1, 5.0, 5.0, 5.0);
        s.insert_master(st, &p).unwrap();
        assert!(matches!(
            s.apply_create_shadow(st, Rank(1), Rank(1)),
            Err(StoreError::InvariantViolation(_))
        ));
    }

    #[test]
    fn promote_installs_owner_list() {
        let mut s = ParticleStore::new(Rank(1));
        s.apply_create_shadow(sphere(3, 20.1, 5.0, 5.0), Rank(0), Rank(0)).unwrap();
        s.promote_shadow(ParticleId(3), &[Rank(2), Rank(0), Rank(1)]).unwrap();
        let p = s.get(ParticleId(3)).unwrap();
        assert!(p.is_master());
        assert_eq!(p.owner, Rank(1));
        assert_eq!(s.shadow_owners(ParticleId(3)).unwrap(), &[Rank(0), Rank(2)]);
        assert!(matches!(
            s.promote_shadow(ParticleId(99), &[]),
            Err(StoreError::UnknownId(_))
        ));
    }

    #[test]
    fn force_contributions_accumulate() {
        let p = part();
        let mut s = ParticleStore::new(Rank(0));
        s.insert_master(sphere(1, 5.0, 5.0, 5.0), &p).unwrap();
        let id = ParticleId(1);
        s.add_force_contribution(id, ForceSource::External(0), Vec3::ZERO, Vec3::ZERO).unwrap();
        assert!(s.get(id).unwrap().forces.is_empty());
        s.add_force_contribution(id, ForceSource::External(0), Vec3::new(1.0, 0.0, 0.0), Vec3::ZERO)
            .unwrap();
        s.add_force_contribution(id, ForceSource::External(1), Vec3::new(0.0, 1.0, 0.0), Vec3::ZERO)
            .unwrap();
        assert_eq!(s.get(id).unwrap().forces.total().0, Vec3::new(1.0, 1.0, 0.0));
        assert!(matches!(
            s.add_force_contribution(ParticleId(5), ForceSource::External(0), Vec3::ZERO, Vec3::ZERO),
            Err(StoreError::UnknownId(_))
        ));
    }

    #[test]
    fn reduction_moves_shadow_forces_to_master() {
        let p = part();
        let mut stores = vec![ParticleStore::new(Rank(0)), ParticleStore::new(Rank(1))];
        let st = sphere(1, 19.9, 5.0, 5.0);
        stores[0].insert_master(st, &p).unwrap();
        let mut t = Transport::new(64);
        let mut tiny: Vec<ParticleStore> = stores.drain(..).collect();
        tiny.push(ParticleStore::new(Rank(2)));
        // no shadows: nothing is sent
        reduce_forces(&mut tiny, &mut t).unwrap();
        assert_eq!(t.totals().messages, 0);

        tiny[1].apply_create_shadow(st, Rank(0), Rank(0)).unwrap();
        tiny[0].register_shadow_owner(st.id, Rank(1)).unwrap();
        let f = Vec3::new(0.25, -1.0, 3.0);
        tiny[1]
            .add_force_contribution(st.id, ForceSource::Particle(ParticleId(9)), f, Vec3::ZERO)
            .unwrap();
        reduce_forces(&mut tiny, &mut t).unwrap();
        assert_eq!(t.totals().messages, 1);
        assert_eq!(tiny[0].get(st.id).unwrap().forces.total().0, f);
        assert!(tiny[1].get(st.id).unwrap().forces.is_empty());
    }

    #[test]
    fn remove_keeps_index_consistent() {
        let p = part();
        let mut s = ParticleStore::new(Rank(0));
        for i in 0..5 {
            s.insert_master(sphere(i, 1.0 + i as f64, 5.0, 5.0), &p).unwrap();
        }
        s.remove(ParticleId(1)).unwrap();
        s.remove(ParticleId(4)).unwrap();
        for id in [0, 2, 3] {
            assert_eq!(s.get(ParticleId(id)).unwrap().id(), ParticleId(id));
        }
        assert!(s.remove(ParticleId(1)).is_none());
    }

    #[test]
    fn snapshot_is_sorted_and_lossless() {
        let p = part();
        let mut s = ParticleStore::new(Rank(0));
        s.insert_master(sphere(9, 0.1 + 0.2, 5.0, 5.0), &p).unwrap();
        s.insert_master(sphere(2, 1.0, 5.0, 5.0), &p).unwrap();
        let text = s.export_snapshot();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("2 M 0"));
        let x: f64 = lines[1].split(' ').nth(3).unwrap().parse().unwrap();
        assert_eq!(x.to_bits(), (0.1f64 + 0.2).to_bits());
    }
}
