//! Particle identity, state and force accumulation.

use std::fmt;

use crate::geometry::Vec3;
use crate::partition::Rank;

/// Globally unique particle identifier built from the creating rank and a
/// per-creator counter. Ids survive ownership transfer and are never reused.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParticleId(pub u64);

impl ParticleId {
    /// Creator tag for particles generated by scenario setup rather than by
    /// a rank at runtime. Keeps ids independent of the rank count.
    pub const SETUP_CREATOR: u32 = u32::MAX;

    pub fn new(creator: u32, counter: u32) -> Self {
        ParticleId(((creator as u64) << 32) | counter as u64)
    }

    pub fn setup(counter: u32) -> Self {
        Self::new(Self::SETUP_CREATOR, counter)
    }

    pub fn creator(self) -> u32 {
        (self.0 >> 32) as u32
    }

    pub fn counter(self) -> u32 {
        self.0 as u32
    }
}

impl fmt::Display for ParticleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Master,
    Shadow,
}

/// Unit quaternion `[w, x, y, z]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quat(pub [f64; 4]);

impl Quat {
    pub const IDENTITY: Quat = Quat([1.0, 0.0, 0.0, 0.0]);

    pub fn norm(self) -> f64 {
        self.0.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn normalized(self) -> Quat {
        let n = self.norm();
        Quat(self.0.map(|c| c / n))
    }

    /// Advance by angular velocity `w` over `dt` (first-order, renormalized).
    pub fn integrate(self, w: Vec3, dt: f64) -> Quat {
        if w == Vec3::ZERO {
            return self;
        }
        let [qw, qx, qy, qz] = self.0;
        let h = 0.5 * dt;
        let dq = [
            -(w.x * qx + w.y * qy + w.z * qz),
            w.x * qw + w.y * qz - w.z * qy,
            w.y * qw + w.z * qx - w.x * qz,
            w.z * qw + w.x * qy - w.y * qx,
        ];
        Quat([qw + h * dq[0], qx + h * dq[1], qy + h * dq[2], qz + h * dq[3]]).normalized()
    }
}

impl Default for Quat {
    fn default() -> Self {
        Quat::IDENTITY
    }
}

/// Where a force contribution comes from. Contributions are summed in
/// ascending source order so the total does not depend on which rank
/// computed which contact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ForceSource {
    Particle(ParticleId),
    Wall(u32),
    External(u32),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForceEntry {
    pub source: ForceSource,
    pub force: Vec3,
    pub torque: Vec3,
}

/// Keyed force/torque accumulator.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ForceAccumulator {
    entries: Vec<ForceEntry>,
}

impl ForceAccumulator {
    pub fn add(&mut self, source: ForceSource, force: Vec3, torque: Vec3) {
        if force == Vec3::ZERO && torque == Vec3::ZERO {
            return;
        }
        self.entries.push(ForceEntry {
            source,
            force,
            torque,
        });
    }

    pub fn extend(&mut self, entries: impl IntoIterator<Item = ForceEntry>) {
        self.entries.extend(entries);
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ForceEntry] {
        &self.entries
    }

    pub fn take(&mut self) -> Vec<ForceEntry> {
        std::mem::take(&mut self.entries)
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Total force and torque, summed in canonical entry order.
    pub fn total(&self) -> (Vec3, Vec3) {
        let mut sorted: Vec<&ForceEntry> = self.entries.iter().collect();
        sorted.sort_by(|a, b| {
            a.source.cmp(&b.source).then_with(|| {
                let ka = (a.force.to_array().map(f64::to_bits), a.torque.to_array().map(f64::to_bits));
                let kb = (b.force.to_array().map(f64::to_bits), b.torque.to_array().map(f64::to_bits));
                ka.cmp(&kb)
            })
        });
        let mut f = Vec3::ZERO;
        let mut t = Vec3::ZERO;
        for e in sorted {
            f += e.force;
            t += e.torque;
        }
        (f, t)
    }
}

/// Complete transferable state of a spherical rigid particle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParticleState {
    pub id: ParticleId,
    pub position: Vec3,
    pub velocity: Vec3,
    pub angular_velocity: Vec3,
    pub orientation: Quat,
    pub radius: f64,
    /// 0 marks an immovable body.
    pub inv_mass: f64,
    pub inv_inertia: f64,
}

impl ParticleState {
    /// Homogeneous sphere of the given density.
    pub fn sphere(id: ParticleId, position: Vec3, velocity: Vec3, radius: f64, density: f64) -> Self {
        let mass = density * 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3);
        let inertia = 0.4 * mass * radius * radius;
        Self {
            id,
            position,
            velocity,
            angular_velocity: Vec3::ZERO,
            orientation: Quat::IDENTITY,
            radius,
            inv_mass: 1.0 / mass,
            inv_inertia: 1.0 / inertia,
        }
    }

    pub fn mass(&self) -> f64 {
        if self.inv_mass > 0.0 {
            1.0 / self.inv_mass
        } else {
            f64::INFINITY
        }
    }

    pub fn kinematics(&self) -> Kinematics {
        Kinematics {
            position: self.position,
            orientation: self.orientation,
            velocity: self.velocity,
            angular_velocity: self.angular_velocity,
        }
    }

    pub fn apply_kinematics(&mut self, k: &Kinematics) {
        self.position = k.position;
        self.orientation = k.orientation;
        self.velocity = k.velocity;
        self.angular_velocity = k.angular_velocity;
    }
}

/// The mutable part of a particle's state, i.e. what an update message
/// carries.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kinematics {
    pub position: Vec3,
    pub orientation: Quat,
    pub velocity: Vec3,
    pub angular_velocity: Vec3,
}

/// A particle as stored on one rank.
#[derive(Clone, Debug, PartialEq)]
pub struct Particle {
    pub state: ParticleState,
    pub role: Role,
    /// Rank holding the master copy.
    pub owner: Rank,
    pub forces: ForceAccumulator,
}

impl Particle {
    pub fn id(&self) -> ParticleId {
        self.state.id
    }

    pub fn is_master(&self) -> bool {
        self.role == Role::Master
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn id_packs_creator_and_counter() {
        let id = ParticleId::new(7, 42);
        assert_eq!(id.creator(), 7);
        assert_eq!(id.counter(), 42);
        assert_ne!(ParticleId::setup(42), id);
    }

    #[test]
    fn accumulator_is_additive() {
        let mut acc = ForceAccumulator::default();
        acc.add(ForceSource::External(0), Vec3::ZERO, Vec3::ZERO);
        assert!(acc.is_empty());
        acc.add(ForceSource::External(0), Vec3::new(1.0, 0.0, 0.0), Vec3::ZERO);
        acc.add(ForceSource::External(1), Vec3::new(0.0, 1.0, 0.0), Vec3::ZERO);
        assert_eq!(acc.total().0, Vec3::new(1.0, 1.0, 0.0));
    }

    #[test]
    fn total_ignores_insertion_order() {
        let vals = [0.1, 1e16, -1e16, 0.3, 0.7];
        let mut a = ForceAccumulator::default();
        let mut b = ForceAccumulator::default();
        for (i, v) in vals.iter().enumerate() {
            a.add(ForceSource::Particle(ParticleId(i as u64)), Vec3::splat(*v), Vec3::ZERO);
        }
        for (i, v) in vals.iter().enumerate().rev() {
            b.add(ForceSource::Particle(ParticleId(i as u64)), Vec3::splat(*v), Vec3::ZERO);
        }
        assert_eq!(a.total().0.x.to_bits(), b.total().0.x.to_bits());
    }

    #[test]
    fn quaternion_stays_normalized() {
        let mut q = Quat::IDENTITY;
        for _ in 0..1000 {
            q = q.integrate(Vec3::new(0.3, -1.2, 0.5), 0.01);
        }
        assert!((q.norm() - 1.0).abs() < 1e-9);
    }
}
