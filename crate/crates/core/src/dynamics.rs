//! Per-rank physics: linked-cell broad phase, sphere narrow phase,
//! spring-dashpot normal contacts and semi-implicit Euler integration.

use thiserror::Error;

use crate::geometry::{Aabb, DomainBox, Vec3};
use crate::particle::{ForceSource, ParticleId, ParticleState};
use crate::partition::{Partition, Rank};
use crate::store::{ParticleStore, StoreError};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("particles {0} and {1} have coincident centers")]
    DegenerateCenters(ParticleId, ParticleId),
    #[error("particle {id} would move {displacement} in one step, limit is {limit}")]
    DisplacementGuard { id: ParticleId, displacement: f64, limit: f64 },
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactParams {
    /// Normal stiffness `k_n`.
    pub stiffness: f64,
    /// Normal damping `gamma_n`.
    pub damping: f64,
    pub gravity: Vec3,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self {
            stiffness: 1000.0,
            damping: 0.0,
            gravity: Vec3::ZERO,
        }
    }
}

/// Static plane `normal · x = offset`; `normal` points into the domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wall {
    pub normal: Vec3,
    pub offset: f64,
}

impl Wall {
    /// Walls on both faces of every non-periodic axis of `domain`.
    pub fn enclosing(domain: &DomainBox) -> Vec<Wall> {
        let mut walls = Vec::new();
        for axis in 0..3 {
            if domain.periodic[axis] {
                continue;
            }
            let n = Vec3::ZERO.with_axis(axis, 1.0);
            walls.push(Wall {
                normal: n,
                offset: domain.bounds.min[axis],
            });
            walls.push(Wall {
                normal: -n,
                offset: -domain.bounds.max[axis],
            });
        }
        walls
    }

    pub fn distance(&self, p: Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

/// Sphere-sphere contact. `first` has the smaller id and `normal` points from
/// `first` to `second`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contact {
    pub first: ParticleId,
    pub second: ParticleId,
    pub normal: Vec3,
    pub penetration: f64,
    /// Midpoint of the penetration segment; lies inside both spheres.
    pub point: Vec3,
}

/// Radii above this multiple of the smallest local radius are kept out of
/// the cell grid and tested against every other local particle.
const OVERSIZE_FACTOR: f64 = 4.0;

#[derive(Clone, Copy, Debug)]
struct AxisMap {
    origin: f64,
    width: f64,
    n: usize,
    wrap: bool,
    /// Coordinates are taken relative to this center via minimum image.
    rel_center: Option<f64>,
}

impl AxisMap {
    fn index(&self, x: f64, domain: &DomainBox, axis: usize) -> usize {
        if self.n == 1 {
            return 0;
        }
        let x = match self.rel_center {
            Some(c) => c + crate::geometry::min_image(Vec3::ZERO.with_axis(axis, x - c), domain)[axis],
            None => x,
        };
        let i = ((x - self.origin) / self.width).floor();
        if self.wrap {
            (i as i64).rem_euclid(self.n as i64) as usize
        } else {
            i.clamp(0.0, (self.n - 1) as f64) as usize
        }
    }

    fn adjacent(&self, i: usize) -> ([usize; 3], usize) {
        let mut out = [i; 3];
        let mut len = 0;
        for d in [-1i64, 0, 1] {
            let j = i as i64 + d;
            let j = if self.wrap {
                j.rem_euclid(self.n as i64)
            } else if j < 0 || j >= self.n as i64 {
                continue;
            } else {
                j
            } as usize;
            if !out[..len].contains(&j) {
                out[len] = j;
                len += 1;
            }
        }
        (out, len)
    }
}

/// Uniform linked-cell grid over one rank's subdomain plus a margin.
#[derive(Clone, Debug)]
pub struct CellGrid {
    axes: [AxisMap; 3],
    /// `cell_start[c]..cell_start[c + 1]` indexes `items`.
    cell_start: Vec<u32>,
    items: Vec<u32>,
    cell_of: Vec<u32>,
    oversized: Vec<u32>,
    cell_size: f64,
}

impl CellGrid {
    pub fn build(store: &ParticleStore, part: &Partition, rank: Rank) -> CellGrid {
        let sub = part.subdomain(rank);
        Self::build_for(store, part, &sub, part.grid())
    }

    fn build_for(store: &ParticleStore, part: &Partition, sub: &Aabb, grid: [usize; 3]) -> CellGrid {
        let domain = part.domain();
        let n_local = store.len();
        let r_min = store.particles().map(|p| p.state.radius).fold(f64::INFINITY, f64::min);
        let limit = OVERSIZE_FACTOR * r_min;
        let r_max_in = store
            .particles()
            .map(|p| p.state.radius)
            .filter(|&r| r <= limit)
            .fold(0.0, f64::max);
        let mut cell_size = 2.0 * r_max_in;
        if !(cell_size > 0.0) {
            cell_size = 1.0;
        }
        let ext = domain.extent();

        let mut axes = [AxisMap {
            origin: 0.0,
            width: 1.0,
            n: 1,
            wrap: false,
            rel_center: None,
        }; 3];
        let cap = (8 * n_local).max(1 << 15);
        loop {
            for axis in 0..3 {
                let len = ext[axis];
                axes[axis] = if domain.periodic[axis] && grid[axis] == 1 {
                    let n = (len / cell_size).floor() as usize;
                    let n = if n >= 3 { n } else { 1 };
                    AxisMap {
                        origin: domain.bounds.min[axis],
                        width: len / n as f64,
                        n,
                        wrap: n >= 3,
                        rel_center: None,
                    }
                } else {
                    let lo = sub.min[axis] - cell_size;
                    let hi = sub.max[axis] + cell_size;
                    let w = sub.max[axis] - sub.min[axis];
                    let too_small = domain.periodic[axis] && 0.5 * w + 2.0 * cell_size >= 0.5 * len;
                    let n = if too_small { 1 } else { (((hi - lo) / cell_size).floor() as usize).max(1) };
                    AxisMap {
                        origin: lo,
                        width: (hi - lo) / n as f64,
                        n,
                        wrap: false,
                        rel_center: domain.periodic[axis].then(|| 0.5 * (sub.min[axis] + sub.max[axis])),
                    }
                };
            }
            if axes.iter().map(|a| a.n).product::<usize>() <= cap {
                break;
            }
            cell_size *= 2.0;
        }

        let ncells = axes.iter().map(|a| a.n).product::<usize>();
        let mut cell_of = vec![u32::MAX; n_local];
        let mut counts = vec![0u32; ncells + 1];
        let mut oversized = Vec::new();
        for (slot, p) in store.particles().enumerate() {
            if p.state.radius > limit {
                oversized.push(slot as u32);
                continue;
            }
            let pos = p.state.position;
            let c = [
                axes[0].index(pos.x, domain, 0),
                axes[1].index(pos.y, domain, 1),
                axes[2].index(pos.z, domain, 2),
            ];
            let ci = c[0] + axes[0].n * (c[1] + axes[1].n * c[2]);
            cell_of[slot] = ci as u32;
            counts[ci + 1] += 1;
        }
        for i in 0..ncells {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut items = vec![0u32; n_local - oversized.len()];
        for (slot, &ci) in cell_of.iter().enumerate() {
            if ci == u32::MAX {
                continue;
            }
            let at = &mut fill[ci as usize];
            items[*at as usize] = slot as u32;
            *at += 1;
        }
        CellGrid {
            axes,
            cell_start: counts,
            items,
            cell_of,
            oversized,
            cell_size,
        }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn cell_count(&self) -> usize {
        self.cell_start.len() - 1
    }

    pub fn oversized(&self) -> &[u32] {
        &self.oversized
    }

    fn unpack(&self, ci: usize) -> [usize; 3] {
        let nx = self.axes[0].n;
        let ny = self.axes[1].n;
        [ci % nx, (ci / nx) % ny, ci / (nx * ny)]
    }
}

/// Candidate pairs of store slots: every unordered pair sharing a cell or
/// sitting in adjacent cells, plus every pair involving an oversized
/// particle. Each pair appears once, lower slot first.
pub fn broad_phase(store: &ParticleStore, grid: &CellGrid) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (slot, &ci) in grid.cell_of.iter().enumerate() {
        if ci == u32::MAX {
            continue;
        }
        let c = grid.unpack(ci as usize);
        let (xs, nx) = grid.axes[0].adjacent(c[0]);
        let (ys, ny) = grid.axes[1].adjacent(c[1]);
        let (zs, nz) = grid.axes[2].adjacent(c[2]);
        for &z in &zs[..nz] {
            for &y in &ys[..ny] {
                for &x in &xs[..nx] {
                    let cj = x + grid.axes[0].n * (y + grid.axes[1].n * z);
                    let range = grid.cell_start[cj] as usize..grid.cell_start[cj + 1] as usize;
                    for &other in &grid.items[range] {
                        let other = other as usize;
                        if other > slot {
                            pairs.push((slot, other));
                        }
                    }
                }
            }
        }
    }
    for &big in &grid.oversized {
        let big = big as usize;
        for other in 0..store.len() {
            if other == big {
                continue;
            }
            let other_big = grid.cell_of[other] == u32::MAX;
            // pairs of two oversized particles only once
            if other_big && other < big {
                continue;
            }
            pairs.push((big.min(other), big.max(other)));
        }
    }
    pairs
}

/// Penetrations below this fraction of the radius sum are not contacts.
/// Without the floor, a grazing contact whose point sits on a subdomain face
/// can be seen by the serial run but not by the rank owning the point, whose
/// copy of the partner only exists if rounding goes the right way.
pub const CONTACT_SLACK: f64 = 1e-10;

/// Sphere-sphere test under minimum image. The result does not depend on
/// argument order.
pub fn narrow_phase(a: &ParticleState, b: &ParticleState, domain: &DomainBox) -> Result<Option<Contact>, DynamicsError> {
    let (p1, p2) = if a.id <= b.id { (a, b) } else { (b, a) };
    let delta = domain.min_image(p2.position - p1.position);
    let dist2 = delta.norm_squared();
    let reach = p1.radius + p2.radius;
    let limit = reach * (1.0 - CONTACT_SLACK);
    if dist2 >= limit * limit {
        return Ok(None);
    }
    let dist = dist2.sqrt();
    if dist < 1e-12 {
        return Err(DynamicsError::DegenerateCenters(p1.id, p2.id));
    }
    let normal = delta * (1.0 / dist);
    let penetration = reach - dist;
    let point = domain.wrap(p1.position + normal * (p1.radius - 0.5 * penetration));
    Ok(Some(Contact {
        first: p1.id,
        second: p2.id,
        normal,
        penetration,
        point,
    }))
}

/// Magnitude of the normal force for penetration `delta` and normal relative
/// velocity `vn` (negative when approaching). Never adhesive.
pub fn normal_force(params: &ContactParams, delta: f64, vn: f64) -> f64 {
    (params.stiffness * delta - params.damping * vn).max(0.0)
}

/// Collision detection for one rank: contacts whose contact point lies in
/// this rank's subdomain, so every contact is resolved on exactly one rank.
pub fn detect_contacts(store: &ParticleStore, part: &Partition, rank: Rank) -> Result<Vec<Contact>, DynamicsError> {
    if store.len() < 2 {
        return Ok(Vec::new());
    }
    let grid = CellGrid::build(store, part, rank);
    let domain = part.domain();
    let own = part.subdomain(rank);
    let mut contacts = Vec::new();
    for (i, j) in broad_phase(store, &grid) {
        let a = &store.at(i).state;
        let b = &store.at(j).state;
        if let Some(c) = narrow_phase(a, b, domain)? {
            if own.contains_point(c.point) {
                contacts.push(c);
            }
        }
    }
    Ok(contacts)
}

/// Apply spring-dashpot forces for `contacts` to the local copies, plus
/// wall forces on local masters. Normal forces act through the centers, so
/// no torque arises.
pub fn resolve_contacts(
    contacts: &[Contact],
    walls: &[Wall],
    params: &ContactParams,
    store: &mut ParticleStore,
) -> Result<(), DynamicsError> {
    for c in contacts {
        let v1 = store.get(c.first).ok_or(StoreError::UnknownId(c.first))?.state.velocity;
        let v2 = store.get(c.second).ok_or(StoreError::UnknownId(c.second))?.state.velocity;
        let vn = (v2 - v1).dot(c.normal);
        let f = c.normal * normal_force(params, c.penetration, vn);
        if f == Vec3::ZERO {
            continue;
        }
        store.add_force_contribution(c.first, ForceSource::Particle(c.second), -f, Vec3::ZERO)?;
        store.add_force_contribution(c.second, ForceSource::Particle(c.first), f, Vec3::ZERO)?;
    }
    if walls.is_empty() {
        return Ok(());
    }
    let mut wall_forces = Vec::new();
    for p in store.masters() {
        let s = &p.state;
        for (w, wall) in walls.iter().enumerate() {
            let d = wall.distance(s.position);
            if d >= s.radius {
                continue;
            }
            let vn = s.velocity.dot(wall.normal);
            let mag = normal_force(params, s.radius - d, vn);
            if mag > 0.0 {
                wall_forces.push((s.id, w as u32, wall.normal * mag));
            }
        }
    }
    for (id, w, f) in wall_forces {
        store.add_force_contribution(id, ForceSource::Wall(w), f, Vec3::ZERO)?;
    }
    Ok(())
}

/// Semi-implicit Euler on the masters of one rank. Fails if any particle
/// would move by `min_radius` or more (half the smallest diameter).
pub fn integrate(
    store: &mut ParticleStore,
    dt: f64,
    params: &ContactParams,
    domain: &DomainBox,
    min_radius: f64,
) -> Result<(), DynamicsError> {
    for p in store.particles_mut() {
        if !p.is_master() {
            p.forces.clear();
            continue;
        }
        let (force, torque) = p.forces.total();
        p.forces.clear();
        let s = &mut p.state;
        if s.inv_mass > 0.0 {
            s.velocity += (force * s.inv_mass + params.gravity) * dt;
        }
        let displacement = s.velocity.norm() * dt;
        if displacement >= min_radius {
            return Err(DynamicsError::DisplacementGuard {
                id: s.id,
                displacement,
                limit: min_radius,
            });
        }
        s.position = domain.wrap(s.position + s.velocity * dt);
        if s.inv_inertia > 0.0 && torque != Vec3::ZERO {
            s.angular_velocity += torque * (s.inv_inertia * dt);
        }
        s.orientation = s.orientation.integrate(s.angular_velocity, dt);
    }
    Ok(())
}
