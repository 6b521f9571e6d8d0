//! Static regular decomposition of the domain into one cuboid per rank.

use std::fmt;

use thiserror::Error;

use crate::geometry::{contains_point, Aabb, DomainBox, Vec3};

/// Index of a logical process.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rank(pub u32);

impl Rank {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Rank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PartitionError {
    #[error("grid dimension is zero: {0:?}")]
    ZeroDimension([usize; 3]),
    #[error("point {0:?} lies outside the non-periodic domain")]
    OutOfDomain(Vec3),
    #[error("rank {0} does not exist")]
    InvalidRank(Rank),
}

/// One entry of a neighbor row: a distinct adjacent rank together with every
/// periodic shift (in multiples of the domain extent) under which it touches.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Neighbor {
    pub rank: Rank,
    pub shifts: Vec<[i32; 3]>,
}

#[derive(Clone, Debug)]
pub struct Partition {
    domain: DomainBox,
    grid: [usize; 3],
    cell: Vec3,
    neighbors: Vec<Vec<Neighbor>>,
}

impl Partition {
    pub fn new(domain: DomainBox, grid: [usize; 3]) -> Result<Self, PartitionError> {
        build_partition(domain, grid)
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn grid(&self) -> [usize; 3] {
        self.grid
    }

    pub fn rank_count(&self) -> usize {
        self.grid.iter().product()
    }

    pub fn ranks(&self) -> impl Iterator<Item = Rank> + '_ {
        (0..self.rank_count() as u32).map(Rank)
    }

    pub fn subdomain_extent(&self) -> Vec3 {
        self.cell
    }

    /// Smallest subdomain edge over all axes.
    pub fn min_subdomain_edge(&self) -> f64 {
        self.cell.min_component()
    }

    pub fn check_rank(&self, r: Rank) -> Result<(), PartitionError> {
        if r.index() < self.rank_count() {
            Ok(())
        } else {
            Err(PartitionError::InvalidRank(r))
        }
    }

    /// Grid coordinates of a rank (x fastest).
    pub fn coords_of(&self, r: Rank) -> [usize; 3] {
        let [nx, ny, _] = self.grid;
        let i = r.index();
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }

    pub fn rank_at(&self, c: [usize; 3]) -> Rank {
        let [nx, ny, _] = self.grid;
        Rank((c[0] + nx * (c[1] + ny * c[2])) as u32)
    }

    pub fn subdomain(&self, r: Rank) -> Aabb {
        let c = self.coords_of(r);
        let lo = self.domain.bounds.min;
        let mut min = Vec3::ZERO;
        let mut max = Vec3::ZERO;
        for axis in 0..3 {
            let a = lo[axis] + c[axis] as f64 * self.cell[axis];
            // the last slab ends exactly on the domain face
            let b = if c[axis] + 1 == self.grid[axis] {
                self.domain.bounds.max[axis]
            } else {
                lo[axis] + (c[axis] + 1) as f64 * self.cell[axis]
            };
            min = min.with_axis(axis, a);
            max = max.with_axis(axis, b);
        }
        Aabb::new(min, max)
    }

    pub fn owner_of(&self, p: Vec3) -> Result<Rank, PartitionError> {
        owner_of(self, p)
    }

    pub fn neighbors_of(&self, r: Rank) -> &[Neighbor] {
        &self.neighbors[r.index()]
    }

    /// Chebyshev distance between two ranks in grid-index space, using the
    /// shorter way around on periodic axes.
    pub fn hop_distance(&self, a: Rank, b: Rank) -> usize {
        let ca = self.coords_of(a);
        let cb = self.coords_of(b);
        (0..3)
            .map(|axis| {
                let n = self.grid[axis];
                let d = ca[axis].abs_diff(cb[axis]);
                if self.domain.periodic[axis] {
                    d.min(n - d)
                } else {
                    d
                }
            })
            .max()
            .unwrap_or(0)
    }
}

pub fn build_partition(domain: DomainBox, grid: [usize; 3]) -> Result<Partition, PartitionError> {
    if grid.contains(&0) {
        return Err(PartitionError::ZeroDimension(grid));
    }
    let ext = domain.extent();
    let cell = Vec3::new(
        ext.x / grid[0] as f64,
        ext.y / grid[1] as f64,
        ext.z / grid[2] as f64,
    );
    let mut part = Partition {
        domain,
        grid,
        cell,
        neighbors: Vec::new(),
    };
    part.neighbors = part.ranks().map(|r| neighbor_row(&part, r)).collect();
    Ok(part)
}

fn neighbor_row(part: &Partition, r: Rank) -> Vec<Neighbor> {
    let c = part.coords_of(r);
    let mut row: Vec<Neighbor> = Vec::new();
    for dz in -1i64..=1 {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if dx == 0 && dy == 0 && dz == 0 {
                    continue;
                }
                let d = [dx, dy, dz];
                let mut nc = [0usize; 3];
                let mut shift = [0i32; 3];
                let mut valid = true;
                for axis in 0..3 {
                    let n = part.grid[axis] as i64;
                    let mut v = c[axis] as i64 + d[axis];
                    if v < 0 || v >= n {
                        if !part.domain.periodic[axis] {
                            valid = false;
                            break;
                        }
                        shift[axis] = if v < 0 { -1 } else { 1 };
                        v = v.rem_euclid(n);
                    }
                    nc[axis] = v as usize;
                }
                if !valid {
                    continue;
                }
                let nr = part.rank_at(nc);
                if nr == r && shift == [0, 0, 0] {
                    continue;
                }
                match row.iter_mut().find(|e| e.rank == nr) {
                    Some(e) => {
                        if !e.shifts.contains(&shift) {
                            e.shifts.push(shift);
                        }
                    }
                    None => row.push(Neighbor {
                        rank: nr,
                        shifts: vec![shift],
                    }),
                }
            }
        }
    }
    row.sort_by_key(|e| e.rank);
    for e in &mut row {
        e.shifts.sort();
    }
    row
}

/// The unique rank whose half-open subdomain contains `p`. Periodic axes are
/// wrapped first.
pub fn owner_of(part: &Partition, p: Vec3) -> Result<Rank, PartitionError> {
    let p = part.domain.wrap(p);
    let b = part.domain.bounds;
    if !contains_point(&b, p) {
        return Err(PartitionError::OutOfDomain(p));
    }
    let mut c = [0usize; 3];
    for axis in 0..3 {
        let n = part.grid[axis];
        let mut i = ((p[axis] - b.min[axis]) / part.cell[axis]).floor() as usize;
        i = i.min(n - 1);
        // division rounding can land one slab off near a face
        let lo = b.min[axis] + i as f64 * part.cell[axis];
        if p[axis] < lo && i > 0 {
            i -= 1;
        } else if i + 1 < n && p[axis] >= b.min[axis] + (i + 1) as f64 * part.cell[axis] {
            i += 1;
        }
        c[axis] = i;
    }
    Ok(part.rank_at(c))
}

pub fn neighbors_of(part: &Partition, r: Rank) -> &[Neighbor] {
    part.neighbors_of(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(periodic: bool) -> DomainBox {
        DomainBox::cube(80.0, [periodic; 3]).unwrap()
    }

    #[test]
    fn builds_uniform_subdomains() {
        let p = build_partition(cube(false), [4, 4, 4]).unwrap();
        assert_eq!(p.rank_count(), 64);
        assert_eq!(p.subdomain_extent(), Vec3::splat(20.0));
        let serial = build_partition(cube(false), [1, 1, 1]).unwrap();
        assert_eq!(serial.subdomain(Rank(0)), cube(false).bounds);
        let fine = build_partition(cube(false), [8, 8, 8]).unwrap();
        assert_eq!(fine.rank_count(), 512);
        assert_eq!(fine.min_subdomain_edge(), 10.0);
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(matches!(
            build_partition(cube(false), [4, 0, 4]),
            Err(PartitionError::ZeroDimension(_))
        ));
    }

    #[test]
    fn rank_mapping_is_x_fastest() {
        let p = build_partition(cube(false), [4, 4, 4]).unwrap();
        assert_eq!(p.rank_at([1, 2, 3]), Rank(1 + 4 * (2 + 4 * 3)));
        assert_eq!(p.coords_of(Rank(57)), [1, 2, 3]);
    }

    #[test]
    fn owner_examples() {
        let p = build_partition(cube(false), [4, 4, 4]).unwrap();
        assert_eq!(p.owner_of(Vec3::splat(5.0)).unwrap(), Rank(0));
        assert_eq!(p.owner_of(Vec3::new(25.0, 5.0, 5.0)).unwrap(), Rank(1));
        assert_eq!(p.owner_of(Vec3::new(20.0, 0.0, 0.0)).unwrap(), Rank(1));
        assert!(matches!(
            p.owner_of(Vec3::new(80.0, 5.0, 5.0)),
            Err(PartitionError::OutOfDomain(_))
        ));
        let per = build_partition(cube(true), [4, 4, 4]).unwrap();
        assert_eq!(per.owner_of(Vec3::new(80.0, 5.0, 5.0)).unwrap(), Rank(0));
        assert_eq!(per.owner_of(Vec3::new(-0.5, 5.0, 5.0)).unwrap(), Rank(3));
    }

    #[test]
    fn neighbor_counts() {
        let p = build_partition(cube(false), [4, 4, 4]).unwrap();
        assert_eq!(p.neighbors_of(p.rank_at([1, 1, 1])).len(), 26);
        assert_eq!(p.neighbors_of(Rank(0)).len(), 7);
        let per = build_partition(cube(true), [4, 4, 4]).unwrap();
        assert_eq!(per.neighbors_of(Rank(0)).len(), 26);
        let row = per.neighbors_of(Rank(0));
        assert!(row.windows(2).all(|w| w[0].rank < w[1].rank));
    }

    #[test]
    fn periodic_single_slab_neighbors_itself() {
        let d = DomainBox::cube(80.0, [true, false, false]).unwrap();
        let p = build_partition(d, [1, 2, 1]).unwrap();
        let row = p.neighbors_of(Rank(0));
        let me = row.iter().find(|n| n.rank == Rank(0)).expect("self via wrap");
        assert!(me.shifts.iter().all(|s| *s != [0, 0, 0]));
        assert!(row.iter().any(|n| n.rank == Rank(1)));
    }

    #[test]
    fn hop_distance_wraps() {
        let per = build_partition(cube(true), [4, 4, 4]).unwrap();
        assert_eq!(per.hop_distance(Rank(0), Rank(3)), 1);
        let open = build_partition(cube(false), [4, 4, 4]).unwrap();
        assert_eq!(open.hop_distance(Rank(0), Rank(3)), 3);
    }
}
