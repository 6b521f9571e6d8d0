//! Vectors, axis-aligned boxes and periodic minimum-image arithmetic.

use std::ops::{Add, AddAssign, Index, Mul, Neg, Sub, SubAssign};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const fn splat(v: f64) -> Self {
        Self::new(v, v, v)
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Vec3 {
        Vec3::new(f(self.x), f(self.y), f(self.z))
    }

    pub fn zip_map(self, o: Vec3, f: impl Fn(f64, f64) -> f64) -> Vec3 {
        Vec3::new(f(self.x, o.x), f(self.y, o.y), f(self.z, o.z))
    }

    pub fn with_axis(mut self, axis: usize, v: f64) -> Vec3 {
        match axis {
            0 => self.x = v,
            1 => self.y = v,
            _ => self.z = v,
        }
        self
    }

    pub fn min_component(self) -> f64 {
        self.x.min(self.y).min(self.z)
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;

    fn index(&self, axis: usize) -> &f64 {
        match axis {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("axis {axis} out of range"),
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Axis-aligned box with half-open membership `[min, max)` on every axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        debug_assert!(min.x <= max.x && min.y <= max.y && min.z <= max.z);
        Self { min, max }
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn contains_point(&self, p: Vec3) -> bool {
        contains_point(self, p)
    }
}

/// Simulation domain: a box plus a periodicity flag per axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainBox {
    pub bounds: Aabb,
    pub periodic: [bool; 3],
}

impl DomainBox {
    /// Returns `None` unless every axis has a positive, finite extent.
    pub fn new(bounds: Aabb, periodic: [bool; 3]) -> Option<Self> {
        let e = bounds.extent();
        if (0..3).all(|a| e[a] > 0.0 && e[a].is_finite()) {
            Some(Self { bounds, periodic })
        } else {
            None
        }
    }

    pub fn cube(edge: f64, periodic: [bool; 3]) -> Option<Self> {
        Self::new(Aabb::new(Vec3::ZERO, Vec3::splat(edge)), periodic)
    }

    pub fn extent(&self) -> Vec3 {
        self.bounds.extent()
    }

    /// Map a position back into the primary image on periodic axes.
    pub fn wrap(&self, p: Vec3) -> Vec3 {
        let mut out = p;
        for axis in 0..3 {
            if self.periodic[axis] {
                let lo = self.bounds.min[axis];
                let len = self.bounds.max[axis] - lo;
                let mut v = p[axis] - len * ((p[axis] - lo) / len).floor();
                if v >= self.bounds.max[axis] {
                    v = lo;
                }
                out = out.with_axis(axis, v);
            }
        }
        out
    }

    pub fn min_image(&self, delta: Vec3) -> Vec3 {
        min_image(delta, self)
    }
}

/// Half-open membership test: `min <= p < max` on all three axes.
pub fn contains_point(b: &Aabb, p: Vec3) -> bool {
    (0..3).all(|a| b.min[a] <= p[a] && p[a] < b.max[a])
}

fn wrap_component(d: f64, len: f64) -> f64 {
    // Result lies in (-len/2, len/2].
    let mut w = d - len * (d / len).round();
    if w <= -0.5 * len {
        w += len;
    } else if w > 0.5 * len {
        w -= len;
    }
    w
}

/// Minimum-image displacement: periodic components end up in `(-L/2, L/2]`,
/// the rest are returned unchanged.
pub fn min_image(delta: Vec3, domain: &DomainBox) -> Vec3 {
    let ext = domain.extent();
    let mut out = delta;
    for axis in 0..3 {
        if domain.periodic[axis] {
            out = out.with_axis(axis, wrap_component(delta[axis], ext[axis]));
        }
    }
    out
}

/// Squared distance from `center` to the closest point of `b`, taking the
/// nearest periodic image on periodic axes.
pub fn distance_squared_to_aabb(center: Vec3, b: &Aabb, domain: &DomainBox) -> f64 {
    let ext = domain.extent();
    let mut sum = 0.0;
    for axis in 0..3 {
        let period = domain.periodic[axis].then_some(ext[axis]);
        sum += axis_distance_squared(center[axis], b.min[axis], b.max[axis], period);
    }
    sum
}

/// One axis of [`distance_squared_to_aabb`]: squared gap from `c` to
/// `[lo, hi]`, using the nearest image when `period` is given.
pub fn axis_distance_squared(c: f64, lo: f64, hi: f64, period: Option<f64>) -> f64 {
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    let mut off = c - mid;
    if let Some(len) = period {
        off = wrap_component(off, len);
    }
    let gap = off.abs() - half;
    if gap > 0.0 {
        gap * gap
    } else {
        0.0
    }
}

/// True iff the open ball of `radius` around `center` intersects `b`.
/// Tangency counts as no overlap.
pub fn sphere_overlaps_aabb(center: Vec3, radius: f64, b: &Aabb, domain: &DomainBox) -> bool {
    distance_squared_to_aabb(center, b, domain) < radius * radius
}

/// True iff the ball lies strictly inside `b` with no face closer than `radius`.
/// Such a sphere cannot overlap any other subdomain.
pub fn sphere_inside_aabb(center: Vec3, radius: f64, b: &Aabb) -> bool {
    (0..3).all(|a| center[a] - radius >= b.min[a] && center[a] + radius <= b.max[a])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box20() -> Aabb {
        Aabb::new(Vec3::ZERO, Vec3::splat(20.0))
    }

    #[test]
    fn half_open_membership() {
        let b = box20();
        assert!(contains_point(&b, Vec3::ZERO));
        assert!(!contains_point(&b, Vec3::new(20.0, 10.0, 10.0)));
        assert!(contains_point(&b, Vec3::new(19.999, 5.0, 5.0)));
    }

    #[test]
    fn min_image_examples() {
        let d = DomainBox::cube(80.0, [true; 3]).unwrap();
        assert_eq!(min_image(Vec3::new(75.0, 0.0, 0.0), &d), Vec3::new(-5.0, 0.0, 0.0));
        assert_eq!(min_image(Vec3::new(3.0, 3.0, 3.0), &d), Vec3::new(3.0, 3.0, 3.0));
        assert_eq!(min_image(Vec3::new(-41.0, 0.0, 0.0), &d), Vec3::new(39.0, 0.0, 0.0));
        // exactly half a box maps to +L/2
        assert_eq!(min_image(Vec3::new(-40.0, 40.0, 0.0), &d), Vec3::new(40.0, 40.0, 0.0));
    }

    #[test]
    fn min_image_leaves_open_axes_alone() {
        let d = DomainBox::cube(80.0, [true, false, true]).unwrap();
        assert_eq!(min_image(Vec3::new(75.0, 75.0, 75.0), &d), Vec3::new(-5.0, 75.0, -5.0));
    }

    #[test]
    fn sphere_box_examples() {
        let d = DomainBox::cube(80.0, [true; 3]).unwrap();
        let b = box20();
        assert!(sphere_overlaps_aabb(Vec3::splat(10.0), 0.4, &b, &d));
        assert!(!sphere_overlaps_aabb(Vec3::new(20.5, 10.0, 10.0), 0.4, &b, &d));
        assert!(!sphere_overlaps_aabb(Vec3::splat(40.0), 30.0, &b, &d));
    }

    #[test]
    fn tangent_sphere_does_not_overlap() {
        let d = DomainBox::cube(80.0, [false; 3]).unwrap();
        assert!(!sphere_overlaps_aabb(Vec3::new(21.0, 10.0, 10.0), 1.0, &box20(), &d));
        assert!(sphere_overlaps_aabb(Vec3::new(20.999, 10.0, 10.0), 1.0, &box20(), &d));
    }

    #[test]
    fn overlap_through_periodic_face() {
        let d = DomainBox::cube(80.0, [true; 3]).unwrap();
        assert!(sphere_overlaps_aabb(Vec3::new(79.8, 10.0, 10.0), 0.4, &box20(), &d));
        let open = DomainBox::cube(80.0, [false; 3]).unwrap();
        assert!(!sphere_overlaps_aabb(Vec3::new(79.8, 10.0, 10.0), 0.4, &box20(), &open));
    }

    #[test]
    fn wrap_is_canonical() {
        let d = DomainBox::cube(80.0, [true, true, false]).unwrap();
        let w = d.wrap(Vec3::new(80.0, -0.5, 90.0));
        assert_eq!(w, Vec3::new(0.0, 79.5, 90.0));
        let tiny = d.wrap(Vec3::new(-1e-18, 0.0, 0.0));
        assert!(tiny.x >= 0.0 && tiny.x < 80.0);
    }
}
