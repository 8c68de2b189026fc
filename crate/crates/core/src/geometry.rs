//! Points, axis-aligned boxes and the segment/ray tests used by the
//! propagation model and the virtual LIDAR.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<[f64; 3]> for Vec3 {
    fn from(v: [f64; 3]) -> Self {
        Vec3::new(v[0], v[1], v[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        [v.x, v.y, v.z]
    }
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const UP: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        self * (1.0 / self.norm())
    }

    pub fn axis(self, i: usize) -> f64 {
        match i {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    pub fn set_axis(&mut self, i: usize, v: f64) {
        match i {
            0 => self.x = v,
            1 => self.y = v,
            _ => self.z = v,
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
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

/// Axis-aligned box given by its minimum and maximum corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn translated(&self, d: Vec3) -> Self {
        Self::new(self.min + d, self.max + d)
    }

    pub fn contains_interior(&self, p: Vec3) -> bool {
        (0..3).all(|i| p.axis(i) > self.min.axis(i) && p.axis(i) < self.max.axis(i))
    }

    /// Open-interior overlap of the ground footprints.
    pub fn overlaps_xy(&self, o: &Aabb) -> bool {
        self.min.x < o.max.x && o.min.x < self.max.x && self.min.y < o.max.y && o.min.y < self.max.y
    }

    /// Entry/exit parameters of the line `p + t d` through the closed box, or
    /// `None` when the line misses it. Axes with `d == 0` require the line to
    /// lie strictly between the slabs.
    fn slab_interval(&self, p: Vec3, d: Vec3, strict_parallel: bool) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            let (o, dir, lo, hi) = (p.axis(i), d.axis(i), self.min.axis(i), self.max.axis(i));
            if dir == 0.0 {
                let inside = if strict_parallel { o > lo && o < hi } else { o >= lo && o <= hi };
                if !inside {
                    return None;
                }
            } else {
                let ta = (lo - o) / dir;
                let tb = (hi - o) / dir;
                t0 = t0.max(ta.min(tb));
                t1 = t1.min(ta.max(tb));
            }
        }
        (t0 <= t1).then_some((t0, t1))
    }
}

/// True iff the open segment `p1 -> p2` passes through the interior of `b`.
///
/// Grazing a face, an edge or a corner does not count.
pub fn segment_hits_box(p1: Vec3, p2: Vec3, b: &Aabb) -> bool {
    let d = p2 - p1;
    match b.slab_interval(p1, d, true) {
        Some((t0, t1)) => t0.max(0.0) < t1.min(1.0),
        None => false,
    }
}

/// True iff the open segment `p1 -> p2` intersects the interior of any box.
pub fn los_blocked(p1: Vec3, p2: Vec3, boxes: &[Aabb]) -> bool {
    boxes.iter().any(|b| segment_hits_box(p1, p2, b))
}

/// Distance along the unit direction `dir` to the first surface of `b`.
///
/// From inside the box this is the exit distance.
pub fn ray_hit_distance(origin: Vec3, dir: Vec3, b: &Aabb) -> Option<f64> {
    let (t0, t1) = b.slab_interval(origin, dir, false)?;
    if t0 > 0.0 {
        Some(t0)
    } else if t1 > 0.0 {
        Some(t1)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box() -> Aabb {
        Aabb::new(Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 1.0))
    }

    #[test]
    fn segment_outside_box() {
        let b = unit_box();
        assert!(!los_blocked(Vec3::new(2.0, 2.0, 2.0), Vec3::new(3.0, -1.0, 0.5), &[b]));
        assert!(!los_blocked(Vec3::new(-1.0, 0.5, 0.5), Vec3::new(-0.1, 0.5, 0.5), &[b]));
    }

    #[test]
    fn segment_through_center() {
        let b = unit_box();
        assert!(los_blocked(Vec3::new(-1.0, 0.5, 0.5), Vec3::new(2.0, 0.5, 0.5), &[b]));
        assert!(los_blocked(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(2.0, 2.0, 2.0), &[b]));
    }

    #[test]
    fn segment_touching_face_is_not_blocked() {
        let b = unit_box();
        // lies in the face plane x = 1
        assert!(!los_blocked(Vec3::new(1.0, -1.0, 0.5), Vec3::new(1.0, 2.0, 0.5), &[b]));
        // ends on the face from outside
        assert!(!los_blocked(Vec3::new(2.0, 0.5, 0.5), Vec3::new(1.0, 0.5, 0.5), &[b]));
        // passes through an edge only
        assert!(!los_blocked(Vec3::new(0.0, -1.0, 1.5), Vec3::new(0.0, 1.0, 0.5), &[b]));
    }

    #[test]
    fn segment_ending_inside_is_blocked() {
        assert!(los_blocked(Vec3::new(-1.0, 0.5, 0.5), Vec3::new(0.5, 0.5, 0.5), &[unit_box()]));
    }

    #[test]
    fn ray_hits() {
        let b = Aabb::new(Vec3::new(10.0, -5.0, -5.0), Vec3::new(11.0, 5.0, 5.0));
        let d = ray_hit_distance(Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), &b).unwrap();
        assert_eq!(d, 10.0);
        assert!(ray_hit_distance(Vec3::ZERO, Vec3::new(-1.0, 0.0, 0.0), &b).is_none());
        let inside = ray_hit_distance(Vec3::new(0.5, 0.5, 0.5), Vec3::new(0.0, 0.0, 1.0), &unit_box());
        assert_eq!(inside, Some(0.5));
    }
}
