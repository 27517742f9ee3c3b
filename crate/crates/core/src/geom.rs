//! Small geometric helpers shared across the crate.

use nalgebra::{Point3, Vector3};

/// Axis-aligned bounding box in 3D.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn new(min: Point3<f64>, max: Point3<f64>) -> Self {
        Self { min, max }
    }

    /// Cube box `[0, edge]^3`.
    pub fn cube(edge: f64) -> Self {
        Self {
            min: Point3::origin(),
            max: Point3::new(edge, edge, edge),
        }
    }

    /// Smallest box containing all points; `None` for an empty set.
    pub fn from_points<'a, I: IntoIterator<Item = &'a Point3<f64>>>(points: I) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let mut bb = Aabb::new(first, first);
        for p in it {
            for k in 0..3 {
                bb.min[k] = bb.min[k].min(p[k]);
                bb.max[k] = bb.max[k].max(p[k]);
            }
        }
        Some(bb)
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn max_edge(&self) -> f64 {
        let e = self.extent();
        e.x.max(e.y).max(e.z)
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn clamp(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::new(
            p.x.clamp(self.min.x, self.max.x),
            p.y.clamp(self.min.y, self.max.y),
            p.z.clamp(self.min.z, self.max.z),
        )
    }

    pub fn is_degenerate(&self) -> bool {
        let e = self.extent();
        !(e.x > 0.0 && e.y > 0.0 && e.z > 0.0)
    }
}

/// Distance from a point to the segment `[a, b]`.
pub fn point_segment_distance(p: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    let proj = a + ab * t;
    (p - proj).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn aabb_from_points() {
        let pts = [
            Point3::new(1.0, -2.0, 3.0),
            Point3::new(-1.0, 5.0, 0.0),
            Point3::new(0.0, 0.0, 7.0),
        ];
        let bb = Aabb::from_points(pts.iter()).unwrap();
        assert_eq!(bb.min, Point3::new(-1.0, -2.0, 0.0));
        assert_eq!(bb.max, Point3::new(1.0, 5.0, 7.0));
    }

    #[test]
    fn point_segment_distance_cases() {
        let a = Point3::new(0.0, 0.0, 0.0);
        let b = Point3::new(10.0, 0.0, 0.0);
        // perpendicular foot inside the segment
        assert_relative_eq!(
            point_segment_distance(&Point3::new(5.0, 3.0, 0.0), &a, &b),
            3.0
        );
        // beyond the end: distance to endpoint
        assert_relative_eq!(
            point_segment_distance(&Point3::new(13.0, 4.0, 0.0), &a, &b),
            5.0
        );
        // degenerate segment
        assert_relative_eq!(point_segment_distance(&Point3::new(0.0, 2.0, 0.0), &a, &a), 2.0);
    }
}
