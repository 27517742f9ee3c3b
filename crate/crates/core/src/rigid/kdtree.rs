//! Minimal 3D kd-tree for exact nearest-neighbour queries.

use nalgebra::Point3;

struct KdNode {
    point: usize,
    axis: usize,
    left: Option<Box<KdNode>>,
    right: Option<Box<KdNode>>,
}

pub struct KdTree {
    points: Vec<Point3<f64>>,
    root: Option<Box<KdNode>>,
}

impl KdTree {
    pub fn build(points: &[Point3<f64>]) -> Self {
        let mut indices: Vec<usize> = (0..points.len()).collect();
        let root = build_node(points, &mut indices);
        Self {
            points: points.to_vec(),
            root,
        }
    }

    /// Index and squared distance of the closest stored point.
    pub fn nearest(&self, query: &Point3<f64>) -> Option<(usize, f64)> {
        let root = self.root.as_ref()?;
        let mut best = (root.point, (query - self.points[root.point]).norm_squared());
        self.search(root, query, &mut best);
        Some(best)
    }

    fn search(&self, node: &KdNode, query: &Point3<f64>, best: &mut (usize, f64)) {
        let p = self.points[node.point];
        let d2 = (query - p).norm_squared();
        if d2 < best.1 || (d2 == best.1 && node.point < best.0) {
            *best = (node.point, d2);
        }
        let delta = query[node.axis] - p[node.axis];
        let (near, far) = if delta < 0.0 {
            (&node.left, &node.right)
        } else {
            (&node.right, &node.left)
        };
        if let Some(n) = near {
            self.search(n, query, best);
        }
        if let Some(f) = far {
            if delta * delta <= best.1 {
                self.search(f, query, best);
            }
        }
    }
}

fn build_node(points: &[Point3<f64>], indices: &mut [usize]) -> Option<Box<KdNode>> {
    if indices.is_empty() {
        return None;
    }
    // split on the widest axis of the current subset
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in indices.iter() {
        for k in 0..3 {
            lo[k] = lo[k].min(points[i][k]);
            hi[k] = hi[k].max(points[i][k]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| {
            (hi[a] - lo[a])
                .partial_cmp(&(hi[b] - lo[b]))
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .unwrap();
    let mid = indices.len() / 2;
    indices.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis]
            .partial_cmp(&points[b][axis])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let point = indices[mid];
    let (left, rest) = indices.split_at_mut(mid);
    let right = &mut rest[1..];
    Some(Box::new(KdNode {
        point,
        axis,
        left: build_node(points, left),
        right: build_node(points, right),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nearest_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let points: Vec<Point3<f64>> = (0..500)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                )
            })
            .collect();
        let tree = KdTree::build(&points);
        for _ in 0..200 {
            let q = Point3::new(
                rng.gen_range(-12.0..12.0),
                rng.gen_range(-12.0..12.0),
                rng.gen_range(-12.0..12.0),
            );
            let (idx, d2) = tree.nearest(&q).unwrap();
            let (want_idx, want_d2) = points
                .iter()
                .enumerate()
                .map(|(i, p)| (i, (q - p).norm_squared()))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)))
                .unwrap();
            assert_eq!(d2, want_d2);
            assert_eq!(idx, want_idx);
        }
    }

    #[test]
    fn empty_tree_returns_none() {
        let tree = KdTree::build(&[]);
        assert!(tree.nearest(&Point3::origin()).is_none());
    }
}
