//! Coarse rigid pre-alignment of graph point clouds.
//!
//! The global search is a deterministic multi-start trimmed ICP: a fixed
//! grid of rotation initializations (the rotation group of the cube, or
//! of the icosahedron for a denser sweep), each refined by
//! nearest-neighbour / trimmed-least-squares iterations, with the lowest
//! trimmed RMSE winning. This trades the branch-and-bound optimality
//! certificate for a desk-scale search with the same robustness contract
//! against outliers and partial overlap.

mod kdtree;

use nalgebra::{Matrix3, Point3, Rotation3, Unit, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::graph::{Edge, SpatialGraph};
use kdtree::KdTree;

#[derive(Debug, Error)]
pub enum RigidError {
    #[error("need at least {1} points, got {0}")]
    TooFewPoints(usize, usize),
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(&'static str),
}

/// Proper rigid motion `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// `self` applied after `other`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Max deviation of `R^T R` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity())
            .abs()
            .max()
    }

    pub fn det_error(&self) -> f64 {
        (self.rotation.determinant() - 1.0).abs()
    }

    /// Rotation angle (radians) separating this rotation from `other`.
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }
}

/// Outcome of a multi-start trimmed ICP alignment.
#[derive(Debug, Clone)]
pub struct AlignmentReport {
    pub transform: RigidTransform,
    pub trimmed_rmse: f64,
    /// Fraction of moving points kept by the trimming step.
    pub inlier_fraction: f64,
    pub starts_evaluated: usize,
    /// Iterations of the winning refinement.
    pub iterations: usize,
}

/// Rotation-initialization grids for the global search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RotationGrid {
    /// 24 orientations: the rotation group of the cube.
    #[default]
    Octahedral24,
    /// 60 orientations: the rotation group of the icosahedron.
    Icosahedral60,
}

#[derive(Debug, Clone)]
pub struct RigidConfig {
    pub grid: RotationGrid,
    /// Fraction of correspondences kept by each trimmed update.
    pub trim_fraction: f64,
    pub max_iters: usize,
    /// Relative RMSE-change convergence threshold.
    pub tol: f64,
    /// Deterministic stride subsampling cap applied to both clouds
    /// before alignment; `None` aligns the full clouds.
    pub max_points: Option<usize>,
    /// Stop scanning further starts once a start reaches this RMSE.
    /// 0 disables the shortcut.
    pub early_stop_rmse: f64,
}

impl Default for RigidConfig {
    fn default() -> Self {
        Self {
            grid: RotationGrid::Octahedral24,
            trim_fraction: 0.7,
            max_iters: 100,
            tol: 1e-7,
            max_points: None,
            early_stop_rmse: 0.0,
        }
    }
}

/// All node coordinates and polyline samples of the graph, deduplicated
/// within the endpoint tolerance (path endpoints collapse onto nodes).
pub fn collect_point_cloud(graph: &SpatialGraph) -> Vec<Point3<f64>> {
    let tau = graph
        .node_bbox()
        .map(|bb| (crate::graph::ENDPOINT_TOL_FACTOR * bb.diagonal()).max(1e-12))
        .unwrap_or(1e-12);
    let candidates = graph
        .nodes
        .iter()
        .map(|n| n.coord)
        .chain(graph.edges.iter().flat_map(|e| e.path.points().iter().copied()));

    let mut kept: Vec<Point3<f64>> = Vec::new();
    let mut grid: std::collections::HashMap<(i64, i64, i64), Vec<usize>> =
        std::collections::HashMap::new();
    let cell = |p: &Point3<f64>| {
        (
            (p.x / tau).floor() as i64,
            (p.y / tau).floor() as i64,
            (p.z / tau).floor() as i64,
        )
    };
    for p in candidates {
        let (cx, cy, cz) = cell(&p);
        let mut duplicate = false;
        'scan: for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = grid.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &i in bucket {
                            if (kept[i] - p).norm() <= tau {
                                duplicate = true;
                                break 'scan;
                            }
                        }
                    }
                }
            }
        }
        if !duplicate {
            grid.entry((cx, cy, cz)).or_default().push(kept.len());
            kept.push(p);
        }
    }
    kept
}

/// Closed-form least-squares rigid fit of paired points (Kabsch).
/// Reflections are excluded; fewer than 3 pairs or a collinear
/// configuration is an error.
pub fn kabsch(
    pairs_a: &[Point3<f64>],
    pairs_b: &[Point3<f64>],
) -> Result<RigidTransform, RigidError> {
    if pairs_a.len() != pairs_b.len() {
        return Err(RigidError::DegenerateConfiguration("unequal pair counts"));
    }
    if pairs_a.len() < 3 {
        return Err(RigidError::TooFewPoints(pairs_a.len(), 3));
    }
    let n = pairs_a.len() as f64;
    let ca = pairs_a.iter().map(|p| p.coords).sum::<Vector3<f64>>() / n;
    let cb = pairs_b.iter().map(|p| p.coords).sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (a, b) in pairs_a.iter().zip(pairs_b) {
        h += (a.coords - ca) * (b.coords - cb).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (
        svd.u.ok_or(RigidError::DegenerateConfiguration("svd failed"))?,
        svd.v_t
            .ok_or(RigidError::DegenerateConfiguration("svd failed"))?,
    );
    // collinear (or coincident) source points leave the rotation about the
    // line unconstrained
    if svd.singular_values[1] <= 1e-12 * svd.singular_values[0].max(1e-300) {
        return Err(RigidError::DegenerateConfiguration("collinear points"));
    }
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant();
    let rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d.signum())) * u.transpose();
    let translation = cb - rotation * ca;
    Ok(RigidTransform {
        rotation,
        translation,
    })
}

/// The rotation grid as matrices; the identity is always first.
pub fn rotation_grid(grid: RotationGrid) -> Vec<Matrix3<f64>> {
    match grid {
        RotationGrid::Octahedral24 => octahedral_rotations(),
        RotationGrid::Icosahedral60 => icosahedral_rotations(),
    }
}

fn octahedral_rotations() -> Vec<Matrix3<f64>> {
    // closure over integer matrices from two 90-degree generators
    type IMat = [[i64; 3]; 3];
    const ID: IMat = [[1, 0, 0], [0, 1, 0], [0, 0, 1]];
    const RX: IMat = [[1, 0, 0], [0, 0, -1], [0, 1, 0]];
    const RY: IMat = [[0, 0, 1], [0, 1, 0], [-1, 0, 0]];
    fn mul(a: &IMat, b: &IMat) -> IMat {
        let mut out = [[0i64; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    out[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        out
    }
    let mut seen = vec![ID];
    let mut cursor = 0;
    while cursor < seen.len() {
        let m = seen[cursor];
        cursor += 1;
        for g in [RX, RY] {
            let next = mul(&g, &m);
            if !seen.contains(&next) {
                seen.push(next);
            }
        }
    }
    debug_assert_eq!(seen.len(), 24);
    seen.into_iter()
        .map(|m| {
            Matrix3::from_fn(|i, j| m[i][j] as f64)
        })
        .collect()
}

fn icosahedral_rotations() -> Vec<Matrix3<f64>> {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let tau = std::f64::consts::TAU;
    // vertices: cyclic permutations of (0, +-1, +-phi)
    let mut vertices = Vec::with_capacity(12);
    for (a, b) in [(1.0, phi), (1.0, -phi), (-1.0, phi), (-1.0, -phi)] {
        vertices.push(Vector3::new(0.0, a, b));
        vertices.push(Vector3::new(a, b, 0.0));
        vertices.push(Vector3::new(b, 0.0, a));
    }
    let dedup_axes = |mut axes: Vec<Vector3<f64>>| -> Vec<Vector3<f64>> {
        let mut out: Vec<Vector3<f64>> = Vec::new();
        for v in axes.drain(..) {
            let u = v.normalize();
            if out
                .iter()
                .all(|w| (w - u).norm() > 1e-6 && (w + u).norm() > 1e-6)
            {
                out.push(u);
            }
        }
        out
    };
    // 6 five-fold axes through opposite vertices
    let five = dedup_axes(vertices.clone());
    // edges join vertices at the minimal distance 2
    let mut edge_mids = Vec::new();
    let mut face_centres = Vec::new();
    for i in 0..12 {
        for j in (i + 1)..12 {
            if ((vertices[i] - vertices[j]).norm() - 2.0).abs() < 1e-9 {
                edge_mids.push((vertices[i] + vertices[j]) / 2.0);
                for k in (j + 1)..12 {
                    if ((vertices[i] - vertices[k]).norm() - 2.0).abs() < 1e-9
                        && ((vertices[j] - vertices[k]).norm() - 2.0).abs() < 1e-9
                    {
                        face_centres.push((vertices[i] + vertices[j] + vertices[k]) / 3.0);
                    }
                }
            }
        }
    }
    // 15 two-fold axes (30 edge midpoints), 10 three-fold (20 faces)
    let two = dedup_axes(edge_mids);
    let three = dedup_axes(face_centres);
    debug_assert_eq!((five.len(), three.len(), two.len()), (6, 10, 15));

    let mut out = vec![Matrix3::identity()];
    for axis in &five {
        for k in 1..5 {
            let u = Unit::new_normalize(*axis);
            out.push(Rotation3::from_axis_angle(&u, tau * k as f64 / 5.0).into_inner());
        }
    }
    for axis in &three {
        for k in 1..3 {
            let u = Unit::new_normalize(*axis);
            out.push(Rotation3::from_axis_angle(&u, tau * k as f64 / 3.0).into_inner());
        }
    }
    for axis in &two {
        let u = Unit::new_normalize(*axis);
        out.push(Rotation3::from_axis_angle(&u, tau / 2.0).into_inner());
    }
    debug_assert_eq!(out.len(), 60);
    out
}

fn subsample(points: &[Point3<f64>], cap: Option<usize>) -> Vec<Point3<f64>> {
    match cap {
        Some(cap) if points.len() > cap && cap > 0 => {
            let stride = points.len().div_ceil(cap);
            points.iter().step_by(stride).copied().collect()
        }
        _ => points.to_vec(),
    }
}

struct IcpRun {
    transform: RigidTransform,
    rmse: f64,
    iterations: usize,
    kept: usize,
}

fn trimmed_icp(
    moving: &[Point3<f64>],
    target_tree: &KdTree,
    target: &[Point3<f64>],
    init: RigidTransform,
    cfg: &RigidConfig,
) -> IcpRun {
    let keep = ((cfg.trim_fraction * moving.len() as f64).floor() as usize)
        .clamp(3, moving.len());
    let mut current = init;
    let mut prev_rmse = f64::INFINITY;
    let mut iterations = 0;
    loop {
        // correspondences under the current transform
        let mut matches: Vec<(f64, usize, usize)> = moving
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let q = current.apply(p);
                let (j, d2) = target_tree.nearest(&q).expect("non-empty target");
                (d2, i, j)
            })
            .collect();
        matches.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
        });
        matches.truncate(keep);
        let rmse = (matches.iter().map(|m| m.0).sum::<f64>() / keep as f64).sqrt();
        debug_assert!(
            rmse <= prev_rmse * (1.0 + 1e-9) + 1e-12,
            "trimmed RMSE must not increase: {prev_rmse} -> {rmse}"
        );
        let done = iterations >= cfg.max_iters
            || (prev_rmse.is_finite()
                && (prev_rmse - rmse).abs() <= cfg.tol * prev_rmse.max(1e-300));
        prev_rmse = rmse;
        if done {
            return IcpRun {
                transform: current,
                rmse,
                iterations,
                kept: keep,
            };
        }
        let pa: Vec<Point3<f64>> = matches.iter().map(|m| moving[m.1]).collect();
        let pb: Vec<Point3<f64>> = matches.iter().map(|m| target[m.2]).collect();
        match kabsch(&pa, &pb) {
            Ok(t) => current = t,
            // degenerate trim set: keep the last good transform
            Err(_) => {
                return IcpRun {
                    transform: current,
                    rmse,
                    iterations,
                    kept: keep,
                }
            }
        }
        iterations += 1;
    }
}

/// Multi-start trimmed ICP over the configured rotation grid. Starts are
/// independent; the result is the lowest trimmed RMSE with ties broken by
/// the earliest start index.
pub fn rigid_align(
    cloud_a: &[Point3<f64>],
    cloud_b: &[Point3<f64>],
    cfg: &RigidConfig,
) -> Result<AlignmentReport, RigidError> {
    if cloud_a.len() < 3 {
        return Err(RigidError::TooFewPoints(cloud_a.len(), 3));
    }
    if cloud_b.len() < 3 {
        return Err(RigidError::TooFewPoints(cloud_b.len(), 3));
    }
    let moving = subsample(cloud_a, cfg.max_points);
    let target = subsample(cloud_b, cfg.max_points);
    let tree = KdTree::build(&target);
    let n = moving.len() as f64;
    let m = target.len() as f64;
    let centroid_a = moving.iter().map(|p| p.coords).sum::<Vector3<f64>>() / n;
    let centroid_b = target.iter().map(|p| p.coords).sum::<Vector3<f64>>() / m;
    let rotations = rotation_grid(cfg.grid);

    let mut runs: Vec<(usize, IcpRun)> = Vec::with_capacity(rotations.len());
    if cfg.early_stop_rmse > 0.0 {
        // sequential scan so the shortcut stays deterministic
        for (idx, rot) in rotations.iter().enumerate() {
            let init = RigidTransform::new(*rot, centroid_b - rot * centroid_a);
            let run = trimmed_icp(&moving, &tree, &target, init, cfg);
            let hit = run.rmse <= cfg.early_stop_rmse;
            runs.push((idx, run));
            if hit {
                break;
            }
        }
    } else {
        runs = rotations
            .par_iter()
            .enumerate()
            .map(|(idx, rot)| {
                let init = RigidTransform::new(*rot, centroid_b - rot * centroid_a);
                (idx, trimmed_icp(&moving, &tree, &target, init, cfg))
            })
            .collect();
    }
    let starts_evaluated = runs.len();
    let (_, best) = runs
        .into_iter()
        .min_by(|(ia, ra), (ib, rb)| {
            ra.rmse
                .partial_cmp(&rb.rmse)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(ia.cmp(ib))
        })
        .expect("at least one start");
    Ok(AlignmentReport {
        transform: best.transform,
        trimmed_rmse: best.rmse,
        inlier_fraction: best.kept as f64 / moving.len() as f64,
        starts_evaluated,
        iterations: best.iterations,
    })
}

/// Maps all graph geometry through the rigid motion. Lengths, energies
/// and degrees are intrinsic to the shapes and carried over unchanged.
pub fn apply_transform(graph: &SpatialGraph, t: &RigidTransform) -> SpatialGraph {
    let nodes = graph
        .nodes
        .iter()
        .map(|n| crate::graph::Node {
            id: n.id,
            coord: t.apply(&n.coord),
            degree_geo: n.degree_geo,
            label: n.label.clone(),
        })
        .collect();
    let edges = graph
        .edges
        .iter()
        .map(|e| Edge {
            a: e.a,
            b: e.b,
            path: e.path.map(|p| t.apply(p)),
            length: e.length,
            energy: e.energy,
        })
        .collect();
    SpatialGraph::new(nodes, edges).expect("rigid motion preserves validity")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{build_gvg, generate_tree, TreeSpec};
    use approx::assert_relative_eq;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point3<f64>> {
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-50.0..50.0),
                    rng.gen_range(-50.0..50.0),
                    rng.gen_range(-50.0..50.0),
                )
            })
            .collect()
    }

    fn rot_z(theta: f64) -> Matrix3<f64> {
        Rotation3::from_axis_angle(&Vector3::z_axis(), theta).into_inner()
    }

    #[test]
    fn rotation_grids_are_valid_groups() {
        let cube = rotation_grid(RotationGrid::Octahedral24);
        assert_eq!(cube.len(), 24);
        assert_eq!(cube[0], Matrix3::identity());
        let ico = rotation_grid(RotationGrid::Icosahedral60);
        assert_eq!(ico.len(), 60);
        assert_eq!(ico[0], Matrix3::identity());
        for r in cube.iter().chain(ico.iter()) {
            let t = RigidTransform::new(*r, Vector3::zeros());
            assert!(t.orthonormality_error() < 1e-9);
            assert!(t.det_error() < 1e-9);
        }
    }

    #[test]
    fn collect_point_cloud_dedups_endpoints() {
        // single edge with a 5-point path: endpoints coincide with nodes
        let nodes = vec![
            crate::graph::Node::new(0, Point3::origin()),
            crate::graph::Node::new(1, Point3::new(4.0, 0.0, 0.0)),
        ];
        let path = crate::graph::Polyline::new(
            (0..5)
                .map(|k| Point3::new(k as f64, 0.0, 0.0))
                .collect::<Vec<_>>(),
        );
        let g = SpatialGraph::new(nodes, vec![Edge::new(0, 1, path, 1.0)]).unwrap();
        assert_eq!(collect_point_cloud(&g).len(), 5);

        let lonely = SpatialGraph::new(
            (0..3)
                .map(|i| crate::graph::Node::new(i, Point3::new(i as f64, 1.0, 2.0)))
                .collect(),
            vec![],
        )
        .unwrap();
        assert_eq!(collect_point_cloud(&lonely).len(), 3);
    }

    #[test]
    fn collect_point_cloud_matches_traversal_recount() {
        let tree = generate_tree(&TreeSpec::new(3)).unwrap();
        let gvg = build_gvg(&tree, 35.0).unwrap();
        let cloud = collect_point_cloud(&gvg);
        // independent recount: brute-force O(n^2) dedup over the same points
        let tau = crate::graph::ENDPOINT_TOL_FACTOR * gvg.node_bbox().unwrap().diagonal();
        let mut oracle: Vec<Point3<f64>> = Vec::new();
        let all: Vec<Point3<f64>> = gvg
            .nodes
            .iter()
            .map(|n| n.coord)
            .chain(gvg.edges.iter().flat_map(|e| e.path.points().iter().copied()))
            .collect();
        for p in all {
            if oracle.iter().all(|q| (q - p).norm() > tau) {
                oracle.push(p);
            }
        }
        assert_eq!(cloud.len(), oracle.len());
    }

    #[test]
    fn kabsch_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_cloud(&mut rng, 10);
        let t = kabsch(&a, &a).unwrap();
        assert!(t.orthonormality_error() < 1e-12);
        assert!((t.rotation - Matrix3::identity()).abs().max() < 1e-12);
        assert!(t.translation.norm() < 1e-12);
    }

    #[test]
    fn kabsch_recovers_known_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_cloud(&mut rng, 10);
        let rot = rot_z(30f64.to_radians());
        let shift = Vector3::new(1.0, 2.0, 3.0);
        let b: Vec<Point3<f64>> = a.iter().map(|p| Point3::from(rot * p.coords + shift)).collect();
        let t = kabsch(&a, &b).unwrap();
        assert!((t.rotation - rot).abs().max() < 1e-9);
        assert!((t.translation - shift).norm() < 1e-9);
    }

    #[test]
    fn kabsch_rejects_degenerate_input() {
        let a = vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0)];
        assert!(matches!(
            kabsch(&a, &a),
            Err(RigidError::TooFewPoints(2, 3))
        ));
        let line: Vec<Point3<f64>> = (0..5)
            .map(|k| Point3::new(k as f64, 2.0 * k as f64, 0.5 * k as f64))
            .collect();
        assert!(matches!(
            kabsch(&line, &line),
            Err(RigidError::DegenerateConfiguration(_))
        ));
    }

    /// Horn's closed-form quaternion method as an independent oracle.
    fn horn_residual(pairs_a: &[Point3<f64>], pairs_b: &[Point3<f64>]) -> f64 {
        let n = pairs_a.len() as f64;
        let ca = pairs_a.iter().map(|p| p.coords).sum::<Vector3<f64>>() / n;
        let cb = pairs_b.iter().map(|p| p.coords).sum::<Vector3<f64>>() / n;
        let mut s = Matrix3::zeros();
        for (a, b) in pairs_a.iter().zip(pairs_b) {
            s += (a.coords - ca) * (b.coords - cb).transpose();
        }
        let (sxx, sxy, sxz) = (s[(0, 0)], s[(0, 1)], s[(0, 2)]);
        let (syx, syy, syz) = (s[(1, 0)], s[(1, 1)], s[(1, 2)]);
        let (szx, szy, szz) = (s[(2, 0)], s[(2, 1)], s[(2, 2)]);
        let nmat = nalgebra::Matrix4::new(
            sxx + syy + szz,
            syz - szy,
            szx - sxz,
            sxy - syx,
            syz - szy,
            sxx - syy - szz,
            sxy + syx,
            szx + sxz,
            szx - sxz,
            sxy + syx,
            -sxx + syy - szz,
            syz + szy,
            sxy - syx,
            szx + sxz,
            syz + szy,
            -sxx - syy + szz,
        );
        let eig = SymmetricEigen::new(nmat);
        let mut best = 0;
        for k in 1..4 {
            if eig.eigenvalues[k] > eig.eigenvalues[best] {
                best = k;
            }
        }
        let q = eig.eigenvectors.column(best);
        let quat = nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]);
        let rot = nalgebra::UnitQuaternion::from_quaternion(quat).to_rotation_matrix();
        let t = cb - rot.matrix() * ca;
        let mut sum = 0.0;
        for (a, b) in pairs_a.iter().zip(pairs_b) {
            sum += (rot.matrix() * a.coords + t - b.coords).norm_squared();
        }
        sum
    }

    #[test]
    fn kabsch_residual_matches_quaternion_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_cloud(&mut rng, 40);
        let rot = Rotation3::from_euler_angles(0.3, -0.8, 1.2).into_inner();
        let shift = Vector3::new(-4.0, 2.5, 9.0);
        let b: Vec<Point3<f64>> = a
            .iter()
            .map(|p| {
                let noise = Vector3::new(
                    rng.gen_range(-0.01..0.01),
                    rng.gen_range(-0.01..0.01),
                    rng.gen_range(-0.01..0.01),
                );
                Point3::from(rot * p.coords + shift + noise)
            })
            .collect();
        let t = kabsch(&a, &b).unwrap();
        let residual: f64 = a
            .iter()
            .zip(&b)
            .map(|(p, q)| (t.rotation * p.coords + t.translation - q.coords).norm_squared())
            .sum();
        let oracle = horn_residual(&a, &b);
        assert_relative_eq!(residual, oracle, epsilon = 1e-8, max_relative = 1e-8);
    }

    #[test]
    fn align_identical_clouds_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cloud = random_cloud(&mut rng, 200);
        let report = rigid_align(&cloud, &cloud, &RigidConfig::default()).unwrap();
        assert!(report.trimmed_rmse < 1e-9);
        assert!((report.transform.rotation - Matrix3::identity()).abs().max() < 1e-6);
        assert!(report.transform.translation.norm() < 1e-6);
        assert_eq!(report.starts_evaluated, 24);
    }

    fn tree_cloud(seed: u64) -> Vec<Point3<f64>> {
        let tree = generate_tree(&TreeSpec::new(seed)).unwrap();
        collect_point_cloud(&tree)
    }

    #[test]
    fn align_recovers_large_rotation() {
        let cloud = tree_cloud(5);
        let rot = rot_z(120f64.to_radians());
        let shift = Vector3::new(10.0, -6.0, 2.0);
        let moved: Vec<Point3<f64>> =
            cloud.iter().map(|p| Point3::from(rot * p.coords + shift)).collect();
        let report = rigid_align(&cloud, &moved, &RigidConfig::default()).unwrap();
        assert!(report.trimmed_rmse < 1e-6, "rmse {}", report.trimmed_rmse);
        let truth = RigidTransform::new(rot, shift);
        let angle = report.transform.rotation_angle_to(&truth).to_degrees();
        assert!(angle < 0.01, "angle off by {angle} deg");
    }

    #[test]
    fn align_with_partial_overlap() {
        let cloud = tree_cloud(6);
        let rot = Rotation3::from_euler_angles(0.4, 0.2, -0.3).into_inner();
        let shift = Vector3::new(3.0, 1.0, -2.0);
        // delete 30% of the target points
        let moved: Vec<Point3<f64>> = cloud
            .iter()
            .enumerate()
            .filter(|(i, _)| i % 10 >= 3)
            .map(|(_, p)| Point3::from(rot * p.coords + shift))
            .collect();
        let cfg = RigidConfig {
            trim_fraction: 0.6,
            ..Default::default()
        };
        let report = rigid_align(&cloud, &moved, &cfg).unwrap();
        let truth = RigidTransform::new(rot, shift);
        let angle = report.transform.rotation_angle_to(&truth).to_degrees();
        assert!(angle < 2.0, "angle off by {angle} deg");
    }

    #[test]
    fn align_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cloud = random_cloud(&mut rng, 150);
        let rot = rot_z(1.0);
        let moved: Vec<Point3<f64>> = cloud.iter().map(|p| Point3::from(rot * p.coords)).collect();
        let r1 = rigid_align(&cloud, &moved, &RigidConfig::default()).unwrap();
        let r2 = rigid_align(&cloud, &moved, &RigidConfig::default()).unwrap();
        assert_eq!(r1.transform, r2.transform);
        assert_eq!(r1.trimmed_rmse, r2.trimmed_rmse);
    }

    #[test]
    fn apply_transform_preserves_lengths_and_distances() {
        let tree = generate_tree(&TreeSpec::new(9)).unwrap();
        let t = RigidTransform::new(
            Rotation3::from_euler_angles(0.7, -0.2, 0.4).into_inner(),
            Vector3::new(5.0, -3.0, 11.0),
        );
        let moved = apply_transform(&tree, &t);
        for (e, me) in tree.edges.iter().zip(&moved.edges) {
            assert_eq!(e.length, me.length);
            assert_eq!(e.energy, me.energy);
            let recomputed = me.path.total_length();
            assert!((recomputed - me.length).abs() <= 1e-9 * me.length.max(1.0));
        }
        for (a, b) in tree.nodes.iter().zip(&moved.nodes) {
            assert_eq!(a.degree_geo, b.degree_geo);
        }
        // pairwise distances preserved within 1e-9
        for i in 0..tree.nodes.len() {
            for j in (i + 1)..tree.nodes.len() {
                let d0 = (tree.nodes[i].coord - tree.nodes[j].coord).norm();
                let d1 = (moved.nodes[i].coord - moved.nodes[j].coord).norm();
                assert!((d0 - d1).abs() < 1e-9);
            }
        }
        // identity transform is bit-exact
        let same = apply_transform(&tree, &RigidTransform::identity());
        assert_eq!(same, tree);
        // pure translation preserves pairwise node distances exactly
        let shifted = apply_transform(
            &tree,
            &RigidTransform::new(Matrix3::identity(), Vector3::new(1.0, 2.0, 3.0)),
        );
        for i in 0..tree.nodes.len() {
            for j in (i + 1)..tree.nodes.len() {
                let d0 = (tree.nodes[i].coord - tree.nodes[j].coord).norm();
                let d1 = (shifted.nodes[i].coord - shifted.nodes[j].coord).norm();
                assert!((d0 - d1).abs() < 1e-12);
            }
        }
    }
}
