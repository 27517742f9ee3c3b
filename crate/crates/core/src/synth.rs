//! Synthetic vascular-tree geometry and perturbations.
//!
//! Trees are grown as branching polyline structures inside a bounding box,
//! with edge energies obtained by integrating a fixed smooth scalar
//! potential along each path. Perturbations cover smooth non-linear
//! displacement fields (bounded by a fraction of the bounding-box
//! diagonal) and topological pruning of a fraction of the edges.
//! Everything is a pure function of its inputs and an explicit seed.

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geom::Aabb;
use crate::graph::{
    over_connect, Edge, EdgeGeometry, GraphError, Node, Polyline, SpatialGraph,
};

/// Samples per generated edge path.
const PATH_SAMPLES: usize = 9;

/// Control points per axis of the displacement lattice (spacing = extent/4).
const FIELD_GRID: usize = 5;

/// Neighbour-averaging passes applied to the control lattice so the field
/// deforms coherently instead of shredding local structure.
const FIELD_SMOOTH_PASSES: usize = 2;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("tree needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("degenerate bounding box")]
    DegenerateBbox,
    #[error("fraction {0} outside {1}")]
    InvalidFraction(f64, &'static str),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Parameters for [`generate_tree`].
#[derive(Debug, Clone)]
pub struct TreeSpec {
    pub seed: u64,
    pub n_nodes: usize,
    pub bbox: Aabb,
    /// Nominal branch segment length.
    pub branch_step: f64,
    /// Angular spread of child directions around the parent direction,
    /// in radians.
    pub branch_angle_spread: f64,
}

impl TreeSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            n_nodes: 80,
            bbox: Aabb::cube(100.0),
            branch_step: 20.0,
            branch_angle_spread: 0.7,
        }
    }
}

/// Smooth positive scalar field integrated along paths to produce edge
/// energies: `phi(p) = 1 + A sin(2pi x / L) sin(2pi y / L) sin(2pi z / L)`
/// with `A = 0.5` and `L` a quarter of the longest box edge.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticPotential {
    amplitude: f64,
    wavelength: f64,
}

impl SyntheticPotential {
    pub fn for_bbox(bbox: &Aabb) -> Self {
        let edge = bbox.max_edge().max(1e-9);
        Self {
            amplitude: 0.5,
            wavelength: edge / 4.0,
        }
    }

    /// Potential derived from the node set of `graph`.
    pub fn for_graph(graph: &SpatialGraph) -> Option<Self> {
        graph.node_bbox().map(|bb| Self::for_bbox(&bb))
    }

    pub fn eval(&self, p: &Point3<f64>) -> f64 {
        let w = std::f64::consts::TAU / self.wavelength;
        1.0 + self.amplitude * (w * p.x).sin() * (w * p.y).sin() * (w * p.z).sin()
    }

    /// Trapezoidal integral of the potential along the polyline.
    pub fn integrate(&self, path: &Polyline) -> f64 {
        let pts = path.points();
        let mut acc = 0.0;
        for w in pts.windows(2) {
            let ds = (w[1] - w[0]).norm();
            acc += 0.5 * (self.eval(&w[0]) + self.eval(&w[1])) * ds;
        }
        acc
    }
}

/// Trilinearly interpolated offset lattice covering a bounding box, with
/// the maximum offset magnitude rescaled to an exact bound.
#[derive(Debug, Clone)]
pub struct DisplacementField {
    origin: Point3<f64>,
    spacing: Vector3<f64>,
    dims: [usize; 3],
    offsets: Vec<Vector3<f64>>,
    /// Exact maximum of the field over the lattice (hence over the box,
    /// since trilinear values are convex combinations of lattice values).
    pub max_magnitude: f64,
}

impl DisplacementField {
    /// Random field over `bbox` with maximum magnitude exactly
    /// `fraction * bbox.diagonal()`.
    pub fn random(bbox: &Aabb, fraction: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = [FIELD_GRID, FIELD_GRID, FIELD_GRID];
        let extent = bbox.extent();
        let spacing = Vector3::new(
            (extent.x / (FIELD_GRID - 1) as f64).max(1e-9),
            (extent.y / (FIELD_GRID - 1) as f64).max(1e-9),
            (extent.z / (FIELD_GRID - 1) as f64).max(1e-9),
        );
        let count = dims[0] * dims[1] * dims[2];
        let mut offsets: Vec<Vector3<f64>> = (0..count)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-1.0..=1.0),
                    rng.gen_range(-1.0..=1.0),
                    rng.gen_range(-1.0..=1.0),
                )
            })
            .collect();
        for _ in 0..FIELD_SMOOTH_PASSES {
            offsets = smooth_lattice(&offsets, dims);
        }
        let target = fraction * bbox.diagonal();
        let max = offsets.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
        let scale = if max > 0.0 { target / max } else { 0.0 };
        for v in &mut offsets {
            *v *= scale;
        }
        Self {
            origin: bbox.min,
            spacing,
            dims,
            offsets,
            max_magnitude: target,
        }
    }

    fn at(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        self.offsets[(i * self.dims[1] + j) * self.dims[2] + k]
    }

    /// Trilinear sample; coordinates outside the lattice are clamped, so
    /// the field extends continuously and stays bounded everywhere.
    pub fn sample(&self, p: &Point3<f64>) -> Vector3<f64> {
        let mut idx = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for d in 0..3 {
            let u = (p[d] - self.origin[d]) / self.spacing[d];
            let cell = u.floor().clamp(0.0, (self.dims[d] - 2) as f64);
            idx[d] = cell as usize;
            frac[d] = (u - cell).clamp(0.0, 1.0);
        }
        let mut out = Vector3::zeros();
        for di in 0..2 {
            for dj in 0..2 {
                for dk in 0..2 {
                    let w = (if di == 0 { 1.0 - frac[0] } else { frac[0] })
                        * (if dj == 0 { 1.0 - frac[1] } else { frac[1] })
                        * (if dk == 0 { 1.0 - frac[2] } else { frac[2] });
                    out += self.at(idx[0] + di, idx[1] + dj, idx[2] + dk) * w;
                }
            }
        }
        out
    }
}

fn smooth_lattice(offsets: &[Vector3<f64>], dims: [usize; 3]) -> Vec<Vector3<f64>> {
    let at = |i: usize, j: usize, k: usize| offsets[(i * dims[1] + j) * dims[2] + k];
    let mut out = Vec::with_capacity(offsets.len());
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let mut acc = at(i, j, k);
                let mut n = 1.0;
                for (di, dj, dk) in [
                    (-1i64, 0i64, 0i64),
                    (1, 0, 0),
                    (0, -1, 0),
                    (0, 1, 0),
                    (0, 0, -1),
                    (0, 0, 1),
                ] {
                    let (ni, nj, nk) = (i as i64 + di, j as i64 + dj, k as i64 + dk);
                    if ni >= 0
                        && nj >= 0
                        && nk >= 0
                        && (ni as usize) < dims[0]
                        && (nj as usize) < dims[1]
                        && (nk as usize) < dims[2]
                    {
                        acc += at(ni as usize, nj as usize, nk as usize);
                        n += 1.0;
                    }
                }
                out.push(acc / n);
            }
        }
    }
    out
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.gen_range(-1.0..=1.0),
            rng.gen_range(-1.0..=1.0),
            rng.gen_range(-1.0..=1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Quadratic Bezier through `a` and `c` with control point `ctrl`, sampled
/// at `n` points. Endpoints are exact.
fn bezier_path(a: Point3<f64>, ctrl: Point3<f64>, c: Point3<f64>, n: usize) -> Polyline {
    let mut pts = Vec::with_capacity(n);
    pts.push(a);
    for k in 1..n - 1 {
        let t = k as f64 / (n - 1) as f64;
        let s = 1.0 - t;
        let p = a.coords * (s * s) + ctrl.coords * (2.0 * s * t) + c.coords * (t * t);
        pts.push(Point3::from(p));
    }
    pts.push(c);
    Polyline::new(pts)
}

/// Grows a random connected tree of curved branches inside the box.
/// Deterministic for a given spec; edge energies come from the synthetic
/// potential over the realized node set.
pub fn generate_tree(spec: &TreeSpec) -> Result<SpatialGraph, SynthError> {
    if spec.n_nodes < 2 {
        return Err(SynthError::TooFewNodes(spec.n_nodes));
    }
    if spec.bbox.is_degenerate() {
        return Err(SynthError::DegenerateBbox);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let bbox = spec.bbox;
    let extent = bbox.extent();
    let root = Point3::from(
        bbox.min.coords
            + Vector3::new(
                extent.x * (0.25 + 0.5 * rng.gen::<f64>()),
                extent.y * (0.25 + 0.5 * rng.gen::<f64>()),
                extent.z * (0.25 + 0.5 * rng.gen::<f64>()),
            ),
    );
    let mut coords = vec![root];
    let mut grow_dirs = vec![random_unit(&mut rng)];
    let mut tree_degree = vec![0usize; spec.n_nodes];
    let mut links: Vec<(usize, usize, Polyline)> = Vec::with_capacity(spec.n_nodes - 1);

    let min_sep = 0.5 * spec.branch_step;
    for _ in 1..spec.n_nodes {
        // attachment node: prefer nodes that still look like branch tips
        let mut attach = rng.gen_range(0..coords.len());
        for _ in 0..16 {
            if tree_degree[attach] < 3 {
                break;
            }
            attach = rng.gen_range(0..coords.len());
        }
        // keep the most separated in-box candidate in case none clears min_sep
        let mut best: Option<(Point3<f64>, f64)> = None;
        for attempt in 0..40 {
            let base_dir = if attempt < 20 {
                grow_dirs[attach]
            } else {
                random_unit(&mut rng)
            };
            let dir = {
                let d = base_dir + random_unit(&mut rng) * spec.branch_angle_spread;
                let n = d.norm();
                if n < 1e-9 {
                    base_dir
                } else {
                    d / n
                }
            };
            let step = spec.branch_step * (0.7 + 0.6 * rng.gen::<f64>());
            let p = coords[attach] + dir * step;
            if !bbox.contains(&p) {
                continue;
            }
            let near = coords
                .iter()
                .map(|q| (p - q).norm())
                .fold(f64::INFINITY, f64::min);
            if near >= min_sep {
                best = Some((p, near));
                break;
            }
            if best.map_or(true, |(_, bn)| near > bn) {
                best = Some((p, near));
            }
        }
        let new_coord = match best {
            Some((p, _)) => p,
            None => loop {
                // attach node is cornered: drop anywhere free in the box
                let p = Point3::from(
                    bbox.min.coords
                        + Vector3::new(
                            extent.x * rng.gen::<f64>(),
                            extent.y * rng.gen::<f64>(),
                            extent.z * rng.gen::<f64>(),
                        ),
                );
                let near = coords
                    .iter()
                    .map(|q| (p - q).norm())
                    .fold(f64::INFINITY, f64::min);
                if near > 1e-3 * spec.branch_step {
                    break p;
                }
            },
        };

        let chord = new_coord - coords[attach];
        let chord_len = chord.norm();
        let chord_dir = chord / chord_len;
        let perp = {
            let u = random_unit(&mut rng);
            let p = u - chord_dir * u.dot(&chord_dir);
            let n = p.norm();
            if n > 1e-9 {
                p / n
            } else {
                Vector3::zeros()
            }
        };
        let bow = perp * (chord_len * 0.15 * rng.gen::<f64>());
        let mid = Point3::from((coords[attach].coords + new_coord.coords) * 0.5 + bow);
        let ctrl = bbox.clamp(&mid);
        let path = bezier_path(coords[attach], ctrl, new_coord, PATH_SAMPLES);

        let new_idx = coords.len();
        links.push((attach, new_idx, path));
        tree_degree[attach] += 1;
        tree_degree[new_idx] = 1;
        coords.push(new_coord);
        grow_dirs.push(chord_dir);
    }

    let nodes: Vec<Node> = coords
        .iter()
        .enumerate()
        .map(|(i, &c)| Node::new(i, c))
        .collect();
    let node_bbox = Aabb::from_points(coords.iter()).expect("nodes exist");
    let potential = SyntheticPotential::for_bbox(&node_bbox);
    let edges: Vec<Edge> = links
        .into_iter()
        .map(|(a, b, path)| {
            let energy = potential.integrate(&path);
            Edge::new(a, b, path, energy)
        })
        .collect();
    Ok(SpatialGraph::new(nodes, edges)?)
}

/// Over-connects a tree within radius `nu`. Tree edges keep their original
/// paths and energies; new pairs are routed along straight paths with the
/// synthetic potential integrated along them.
pub fn build_gvg(tree: &SpatialGraph, nu: f64) -> Result<SpatialGraph, SynthError> {
    let potential =
        SyntheticPotential::for_graph(tree).ok_or(SynthError::DegenerateBbox)?;
    let mut originals = std::collections::HashMap::new();
    for e in &tree.edges {
        originals.insert(e.key(), (e.path.clone(), e.energy));
    }
    let nodes = tree.nodes.clone();
    let out = over_connect(
        nodes,
        |a, b| {
            let key = if a.id <= b.id { (a.id, b.id) } else { (b.id, a.id) };
            if let Some((path, energy)) = originals.get(&key) {
                return Ok(EdgeGeometry {
                    path: path.clone(),
                    energy: *energy,
                });
            }
            let mut pts = Vec::with_capacity(PATH_SAMPLES);
            for k in 0..PATH_SAMPLES {
                let t = k as f64 / (PATH_SAMPLES - 1) as f64;
                pts.push(Point3::from(a.coord.coords * (1.0 - t) + b.coord.coords * t));
            }
            // keep endpoints exact
            pts[0] = a.coord;
            pts[PATH_SAMPLES - 1] = b.coord;
            let path = Polyline::new(pts);
            let energy = potential.integrate(&path);
            Ok(EdgeGeometry { path, energy })
        },
        nu,
    )?;
    Ok(out.graph)
}

/// Displaces every node and path point by a smooth random field whose
/// maximum magnitude is `fraction` of the node bounding-box diagonal.
/// Lengths are recomputed from the displaced polylines and energies are
/// re-integrated along them; a fraction of exactly 0 is a no-op.
pub fn deform(graph: &SpatialGraph, fraction: f64, seed: u64) -> Result<SpatialGraph, SynthError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(SynthError::InvalidFraction(fraction, "[0, 1]"));
    }
    if fraction == 0.0 || graph.nodes.is_empty() {
        return Ok(graph.clone());
    }
    let bbox = graph.node_bbox().expect("non-empty graph");
    let potential = SyntheticPotential::for_bbox(&bbox);
    let field = DisplacementField::random(&bbox, fraction, seed);
    let displace = |p: &Point3<f64>| p + field.sample(p);
    let nodes: Vec<Node> = graph
        .nodes
        .iter()
        .map(|n| Node {
            id: n.id,
            coord: displace(&n.coord),
            degree_geo: 0.0,
            label: n.label.clone(),
        })
        .collect();
    let edges: Vec<Edge> = graph
        .edges
        .iter()
        .map(|e| {
            let path = e.path.map(displace);
            let energy = potential.integrate(&path);
            Edge::new(e.a, e.b, path, energy)
        })
        .collect();
    Ok(SpatialGraph::new(nodes, edges)?)
}

/// Edge-selection policy for [`prune`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PruneMode {
    /// Remove non-bridge edges first, recomputing bridges after every
    /// removal; bridges go only once no non-bridge is left.
    #[default]
    PreferNonBridges,
    /// Uniform removal regardless of connectivity.
    Uniform,
}

/// Removes `floor(fraction * |E|)` edges at random. Nodes (and hence the
/// identity ground truth) are untouched; degrees are rederived.
pub fn prune(
    graph: &SpatialGraph,
    fraction: f64,
    seed: u64,
    mode: PruneMode,
) -> Result<SpatialGraph, SynthError> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(SynthError::InvalidFraction(fraction, "[0, 1)"));
    }
    let quota = (fraction * graph.edges.len() as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = graph.edges.clone();
    for _ in 0..quota {
        let pick = match mode {
            PruneMode::Uniform => rng.gen_range(0..edges.len()),
            PruneMode::PreferNonBridges => {
                let bridge = bridge_flags(graph.nodes.len(), &edges);
                let non_bridges: Vec<usize> =
                    (0..edges.len()).filter(|&i| !bridge[i]).collect();
                if non_bridges.is_empty() {
                    rng.gen_range(0..edges.len())
                } else {
                    non_bridges[rng.gen_range(0..non_bridges.len())]
                }
            }
        };
        edges.remove(pick);
    }
    Ok(SpatialGraph::new(graph.nodes.clone(), edges)?)
}

/// Tarjan bridge detection; returns one flag per edge.
fn bridge_flags(n_nodes: usize, edges: &[Edge]) -> Vec<bool> {
    let mut adj = vec![Vec::new(); n_nodes];
    for (idx, e) in edges.iter().enumerate() {
        adj[e.a].push((e.b, idx));
        adj[e.b].push((e.a, idx));
    }
    let mut disc = vec![usize::MAX; n_nodes];
    let mut low = vec![usize::MAX; n_nodes];
    let mut is_bridge = vec![false; edges.len()];
    let mut timer = 0usize;
    for start in 0..n_nodes {
        if disc[start] != usize::MAX {
            continue;
        }
        // iterative DFS: (node, parent edge, neighbour cursor)
        let mut stack: Vec<(usize, usize, usize)> = vec![(start, usize::MAX, 0)];
        disc[start] = timer;
        low[start] = timer;
        timer += 1;
        loop {
            let Some(&(u, pe, cursor)) = stack.last() else {
                break;
            };
            if cursor < adj[u].len() {
                stack.last_mut().expect("non-empty").2 += 1;
                let (v, eidx) = adj[u][cursor];
                if eidx == pe {
                    continue;
                }
                if disc[v] == usize::MAX {
                    disc[v] = timer;
                    low[v] = timer;
                    timer += 1;
                    stack.push((v, eidx, 0));
                } else {
                    low[u] = low[u].min(disc[v]);
                }
            } else {
                stack.pop();
                if let Some(&(p, _, _)) = stack.last() {
                    low[p] = low[p].min(low[u]);
                    if low[u] > disc[p] {
                        is_bridge[pe] = true;
                    }
                }
            }
        }
    }
    is_bridge
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::DisjointSet;

    #[test]
    fn minimal_tree_has_one_edge_inside_bbox() {
        let mut spec = TreeSpec::new(1);
        spec.n_nodes = 2;
        let g = generate_tree(&spec).unwrap();
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edge_count(), 1);
        for n in &g.nodes {
            assert!(spec.bbox.contains(&n.coord));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = TreeSpec::new(42);
        let a = generate_tree(&spec).unwrap();
        let b = generate_tree(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tree_is_connected_and_acyclic_by_union_find() {
        let spec = TreeSpec::new(42);
        let g = generate_tree(&spec).unwrap();
        assert_eq!(g.edge_count(), g.node_count() - 1);
        let mut dsu = DisjointSet::new(g.node_count());
        for e in &g.edges {
            // a cycle would try to union an already-joined pair
            assert!(dsu.union(e.a, e.b), "cycle at edge ({}, {})", e.a, e.b);
        }
        assert_eq!(dsu.component_count(), 1);
    }

    #[test]
    fn tree_connectivity_over_seed_sweep() {
        for seed in 0..100 {
            let spec = TreeSpec::new(seed);
            let g = generate_tree(&spec).unwrap();
            assert_eq!(g.edge_count(), g.node_count() - 1, "seed {seed}");
            assert!(g.is_connected(), "seed {seed}");
        }
    }

    #[test]
    fn rejects_tiny_node_count() {
        let mut spec = TreeSpec::new(0);
        spec.n_nodes = 1;
        assert!(matches!(
            generate_tree(&spec),
            Err(SynthError::TooFewNodes(1))
        ));
    }

    #[test]
    fn gvg_edge_count_matches_brute_force_pair_count() {
        let spec = TreeSpec::new(42);
        let tree = generate_tree(&spec).unwrap();
        let nu = 35.0;
        let gvg = build_gvg(&tree, nu).unwrap();
        let mut want = 0usize;
        for a in 0..tree.node_count() {
            for b in (a + 1)..tree.node_count() {
                if (tree.nodes[b].coord - tree.nodes[a].coord).norm() <= nu {
                    want += 1;
                }
            }
        }
        assert_eq!(gvg.edge_count(), want);
        // over-connection soundness: no produced edge exceeds the radius
        for e in &gvg.edges {
            assert!((gvg.nodes[e.a].coord - gvg.nodes[e.b].coord).norm() <= nu);
        }
    }

    #[test]
    fn gvg_keeps_tree_paths() {
        let spec = TreeSpec::new(7);
        let tree = generate_tree(&spec).unwrap();
        let gvg = build_gvg(&tree, 35.0).unwrap();
        for te in &tree.edges {
            if (tree.nodes[te.a].coord - tree.nodes[te.b].coord).norm() <= 35.0 {
                let ge = gvg.edge_between(te.a, te.b).expect("tree edge kept");
                assert_eq!(ge.path, te.path);
                assert_eq!(ge.energy, te.energy);
            }
        }
    }

    #[test]
    fn gvg_tiny_radius_empty_and_infinite_complete() {
        let mut spec = TreeSpec::new(3);
        spec.n_nodes = 10;
        let tree = generate_tree(&spec).unwrap();
        let empty = build_gvg(&tree, 1e-9).unwrap();
        assert_eq!(empty.edge_count(), 0);
        let complete = build_gvg(&tree, f64::INFINITY).unwrap();
        assert_eq!(complete.edge_count(), 10 * 9 / 2);
    }

    #[test]
    fn deform_zero_fraction_is_identity() {
        let spec = TreeSpec::new(5);
        let tree = generate_tree(&spec).unwrap();
        let gvg = build_gvg(&tree, 35.0).unwrap();
        let out = deform(&gvg, 0.0, 99).unwrap();
        assert_eq!(out, gvg);
    }

    #[test]
    fn stored_energies_equal_reintegration() {
        // the pipeline's stored energies are exactly the potential integral,
        // so re-integrating unchanged paths must reproduce them bit-for-bit
        let spec = TreeSpec::new(11);
        let tree = generate_tree(&spec).unwrap();
        let gvg = build_gvg(&tree, 35.0).unwrap();
        let potential = SyntheticPotential::for_graph(&gvg).unwrap();
        for e in &gvg.edges {
            assert_eq!(e.energy, potential.integrate(&e.path));
        }
    }

    #[test]
    fn deform_bounds_node_displacement() {
        let spec = TreeSpec::new(42);
        let tree = generate_tree(&spec).unwrap();
        let gvg = build_gvg(&tree, 35.0).unwrap();
        let diag = gvg.node_bbox().unwrap().diagonal();
        let fraction = 0.4;
        let out = deform(&gvg, fraction, 7).unwrap();
        let max_disp = gvg
            .nodes
            .iter()
            .zip(&out.nodes)
            .map(|(a, b)| (b.coord - a.coord).norm())
            .fold(0.0f64, f64::max);
        assert!(max_disp <= fraction * diag * 1.01, "max {max_disp}");
        assert!(max_disp > 0.0);
        // topology untouched
        assert_eq!(out.edge_count(), gvg.edge_count());
        for (a, b) in gvg.edges.iter().zip(&out.edges) {
            assert_eq!((a.a, a.b), (b.a, b.b));
        }
    }

    #[test]
    fn deformed_lengths_match_polyline_oracle() {
        let spec = TreeSpec::new(2);
        let tree = generate_tree(&spec).unwrap();
        let out = deform(&tree, 0.3, 4).unwrap();
        for e in &out.edges {
            let oracle: f64 = e
                .path
                .points()
                .windows(2)
                .map(|w| (w[1] - w[0]).norm())
                .sum();
            assert_eq!(e.length, oracle);
        }
    }

    #[test]
    fn field_max_is_exactly_rescaled() {
        let bbox = Aabb::cube(100.0);
        let field = DisplacementField::random(&bbox, 0.5, 3);
        let target = 0.5 * bbox.diagonal();
        // lattice max equals the target; dense sampling never exceeds it
        let mut max_seen = 0.0f64;
        for i in 0..20 {
            for j in 0..20 {
                for k in 0..20 {
                    let p = Point3::new(i as f64 * 5.0, j as f64 * 5.0, k as f64 * 5.0);
                    max_seen = max_seen.max(field.sample(&p).norm());
                }
            }
        }
        assert!(max_seen <= target * (1.0 + 1e-12));
        assert!((field.max_magnitude - target).abs() < 1e-12);
    }

    #[test]
    fn prune_zero_is_identity_and_counts_match() {
        let spec = TreeSpec::new(42);
        let tree = generate_tree(&spec).unwrap();
        let gvg = build_gvg(&tree, 35.0).unwrap();
        let same = prune(&gvg, 0.0, 1, PruneMode::PreferNonBridges).unwrap();
        assert_eq!(same, gvg);

        let fraction = 0.3;
        let out = prune(&gvg, fraction, 1, PruneMode::PreferNonBridges).unwrap();
        let expected_removed = (fraction * gvg.edge_count() as f64).floor() as usize;
        assert_eq!(gvg.edge_count() - out.edge_count(), expected_removed);
        // node identities and coordinates untouched
        assert_eq!(out.nodes.len(), gvg.nodes.len());
        for (a, b) in gvg.nodes.iter().zip(&out.nodes) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.coord, b.coord);
        }
    }

    #[test]
    fn prune_complete_k4_keeps_connectivity() {
        let nodes: Vec<Node> = [
            (0.0, 0.0, 0.0),
            (1.0, 0.0, 0.0),
            (0.0, 1.0, 0.0),
            (0.0, 0.0, 1.0),
        ]
        .iter()
        .enumerate()
        .map(|(i, &(x, y, z))| Node::new(i, Point3::new(x, y, z)))
        .collect();
        let mut edges = Vec::new();
        for a in 0..4 {
            for b in (a + 1)..4 {
                edges.push(Edge::new(
                    a,
                    b,
                    Polyline::new(vec![nodes[a].coord, nodes[b].coord]),
                    1.0,
                ));
            }
        }
        let g = SpatialGraph::new(nodes, edges).unwrap();
        for seed in 0..20 {
            let out = prune(&g, 0.5, seed, PruneMode::PreferNonBridges).unwrap();
            assert_eq!(out.edge_count(), 3);
            assert!(out.is_connected(), "seed {seed}");
        }
    }

    #[test]
    fn prune_is_deterministic() {
        let spec = TreeSpec::new(8);
        let tree = generate_tree(&spec).unwrap();
        let gvg = build_gvg(&tree, 35.0).unwrap();
        let a = prune(&gvg, 0.4, 5, PruneMode::PreferNonBridges).unwrap();
        let b = prune(&gvg, 0.4, 5, PruneMode::PreferNonBridges).unwrap();
        assert_eq!(a, b);
    }
}
