//! Pairwise distance matrices, affinity factors and the QAP objective.
//!
//! For a graph pair (A, B) the node affinity `Kn` and edge affinity `Ke`
//! are entrywise exponentials of negated, weighted, sigma-normalized
//! distances. Together with the edge incidence lists they represent the
//! full assignment-affinity matrix `K` implicitly: the diagonal of `K`
//! holds node similarities, the off-diagonal entries hold edge
//! similarities for edge pairs, and everything else is zero. The
//! factorized representation is the production path; dense `K` exists for
//! cross-checks on small instances.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::graph::{polyline_resample, Polyline, SpatialGraph};

#[derive(Debug, Error)]
pub enum AffinityError {
    #[error("graph {0} is empty")]
    EmptyGraph(&'static str),
    #[error("degenerate (zero-length) polyline")]
    DegeneratePolyline,
    #[error("weights {0:?} violate the simplex constraint")]
    BadWeights(Vec<f64>),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("dense affinity needs {0} assignment entries, cap is {1}")]
    DenseCapExceeded(usize, usize),
}

/// Tunables for affinity construction.
#[derive(Debug, Clone)]
pub struct AffinityConfig {
    /// Common resample count for path-distance evaluation.
    pub path_samples: usize,
    /// Lower bound applied to every normalization sigma.
    pub sigma_floor: f64,
    /// Maximum assignment-space size (i*j) for dense-K materialization.
    pub dense_cap: usize,
}

impl Default for AffinityConfig {
    fn default() -> Self {
        Self {
            path_samples: 50,
            sigma_floor: 1e-8,
            dense_cap: 4096,
        }
    }
}

/// Simplex-constrained trade-off weights of the affinity exponentials:
/// `alpha` mixes coordinate vs degree distances for nodes, `beta` mixes
/// path, length and energy distances for edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffinityWeights {
    alpha: [f64; 2],
    beta: [f64; 3],
}

impl AffinityWeights {
    const SIMPLEX_TOL: f64 = 1e-12;

    pub fn new(alpha: [f64; 2], beta: [f64; 3]) -> Result<Self, AffinityError> {
        let ok_alpha = alpha.iter().all(|&v| v >= 0.0)
            && (alpha.iter().sum::<f64>() - 1.0).abs() <= Self::SIMPLEX_TOL;
        if !ok_alpha {
            return Err(AffinityError::BadWeights(alpha.to_vec()));
        }
        let ok_beta = beta.iter().all(|&v| v >= 0.0)
            && (beta.iter().sum::<f64>() - 1.0).abs() <= Self::SIMPLEX_TOL;
        if !ok_beta {
            return Err(AffinityError::BadWeights(beta.to_vec()));
        }
        Ok(Self { alpha, beta })
    }

    pub fn alpha(&self) -> [f64; 2] {
        self.alpha
    }

    pub fn beta(&self) -> [f64; 3] {
        self.beta
    }
}

impl Default for AffinityWeights {
    /// The balanced trade-off used throughout the benchmark.
    fn default() -> Self {
        Self {
            alpha: [0.5, 0.5],
            beta: [0.25, 0.25, 0.5],
        }
    }
}

/// The five cross-graph distance matrices: node coordinates (C) and
/// degrees (D) over node pairs; path (P), length (L) and energy (U) over
/// edge pairs.
#[derive(Debug, Clone)]
pub struct DistanceMatrices {
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub u: DMatrix<f64>,
}

/// Per-kind normalization sigmas (population standard deviation of pooled
/// off-diagonal entries, floored).
#[derive(Debug, Clone, Copy)]
pub struct NormalizationStats {
    pub sigma_c: f64,
    pub sigma_d: f64,
    pub sigma_p: f64,
    pub sigma_l: f64,
    pub sigma_u: f64,
}

/// Precomputed segment data for fast point-to-polyline distance queries.
struct SegTable {
    starts: Vec<nalgebra::Point3<f64>>,
    dirs: Vec<nalgebra::Vector3<f64>>,
    inv_len2: Vec<f64>,
}

impl SegTable {
    fn new(poly: &Polyline) -> Self {
        let pts = poly.points();
        let n = pts.len().saturating_sub(1);
        let mut starts = Vec::with_capacity(n);
        let mut dirs = Vec::with_capacity(n);
        let mut inv_len2 = Vec::with_capacity(n);
        for w in pts.windows(2) {
            let d = w[1] - w[0];
            let len2 = d.norm_squared();
            starts.push(w[0]);
            dirs.push(d);
            inv_len2.push(if len2 > 0.0 { 1.0 / len2 } else { 0.0 });
        }
        Self {
            starts,
            dirs,
            inv_len2,
        }
    }

    fn distance(&self, p: &nalgebra::Point3<f64>) -> f64 {
        let mut best = f64::INFINITY;
        for k in 0..self.starts.len() {
            let ap = p - self.starts[k];
            let t = (ap.dot(&self.dirs[k]) * self.inv_len2[k]).clamp(0.0, 1.0);
            let diff = ap - self.dirs[k] * t;
            let d2 = diff.norm_squared();
            if d2 < best {
                best = d2;
            }
        }
        best.sqrt()
    }
}

fn mean_min_distance(points: &[nalgebra::Point3<f64>], segs: &SegTable) -> f64 {
    let acc: f64 = points.iter().map(|p| segs.distance(p)).sum();
    acc / points.len() as f64
}

/// Paths that are the same point sequence (in either direction) coincide.
fn coincide(pa: &Polyline, pb: &Polyline) -> bool {
    let (a, b) = (pa.points(), pb.points());
    a == b || (a.len() == b.len() && a.iter().zip(b.iter().rev()).all(|(x, y)| x == y))
}

/// Symmetrized mean of minimum point-to-curve distances between the two
/// polylines resampled to a common count of `samples` points. Coinciding
/// paths give exactly 0.
pub fn average_symmetric_distance(
    pa: &Polyline,
    pb: &Polyline,
    samples: usize,
) -> Result<f64, AffinityError> {
    if pa.len() < 2 || pb.len() < 2 || pa.is_degenerate() || pb.is_degenerate() {
        return Err(AffinityError::DegeneratePolyline);
    }
    if coincide(pa, pb) {
        return Ok(0.0);
    }
    let ra = polyline_resample(pa, samples).expect("samples >= 2");
    let rb = polyline_resample(pb, samples).expect("samples >= 2");
    let segs_a = SegTable::new(&ra);
    let segs_b = SegTable::new(&rb);
    let a_to_b = mean_min_distance(ra.points(), &segs_b);
    let b_to_a = mean_min_distance(rb.points(), &segs_a);
    Ok(0.5 * (a_to_b + b_to_a))
}

/// Builds all five distance matrices for the pair (A, B).
pub fn distance_matrices(
    a: &SpatialGraph,
    b: &SpatialGraph,
    cfg: &AffinityConfig,
) -> Result<DistanceMatrices, AffinityError> {
    if a.nodes.is_empty() {
        return Err(AffinityError::EmptyGraph("A"));
    }
    if b.nodes.is_empty() {
        return Err(AffinityError::EmptyGraph("B"));
    }
    let (na, nb) = (a.nodes.len(), b.nodes.len());
    let c = DMatrix::from_fn(na, nb, |i, j| (a.nodes[i].coord - b.nodes[j].coord).norm());
    let d = DMatrix::from_fn(na, nb, |i, j| {
        (a.nodes[i].degree_geo - b.nodes[j].degree_geo).abs()
    });
    let (ea, eb) = (a.edges.len(), b.edges.len());
    let l = DMatrix::from_fn(ea, eb, |v, w| (a.edges[v].length - b.edges[w].length).abs());
    let u = DMatrix::from_fn(ea, eb, |v, w| (a.edges[v].energy - b.edges[w].energy).abs());

    for e in a.edges.iter().chain(b.edges.iter()) {
        if e.path.is_degenerate() {
            return Err(AffinityError::DegeneratePolyline);
        }
    }
    // resample every path once and precompute its segment table
    let prep = |g: &SpatialGraph| -> Vec<(Polyline, SegTable)> {
        g.edges
            .iter()
            .map(|e| {
                let r = polyline_resample(&e.path, cfg.path_samples).expect("samples >= 2");
                let t = SegTable::new(&r);
                (r, t)
            })
            .collect()
    };
    let res_a = prep(a);
    let res_b = prep(b);
    let mut p = DMatrix::zeros(ea, eb);
    {
        use rayon::prelude::*;
        let rows: Vec<Vec<f64>> = (0..ea)
            .into_par_iter()
            .map(|v| {
                (0..eb)
                    .map(|w| {
                        if coincide(&a.edges[v].path, &b.edges[w].path) {
                            return 0.0;
                        }
                        let a_to_b = mean_min_distance(res_a[v].0.points(), &res_b[w].1);
                        let b_to_a = mean_min_distance(res_b[w].0.points(), &res_a[v].1);
                        0.5 * (a_to_b + b_to_a)
                    })
                    .collect()
            })
            .collect();
        for (v, row) in rows.into_iter().enumerate() {
            for (w, val) in row.into_iter().enumerate() {
                p[(v, w)] = val;
            }
        }
    }
    Ok(DistanceMatrices { c, d, p, l, u })
}

/// Streaming accumulator for pooled off-diagonal statistics over a
/// population of distance-matrix sets.
#[derive(Debug, Clone, Default)]
pub struct StatsAccumulator {
    kinds: [Welford; 5],
}

#[derive(Debug, Clone, Copy, Default)]
struct Welford {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Population standard deviation (divide by n).
    fn population_std(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).sqrt()
        }
    }
}

impl StatsAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, dm: &DistanceMatrices) {
        for (kind, m) in [&dm.c, &dm.d, &dm.p, &dm.l, &dm.u].into_iter().enumerate() {
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    if r != c {
                        self.kinds[kind].push(m[(r, c)]);
                    }
                }
            }
        }
    }

    pub fn finish(&self, floor: f64) -> NormalizationStats {
        let s = |k: usize| self.kinds[k].population_std().max(floor);
        NormalizationStats {
            sigma_c: s(0),
            sigma_d: s(1),
            sigma_p: s(2),
            sigma_l: s(3),
            sigma_u: s(4),
        }
    }
}

/// Population standard deviation of the pooled off-diagonal entries of
/// each matrix kind, floored at `floor`.
pub fn normalization_stats(population: &[&DistanceMatrices], floor: f64) -> NormalizationStats {
    let mut acc = StatsAccumulator::new();
    for dm in population {
        acc.add(dm);
    }
    acc.finish(floor)
}

/// Node affinity `exp(-(a1 C/sC + a2 D/sD))`; entries in (0, 1].
pub fn node_affinity(
    dm: &DistanceMatrices,
    w: &AffinityWeights,
    s: &NormalizationStats,
) -> DMatrix<f64> {
    let [a1, a2] = w.alpha();
    DMatrix::from_fn(dm.c.nrows(), dm.c.ncols(), |i, j| {
        (-(a1 * dm.c[(i, j)] / s.sigma_c + a2 * dm.d[(i, j)] / s.sigma_d)).exp()
    })
}

/// Edge affinity `exp(-(b1 P/sP + b2 L/sL + b3 U/sU))`; entries in (0, 1].
pub fn edge_affinity(
    dm: &DistanceMatrices,
    w: &AffinityWeights,
    s: &NormalizationStats,
) -> DMatrix<f64> {
    let [b1, b2, b3] = w.beta();
    DMatrix::from_fn(dm.p.nrows(), dm.p.ncols(), |v, q| {
        (-(b1 * dm.p[(v, q)] / s.sigma_p
            + b2 * dm.l[(v, q)] / s.sigma_l
            + b3 * dm.u[(v, q)] / s.sigma_u))
            .exp()
    })
}

/// Factorized affinity: node and edge similarity matrices plus the edge
/// incidence lists of both graphs, enough to apply the implied dense `K`
/// without materializing it.
#[derive(Debug, Clone)]
pub struct AffinityFactors {
    pub kn: DMatrix<f64>,
    pub ke: DMatrix<f64>,
    pub edges_a: Vec<[usize; 2]>,
    pub edges_b: Vec<[usize; 2]>,
    /// Row-major copy of `ke` for the matvec inner loop.
    ke_rows: Vec<f64>,
}

/// Bundles the affinity factors with their incidence structure.
pub fn assemble_affinity(
    kn: DMatrix<f64>,
    ke: DMatrix<f64>,
    a: &SpatialGraph,
    b: &SpatialGraph,
) -> Result<AffinityFactors, AffinityError> {
    if kn.nrows() != a.nodes.len() || kn.ncols() != b.nodes.len() {
        return Err(AffinityError::DimensionMismatch(format!(
            "Kn is {}x{}, graphs have {} and {} nodes",
            kn.nrows(),
            kn.ncols(),
            a.nodes.len(),
            b.nodes.len()
        )));
    }
    if ke.nrows() != a.edges.len() || ke.ncols() != b.edges.len() {
        return Err(AffinityError::DimensionMismatch(format!(
            "Ke is {}x{}, graphs have {} and {} edges",
            ke.nrows(),
            ke.ncols(),
            a.edges.len(),
            b.edges.len()
        )));
    }
    let edges_a: Vec<[usize; 2]> = a.edges.iter().map(|e| [e.a, e.b]).collect();
    let edges_b: Vec<[usize; 2]> = b.edges.iter().map(|e| [e.a, e.b]).collect();
    let (ea, eb) = (ke.nrows(), ke.ncols());
    let mut ke_rows = vec![0.0; ea * eb];
    for v in 0..ea {
        for w in 0..eb {
            ke_rows[v * eb + w] = ke[(v, w)];
        }
    }
    Ok(AffinityFactors {
        kn,
        ke,
        edges_a,
        edges_b,
        ke_rows,
    })
}

impl AffinityFactors {
    /// Assignment-matrix dimensions (nodes of A, nodes of B).
    pub fn dims(&self) -> (usize, usize) {
        (self.kn.nrows(), self.kn.ncols())
    }

    /// Applies the implied dense `K` to `vec(x)`, returned in matrix shape.
    pub fn k_matvec(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let (na, nb) = self.dims();
        assert_eq!((x.nrows(), x.ncols()), (na, nb), "assignment shape");
        let mut out = self.kn.component_mul(x);
        let eb = self.edges_b.len();
        if eb == 0 || self.edges_a.is_empty() {
            return out;
        }
        let mut x1 = vec![0.0; nb];
        let mut x2 = vec![0.0; nb];
        let mut o1 = vec![0.0; nb];
        let mut o2 = vec![0.0; nb];
        for (v, &[a1, a2]) in self.edges_a.iter().enumerate() {
            for j in 0..nb {
                x1[j] = x[(a1, j)];
                x2[j] = x[(a2, j)];
                o1[j] = 0.0;
                o2[j] = 0.0;
            }
            let krow = &self.ke_rows[v * eb..(v + 1) * eb];
            for (w, &[b1, b2]) in self.edges_b.iter().enumerate() {
                let k = krow[w];
                o1[b1] += k * x2[b2];
                o1[b2] += k * x2[b1];
                o2[b1] += k * x1[b2];
                o2[b2] += k * x1[b1];
            }
            for j in 0..nb {
                out[(a1, j)] += o1[j];
                out[(a2, j)] += o2[j];
            }
        }
        out
    }

    /// The QAP objective `vec(X)^T K vec(X)` evaluated through the
    /// factorized product.
    pub fn qap_objective(&self, x: &DMatrix<f64>) -> f64 {
        self.k_matvec(x).dot(x)
    }

    /// Bilinear form `vec(x)^T K vec(y)`.
    pub fn bilinear(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        self.k_matvec(y).dot(x)
    }

    /// Objective of a binary assignment given as `row -> Some(col)`.
    pub fn qap_objective_of_permutation(&self, perm: &[Option<usize>]) -> f64 {
        let (na, nb) = self.dims();
        assert_eq!(perm.len(), na, "permutation length");
        let mut x = DMatrix::zeros(na, nb);
        for (i, &j) in perm.iter().enumerate() {
            if let Some(j) = j {
                x[(i, j)] = 1.0;
            }
        }
        self.qap_objective(&x)
    }

    /// Materializes the dense `K` (column-major vectorization order:
    /// index of assignment (i, j) is `j * nA + i`). Guarded by `cap` on
    /// the assignment-space size.
    pub fn dense_k(&self, cap: usize) -> Result<DMatrix<f64>, AffinityError> {
        let (na, nb) = self.dims();
        let n = na * nb;
        if n > cap {
            return Err(AffinityError::DenseCapExceeded(n, cap));
        }
        let idx = |i: usize, j: usize| j * na + i;
        let mut k = DMatrix::zeros(n, n);
        for i in 0..na {
            for j in 0..nb {
                k[(idx(i, j), idx(i, j))] = self.kn[(i, j)];
            }
        }
        for (v, &[a1, a2]) in self.edges_a.iter().enumerate() {
            for (w, &[b1, b2]) in self.edges_b.iter().enumerate() {
                let val = self.ke[(v, w)];
                k[(idx(a1, b1), idx(a2, b2))] = val;
                k[(idx(a2, b2), idx(a1, b1))] = val;
                k[(idx(a1, b2), idx(a2, b1))] = val;
                k[(idx(a2, b1), idx(a1, b2))] = val;
            }
        }
        Ok(k)
    }
}

/// Full per-pair affinity build: distances, per-pair normalization,
/// exponential affinities, factor assembly. Pass `stats` to override the
/// per-pair normalization with population-level sigmas.
pub fn build_affinity(
    a: &SpatialGraph,
    b: &SpatialGraph,
    weights: &AffinityWeights,
    cfg: &AffinityConfig,
    stats: Option<&NormalizationStats>,
) -> Result<AffinityFactors, AffinityError> {
    let dm = distance_matrices(a, b, cfg)?;
    let own_stats;
    let s = match stats {
        Some(s) => s,
        None => {
            own_stats = normalization_stats(&[&dm], cfg.sigma_floor);
            &own_stats
        }
    };
    let kn = node_affinity(&dm, weights, s);
    let ke = edge_affinity(&dm, weights, s);
    assemble_affinity(kn, ke, a, b)
}
