//! Attributed spatial graph model.
//!
//! A [`SpatialGraph`] is an undirected graph embedded in 3D. Every edge
//! carries the sampled polyline of the path joining its endpoints, the
//! euclidean length of that polyline, and an integral energy accumulated
//! along it. Every node carries its coordinates and a derived geodesic
//! degree: the mean energy of its incident edges.

use std::collections::HashMap;

use nalgebra::Point3;
use thiserror::Error;

use crate::geom::Aabb;

/// Relative factor applied to the node bounding-box diagonal to obtain the
/// endpoint-coincidence tolerance for edge paths.
pub const ENDPOINT_TOL_FACTOR: f64 = 1e-6;

/// Relative tolerance for the stored edge length against the polyline sum.
pub const LENGTH_REL_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("node index {0} out of range (graph has {1} nodes)")]
    NodeIndexOutOfRange(usize, usize),
    #[error("node {position} has id {id}; ids must equal positions")]
    NodeIdMismatch { position: usize, id: usize },
    #[error("node {0} has non-finite coordinates")]
    NonFiniteCoordinate(usize),
    #[error("edge {0} is a self-loop on node {1}")]
    SelfLoop(usize, usize),
    #[error("duplicate edge between nodes {0} and {1}")]
    DuplicateEdge(usize, usize),
    #[error("edge {0}: endpoint {1} references missing node {2}")]
    DanglingEndpoint(usize, usize, usize),
    #[error("edge {0}: polyline has {1} points, need at least 2")]
    PathTooShort(usize, usize),
    #[error("edge {0}: consecutive polyline points {1} and {2} coincide")]
    RepeatedPathPoint(usize, usize, usize),
    #[error("edge {0}: path endpoint does not coincide with node {1} (off by {2:.3e})")]
    EndpointMismatch(usize, usize, f64),
    #[error("edge {0}: stored length {1} differs from polyline sum {2}")]
    LengthMismatch(usize, f64, f64),
    #[error("edge {0}: negative energy {1}")]
    NegativeEnergy(usize, f64),
    #[error("polyline resampling needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
}

/// Which scalar edge attribute drives a weighted computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EdgeWeight {
    Length,
    /// Geodesic integral energy; the default for spanning trees built from
    /// geodesic graphs.
    #[default]
    Energy,
}

/// Ordered 3D point sequence sampled along a path.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Vec<Point3<f64>>,
}

impl Polyline {
    pub fn new(points: Vec<Point3<f64>>) -> Self {
        Self { points }
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> Point3<f64> {
        self.points[0]
    }

    pub fn last(&self) -> Point3<f64> {
        self.points[self.points.len() - 1]
    }

    /// Sum of consecutive point distances.
    pub fn total_length(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1] - w[0]).norm())
            .sum()
    }

    /// Cumulative arc length at every vertex (starts at 0).
    pub fn cumulative_lengths(&self) -> Vec<f64> {
        let mut cum = Vec::with_capacity(self.points.len());
        let mut acc = 0.0;
        cum.push(0.0);
        for w in self.points.windows(2) {
            acc += (w[1] - w[0]).norm();
            cum.push(acc);
        }
        cum
    }

    /// A path whose total length is (numerically) zero.
    pub fn is_degenerate(&self) -> bool {
        self.total_length() <= 0.0
    }

    /// Applies `f` to every point, returning a new polyline.
    pub fn map<F: FnMut(&Point3<f64>) -> Point3<f64>>(&self, mut f: F) -> Polyline {
        Polyline::new(self.points.iter().map(|p| f(p)).collect())
    }

    /// Reversed copy.
    pub fn reversed(&self) -> Polyline {
        let mut pts = self.points.clone();
        pts.reverse();
        Polyline::new(pts)
    }
}

/// Resamples `path` to exactly `n_samples` points equally spaced in arc
/// length along the source polyline. Endpoints are preserved bit-exactly.
/// A zero-length path yields `n_samples` copies of its single location;
/// callers can detect that case with [`Polyline::is_degenerate`].
pub fn polyline_resample(path: &Polyline, n_samples: usize) -> Result<Polyline, GraphError> {
    if n_samples < 2 {
        return Err(GraphError::TooFewSamples(n_samples));
    }
    let cum = path.cumulative_lengths();
    let total = *cum.last().expect("polyline has at least one point");
    if total <= 0.0 {
        return Ok(Polyline::new(vec![path.first(); n_samples]));
    }
    let snap = 1e-12 * total;
    let mut out = Vec::with_capacity(n_samples);
    out.push(path.first());
    let mut seg = 0usize;
    for k in 1..n_samples - 1 {
        let target = total * (k as f64) / ((n_samples - 1) as f64);
        while seg + 2 < cum.len() && cum[seg + 1] < target {
            seg += 1;
        }
        // Take the vertex exactly when the target lands on it, so that
        // resampling an already-uniform polyline is the identity.
        let p = if (target - cum[seg]).abs() <= snap {
            path.points[seg]
        } else if (target - cum[seg + 1]).abs() <= snap {
            path.points[seg + 1]
        } else {
            let seg_len = cum[seg + 1] - cum[seg];
            let t = (target - cum[seg]) / seg_len;
            path.points[seg] + (path.points[seg + 1] - path.points[seg]) * t
        };
        out.push(p);
    }
    out.push(path.last());
    Ok(Polyline::new(out))
}

/// Graph node: spatial location plus the derived geodesic degree.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: usize,
    pub coord: Point3<f64>,
    /// Mean energy of incident edges; 0 for isolated nodes. Derived, never
    /// an input.
    pub degree_geo: f64,
    /// Optional anatomical landmark name, used only for evaluation.
    pub label: Option<String>,
}

impl Node {
    pub fn new(id: usize, coord: Point3<f64>) -> Self {
        Self {
            id,
            coord,
            degree_geo: 0.0,
            label: None,
        }
    }

    pub fn with_label(id: usize, coord: Point3<f64>, label: impl Into<String>) -> Self {
        Self {
            id,
            coord,
            degree_geo: 0.0,
            label: Some(label.into()),
        }
    }
}

/// Undirected edge with the sampled path between its endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub path: Polyline,
    /// Euclidean length: the polyline sum.
    pub length: f64,
    /// Integral energy accumulated along the path.
    pub energy: f64,
}

impl Edge {
    pub fn new(a: usize, b: usize, path: Polyline, energy: f64) -> Self {
        let length = path.total_length();
        Self {
            a,
            b,
            path,
            length,
            energy,
        }
    }

    /// Endpoints as an ordered (min, max) pair.
    pub fn key(&self) -> (usize, usize) {
        if self.a <= self.b {
            (self.a, self.b)
        } else {
            (self.b, self.a)
        }
    }

    /// The endpoint that is not `node`; `None` if `node` is not incident.
    pub fn other(&self, node: usize) -> Option<usize> {
        if self.a == node {
            Some(self.b)
        } else if self.b == node {
            Some(self.a)
        } else {
            None
        }
    }

    pub fn weight(&self, w: EdgeWeight) -> f64 {
        match w {
            EdgeWeight::Length => self.length,
            EdgeWeight::Energy => self.energy,
        }
    }
}

/// Geometry bundle a path provider returns for a node pair; the caller
/// fills in the endpoint indices.
#[derive(Debug, Clone)]
pub struct EdgeGeometry {
    pub path: Polyline,
    pub energy: f64,
}

/// A node pair skipped by [`over_connect`] because its path provider failed.
#[derive(Debug, Clone)]
pub struct SkippedPair {
    pub a: usize,
    pub b: usize,
    pub reason: String,
}

/// Output of [`over_connect`]: the graph plus any pairs that could not be
/// routed.
#[derive(Debug, Clone)]
pub struct OverConnected {
    pub graph: SpatialGraph,
    pub skipped: Vec<SkippedPair>,
}

/// Output of [`minimum_spanning_tree`]; `components > 1` means the input
/// was disconnected and the result is a spanning forest.
#[derive(Debug, Clone)]
pub struct SpanningForest {
    pub graph: SpatialGraph,
    pub components: usize,
}

/// Undirected attributed spatial graph.
///
/// Construction validates every structural invariant and derives node
/// degrees; operations return new graphs rather than mutating in place.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

impl SpatialGraph {
    /// Validates the node/edge sets and derives geodesic degrees.
    pub fn new(nodes: Vec<Node>, edges: Vec<Edge>) -> Result<Self, GraphError> {
        let n = nodes.len();
        for (pos, node) in nodes.iter().enumerate() {
            if node.id != pos {
                return Err(GraphError::NodeIdMismatch {
                    position: pos,
                    id: node.id,
                });
            }
            if !node.coord.iter().all(|c| c.is_finite()) {
                return Err(GraphError::NonFiniteCoordinate(pos));
            }
        }
        let tau = endpoint_tolerance(&nodes);
        let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
        for (idx, edge) in edges.iter().enumerate() {
            if edge.a >= n {
                return Err(GraphError::DanglingEndpoint(idx, edge.a, edge.a));
            }
            if edge.b >= n {
                return Err(GraphError::DanglingEndpoint(idx, edge.b, edge.b));
            }
            if edge.a == edge.b {
                return Err(GraphError::SelfLoop(idx, edge.a));
            }
            if seen.insert(edge.key(), idx).is_some() {
                let (a, b) = edge.key();
                return Err(GraphError::DuplicateEdge(a, b));
            }
            if edge.path.len() < 2 {
                return Err(GraphError::PathTooShort(idx, edge.path.len()));
            }
            for (k, w) in edge.path.points().windows(2).enumerate() {
                if w[0] == w[1] {
                    return Err(GraphError::RepeatedPathPoint(idx, k, k + 1));
                }
            }
            // accept the path in either orientation
            let fwd_a = (edge.path.first() - nodes[edge.a].coord).norm();
            let fwd_b = (edge.path.last() - nodes[edge.b].coord).norm();
            let rev_a = (edge.path.last() - nodes[edge.a].coord).norm();
            let rev_b = (edge.path.first() - nodes[edge.b].coord).norm();
            let (da, db) = if fwd_a + fwd_b <= rev_a + rev_b {
                (fwd_a, fwd_b)
            } else {
                (rev_a, rev_b)
            };
            if da > tau {
                return Err(GraphError::EndpointMismatch(idx, edge.a, da));
            }
            if db > tau {
                return Err(GraphError::EndpointMismatch(idx, edge.b, db));
            }
            let sum = edge.path.total_length();
            if (edge.length - sum).abs() > LENGTH_REL_TOL * sum.max(1.0) {
                return Err(GraphError::LengthMismatch(idx, edge.length, sum));
            }
            if edge.energy < 0.0 {
                return Err(GraphError::NegativeEnergy(idx, edge.energy));
            }
        }
        let mut graph = Self { nodes, edges };
        graph.derive_degrees();
        Ok(graph)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Per-node list of incident edge indices.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for (idx, e) in self.edges.iter().enumerate() {
            adj[e.a].push(idx);
            adj[e.b].push(idx);
        }
        adj
    }

    /// The edge joining `a` and `b` in either endpoint order.
    pub fn edge_between(&self, a: usize, b: usize) -> Option<&Edge> {
        let key = if a <= b { (a, b) } else { (b, a) };
        self.edges.iter().find(|e| e.key() == key)
    }

    /// Bounding box of the node coordinates.
    pub fn node_bbox(&self) -> Option<Aabb> {
        Aabb::from_points(self.nodes.iter().map(|n| &n.coord))
    }

    /// Bounding box of all geometry (nodes and path samples).
    pub fn full_bbox(&self) -> Option<Aabb> {
        let node_pts = self.nodes.iter().map(|n| &n.coord);
        let path_pts = self.edges.iter().flat_map(|e| e.path.points().iter());
        Aabb::from_points(node_pts.chain(path_pts))
    }

    /// True when every node is reachable from node 0 (trivially true for
    /// empty graphs).
    pub fn is_connected(&self) -> bool {
        if self.nodes.len() <= 1 {
            return true;
        }
        let adj = self.adjacency();
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(n) = stack.pop() {
            for &e in &adj[n] {
                let other = self.edges[e].other(n).unwrap();
                if !seen[other] {
                    seen[other] = true;
                    count += 1;
                    stack.push(other);
                }
            }
        }
        count == self.nodes.len()
    }

    fn derive_degrees(&mut self) {
        let mut sums = vec![0.0f64; self.nodes.len()];
        let mut counts = vec![0usize; self.nodes.len()];
        for e in &self.edges {
            sums[e.a] += e.energy;
            counts[e.a] += 1;
            sums[e.b] += e.energy;
            counts[e.b] += 1;
        }
        for (node, (s, c)) in self.nodes.iter_mut().zip(sums.into_iter().zip(counts)) {
            node.degree_geo = if c == 0 { 0.0 } else { s / c as f64 };
        }
    }
}

fn endpoint_tolerance(nodes: &[Node]) -> f64 {
    let diag = Aabb::from_points(nodes.iter().map(|n| &n.coord))
        .map(|bb| bb.diagonal())
        .unwrap_or(0.0);
    (ENDPOINT_TOL_FACTOR * diag).max(1e-12)
}

/// Mean energy of the edges incident to `node`; 0 for isolated nodes.
pub fn geodesic_degree(graph: &SpatialGraph, node: usize) -> Result<f64, GraphError> {
    if node >= graph.nodes.len() {
        return Err(GraphError::NodeIndexOutOfRange(node, graph.nodes.len()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for e in &graph.edges {
        if e.a == node || e.b == node {
            sum += e.energy;
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Returns a copy of `graph` with every node's geodesic degree rederived
/// from the current edge set.
pub fn recompute_degrees(graph: &SpatialGraph) -> SpatialGraph {
    let mut out = graph.clone();
    out.derive_degrees();
    out
}

/// Connects every unordered node pair within euclidean distance `radius`
/// using the paths supplied by `path_provider`. Pairs whose provider fails
/// are skipped and reported in the result. Pass `f64::INFINITY` for a
/// complete graph.
pub fn over_connect<F>(
    nodes: Vec<Node>,
    mut path_provider: F,
    radius: f64,
) -> Result<OverConnected, GraphError>
where
    F: FnMut(&Node, &Node) -> Result<EdgeGeometry, String>,
{
    let mut edges = Vec::new();
    let mut skipped = Vec::new();
    for a in 0..nodes.len() {
        for b in (a + 1)..nodes.len() {
            let dist = (nodes[b].coord - nodes[a].coord).norm();
            if dist > radius {
                continue;
            }
            match path_provider(&nodes[a], &nodes[b]) {
                Ok(geom) => {
                    let energy = geom.energy;
                    edges.push(Edge::new(a, b, geom.path, energy));
                }
                Err(reason) => skipped.push(SkippedPair { a, b, reason }),
            }
        }
    }
    let graph = SpatialGraph::new(nodes, edges)?;
    Ok(OverConnected { graph, skipped })
}

/// Kruskal minimum spanning tree (or forest, when disconnected) over the
/// selected edge attribute. Edge attributes are carried over unchanged.
pub fn minimum_spanning_tree(graph: &SpatialGraph, weight: EdgeWeight) -> SpanningForest {
    let n = graph.nodes.len();
    let mut order: Vec<usize> = (0..graph.edges.len()).collect();
    order.sort_by(|&x, &y| {
        graph.edges[x]
            .weight(weight)
            .partial_cmp(&graph.edges[y].weight(weight))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.cmp(&y))
    });
    let mut dsu = DisjointSet::new(n);
    let mut kept = Vec::new();
    for idx in order {
        let e = &graph.edges[idx];
        if dsu.union(e.a, e.b) {
            kept.push(idx);
        }
    }
    kept.sort_unstable();
    let edges = kept.iter().map(|&i| graph.edges[i].clone()).collect();
    let tree = SpatialGraph::new(graph.nodes.clone(), edges)
        .expect("subset of a valid graph remains valid");
    let components = if n == 0 { 0 } else { dsu.component_count() };
    SpanningForest {
        graph: tree,
        components,
    }
}

/// Union-find over node indices.
#[derive(Debug, Clone)]
pub struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
    components: usize,
}

impl DisjointSet {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
            components: n,
        }
    }

    pub fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }

    /// Merges the sets of `a` and `b`; false if already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        self.components -= 1;
        true
    }

    pub fn component_count(&self) -> usize {
        self.components
    }
}
