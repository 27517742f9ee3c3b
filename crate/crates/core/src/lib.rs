//! Registration toolkit for attributed spatial graphs.
//!
//! The pipeline: model vessels as over-connected geodesic graphs with
//! per-edge path geometry, pre-align a pair rigidly from their dense point
//! clouds, build node/edge affinities from geometric and geodesic
//! features, solve the resulting quadratic assignment problem with a suite
//! of graph-matching algorithms, and evaluate accuracy on a synthetic
//! perturbation benchmark with paired statistics.

pub mod affinity;
pub mod geom;
pub mod graph;
pub mod rigid;
pub mod synth;

pub use geom::Aabb;
pub use graph::{Edge, Node, Polyline, SpatialGraph};
