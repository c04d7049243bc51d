//! Multi-facet path representation learning for heterogeneous graphs.
//!
//! The crate is `no_std` and only needs `alloc`. It covers the whole learning
//! pipeline:
//!
//! - [`hetgraph`]: typed graph with a symmetric CSR adjacency, synthetic
//!   planted-facet generator and seeded splits.
//! - [`walker`]: random walks between target-type endpoints and the
//!   homogeneous facet subgraph built from them.
//! - [`numerics`]: dense tensors, a reverse-mode tape and the layer
//!   primitives (ELU, batch norm, dropout, Gumbel-Softmax, Adam).
//! - [`model`]: warm-up, facet projection, path aggregation, facet weighting
//!   and the edge-featured convolution stack.
//! - [`training`]: losses, negative sampling, early-stopped training and the
//!   multi-seed protocol.
//! - [`eval`]: F1, AUC, NMI, ARI and k-means.
//!
//! File formats, the CLI and everything touching threads or clocks live in the
//! `facetpath` companion crate.

#![no_std]

extern crate alloc;

pub mod error;
pub mod eval;
pub mod hetgraph;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod stats;
pub mod training;
pub mod walker;

pub use error::{Error, Result};
pub use hetgraph::{HeteroGraph, SplitAssignment, SyntheticSpec};
pub use model::{EdgeWeightMode, HyperParams, ModelParams};
pub use training::{MetricsReport, Task, TrainConfig, TrainTrace};
pub use walker::{FacetSubgraph, PathRecord, WalkConfig};
