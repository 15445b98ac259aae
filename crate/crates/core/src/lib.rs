//! Two-stage differentiable architecture search for graph neural networks.
//!
//! Stage one searches candidate cells on sampled subgraphs and keeps the one
//! whose performance ranking across architectures agrees best with the full
//! graph (weighted Kendall correlation). Stage two grows that seed cell by
//! repeatedly splitting the intermediate node with the highest operation
//! entropy and re-searching only the affected edges under an entropy
//! regularizer.
//!
//! The numeric core is generic over a [`scalar::Scalar`]; the aliases below
//! pin the f64 instantiations the pipeline and CLI work with.

pub mod autodiff;
pub mod dense;
pub mod config;
pub mod error;
pub mod expansion;
pub mod gnnops;
pub mod graph;
pub mod io;
pub mod pipeline;
pub mod sampler;
pub mod sbm;
pub mod scalar;
pub mod search;
pub mod seedselect;
pub mod seeding;
pub mod sparse;
pub mod supernet;

pub use error::{Error, Result};

pub type Mat64 = dense::Mat<f64>;
pub type Csr64 = sparse::Csr<f64>;
pub type Graph64 = graph::Graph<f64>;
pub type Subgraph64 = graph::Subgraph<f64>;
pub type NormalizedAdjacency64 = graph::NormalizedAdjacency<f64>;
