//! Domain adaptation via graph embedding.
//!
//! Two-domain batches are described by an intrinsic graph (edges between
//! same-class samples of different domains) and a penalty graph (edges
//! between different-class samples of different domains). A network is
//! trained so that the trace ratio of the two graph Laplacians over its
//! embeddings is small, jointly with cross-entropy on both domains.
//!
//! * [`graph`]: weight matrices, degrees and Laplacians
//! * [`losses`]: trace-ratio loss and gradient, CSA, d-SNE, cross-entropy
//! * [`spectral`]: generalized-eigenvalue solution of the linear problem
//! * [`nn`]: Siamese feature extractor and classifier with SGD
//! * [`data`]: IDX files, synthetic domain shift, sampling and pairing
//! * [`experiment`]: training runs, evaluation, oracles and random search

pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod graph;
pub mod linalg;
pub mod losses;
pub mod nn;
pub mod spectral;

pub use error::{Error, Result};
pub use graph::{BatchMeta, DomainTag, LaplacianMatrix, WeightMatrix};
pub use losses::{LossValue, LossWeights};
pub use nn::{NetworkSpec, NetworkState, OptimizerConfig};
