//! Order-preserving embeddings for hierarchical classification.
//!
//! Label hierarchies are embedded as order embeddings, Euclidean entailment
//! cones or hyperbolic entailment cones; instances are mapped into the same
//! space by a learnable linear map and classified per level by minimum
//! order-violation energy. Five hierarchy-aware classifier heads over
//! feature vectors are provided for comparison.

pub mod embed;
mod engine;
pub mod error;
pub mod export;
pub mod geometry;
pub mod heads;
pub mod hierarchy;
pub mod io;
pub mod joint;
pub mod metrics;
pub mod optim;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{ConeParams, Geometry};
pub use hierarchy::{Edge, EdgeSet, Hierarchy, Node, SplitResult};

/// Deterministic RNG used by every sampler and trainer.
pub type SeededRng = rand_chacha::ChaCha8Rng;
