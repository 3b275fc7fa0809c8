//! Randomized numerical linear algebra for neural-network layers.
//!
//! The crate provides sketched drop-in replacements for dense linear,
//! convolution and attention layers, randomized matrix decompositions
//! (randomized SVD and CholeskyQR with randomized pivoting), and a tuner
//! that searches sketching hyperparameters under an accuracy constraint.

pub mod decomp;
pub mod error;
pub mod linalg;
pub mod nn;
pub mod rng;
pub mod sketch;
pub mod tuner;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use sketch::{SketchDist, SketchOp};
