//! Riemannian optimization for low-Tucker-rank tensor-on-tensor regression.
//!
//! Mode indices are 0-based throughout. Tensors use first-mode-fastest
//! storage, so the mode-0 unfolding is the flat buffer itself.

pub mod error;
pub mod init;
pub mod ldp;
pub mod linalg;
pub mod manifold;
pub mod random;
pub mod regression;
pub mod solvers;
pub mod tensor;
pub mod tucker;

pub use error::{Error, Result};
pub use manifold::{Gauge, TangentVector};
pub use regression::{DesignKind, LinearDesign, ProblemInstance};
pub use solvers::{Algorithm, RunTrace, SolverConfig, Termination};
pub use tensor::{DenseTensor, Matrix};
pub use tucker::{RetractionMethod, TuckerTensor};
