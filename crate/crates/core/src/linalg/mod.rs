//! Dense matrices and the deterministic factorizations the randomized
//! algorithms are built from.

mod cholesky;
mod matrix;
mod qr;
mod svd;

pub use cholesky::{cholesky, solve_upper_right};
pub use matrix::{frobenius_norm, matmul, matmul_nt, matmul_tn, Matrix};
pub use qr::{orthonormalize, qr_householder, qrcp, QrcpResult};
pub use svd::svd_small;
