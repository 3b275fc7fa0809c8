use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_tn, orthonormalize, svd_small, Matrix};
use crate::sketch::{SketchDist, SketchOp};

pub const DEFAULT_OVERSAMPLE: usize = 8;
pub const DEFAULT_POWER_ITERS: usize = 1;

/// Rank-`k` factors `a ≈ u · diag(s) · vᵀ`.
#[derive(Clone, Debug)]
pub struct RsvdResult {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl RsvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let us = Matrix::from_fn(self.u.rows(), self.s.len(), |i, j| self.u[(i, j)] * self.s[j]);
        crate::linalg::matmul_nt(&us, &self.v).expect("factor shapes agree")
    }
}

/// Randomized SVD with a Gaussian range sketch.
///
/// Sketches `k + oversample` columns of the range of `a`, sharpens them
/// with `power_iters` rounds of re-orthonormalized subspace iteration,
/// projects `a` onto the captured basis and finishes with a dense SVD of
/// the small projected matrix.
pub fn rsvd(
    a: &Matrix,
    k: usize,
    oversample: usize,
    power_iters: usize,
    seed: u64,
) -> Result<RsvdResult> {
    let (m, n) = a.shape();
    let width = k + oversample;
    if k == 0 || width > m.min(n) {
        return Err(Error::Parameter(format!(
            "rsvd needs 1 <= k and k + oversample <= min(m, n); got k={k}, oversample={oversample} for {m}x{n}"
        )));
    }

    let omega = SketchOp::new(SketchDist::Gaussian, width, n, seed)?;
    let mut y = omega.apply_right_transposed(a)?;
    for _ in 0..power_iters {
        let q = orthonormalize(&y)?;
        let z = orthonormalize(&matmul_tn(a, &q)?)?;
        y = matmul(a, &z)?;
    }
    let q = orthonormalize(&y)?;
    let b = matmul_tn(&q, a)?;
    let (u_small, s, v) = svd_small(&b);

    let u = matmul(&q, &u_small.submatrix(0, 0, width, k))?;
    Ok(RsvdResult {
        u,
        s: s[..k].to_vec(),
        v: v.submatrix(0, 0, n, k),
    })
}
