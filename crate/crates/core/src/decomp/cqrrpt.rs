use crate::error::{Error, Result};
use crate::linalg::{cholesky, matmul, matmul_tn, qrcp, solve_upper_right, Matrix};
use crate::rng::derive_seed;
use crate::sketch::{SketchDist, SketchOp};

pub const DEFAULT_GAMMA: f64 = 4.0;

/// Pivoted QR `a[:, pivots] ≈ q · r_mat` of a tall matrix.
#[derive(Clone, Debug)]
pub struct CqrrptResult {
    /// `m × rank`, orthonormal columns.
    pub q: Matrix,
    /// `rank × n`, upper trapezoidal.
    pub r_mat: Matrix,
    pub pivots: Vec<usize>,
    pub rank: usize,
    /// Oversampling ratio actually used for the sketch (`d = ⌈γ·n⌉`).
    pub gamma: f64,
}

/// The sketch-space half of CQRRPT: pivots, rank and the preconditioned
/// matrix `a_pre = a[:, pivots[..rank]] · R_sk⁻¹`.
#[derive(Clone, Debug)]
pub struct Preconditioned {
    pub a_pre: Matrix,
    /// `rank × n` triangular factor of the sketched matrix.
    pub r_sketch: Matrix,
    pub pivots: Vec<usize>,
    pub rank: usize,
    pub sketch_rows: usize,
}

fn sketch_rows(gamma: f64, n: usize) -> usize {
    (gamma * n as f64).ceil() as usize
}

/// Sketches `a` with a sparse sign operator, runs pivoted QR on the sketch
/// and applies the resulting triangular factor as a right preconditioner.
pub fn sketch_precondition(
    a: &Matrix,
    gamma: f64,
    rank_tol: f64,
    seed: u64,
) -> Result<Preconditioned> {
    let (m, n) = a.shape();
    if !(gamma > 1.0) {
        return Err(Error::Parameter(format!("gamma must exceed 1, got {gamma}")));
    }
    let d = sketch_rows(gamma, n);
    if n == 0 || d > m {
        return Err(Error::Parameter(format!(
            "cqrrpt needs a tall matrix with m >= ceil(gamma*n) = {d}; got {m}x{n}"
        )));
    }
    let s = SketchOp::new(SketchDist::sparse_sign_for(d), d, m, seed)?;
    let sketched = s.apply_left(a)?;
    let pivoted = qrcp(&sketched, rank_tol)?;
    let rank = pivoted.rank;

    let lead = pivoted.r_mat.submatrix(0, 0, rank, rank);
    let a_lead = a.select_cols(&pivoted.pivots[..rank]);
    let a_pre = solve_upper_right(&a_lead, &lead)?;
    Ok(Preconditioned {
        a_pre,
        r_sketch: pivoted.r_mat,
        pivots: pivoted.pivots,
        rank,
        sketch_rows: d,
    })
}

fn attempt(a: &Matrix, gamma: f64, rank_tol: f64, seed: u64) -> Result<CqrrptResult> {
    let pre = sketch_precondition(a, gamma, rank_tol, seed)?;
    let m = a.rows();
    if pre.rank == 0 {
        return Ok(CqrrptResult {
            q: Matrix::zeros(m, 0),
            r_mat: Matrix::zeros(0, a.cols()),
            pivots: pre.pivots,
            rank: 0,
            gamma,
        });
    }
    let gram = matmul_tn(&pre.a_pre, &pre.a_pre)?;
    let r_chol = cholesky(&gram)?;
    let q = solve_upper_right(&pre.a_pre, &r_chol)?;
    let r_mat = matmul(&r_chol, &pre.r_sketch)?;
    Ok(CqrrptResult {
        q,
        r_mat,
        pivots: pre.pivots,
        rank: pre.rank,
        gamma,
    })
}

/// CholeskyQR with randomized pivoting for tall matrices.
///
/// If the Cholesky factorization of the preconditioned Gram matrix breaks
/// down, the whole procedure is retried once with `gamma` doubled (capped
/// at `m / n`) and a fresh seed.
pub fn cqrrpt(a: &Matrix, gamma: f64, rank_tol: f64, seed: u64) -> Result<CqrrptResult> {
    match attempt(a, gamma, rank_tol, seed) {
        Err(Error::NotPositiveDefinite { .. }) => {
            let (m, n) = a.shape();
            let retry_gamma = (2.0 * gamma).min(m as f64 / n as f64);
            let retry_gamma = if retry_gamma > 1.0 { retry_gamma } else { gamma };
            match attempt(a, retry_gamma, rank_tol, derive_seed(seed, 1)) {
                Err(Error::NotPositiveDefinite { index, .. }) => {
                    let rank = sketch_precondition(a, retry_gamma, rank_tol, derive_seed(seed, 1))
                        .map(|p| p.rank)
                        .unwrap_or(index);
                    Err(Error::Decomposition {
                        rank,
                        reason: "preconditioned Gram matrix is not positive definite".into(),
                    })
                }
                other => other,
            }
        }
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{qr_householder, svd_small};
    use crate::rng::SeededRng;

    fn orth_residual(q: &Matrix) -> f64 {
        matmul_tn(q, q).unwrap().sub(&Matrix::identity(q.cols())).unwrap().frobenius_norm()
    }

    fn recon_residual(a: &Matrix, res: &CqrrptResult) -> f64 {
        let ap = a.select_cols(&res.pivots);
        matmul(&res.q, &res.r_mat).unwrap().sub(&ap).unwrap().frobenius_norm()
    }

    #[test]
    fn orthonormal_input() {
        let a = Matrix::identity(64).submatrix(0, 0, 64, 4);
        let res = cqrrpt(&a, 4.0, 1e-10, 5).unwrap();
        assert_eq!(res.rank, 4);
        for j in 0..4 {
            assert!((res.r_mat[(j, j)].abs() - 1.0).abs() < 1e-12);
            let col = res.q.col(j);
            let target = res.pivots[j];
            for (i, &x) in col.iter().enumerate() {
                let want = if i == target { 1.0 } else { 0.0 };
                assert!((x.abs() - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn random_full_rank_matches_householder() {
        let mut rng = SeededRng::new(17);
        let a = Matrix::random_normal(200, 10, &mut rng);
        let res = cqrrpt(&a, 4.0, 1e-12, 3).unwrap();
        assert_eq!(res.rank, 10);
        assert!(orth_residual(&res.q) <= 1e-8);
        assert!(recon_residual(&a, &res) <= 1e-8 * a.frobenius_norm());

        // Oracle: Householder QR of the same column permutation.
        let (q_ref, r_ref) = qr_householder(&a.select_cols(&res.pivots)).unwrap();
        for j in 0..10 {
            let sign = if res.r_mat[(j, j)] * r_ref[(j, j)] < 0.0 { -1.0 } else { 1.0 };
            for i in 0..200 {
                assert!((res.q[(i, j)] - sign * q_ref[(i, j)]).abs() <= 1e-6);
            }
            for k in j..10 {
                let scale = r_ref.frobenius_norm();
                assert!((res.r_mat[(j, k)] - sign * r_ref[(j, k)]).abs() <= 1e-6 * scale);
            }
        }
    }

    #[test]
    fn duplicate_column_rank_deficient() {
        let mut rng = SeededRng::new(23);
        let mut a = Matrix::random_normal(200, 6, &mut rng);
        let dup = a.col(2);
        a.set_col(5, &dup);
        let (_, s, _) = svd_small(&a);
        let oracle_rank = s.iter().filter(|&&x| x > 1e-8 * s[0]).count();
        assert_eq!(oracle_rank, 5);

        let res = cqrrpt(&a, 4.0, 1e-8, 9).unwrap();
        assert_eq!(res.rank, 5);
        assert!(orth_residual(&res.q) <= 1e-8);
        assert!(recon_residual(&a, &res) <= 1e-8 * a.frobenius_norm());
    }

    #[test]
    fn preconditioned_matrix_is_well_conditioned() {
        for seed in 0..5 {
            let mut rng = SeededRng::new(100 + seed);
            // Badly scaled columns: condition number around 1e5.
            let a = Matrix::from_fn(400, 12, |_, j| rng.normal() * 10f64.powi(j as i32 / 3 + (j as i32 % 3)));
            let pre = sketch_precondition(&a, 4.0, 1e-12, seed).unwrap();
            let (_, s, _) = svd_small(&pre.a_pre);
            let cond = s[0] / s[s.len() - 1];
            let bound = 10.0 * (1.0 + 400.0 / pre.sketch_rows as f64).sqrt();
            assert!(cond <= bound, "cond {cond} > {bound}");
        }
    }

    #[test]
    fn wide_or_bad_gamma_rejected() {
        let a = Matrix::zeros(10, 8);
        assert!(matches!(cqrrpt(&a, 4.0, 1e-8, 0), Err(Error::Parameter(_))));
        let a = Matrix::zeros(100, 8);
        assert!(matches!(cqrrpt(&a, 1.0, 1e-8, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn zero_matrix_has_rank_zero() {
        let res = cqrrpt(&Matrix::zeros(50, 5), 4.0, 1e-8, 0).unwrap();
        assert_eq!(res.rank, 0);
    }

    #[test]
    fn deterministic() {
        let mut rng = SeededRng::new(4);
        let a = Matrix::random_normal(120, 8, &mut rng);
        let r1 = cqrrpt(&a, 4.0, 1e-12, 77).unwrap();
        let r2 = cqrrpt(&a, 4.0, 1e-12, 77).unwrap();
        assert_eq!(r1.q, r2.q);
        assert_eq!(r1.r_mat, r2.r_mat);
        assert_eq!(r1.pivots, r2.pivots);
    }
}
