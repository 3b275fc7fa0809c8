use crate::error::{shape_err, Result};
use crate::linalg::matrix::{dot, Matrix};

/// Pivoted QR factors: `a[:, pivots] ≈ q · r_mat` with `q` holding `rank`
/// orthonormal columns.
#[derive(Clone, Debug)]
pub struct QrcpResult {
    pub q: Matrix,
    /// `rank × n`, upper trapezoidal, columns in pivoted order.
    pub r_mat: Matrix,
    pub pivots: Vec<usize>,
    pub rank: usize,
}

/// One Householder reflector `I − tau·v·vᵀ` acting on rows `start..`.
struct Reflector {
    start: usize,
    v: Vec<f64>,
    tau: f64,
}

impl Reflector {
    /// Reflector mapping `x` onto `alpha·e₀`; returns it with `alpha`.
    fn annihilate(start: usize, x: &[f64]) -> (Self, f64) {
        let norm = dot(x, x).sqrt();
        if norm == 0.0 {
            let r = Self {
                start,
                v: vec![0.0; x.len()],
                tau: 0.0,
            };
            return (r, 0.0);
        }
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        let mut v = x.to_vec();
        v[0] -= alpha;
        let vtv = dot(&v, &v);
        let tau = if vtv == 0.0 { 0.0 } else { 2.0 / vtv };
        (Self { start, v, tau }, alpha)
    }

    #[inline]
    fn apply(&self, col: &mut [f64]) {
        if self.tau == 0.0 {
            return;
        }
        let tail = &mut col[self.start..];
        let s = self.tau * dot(&self.v, tail);
        for (c, v) in tail.iter_mut().zip(&self.v) {
            *c -= s * v;
        }
    }
}

fn columns_of(a: &Matrix) -> Vec<Vec<f64>> {
    (0..a.cols()).map(|j| a.col(j)).collect()
}

/// Thin `m × k` factor `H₀·H₁···H_{k−1}·[e₀ … e_{k−1}]`.
fn form_q(m: usize, k: usize, reflectors: &[Reflector]) -> Vec<Vec<f64>> {
    (0..k)
        .map(|j| {
            let mut col = vec![0.0; m];
            col[j] = 1.0;
            for r in reflectors.iter().rev() {
                r.apply(&mut col);
            }
            col
        })
        .collect()
}

fn from_columns(m: usize, cols: &[Vec<f64>]) -> Matrix {
    Matrix::from_fn(m, cols.len(), |i, j| cols[j][i])
}

/// Thin Householder QR of a tall matrix (`m ≥ n`).
///
/// Returns `q` (`m × n`, orthonormal columns) and `r` (`n × n`, upper
/// triangular with a non-negative diagonal). Zero columns produce zero
/// diagonal entries and the corresponding column of `q` is still unit norm.
pub fn qr_householder(a: &Matrix) -> Result<(Matrix, Matrix)> {
    let (m, n) = a.shape();
    if m < n {
        return shape_err(format!("qr_householder needs m >= n, got {m}x{n}"));
    }
    let mut cols = columns_of(a);
    let mut reflectors = Vec::with_capacity(n);
    let mut r = Matrix::zeros(n, n);
    for j in 0..n {
        let (h, alpha) = Reflector::annihilate(j, &cols[j][j..]);
        for col in cols.iter_mut().skip(j + 1) {
            h.apply(col);
        }
        r[(j, j)] = alpha;
        for (k, col) in cols.iter().enumerate().skip(j + 1) {
            r[(j, k)] = col[j];
        }
        reflectors.push(h);
    }
    let mut q_cols = form_q(m, n, &reflectors);
    for (j, q_col) in q_cols.iter_mut().enumerate() {
        if r[(j, j)] < 0.0 {
            q_col.iter_mut().for_each(|x| *x = -*x);
            r.row_mut(j).iter_mut().for_each(|x| *x = -*x);
        }
    }
    Ok((from_columns(m, &q_cols), r))
}

/// Orthonormal basis for the range of a tall matrix (the `q` of its QR).
pub fn orthonormalize(a: &Matrix) -> Result<Matrix> {
    qr_householder(a).map(|(q, _)| q)
}

/// Householder QR with greedy column pivoting.
///
/// At each step the column with the largest residual norm is moved to the
/// front. Residual norms are downdated after each reflection and
/// recomputed from scratch once they drop below a tenth of the value they
/// were last computed at. The detected rank is the number of leading
/// diagonal entries with `|r_ii| > rank_tol · |r_00|`.
pub fn qrcp(a: &Matrix, rank_tol: f64) -> Result<QrcpResult> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return shape_err(format!("qrcp on empty {m}x{n} matrix"));
    }
    let steps = m.min(n);
    let mut cols = columns_of(a);
    let mut pivots: Vec<usize> = (0..n).collect();
    let mut norms: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut reference = norms.clone();
    let mut reflectors = Vec::with_capacity(steps);
    let mut diag = Vec::with_capacity(steps);

    for i in 0..steps {
        let mut p = i;
        for j in i + 1..n {
            if norms[j] > norms[p] {
                p = j;
            }
        }
        if p != i {
            cols.swap(i, p);
            pivots.swap(i, p);
            norms.swap(i, p);
            reference.swap(i, p);
        }
        let (h, alpha) = Reflector::annihilate(i, &cols[i][i..]);
        for col in cols.iter_mut().skip(i + 1) {
            h.apply(col);
        }
        cols[i][i] = alpha;
        for x in cols[i][i + 1..].iter_mut() {
            *x = 0.0;
        }
        diag.push(alpha);
        reflectors.push(h);

        for j in i + 1..n {
            if norms[j] == 0.0 {
                continue;
            }
            let t = cols[j][i] / norms[j];
            let downdated = norms[j] * (1.0 - t * t).max(0.0).sqrt();
            if downdated < 0.1 * reference[j] {
                let tail = &cols[j][i + 1..];
                norms[j] = dot(tail, tail).sqrt();
                reference[j] = norms[j];
            } else {
                norms[j] = downdated;
            }
        }
    }

    let lead = diag[0].abs();
    let rank = if lead == 0.0 {
        0
    } else {
        diag.iter()
            .take_while(|d| d.abs() > rank_tol * lead)
            .count()
    };

    let mut r_mat = Matrix::from_fn(rank, n, |i, j| if j < i { 0.0 } else { cols[j][i] });
    let mut q_cols = form_q(m, rank, &reflectors[..rank]);
    for (i, q_col) in q_cols.iter_mut().enumerate() {
        if r_mat[(i, i)] < 0.0 {
            q_col.iter_mut().for_each(|x| *x = -*x);
            r_mat.row_mut(i).iter_mut().for_each(|x| *x = -*x);
        }
    }

    Ok(QrcpResult {
        q: from_columns(m, &q_cols),
        r_mat,
        pivots,
        rank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::matrix::{matmul, matmul_tn};
    use crate::linalg::svd::svd_small;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    fn orth_residual(q: &Matrix) -> f64 {
        matmul_tn(q, q)
            .unwrap()
            .sub(&Matrix::identity(q.cols()))
            .unwrap()
            .frobenius_norm()
    }

    #[test]
    fn identity_factors_to_identity() {
        let (q, r) = qr_householder(&Matrix::identity(4)).unwrap();
        assert!(q.sub(&Matrix::identity(4)).unwrap().max_abs() < 1e-15);
        assert!(r.sub(&Matrix::identity(4)).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn three_four_column() {
        let a = Matrix::from_rows(&[[3.0], [4.0]]).unwrap();
        let (q, r) = qr_householder(&a).unwrap();
        assert!((q[(0, 0)] - 0.6).abs() < 1e-15);
        assert!((q[(1, 0)] - 0.8).abs() < 1e-15);
        assert!((r[(0, 0)] - 5.0).abs() < 1e-14);
    }

    #[test]
    fn random_tall_is_orthonormal() {
        let mut rng = SeededRng::new(11);
        let a = Matrix::random_normal(50, 10, &mut rng);
        let (q, r) = qr_householder(&a).unwrap();
        assert!(orth_residual(&q) <= 1e-12);
        let recon = matmul(&q, &r).unwrap();
        assert!(recon.sub(&a).unwrap().frobenius_norm() <= 1e-12 * a.frobenius_norm());
        for i in 0..10 {
            assert!(r[(i, i)] >= 0.0);
            for j in 0..i {
                assert_eq!(r[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn zero_column_gives_zero_diagonal() {
        let mut a = Matrix::from_fn(6, 3, |i, j| (i + j) as f64 + 1.0);
        a.set_col(1, &[0.0; 6]);
        let (q, r) = qr_householder(&a).unwrap();
        assert_eq!(r[(1, 1)], 0.0);
        assert!(orth_residual(&q) < 1e-12);
        assert!(matmul(&q, &r).unwrap().sub(&a).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn wide_input_rejected() {
        assert!(qr_householder(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn qrcp_identity_full_rank() {
        let res = qrcp(&Matrix::identity(3), 1e-12).unwrap();
        assert_eq!(res.rank, 3);
        let mut p = res.pivots.clone();
        p.sort_unstable();
        assert_eq!(p, vec![0, 1, 2]);
        for i in 0..3 {
            assert!((res.r_mat[(i, i)].abs() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn qrcp_detects_rank_one() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]).unwrap();
        // Rank oracle: singular values of a are (5, 0).
        let (_, s, _) = svd_small(&a);
        assert_eq!(s.iter().filter(|&&x| x > 1e-8 * s[0]).count(), 1);
        assert_eq!(qrcp(&a, 1e-8).unwrap().rank, 1);
    }

    #[test]
    fn qrcp_picks_largest_column_first() {
        let a = Matrix::from_rows(&[[1.0, 0.0], [0.0, 10.0], [0.0, 0.0]]).unwrap();
        let res = qrcp(&a, 0.0).unwrap();
        assert_eq!(res.pivots[0], 1);
        assert!((res.r_mat[(0, 0)] - 10.0).abs() < 1e-14);
    }

    #[test]
    fn qrcp_zero_matrix_has_rank_zero() {
        let res = qrcp(&Matrix::zeros(4, 3), 1e-10).unwrap();
        assert_eq!(res.rank, 0);
        assert_eq!(res.q.shape(), (4, 0));
    }

    #[test]
    fn qrcp_empty_is_error() {
        assert!(qrcp(&Matrix::zeros(0, 3), 0.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn householder_residuals(seed in any::<u64>(), m in 1usize..200, n in 1usize..50) {
            let (m, n) = (m.max(n), n);
            let mut rng = SeededRng::new(seed);
            let a = Matrix::random_normal(m, n, &mut rng);
            let (q, r) = qr_householder(&a).unwrap();
            prop_assert!(orth_residual(&q) <= 1e-12 * (n as f64).sqrt().max(1.0));
            let err = matmul(&q, &r).unwrap().sub(&a).unwrap().frobenius_norm();
            prop_assert!(err <= 1e-12 * a.frobenius_norm());
        }

        #[test]
        fn qrcp_diag_non_increasing_and_rank_matches_svd(
            seed in any::<u64>(), m in 5usize..40, n in 2usize..12, rank in 1usize..6
        ) {
            let rank = rank.min(n).min(m);
            let mut rng = SeededRng::new(seed);
            let x = Matrix::random_normal(m, rank, &mut rng);
            let y = Matrix::random_normal(rank, n, &mut rng);
            let a = matmul(&x, &y).unwrap();
            let res = qrcp(&a, 1e-10).unwrap();
            let full = qrcp(&a, 0.0).unwrap();
            for i in 1..full.rank {
                prop_assert!(full.r_mat[(i, i)].abs() <= full.r_mat[(i - 1, i - 1)].abs() * (1.0 + 1e-12));
            }
            let (_, s, _) = svd_small(&a);
            let svd_rank = s.iter().filter(|&&v| v > 1e-10 * s[0]).count();
            prop_assert_eq!(res.rank, svd_rank);

            let ap = a.select_cols(&res.pivots);
            let recon = matmul(&res.q, &res.r_mat).unwrap();
            prop_assert!(recon.sub(&ap).unwrap().frobenius_norm() <= 1e-10 * a.frobenius_norm());
            prop_assert!(orth_residual(&res.q) <= 1e-12);
        }
    }
}
