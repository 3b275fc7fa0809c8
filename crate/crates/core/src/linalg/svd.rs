use crate::linalg::matrix::{dot, Matrix};

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 30;

/// Thin SVD by one-sided (Hestenes) Jacobi rotations.
///
/// Returns `(u, s, v)` with `a = u · diag(s) · vᵀ`, `p = min(m, n)`
/// singular values in non-increasing order, and `u` (`m × p`), `v` (`n × p`)
/// with orthonormal columns. Columns of `u` belonging to zero singular values
/// are completed to an orthonormal set. Meant for small matrices.
pub fn svd_small(a: &Matrix) -> (Matrix, Vec<f64>, Matrix) {
    if a.rows() < a.cols() {
        let (u, s, v) = svd_tall(&a.transpose());
        return (v, s, u);
    }
    svd_tall(a)
}

fn svd_tall(a: &Matrix) -> (Matrix, Vec<f64>, Matrix) {
    let (m, n) = a.shape();
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| a.col(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let norms: Vec<f64> = w.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let s: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        if norms[j] > f64::MIN_POSITIVE {
            u_cols.push(w[j].iter().map(|x| x / norms[j]).collect());
        } else {
            u_cols.push(vec![0.0; m]);
            missing.push(k);
        }
    }
    complete_basis(&mut u_cols, &missing, m);

    let u = Matrix::from_fn(m, n, |i, k| u_cols[k][i]);
    let v = Matrix::from_fn(n, n, |i, k| v[order[k]][i]);
    (u, s, v)
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    for (x, y) in left[p].iter_mut().zip(right[0].iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Fills `cols[k]` for `k` in `missing` with unit vectors orthogonal to all
/// other columns, using Gram–Schmidt on the standard basis.
fn complete_basis(cols: &mut [Vec<f64>], missing: &[usize], m: usize) {
    let mut candidate = 0;
    for &k in missing {
        while candidate < m {
            let mut e = vec![0.0; m];
            e[candidate] = 1.0;
            candidate += 1;
            // Two passes of Gram–Schmidt.
            for _ in 0..2 {
                for (j, c) in cols.iter().enumerate() {
                    if j == k {
                        continue;
                    }
                    let proj = dot(&e, c);
                    e.iter_mut().zip(c).for_each(|(x, y)| *x -= proj * y);
                }
            }
            let norm = dot(&e, &e).sqrt();
            if norm > 0.5 {
                cols[k] = e.into_iter().map(|x| x / norm).collect();
                break;
            }
        }
    }
}
