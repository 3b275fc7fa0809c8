use crate::error::{shape_err, Error, Result};
use crate::linalg::matrix::Matrix;

/// Upper-triangular `R` with `Rᵀ·R = g` for symmetric positive definite `g`.
///
/// A pivot at or below `n · ε · max(diag g)` is reported as
/// [`Error::NotPositiveDefinite`].
pub fn cholesky(g: &Matrix) -> Result<Matrix> {
    let n = g.rows();
    if g.cols() != n {
        return shape_err(format!("cholesky of non-square {}x{}", n, g.cols()));
    }
    let scale = g.max_abs().max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in 0..i {
            if (g[(i, j)] - g[(j, i)]).abs() > 1e-10 * scale {
                return shape_err(format!("cholesky input not symmetric at ({i}, {j})"));
            }
        }
    }
    let max_diag = (0..n).map(|i| g[(i, i)]).fold(0.0_f64, f64::max);
    let floor = n as f64 * f64::EPSILON * max_diag;

    let mut r = Matrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = g[(j, j)];
        for k in 0..j {
            pivot -= r[(k, j)] * r[(k, j)];
        }
        if !(pivot > floor) {
            return Err(Error::NotPositiveDefinite { index: j, pivot });
        }
        let rjj = pivot.sqrt();
        r[(j, j)] = rjj;
        for c in j + 1..n {
            let mut s = g[(j, c)];
            for k in 0..j {
                s -= r[(k, j)] * r[(k, c)];
            }
            r[(j, c)] = s / rjj;
        }
    }
    Ok(r)
}

/// Solves `X · R = B` for upper-triangular `R` (i.e. `X = B · R⁻¹`).
pub fn solve_upper_right(b: &Matrix, r: &Matrix) -> Result<Matrix> {
    let n = r.rows();
    if r.cols() != n || b.cols() != n {
        return shape_err(format!(
            "solve_upper_right: B is {}x{}, R is {}x{}",
            b.rows(),
            b.cols(),
            r.rows(),
            r.cols()
        ));
    }
    let mut x = b.clone();
    for i in 0..x.rows() {
        let row = x.row_mut(i);
        for j in 0..n {
            let mut s = row[j];
            for k in 0..j {
                s -= row[k] * r[(k, j)];
            }
            row[j] = s / r[(j, j)];
        }
    }
    Ok(x)
}
