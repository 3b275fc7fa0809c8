use crate::error::{shape_err, Result};
use crate::linalg::Matrix;

/// Mean softmax cross-entropy over the columns of `logits` (`classes × batch`)
/// and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (classes, batch) = logits.shape();
    if labels.len() != batch || batch == 0 {
        return shape_err(format!("{} labels for a batch of {batch}", labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return shape_err(format!("label {bad} out of range for {classes} classes"));
    }
    let mut grad = Matrix::zeros(classes, batch);
    let mut total = 0.0;
    for (j, &label) in labels.iter().enumerate() {
        let col = logits.col(j);
        let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = col.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        total += log_z - col[label];
        for (i, v) in col.iter().enumerate() {
            let p = (v - log_z).exp();
            grad[(i, j)] = (p - f64::from(u8::from(i == label))) / batch as f64;
        }
    }
    Ok((total / batch as f64, grad))
}

/// Fraction of columns whose arg-max matches the label.
pub fn accuracy(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    if labels.len() != logits.cols() || labels.is_empty() {
        return shape_err("label count does not match the batch");
    }
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(j, &y)| {
            let col = logits.col(j);
            let best = (0..col.len()).fold(0, |b, i| if col[i] > col[b] { i } else { b });
            best == y
        })
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn uniform_logits() {
        let (loss, grad) = softmax_cross_entropy(&Matrix::zeros(4, 2), &[0, 3]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);
        assert!((grad[(0, 0)] - (0.25 - 1.0) / 2.0).abs() < 1e-15);
        assert!((grad[(1, 0)] - 0.125).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_differences() {
        let mut rng = SeededRng::new(1);
        let z = Matrix::random_normal(3, 4, &mut rng);
        let labels = [2, 0, 1, 1];
        let (_, g) = softmax_cross_entropy(&z, &labels).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..4 {
                let mut zp = z.clone();
                zp[(i, j)] += h;
                let mut zm = z.clone();
                zm[(i, j)] -= h;
                let fd = (softmax_cross_entropy(&zp, &labels).unwrap().0
                    - softmax_cross_entropy(&zm, &labels).unwrap().0)
                    / (2.0 * h);
                assert!((fd - g[(i, j)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn accuracy_counts_argmax() {
        let z = Matrix::from_rows(&[[1.0, 0.0, 2.0], [0.0, 1.0, 3.0]]).unwrap();
        assert!((accuracy(&z, &[0, 1, 0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(softmax_cross_entropy(&z, &[0, 2, 0]).is_err());
    }
}
