//! Random-feature attention against exact softmax attention.

use rnla_core::nn::attention::{AttentionKernel, ExactMha, MhaWeights, RandMha};
use rnla_core::rng::{derive_seed, SeededRng};
use rnla_core::Matrix;

/// Token embeddings with entries `N(0, scale²)`, default projections.
fn setup(seed: u64, scale: f64) -> (MhaWeights, Matrix) {
    let w = MhaWeights::random(16, 2, derive_seed(seed, 0)).unwrap();
    let x = Matrix::random_normal(32, 16, &mut SeededRng::new(derive_seed(seed, 1))).scale(scale);
    (w, x)
}

fn rel_error(w: &MhaWeights, x: &Matrix, m: usize, seed: u64) -> f64 {
    let exact = ExactMha::new(w.clone()).forward(x).unwrap();
    let approx = RandMha::new(w.clone(), m, AttentionKernel::Softmax, seed).unwrap().forward(x).unwrap();
    approx.sub(&exact).unwrap().frobenius_norm() / exact.frobenius_norm()
}

fn mean_errors(scale: f64) -> Vec<f64> {
    [64, 256, 1024, 4096]
        .iter()
        .map(|&m| {
            (0..20u64)
                .map(|s| {
                    let (w, x) = setup(s, scale);
                    rel_error(&w, &x, m, derive_seed(99, s))
                })
                .sum::<f64>()
                / 20.0
        })
        .collect()
}

#[test]
fn many_features_match_exact_attention() {
    let (w, x) = setup(42, 0.5);
    let e = rel_error(&w, &x, 4096, 7);
    assert!(e <= 0.1, "relative error {e}");
}

#[test]
fn error_shrinks_with_features() {
    for scale in [0.5, 1.0] {
        let means = mean_errors(scale);
        let inversions = means.windows(2).filter(|p| p[1] > p[0]).count();
        assert!(inversions <= 1, "scale {scale}: errors {means:?}");
    }
}

#[test]
fn relu_kernel_is_deterministic_and_finite() {
    let (w, x) = setup(3, 1.0);
    let layer = RandMha::new(w, 256, AttentionKernel::Relu, 5).unwrap();
    let a = layer.forward(&x).unwrap();
    assert!(a.is_finite());
    assert_eq!(a, layer.clone().forward(&x).unwrap());
}
