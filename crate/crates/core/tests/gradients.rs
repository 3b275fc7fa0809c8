//! Central-difference checks of every layer's analytic backward.

use rnla_core::nn::attention::{AttentionKernel, ExactMha, MhaWeights, RandMha};
use rnla_core::nn::conv::{ConvGeometry, DenseConv2d, SkConv2d};
use rnla_core::nn::{DenseLinear, FeatureMaps, Layer, Model, SkLinear, Tensor};
use rnla_core::rng::SeededRng;
use rnla_core::Matrix;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn half_sq(t: &Tensor) -> f64 {
    t.as_slice().iter().map(|v| v * v).sum::<f64>() / 2.0
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}

/// Compares the backward pass of `L = ½‖f(x)‖²` with central differences for
/// every learnable buffer and for the input.
fn check(layer: Layer, x: Tensor) {
    let y = layer.forward(&x).unwrap();
    let grads = layer.backward(&x, &y).unwrap();

    let n_buffers = layer.params().len();
    assert_eq!(grads.params.len(), n_buffers);
    for b in 0..n_buffers {
        let len = layer.params()[b].len();
        let mut fd = vec![0.0; len];
        for (i, slot) in fd.iter_mut().enumerate() {
            let mut plus = layer.clone();
            plus.params_mut()[b][i] += H;
            let mut minus = layer.clone();
            minus.params_mut()[b][i] -= H;
            *slot = (half_sq(&plus.forward(&x).unwrap()) - half_sq(&minus.forward(&x).unwrap())) / (2.0 * H);
        }
        let e = rel_err(&grads.params[b], &fd);
        assert!(e <= TOL, "{} buffer {b}: relative error {e}", layer.kind());
    }

    let mut fd = vec![0.0; x.as_slice().len()];
    for (i, slot) in fd.iter_mut().enumerate() {
        let mut plus = x.clone();
        plus.as_mut_slice()[i] += H;
        let mut minus = x.clone();
        minus.as_mut_slice()[i] -= H;
        *slot = (half_sq(&layer.forward(&plus).unwrap()) - half_sq(&layer.forward(&minus).unwrap())) / (2.0 * H);
    }
    let e = rel_err(grads.grad_input.as_slice(), &fd);
    assert!(e <= TOL, "{} input: relative error {e}", layer.kind());
}

fn matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    Matrix::random_normal(rows, cols, &mut SeededRng::new(seed)).into()
}

fn maps(b: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor {
    FeatureMaps::random_normal(b, c, h, w, &mut SeededRng::new(seed)).into()
}

#[test]
fn dense_linear() {
    check(Layer::DenseLinear(DenseLinear::random(6, 8, 1)), matrix(6, 3, 2));
}

#[test]
fn sk_linear() {
    for seed in 0..3 {
        let mut layer = SkLinear::new(6, 8, 2, 3, seed).unwrap();
        layer.bias = (0..8).map(|i| 0.1 * i as f64).collect();
        check(Layer::SkLinear(layer), matrix(6, 2, 10 + seed));
    }
}

#[test]
fn dense_conv() {
    for (kernel, stride, padding) in [(3, 1, 1), (2, 2, 0), (3, 2, 1)] {
        let g = ConvGeometry::square(2, 3, kernel, stride, padding);
        check(Layer::DenseConv2d(DenseConv2d::random(g, 3)), maps(2, 2, 5, 5, 4));
    }
}

#[test]
fn sk_conv() {
    let g = ConvGeometry::square(2, 3, 3, 1, 1);
    let dense = DenseConv2d::random(g, 5);
    check(Layer::SkConv2d(SkConv2d::from_dense(&dense, 2, 3, 6).unwrap()), maps(2, 2, 4, 4, 7));
    check(Layer::SkConv2d(SkConv2d::new(g, 1, 2, 8).unwrap()), maps(1, 2, 5, 5, 9));
}

#[test]
fn exact_mha() {
    let w = MhaWeights::random(8, 2, 1).unwrap();
    check(Layer::ExactMha(ExactMha::new(w)), matrix(5, 8, 2));
}

#[test]
fn rand_mha_softmax() {
    for seed in 0..2 {
        let w = MhaWeights::random(8, 2, seed).unwrap();
        let layer = RandMha::new(w, 16, AttentionKernel::Softmax, 100 + seed).unwrap();
        check(Layer::RandMha(layer), matrix(5, 8, 200 + seed));
    }
}

#[test]
fn rand_mha_relu() {
    for seed in 0..2 {
        let w = MhaWeights::random(8, 2, seed).unwrap();
        let layer = RandMha::new(w, 16, AttentionKernel::Relu, 100 + seed).unwrap();
        check(Layer::RandMha(layer), matrix(5, 8, 300 + seed));
    }
}

#[test]
fn whole_model() {
    let model = Model::from_layers([
        ("fc1", Layer::SkLinear(SkLinear::new(5, 7, 2, 2, 1).unwrap())),
        ("act", Layer::Relu),
        ("fc2", Layer::DenseLinear(DenseLinear::random(7, 3, 2))),
    ])
    .unwrap();
    let x = matrix(5, 4, 3);
    let y = model.forward(&x).unwrap();
    let grads = model.backward(&x, &y).unwrap();
    for (li, nl) in model.layers().iter().enumerate() {
        for b in 0..nl.layer.params().len() {
            for i in 0..nl.layer.params()[b].len() {
                let bump = |delta: f64| {
                    let mut m = model.clone();
                    let name = nl.name.clone();
                    let mut layer = m.get(&name).unwrap().clone();
                    layer.params_mut()[b][i] += delta;
                    m.replace(&name, layer).unwrap();
                    half_sq(&m.forward(&x).unwrap())
                };
                let fd = (bump(H) - bump(-H)) / (2.0 * H);
                let g = grads.layers[li][b][i];
                assert!((g - fd).abs() <= TOL * fd.abs().max(1e-3), "{} [{b}][{i}]: {g} vs {fd}", nl.name);
            }
        }
    }
}
