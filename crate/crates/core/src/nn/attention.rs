//! Multi-head attention: exact softmax attention and its random-feature
//! (linear in sequence length) approximation.
//!
//! Both layers use the sequence-rows convention: `x` is `N × d_model`,
//! projections are `d_model × d_model` and `y = concat(heads) · W_o`.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::linalg::{matmul, matmul_nt, matmul_tn, Matrix};
use crate::rng::{derive_seed, SeededRng};

pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKernel {
    /// Positive random features estimating `exp(qᵀk)`.
    Softmax,
    Relu,
}

impl std::str::FromStr for AttentionKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "softmax" => Ok(Self::Softmax),
            "relu" => Ok(Self::Relu),
            _ => Err(Error::Parameter(format!("unknown attention kernel {s:?}"))),
        }
    }
}

impl std::fmt::Display for AttentionKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Softmax => "softmax",
            Self::Relu => "relu",
        })
    }
}

/// Query/key/value/output projections shared by both attention layers.
#[derive(Clone, Debug, PartialEq)]
pub struct MhaWeights {
    pub num_heads: usize,
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
}

#[derive(Clone, Debug)]
pub struct MhaGrads {
    pub grad_x: Matrix,
    pub grad_w_q: Matrix,
    pub grad_w_k: Matrix,
    pub grad_w_v: Matrix,
    pub grad_w_o: Matrix,
}

impl MhaWeights {
    pub fn new(num_heads: usize, w_q: Matrix, w_k: Matrix, w_v: Matrix, w_o: Matrix) -> Result<Self> {
        let d = w_q.rows();
        if num_heads == 0 || d == 0 || d % num_heads != 0 {
            return shape_err(format!("embed dim {d} is not divisible by {num_heads} heads"));
        }
        for w in [&w_q, &w_k, &w_v, &w_o] {
            if w.shape() != (d, d) {
                return shape_err("attention projections must all be d_model x d_model");
            }
        }
        Ok(Self {
            num_heads,
            w_q,
            w_k,
            w_v,
            w_o,
        })
    }

    /// Projections with i.i.d. `N(0, 1/d_model)` entries.
    pub fn random(embed_dim: usize, num_heads: usize, seed: u64) -> Result<Self> {
        let mut rng = SeededRng::new(seed);
        let std = 1.0 / (embed_dim as f64).sqrt();
        let mut draw = || Matrix::from_fn(embed_dim, embed_dim, |_, _| std * rng.normal());
        let (q, k, v, o) = (draw(), draw(), draw(), draw());
        Self::new(num_heads, q, k, v, o)
    }

    pub fn embed_dim(&self) -> usize {
        self.w_q.rows()
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim() / self.num_heads
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.embed_dim() || x.rows() == 0 {
            return shape_err(format!(
                "attention input is {}x{}, expected N x {} with N >= 1",
                x.rows(),
                x.cols(),
                self.embed_dim()
            ));
        }
        Ok(())
    }

    fn project(&self, x: &Matrix) -> Result<(Matrix, Matrix, Matrix)> {
        Ok((matmul(x, &self.w_q)?, matmul(x, &self.w_k)?, matmul(x, &self.w_v)?))
    }

    /// Gradients of the shared projections given per-position gradients of
    /// the projected `Q`, `K`, `V`, the concatenated head outputs and `∂L/∂y`.
    fn finish_backward(
        &self,
        x: &Matrix,
        heads: &Matrix,
        grad_out: &Matrix,
        grad_heads_fn: impl FnOnce(&Matrix) -> Result<(Matrix, Matrix, Matrix)>,
    ) -> Result<MhaGrads> {
        let grad_w_o = matmul_tn(heads, grad_out)?;
        let grad_heads = matmul_nt(grad_out, &self.w_o)?;
        let (dq, dk, dv) = grad_heads_fn(&grad_heads)?;
        let mut grad_x = matmul_nt(&dq, &self.w_q)?;
        grad_x.axpy(1.0, &matmul_nt(&dk, &self.w_k)?)?;
        grad_x.axpy(1.0, &matmul_nt(&dv, &self.w_v)?)?;
        Ok(MhaGrads {
            grad_x,
            grad_w_q: matmul_tn(x, &dq)?,
            grad_w_k: matmul_tn(x, &dk)?,
            grad_w_v: matmul_tn(x, &dv)?,
            grad_w_o,
        })
    }
}

fn head_slice(m: &Matrix, head: usize, dh: usize) -> Matrix {
    m.submatrix(0, head * dh, m.rows(), dh)
}

fn put_head(dst: &mut Matrix, src: &Matrix, head: usize, dh: usize) {
    for i in 0..src.rows() {
        dst.row_mut(i)[head * dh..(head + 1) * dh].copy_from_slice(src.row(i));
    }
}

/// Standard softmax attention, `softmax(Q_h K_hᵀ / √d_h) · V_h` per head.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactMha {
    pub weights: MhaWeights,
}

impl ExactMha {
    pub fn new(weights: MhaWeights) -> Self {
        Self { weights }
    }

    fn attention_probs(&self, q: &Matrix, k: &Matrix) -> Result<Matrix> {
        let scale = 1.0 / (q.cols() as f64).sqrt();
        let mut scores = matmul_nt(q, k)?.scale(scale);
        for i in 0..scores.rows() {
            let row = scores.row_mut(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for s in row.iter_mut() {
                *s = (*s - max).exp();
                total += *s;
            }
            row.iter_mut().for_each(|s| *s /= total);
        }
        Ok(scores)
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let w = &self.weights;
        w.check_input(x)?;
        let (q, k, v) = w.project(x)?;
        let dh = w.head_dim();
        let mut heads = Matrix::zeros(x.rows(), w.embed_dim());
        for h in 0..w.num_heads {
            let probs = self.attention_probs(&head_slice(&q, h, dh), &head_slice(&k, h, dh))?;
            put_head(&mut heads, &matmul(&probs, &head_slice(&v, h, dh))?, h, dh);
        }
        matmul(&heads, &w.w_o)
    }

    pub fn backward(&self, x: &Matrix, grad_out: &Matrix) -> Result<MhaGrads> {
        let w = &self.weights;
        w.check_input(x)?;
        if grad_out.shape() != x.shape() {
            return shape_err("grad_out does not match the attention output");
        }
        let (q, k, v) = w.project(x)?;
        let dh = w.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let n = x.rows();
        let mut heads = Matrix::zeros(n, w.embed_dim());
        let mut probs = Vec::with_capacity(w.num_heads);
        for h in 0..w.num_heads {
            let p = self.attention_probs(&head_slice(&q, h, dh), &head_slice(&k, h, dh))?;
            put_head(&mut heads, &matmul(&p, &head_slice(&v, h, dh))?, h, dh);
            probs.push(p);
        }
        w.finish_backward(x, &heads, grad_out, |grad_heads| {
            let mut dq = Matrix::zeros(n, w.embed_dim());
            let mut dk = Matrix::zeros(n, w.embed_dim());
            let mut dv = Matrix::zeros(n, w.embed_dim());
            for (h, p) in probs.iter().enumerate() {
                let g = head_slice(grad_heads, h, dh);
                let (qh, kh, vh) = (head_slice(&q, h, dh), head_slice(&k, h, dh), head_slice(&v, h, dh));
                let d_probs = matmul_nt(&g, &vh)?;
                let mut d_scores = Matrix::zeros(n, n);
                for i in 0..n {
                    let (pr, dr) = (p.row(i), d_probs.row(i));
                    let inner: f64 = pr.iter().zip(dr).map(|(a, b)| a * b).sum();
                    for (o, (a, b)) in d_scores.row_mut(i).iter_mut().zip(pr.iter().zip(dr)) {
                        *o = a * (b - inner) * scale;
                    }
                }
                put_head(&mut dq, &matmul(&d_scores, &kh)?, h, dh);
                put_head(&mut dk, &matmul_tn(&d_scores, &qh)?, h, dh);
                put_head(&mut dv, &matmul_tn(p, &g)?, h, dh);
            }
            Ok((dq, dk, dv))
        })
    }
}

/// Shift subtracted from the random-feature exponents before `exp`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stabilizer {
    None,
    /// Each row's own maximum projection.
    PerRow,
    /// One maximum over the whole sequence.
    Global,
}

/// Random feature map `φ` applied row-wise to `x` (`N × d_h`) with feature
/// matrix `rf` (`m × d_h`), without any stabilizing shift.
///
/// Softmax: `φ(x) = exp(rf·x − ‖x‖²/2) / √m`, so that
/// `E[φ(q)ᵀφ(k)] = exp(qᵀk)` for standard normal rows of `rf`.
/// Relu: `φ(x) = max(0, rf·x) / √m`.
pub fn feature_map(x: &Matrix, rf: &Matrix, kernel: AttentionKernel) -> Result<Matrix> {
    feature_map_stabilized(x, rf, kernel, Stabilizer::None)
}

/// [`feature_map`] with a shift subtracted from the softmax exponents. The
/// shift multiplies whole rows (or the whole matrix) by a constant. Ignored
/// for the Relu kernel.
pub fn feature_map_stabilized(
    x: &Matrix,
    rf: &Matrix,
    kernel: AttentionKernel,
    stabilizer: Stabilizer,
) -> Result<Matrix> {
    Ok(features_with_shift(x, rf, kernel, stabilizer)?.0)
}

/// Features plus the shift subtracted from each row's exponents.
fn features_with_shift(
    x: &Matrix,
    rf: &Matrix,
    kernel: AttentionKernel,
    stabilizer: Stabilizer,
) -> Result<(Matrix, Vec<f64>)> {
    if x.cols() != rf.cols() {
        return shape_err(format!(
            "feature map: input width {} vs feature width {}",
            x.cols(),
            rf.cols()
        ));
    }
    let m = rf.rows();
    let norm = 1.0 / (m as f64).sqrt();
    let mut proj = matmul_nt(x, rf)?;
    let mut shifts = vec![0.0; x.rows()];
    match kernel {
        AttentionKernel::Relu => {
            proj.as_mut_slice().iter_mut().for_each(|p| *p = norm * p.max(0.0));
        }
        AttentionKernel::Softmax => {
            let global = match stabilizer {
                Stabilizer::Global => proj.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max),
                _ => 0.0,
            };
            for (i, shift_out) in shifts.iter_mut().enumerate() {
                let half_sq: f64 = x.row(i).iter().map(|v| v * v).sum::<f64>() / 2.0;
                let row = proj.row_mut(i);
                let shift = match stabilizer {
                    Stabilizer::None => 0.0,
                    Stabilizer::PerRow => row.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    Stabilizer::Global => global,
                };
                row.iter_mut().for_each(|p| *p = norm * (*p - half_sq - shift).exp());
                *shift_out = shift;
            }
        }
    }
    Ok((proj, shifts))
}

/// Pulls `∂L/∂φ` back to `∂L/∂x` with the stabilizing shift held fixed. The
/// layer output does not depend on the shift, so this is the exact gradient.
fn feature_map_backward(x: &Matrix, rf: &Matrix, phi: &Matrix, d_phi: &Matrix, kernel: AttentionKernel) -> Result<Matrix> {
    match kernel {
        AttentionKernel::Softmax => {
            let mut d_proj = d_phi.clone();
            for (d, p) in d_proj.as_mut_slice().iter_mut().zip(phi.as_slice()) {
                *d *= p;
            }
            let mut dx = matmul(&d_proj, rf)?;
            for i in 0..dx.rows() {
                let total: f64 = d_proj.row(i).iter().sum();
                for (o, xi) in dx.row_mut(i).iter_mut().zip(x.row(i)) {
                    *o -= total * xi;
                }
            }
            Ok(dx)
        }
        AttentionKernel::Relu => {
            let norm = 1.0 / (rf.rows() as f64).sqrt();
            let mut d_proj = d_phi.clone();
            for (d, p) in d_proj.as_mut_slice().iter_mut().zip(phi.as_slice()) {
                // φ > 0 exactly where the projection is positive.
                *d = if *p > 0.0 { *d * norm } else { 0.0 };
            }
            matmul(&d_proj, rf)
        }
    }
}

/// Attention with random-feature kernel estimates, costing `O(N·m·d_h)` per
/// head instead of `O(N²·d_h)`.
///
/// A query row whose estimated normalizer is exactly zero (possible only
/// with the Relu kernel) falls back to the uniform average of `V`.
#[derive(Clone, Debug, PartialEq)]
pub struct RandMha {
    pub weights: MhaWeights,
    num_features: usize,
    kernel: AttentionKernel,
    seed: u64,
    pub epsilon: f64,
    /// Per-head `m × d_h` feature matrices with standard normal entries.
    features: Vec<Matrix>,
}

struct HeadCache {
    q: Matrix,
    k: Matrix,
    v: Matrix,
    phi_q: Matrix,
    phi_k: Matrix,
    kv: Matrix,
    z: Vec<f64>,
    /// Normalizers including ε.
    den: Vec<f64>,
    out: Matrix,
    fallback: Vec<bool>,
}

impl RandMha {
    pub fn new(weights: MhaWeights, num_features: usize, kernel: AttentionKernel, seed: u64) -> Result<Self> {
        if num_features == 0 {
            return Err(Error::Parameter("num_features must be positive".into()));
        }
        let dh = weights.head_dim();
        let features = (0..weights.num_heads)
            .map(|h| {
                let mut rng = SeededRng::new(derive_seed(seed, h as u64));
                Matrix::random_normal(num_features, dh, &mut rng)
            })
            .collect();
        Ok(Self {
            weights,
            num_features,
            kernel,
            seed,
            epsilon: DEFAULT_EPSILON,
            features,
        })
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn kernel(&self) -> AttentionKernel {
        self.kernel
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn features(&self) -> &[Matrix] {
        &self.features
    }

    fn input_scale(&self) -> f64 {
        match self.kernel {
            AttentionKernel::Softmax => (self.weights.head_dim() as f64).powf(-0.25),
            AttentionKernel::Relu => 1.0,
        }
    }

    fn head_forward(&self, q: Matrix, k: Matrix, v: Matrix, rf: &Matrix, stabilize: bool) -> Result<HeadCache> {
        let (sq, sk) = if stabilize {
            (Stabilizer::PerRow, Stabilizer::Global)
        } else {
            (Stabilizer::None, Stabilizer::None)
        };
        let (phi_q, shift_q) = features_with_shift(&q, rf, self.kernel, sq)?;
        let (phi_k, shift_k) = features_with_shift(&k, rf, self.kernel, sk)?;
        // Key shifts are one global value (or zero).
        let shift_k = shift_k.first().copied().unwrap_or(0.0);
        let kv = matmul_tn(&phi_k, &v)?;
        let z: Vec<f64> = (0..phi_k.cols())
            .map(|j| (0..phi_k.rows()).map(|n| phi_k[(n, j)]).sum())
            .collect();
        let mut out = matmul(&phi_q, &kv)?;
        let n = q.rows();
        let mut den = Vec::with_capacity(n);
        let mut fallback = Vec::with_capacity(n);
        let mean_v: Vec<f64> = (0..v.cols())
            .map(|d| (0..n).map(|i| v[(i, d)]).sum::<f64>() / n as f64)
            .collect();
        for i in 0..n {
            let d: f64 = phi_q.row(i).iter().zip(&z).map(|(a, b)| a * b).sum();
            let row = out.row_mut(i);
            if d == 0.0 {
                fallback.push(true);
                row.copy_from_slice(&mean_v);
                den.push(d);
            } else {
                fallback.push(false);
                // ε applies at the unshifted scale so the shifts cancel exactly.
                let eps = self.epsilon * (-(shift_q[i] + shift_k)).min(700.0).exp();
                let inv = 1.0 / (d + eps);
                row.iter_mut().for_each(|o| *o *= inv);
                den.push(d + eps);
            }
        }
        Ok(HeadCache {
            q,
            k,
            v,
            phi_q,
            phi_k,
            kv,
            z,
            den,
            out,
            fallback,
        })
    }

    fn run(&self, x: &Matrix, stabilize: bool) -> Result<(Matrix, Vec<HeadCache>)> {
        let w = &self.weights;
        w.check_input(x)?;
        let (q, k, v) = w.project(x)?;
        let dh = w.head_dim();
        let s = self.input_scale();
        let mut heads = Matrix::zeros(x.rows(), w.embed_dim());
        let mut caches = Vec::with_capacity(w.num_heads);
        for (h, rf) in self.features.iter().enumerate() {
            let cache = self.head_forward(
                head_slice(&q, h, dh).scale(s),
                head_slice(&k, h, dh).scale(s),
                head_slice(&v, h, dh),
                rf,
                stabilize,
            )?;
            put_head(&mut heads, &cache.out, h, dh);
            caches.push(cache);
        }
        Ok((heads, caches))
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let (heads, _) = self.run(x, true)?;
        matmul(&heads, &self.weights.w_o)
    }

    pub fn backward(&self, x: &Matrix, grad_out: &Matrix) -> Result<MhaGrads> {
        if grad_out.shape() != x.shape() {
            return shape_err("grad_out does not match the attention output");
        }
        let (heads, caches) = self.run(x, true)?;
        let w = &self.weights;
        let dh = w.head_dim();
        let s = self.input_scale();
        let n = x.rows();
        w.finish_backward(x, &heads, grad_out, |grad_heads| {
            let mut dq = Matrix::zeros(n, w.embed_dim());
            let mut dk = Matrix::zeros(n, w.embed_dim());
            let mut dv = Matrix::zeros(n, w.embed_dim());
            for (h, c) in caches.iter().enumerate() {
                let g = head_slice(grad_heads, h, dh);
                let mut d_num = Matrix::zeros(n, dh);
                let mut d_den = vec![0.0; n];
                let mut d_v = Matrix::zeros(n, dh);
                for i in 0..n {
                    if c.fallback[i] {
                        for r in 0..n {
                            for (o, gi) in d_v.row_mut(r).iter_mut().zip(g.row(i)) {
                                *o += gi / n as f64;
                            }
                        }
                        continue;
                    }
                    let inv = 1.0 / c.den[i];
                    for (o, gi) in d_num.row_mut(i).iter_mut().zip(g.row(i)) {
                        *o = gi * inv;
                    }
                    d_den[i] = -inv * g.row(i).iter().zip(c.out.row(i)).map(|(a, b)| a * b).sum::<f64>();
                }
                let mut d_phi_q = matmul_nt(&d_num, &c.kv)?;
                for i in 0..n {
                    for (o, zj) in d_phi_q.row_mut(i).iter_mut().zip(&c.z) {
                        *o += d_den[i] * zj;
                    }
                }
                let d_kv = matmul_tn(&c.phi_q, &d_num)?;
                let d_z: Vec<f64> = (0..c.phi_q.cols())
                    .map(|j| (0..n).map(|i| c.phi_q[(i, j)] * d_den[i]).sum())
                    .collect();
                let mut d_phi_k = matmul_nt(&c.v, &d_kv)?;
                for i in 0..n {
                    for (o, dzj) in d_phi_k.row_mut(i).iter_mut().zip(&d_z) {
                        *o += dzj;
                    }
                }
                d_v.axpy(1.0, &matmul(&c.phi_k, &d_kv)?)?;

                let rf = &self.features[h];
                let d_qh = feature_map_backward(&c.q, rf, &c.phi_q, &d_phi_q, self.kernel)?.scale(s);
                let d_kh = feature_map_backward(&c.k, rf, &c.phi_k, &d_phi_k, self.kernel)?.scale(s);
                put_head(&mut dq, &d_qh, h, dh);
                put_head(&mut dk, &d_kh, h, dh);
                put_head(&mut dv, &d_v, h, dh);
            }
            Ok((dq, dk, dv))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
        a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm()
    }

    #[test]
    fn zero_input_features_are_uniform() {
        let mut rng = SeededRng::new(1);
        let rf = Matrix::random_normal(16, 4, &mut rng);
        let phi = feature_map(&Matrix::zeros(2, 4), &rf, AttentionKernel::Softmax).unwrap();
        assert!(phi.as_slice().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn relu_negative_projections_vanish() {
        let rf = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let x = Matrix::from_rows(&[[-1.0, -2.0]]).unwrap();
        let phi = feature_map(&x, &rf, AttentionKernel::Relu).unwrap();
        assert_eq!(phi.max_abs(), 0.0);
    }

    #[test]
    fn softmax_features_estimate_exponential_kernel() {
        // Closed form: E[φ(q)ᵀφ(k)] = exp(qᵀk).
        let q = Matrix::from_rows(&[[0.3, -0.2, 0.1, 0.4]]).unwrap();
        let k = Matrix::from_rows(&[[-0.1, 0.5, 0.2, 0.3]]).unwrap();
        let exact = (0..4).map(|i| q[(0, i)] * k[(0, i)]).sum::<f64>().exp();
        let mut total = 0.0;
        let seeds = 200;
        for seed in 0..seeds {
            let mut rng = SeededRng::new(derive_seed(5, seed));
            let rf = Matrix::random_normal(4096, 4, &mut rng);
            let pq = feature_map(&q, &rf, AttentionKernel::Softmax).unwrap();
            let pk = feature_map(&k, &rf, AttentionKernel::Softmax).unwrap();
            total += pq.row(0).iter().zip(pk.row(0)).map(|(a, b)| a * b).sum::<f64>();
        }
        let mean = total / seeds as f64;
        assert!(((mean - exact) / exact).abs() <= 0.05, "{mean} vs {exact}");
    }

    #[test]
    fn stabilization_cancels_in_the_ratio() {
        let w = MhaWeights::random(8, 2, 3).unwrap();
        let mut rng = SeededRng::new(6);
        let x = Matrix::random_normal(10, 8, &mut rng).scale(2.0);
        for eps in [0.0, DEFAULT_EPSILON, 1.0] {
            let mut layer = RandMha::new(w.clone(), 64, AttentionKernel::Softmax, 4).unwrap();
            layer.epsilon = eps;
            let (stable, _) = layer.run(&x, true).unwrap();
            let (plain, _) = layer.run(&x, false).unwrap();
            assert!(rel_err(&stable, &plain) < 1e-12, "eps {eps}");
        }
    }

    #[test]
    fn single_token_is_value_projection() {
        let w = MhaWeights::random(6, 3, 1).unwrap();
        let mut rng = SeededRng::new(2);
        let x = Matrix::random_normal(1, 6, &mut rng);
        let expected = matmul(&matmul(&x, &w.w_v).unwrap(), &w.w_o).unwrap();
        let exact = ExactMha::new(w.clone()).forward(&x).unwrap();
        assert!(rel_err(&exact, &expected) < 1e-14);
        for kernel in [AttentionKernel::Softmax, AttentionKernel::Relu] {
            let mut layer = RandMha::new(w.clone(), 32, kernel, 9).unwrap();
            layer.epsilon = 0.0;
            let y = layer.forward(&x).unwrap();
            assert!(rel_err(&y, &expected) < 1e-12, "{kernel}");
        }
    }

    #[test]
    fn zero_queries_attend_uniformly() {
        let mut w = MhaWeights::random(4, 1, 3).unwrap();
        w.w_q = Matrix::zeros(4, 4);
        w.w_o = Matrix::identity(4);
        let mut rng = SeededRng::new(3);
        let x = Matrix::random_normal(5, 4, &mut rng);
        let v = matmul(&x, &w.w_v).unwrap();
        let y = ExactMha::new(w).forward(&x).unwrap();
        for d in 0..4 {
            let mean = v.col(d).iter().sum::<f64>() / 5.0;
            for i in 0..5 {
                assert!((y[(i, d)] - mean).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn two_token_scalar_case() {
        // d_model = d_h = 1, identity projections: x = (1, 2).
        let one = Matrix::identity(1);
        let w = MhaWeights::new(1, one.clone(), one.clone(), one.clone(), one).unwrap();
        let x = Matrix::column(&[1.0, 2.0]);
        let y = ExactMha::new(w).forward(&x).unwrap();
        // Row 0 scores (1, 2), row 1 scores (2, 4).
        let p0 = 1.0 / (1.0 + 1f64.exp());
        let p1 = 1.0 / (1.0 + 2f64.exp());
        assert!((y[(0, 0)] - (p0 * 1.0 + (1.0 - p0) * 2.0)).abs() < 1e-14);
        assert!((y[(1, 0)] - (p1 * 1.0 + (1.0 - p1) * 2.0)).abs() < 1e-14);
    }

    #[test]
    fn permutation_equivariance() {
        let w = MhaWeights::random(8, 2, 5).unwrap();
        let layer = RandMha::new(w.clone(), 128, AttentionKernel::Softmax, 1).unwrap();
        let exact = ExactMha::new(w);
        let mut rng = SeededRng::new(8);
        let x = Matrix::random_normal(6, 8, &mut rng);
        let perm = [3, 0, 5, 1, 4, 2];
        let px = Matrix::from_fn(6, 8, |i, j| x[(perm[i], j)]);
        for y_fn in [
            &|m: &Matrix| layer.forward(m).unwrap() as Matrix,
            &|m: &Matrix| exact.forward(m).unwrap(),
        ] as [&dyn Fn(&Matrix) -> Matrix; 2]
        {
            let y = y_fn(&x);
            let py = y_fn(&px);
            for i in 0..6 {
                for j in 0..8 {
                    assert!((py[(i, j)] - y[(perm[i], j)]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn relu_zero_normalizer_falls_back_to_mean() {
        let one = Matrix::identity(1);
        let w = MhaWeights::new(1, one.clone(), one.clone(), one.clone(), one).unwrap();
        let mut layer = RandMha::new(w, 4, AttentionKernel::Relu, 0).unwrap();
        // Every feature direction positive: negative tokens produce no features.
        layer.features = vec![Matrix::column(&[1.0, 2.0, 0.5, 1.5])];
        let x = Matrix::column(&[-1.0, -3.0]);
        let y = layer.forward(&x).unwrap();
        assert_eq!(y.as_slice(), &[-2.0, -2.0]);
    }

    #[test]
    fn bad_shapes() {
        assert!(MhaWeights::random(6, 4, 0).is_err());
        let w = MhaWeights::random(4, 2, 0).unwrap();
        assert!(ExactMha::new(w.clone()).forward(&Matrix::zeros(3, 5)).is_err());
        assert!(RandMha::new(w.clone(), 0, AttentionKernel::Relu, 0).is_err());
        let layer = RandMha::new(w, 8, AttentionKernel::Relu, 0).unwrap();
        assert!(layer.forward(&Matrix::zeros(0, 4)).is_err());
    }
}
