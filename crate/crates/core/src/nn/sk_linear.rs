//! Sketched linear layer.
//!
//! Each of the `l` terms stores two learnable rank-`k` factors next to two
//! frozen sketches. With the column convention `x: d_in × batch`,
//!
//! ```text
//! y = 1/(2l) · Σᵢ [ S1ᵢᵀ·(U1ᵢ·x) + U2ᵢ·(S2ᵢ·x) ] + b
//! ```
//!
//! where `S1ᵢ` is `k × d_out`, `U1ᵢ` is `k × d_in`, `S2ᵢ` is `k × d_in` and
//! `U2ᵢ` is `d_out × k`. Initializing `U1ᵢ = S1ᵢ·W`, `U2ᵢ = W·S2ᵢᵀ` makes
//! the output an unbiased estimate of `W·x + b` since `E[SᵀS] = I`.

use crate::error::{shape_err, Error, Result};
use crate::linalg::{matmul, matmul_nt, Matrix};
use crate::nn::linear::DenseLinear;
use crate::rng::{derive_seed, SeededRng};
use crate::sketch::{SketchDist, SketchOp};

#[derive(Clone, Debug, PartialEq)]
pub struct SkTerm {
    /// `k × d_out`, frozen.
    pub s1: SketchOp,
    /// `k × d_in`, learnable.
    pub u1: Matrix,
    /// `k × d_in`, frozen.
    pub s2: SketchOp,
    /// `d_out × k`, learnable.
    pub u2: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkLinear {
    d_in: usize,
    d_out: usize,
    low_rank: usize,
    terms: Vec<SkTerm>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SkLinearGrads {
    pub grad_x: Matrix,
    pub grad_u1: Vec<Matrix>,
    pub grad_u2: Vec<Matrix>,
    pub grad_bias: Vec<f64>,
}

/// Learnable, stored and dense-equivalent coefficient counts of a layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct ParamCount {
    pub learnable: u64,
    /// Learnable parameters plus the sketch coefficients.
    pub total_stored: u64,
    /// Size of the dense layer this one replaces (or is).
    pub dense_equivalent: u64,
}

impl std::ops::Add for ParamCount {
    type Output = ParamCount;

    fn add(self, o: ParamCount) -> ParamCount {
        ParamCount {
            learnable: self.learnable + o.learnable,
            total_stored: self.total_stored + o.total_stored,
            dense_equivalent: self.dense_equivalent + o.dense_equivalent,
        }
    }
}

impl std::iter::Sum for ParamCount {
    fn sum<I: Iterator<Item = ParamCount>>(iter: I) -> Self {
        iter.fold(ParamCount::default(), |a, b| a + b)
    }
}

/// Coefficients held by the `l` sketched terms, excluding the bias:
/// `2·l·k·(d_in + d_out)`.
pub fn sketched_size(num_terms: usize, low_rank: usize, d_in: usize, d_out: usize) -> u64 {
    2 * num_terms as u64 * low_rank as u64 * (d_in as u64 + d_out as u64)
}

/// True when the sketched terms would store strictly more coefficients than
/// the dense `d_out × d_in` weight; such configurations cannot pay off.
pub fn exceeds_dense(num_terms: usize, low_rank: usize, d_in: usize, d_out: usize) -> bool {
    sketched_size(num_terms, low_rank, d_in, d_out) > d_in as u64 * d_out as u64
}

fn term_seeds(seed: u64, term: usize) -> (u64, u64, u64) {
    let base = 3 * term as u64;
    (
        derive_seed(seed, base),
        derive_seed(seed, base + 1),
        derive_seed(seed, base + 2),
    )
}

impl SkLinear {
    /// Freshly initialized layer: `U` entries i.i.d. `N(0, 2/(d_in + d_out))`,
    /// zero bias, Gaussian sketches.
    pub fn new(d_in: usize, d_out: usize, num_terms: usize, low_rank: usize, seed: u64) -> Result<Self> {
        Self::new_with_dist(d_in, d_out, num_terms, low_rank, SketchDist::Gaussian, seed)
    }

    pub fn new_with_dist(
        d_in: usize,
        d_out: usize,
        num_terms: usize,
        low_rank: usize,
        dist: SketchDist,
        seed: u64,
    ) -> Result<Self> {
        check_hyper(d_in, d_out, num_terms, low_rank)?;
        let std = (2.0 / (d_in + d_out) as f64).sqrt();
        let terms = (0..num_terms)
            .map(|i| {
                let (s1_seed, s2_seed, init_seed) = term_seeds(seed, i);
                let mut rng = SeededRng::new(init_seed);
                Ok(SkTerm {
                    s1: SketchOp::new(dist, low_rank, d_out, s1_seed)?,
                    u1: Matrix::from_fn(low_rank, d_in, |_, _| std * rng.normal()),
                    s2: SketchOp::new(dist, low_rank, d_in, s2_seed)?,
                    u2: Matrix::from_fn(d_out, low_rank, |_, _| std * rng.normal()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            d_in,
            d_out,
            low_rank,
            terms,
            bias: vec![0.0; d_out],
        })
    }

    /// Sketched layer whose expected output equals the dense layer's.
    pub fn from_dense(dense: &DenseLinear, num_terms: usize, low_rank: usize, seed: u64) -> Result<Self> {
        Self::from_dense_with_dist(dense, num_terms, low_rank, SketchDist::Gaussian, seed)
    }

    pub fn from_dense_with_dist(
        dense: &DenseLinear,
        num_terms: usize,
        low_rank: usize,
        dist: SketchDist,
        seed: u64,
    ) -> Result<Self> {
        let (d_out, d_in) = dense.weight.shape();
        check_hyper(d_in, d_out, num_terms, low_rank)?;
        let terms = (0..num_terms)
            .map(|i| {
                let (s1_seed, s2_seed, _) = term_seeds(seed, i);
                let s1 = SketchOp::new(dist, low_rank, d_out, s1_seed)?;
                let s2 = SketchOp::new(dist, low_rank, d_in, s2_seed)?;
                let u1 = s1.apply_left(&dense.weight)?;
                let u2 = s2.apply_right_transposed(&dense.weight)?;
                Ok(SkTerm { s1, u1, s2, u2 })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            d_in,
            d_out,
            low_rank,
            terms,
            bias: dense.bias.clone(),
        })
    }

    /// Assembles a layer from explicit terms, checking every shape.
    pub fn from_parts(d_in: usize, d_out: usize, terms: Vec<SkTerm>, bias: Vec<f64>) -> Result<Self> {
        let low_rank = terms.first().map_or(0, |t| t.u1.rows());
        check_hyper(d_in, d_out, terms.len(), low_rank)?;
        if bias.len() != d_out {
            return shape_err(format!("bias of length {} for d_out = {d_out}", bias.len()));
        }
        for (i, t) in terms.iter().enumerate() {
            let ok = t.s1.rows() == low_rank
                && t.s1.cols() == d_out
                && t.u1.shape() == (low_rank, d_in)
                && t.s2.rows() == low_rank
                && t.s2.cols() == d_in
                && t.u2.shape() == (d_out, low_rank);
            if !ok {
                return shape_err(format!("term {i} has inconsistent shapes"));
            }
        }
        Ok(Self {
            d_in,
            d_out,
            low_rank,
            terms,
            bias,
        })
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn low_rank(&self) -> usize {
        self.low_rank
    }

    pub fn terms(&self) -> &[SkTerm] {
        &self.terms
    }

    pub fn terms_mut(&mut self) -> &mut [SkTerm] {
        &mut self.terms
    }

    pub fn terms_and_bias_mut(&mut self) -> (&mut [SkTerm], &mut [f64]) {
        (&mut self.terms, &mut self.bias)
    }

    fn scale(&self) -> f64 {
        1.0 / (2.0 * self.terms.len() as f64)
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.d_in {
            return shape_err(format!("input has {} rows, layer expects {}", x.rows(), self.d_in));
        }
        let mut y = Matrix::zeros(self.d_out, x.cols());
        for t in &self.terms {
            y.axpy(1.0, &t.s1.apply_left_transposed(&matmul(&t.u1, x)?)?)?;
            y.axpy(1.0, &matmul(&t.u2, &t.s2.apply_left(x)?)?)?;
        }
        let mut y = y.scale(self.scale());
        y.add_row_broadcast(&self.bias)?;
        Ok(y)
    }

    /// Vector-Jacobian products for `grad_out = ∂L/∂y`. Sketches receive no
    /// gradient.
    pub fn backward(&self, x: &Matrix, grad_out: &Matrix) -> Result<SkLinearGrads> {
        if x.rows() != self.d_in || grad_out.rows() != self.d_out || grad_out.cols() != x.cols() {
            return shape_err("backward operands do not match the layer");
        }
        let c = self.scale();
        let mut grad_x = Matrix::zeros(self.d_in, x.cols());
        let mut grad_u1 = Vec::with_capacity(self.terms.len());
        let mut grad_u2 = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            let s1g = t.s1.apply_left(grad_out)?;
            let s2x = t.s2.apply_left(x)?;
            grad_u1.push(matmul_nt(&s1g, x)?.scale(c));
            grad_u2.push(matmul_nt(grad_out, &s2x)?.scale(c));
            grad_x.axpy(c, &crate::linalg::matmul_tn(&t.u1, &s1g)?)?;
            let u2g = crate::linalg::matmul_tn(&t.u2, grad_out)?;
            grad_x.axpy(c, &t.s2.apply_left_transposed(&u2g)?)?;
        }
        Ok(SkLinearGrads {
            grad_x,
            grad_u1,
            grad_u2,
            grad_bias: grad_out.row_sums(),
        })
    }

    pub fn param_count(&self) -> ParamCount {
        let l = self.terms.len() as u64;
        let k = self.low_rank as u64;
        let (d_in, d_out) = (self.d_in as u64, self.d_out as u64);
        ParamCount {
            learnable: l * k * (d_in + d_out) + d_out,
            total_stored: sketched_size(self.terms.len(), self.low_rank, self.d_in, self.d_out) + d_out,
            dense_equivalent: d_in * d_out + d_out,
        }
    }
}

fn check_hyper(d_in: usize, d_out: usize, num_terms: usize, low_rank: usize) -> Result<()> {
    if d_in == 0 || d_out == 0 {
        return shape_err(format!("layer dimensions must be positive, got {d_in} -> {d_out}"));
    }
    if num_terms == 0 || low_rank == 0 {
        return Err(Error::Parameter(format!(
            "num_terms and low_rank must be at least 1, got l={num_terms}, k={low_rank}"
        )));
    }
    Ok(())
}
