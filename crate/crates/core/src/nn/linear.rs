use crate::error::{shape_err, Result};
use crate::linalg::{matmul, matmul_nt, matmul_tn, Matrix};
use crate::rng::SeededRng;

/// Dense affine map `y = W·x + b` on column-major batches (`x` is `d_in × batch`).
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLinear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DenseLinearGrads {
    pub grad_x: Matrix,
    pub grad_weight: Matrix,
    pub grad_bias: Vec<f64>,
}

impl DenseLinear {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return shape_err(format!(
                "bias of length {} for a {}x{} weight",
                bias.len(),
                weight.rows(),
                weight.cols()
            ));
        }
        Ok(Self { weight, bias })
    }

    /// He-style initialization with zero bias.
    pub fn random(d_in: usize, d_out: usize, seed: u64) -> Self {
        let mut rng = SeededRng::new(seed);
        let std = (2.0 / d_in as f64).sqrt();
        let weight = Matrix::from_fn(d_out, d_in, |_, _| std * rng.normal());
        Self {
            weight,
            bias: vec![0.0; d_out],
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        dense_linear_forward(&self.weight, &self.bias, x)
    }

    pub fn backward(&self, x: &Matrix, grad_out: &Matrix) -> Result<DenseLinearGrads> {
        if grad_out.rows() != self.d_out() || grad_out.cols() != x.cols() {
            return shape_err("grad_out does not match the layer output");
        }
        Ok(DenseLinearGrads {
            grad_x: matmul_tn(&self.weight, grad_out)?,
            grad_weight: matmul_nt(grad_out, x)?,
            grad_bias: grad_out.row_sums(),
        })
    }
}

/// `w · x + b`, with `b` broadcast over the batch columns.
pub fn dense_linear_forward(w: &Matrix, b: &[f64], x: &Matrix) -> Result<Matrix> {
    let mut y = matmul(w, x)?;
    y.add_row_broadcast(b)?;
    Ok(y)
}
