//! Seeded random sketch operators.
//!
//! A [`SketchOp`] is a descriptor `(distribution, rows k, cols d, seed)`;
//! the dense `k × d` matrix is realized on first use and cached. Entries
//! are scaled so that `E[SᵀS] = I_d` for every distribution.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::linalg::{matmul, matmul_nt, matmul_tn, Matrix};
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum SketchDist {
    /// i.i.d. `N(0, 1/k)` entries.
    Gaussian,
    /// i.i.d. `±1/√k` entries.
    Rademacher,
    /// Exactly `nnz_per_col` entries `±1/√nnz_per_col` per column.
    SparseSign { nnz_per_col: usize },
}

impl SketchDist {
    /// Sparse sign sketch with the default column density `min(8, k)`.
    pub fn sparse_sign_for(k: usize) -> Self {
        SketchDist::SparseSign {
            nnz_per_col: k.min(8),
        }
    }
}

#[derive(Debug)]
pub struct SketchOp {
    dist: SketchDist,
    rows: usize,
    cols: usize,
    seed: u64,
    injected: bool,
    realized: OnceLock<Matrix>,
}

impl Clone for SketchOp {
    fn clone(&self) -> Self {
        Self {
            dist: self.dist,
            rows: self.rows,
            cols: self.cols,
            seed: self.seed,
            injected: self.injected,
            realized: self.realized.clone(),
        }
    }
}

impl PartialEq for SketchOp {
    fn eq(&self, other: &Self) -> bool {
        if self.injected || other.injected {
            return self.injected == other.injected && self.realize() == other.realize();
        }
        self.descriptor() == other.descriptor()
    }
}

/// Serializable identity of a sketch: everything needed to re-realize it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SketchDescriptor {
    #[serde(flatten)]
    pub dist: SketchDist,
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
}

impl SketchOp {
    pub fn new(dist: SketchDist, k: usize, d: usize, seed: u64) -> Result<Self> {
        if k == 0 || d == 0 {
            return shape_err(format!("sketch dimensions must be positive, got {k}x{d}"));
        }
        if let SketchDist::SparseSign { nnz_per_col } = dist {
            if nnz_per_col == 0 || nnz_per_col > k {
                return shape_err(format!(
                    "sparse sign sketch needs 1 <= nnz_per_col <= {k}, got {nnz_per_col}"
                ));
            }
        }
        Ok(Self {
            dist,
            rows: k,
            cols: d,
            seed,
            injected: false,
            realized: OnceLock::new(),
        })
    }

    pub fn from_descriptor(desc: SketchDescriptor) -> Result<Self> {
        Self::new(desc.dist, desc.rows, desc.cols, desc.seed)
    }

    /// A sketch whose realized matrix is given explicitly instead of drawn.
    /// Intended for tests; such sketches cannot be serialized.
    pub fn injected(matrix: Matrix) -> Self {
        let (rows, cols) = matrix.shape();
        let cell = OnceLock::new();
        let _ = cell.set(matrix);
        Self {
            dist: SketchDist::Gaussian,
            rows,
            cols,
            seed: 0,
            injected: true,
            realized: cell,
        }
    }

    pub fn dist(&self) -> SketchDist {
        self.dist
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_injected(&self) -> bool {
        self.injected
    }

    pub fn descriptor(&self) -> SketchDescriptor {
        SketchDescriptor {
            dist: self.dist,
            rows: self.rows,
            cols: self.cols,
            seed: self.seed,
        }
    }

    /// The dense `k × d` matrix, drawn on first call.
    pub fn realize(&self) -> &Matrix {
        self.realized.get_or_init(|| draw(self.dist, self.rows, self.cols, self.seed))
    }

    /// `S · a` for `a` with `d` rows.
    pub fn apply_left(&self, a: &Matrix) -> Result<Matrix> {
        self.check(a.rows(), self.cols, "apply_left")?;
        matmul(self.realize(), a)
    }

    /// `Sᵀ · a` for `a` with `k` rows.
    pub fn apply_left_transposed(&self, a: &Matrix) -> Result<Matrix> {
        self.check(a.rows(), self.rows, "apply_left_transposed")?;
        matmul_tn(self.realize(), a)
    }

    /// `a · S` for `a` with `k` columns.
    pub fn apply_right(&self, a: &Matrix) -> Result<Matrix> {
        self.check(a.cols(), self.rows, "apply_right")?;
        matmul(a, self.realize())
    }

    /// `a · Sᵀ` for `a` with `d` columns.
    pub fn apply_right_transposed(&self, a: &Matrix) -> Result<Matrix> {
        self.check(a.cols(), self.cols, "apply_right_transposed")?;
        matmul_nt(a, self.realize())
    }

    fn check(&self, got: usize, want: usize, what: &str) -> Result<()> {
        if got != want {
            return shape_err(format!(
                "{what}: sketch is {}x{}, operand dimension is {got}",
                self.rows, self.cols
            ));
        }
        Ok(())
    }
}

fn draw(dist: SketchDist, k: usize, d: usize, seed: u64) -> Matrix {
    let mut rng = SeededRng::new(seed);
    match dist {
        SketchDist::Gaussian => {
            let scale = 1.0 / (k as f64).sqrt();
            Matrix::from_fn(k, d, |_, _| scale * rng.normal())
        }
        SketchDist::Rademacher => {
            let scale = 1.0 / (k as f64).sqrt();
            Matrix::from_fn(k, d, |_, _| if rng.coin() { scale } else { -scale })
        }
        SketchDist::SparseSign { nnz_per_col } => {
            let scale = 1.0 / (nnz_per_col as f64).sqrt();
            let mut m = Matrix::zeros(k, d);
            for j in 0..d {
                for i in rng.sample_distinct(k, nnz_per_col) {
                    m[(i, j)] = if rng.coin() { scale } else { -scale };
                }
            }
            m
        }
    }
}
