use std::fmt;
use std::str::FromStr;

use rnla_core::decomp::{cqrrpt, rsvd, DEFAULT_GAMMA, DEFAULT_OVERSAMPLE, DEFAULT_POWER_ITERS};
use rnla_core::linalg::{matmul, matmul_tn};
use rnla_core::rng::{derive_seed, SeededRng};
use rnla_core::Matrix;

use super::{BenchError, Protocol};
use crate::record::{BenchRecord, Impl};
use crate::timing::time_op;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecompKind {
    Rsvd,
    Cqrrpt,
}

impl fmt::Display for DecompKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecompKind::Rsvd => "rsvd",
            DecompKind::Cqrrpt => "cqrrpt",
        })
    }
}

impl FromStr for DecompKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rsvd" => Ok(DecompKind::Rsvd),
            "cqrrpt" => Ok(DecompKind::Cqrrpt),
            _ => Err(format!("unknown decomposition {s:?}; expected rsvd or cqrrpt")),
        }
    }
}

/// The input is a product of Gaussian `rows × rank` and `rank × cols`
/// factors, or a plain Gaussian matrix without `rank`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecompParams {
    pub kind: DecompKind,
    pub rows: usize,
    pub cols: usize,
    /// Rank of the synthetic input; also the target rank of RSVD.
    pub rank: Option<usize>,
    pub oversample: usize,
    pub power_iters: usize,
    pub gamma: f64,
    pub rank_tol: f64,
    pub protocol: Protocol,
}

impl DecompParams {
    pub fn new(kind: DecompKind, rows: usize, cols: usize) -> Self {
        Self {
            kind,
            rows,
            cols,
            rank: None,
            oversample: DEFAULT_OVERSAMPLE,
            power_iters: DEFAULT_POWER_ITERS,
            gamma: DEFAULT_GAMMA,
            rank_tol: 1e-10,
            protocol: Protocol::default(),
        }
    }

    fn validate(&self) -> Result<(), BenchError> {
        self.protocol.validate()?;
        let (m, n) = (self.rows, self.cols);
        if m == 0 || n == 0 {
            return Err(BenchError::Usage(format!("matrix dimensions must be positive, got {m}x{n}")));
        }
        if self.rank == Some(0) {
            return Err(BenchError::Usage("rank must be at least 1".into()));
        }
        match self.kind {
            DecompKind::Cqrrpt if m < n => Err(BenchError::Usage(format!("cqrrpt needs a tall input, got {m}x{n}"))),
            DecompKind::Cqrrpt if !(self.gamma > 1.0) => {
                Err(BenchError::Usage(format!("gamma must exceed 1, got {}", self.gamma)))
            }
            DecompKind::Rsvd => {
                let k = self.rank.ok_or_else(|| BenchError::Usage("rsvd needs a target --rank".into()))?;
                if k + self.oversample > m.min(n) {
                    return Err(BenchError::Usage(format!(
                        "rank {k} plus oversampling {} exceeds min({m}, {n})",
                        self.oversample
                    )));
                }
                Ok(())
            }
            DecompKind::Cqrrpt => Ok(()),
        }
    }

    fn input(&self) -> Matrix {
        let mut rng = SeededRng::new(derive_seed(self.protocol.seed, 0));
        match self.rank {
            Some(r) if r < self.rows.min(self.cols) => {
                let left = Matrix::random_normal(self.rows, r, &mut rng);
                let right = Matrix::random_normal(r, self.cols, &mut rng);
                matmul(&left, &right).expect("factor shapes agree")
            }
            _ => Matrix::random_normal(self.rows, self.cols, &mut rng),
        }
    }
}

/// Times one decomposition and records its reconstruction and
/// orthogonality residuals. A failed decomposition yields a skipped record.
pub fn run_decomp_bench(params: &DecompParams) -> Result<Vec<BenchRecord>, BenchError> {
    params.validate()?;
    let a = params.input();
    let seed = derive_seed(params.protocol.seed, 1);
    let p = &params.protocol;

    let mut rec = p.record(&params.kind.to_string(), Impl::Sketched);
    rec.d_in = Some(params.cols);
    rec.d_out = Some(params.rows);
    rec.params_dense = Some((params.rows * params.cols) as u64);

    let outcome = match params.kind {
        DecompKind::Rsvd => {
            let k = params.rank.expect("validated");
            rec.low_rank = Some(k);
            let run = || rsvd(&a, k, params.oversample, params.power_iters, seed);
            run().map(|res| {
                let recon = res.reconstruct();
                rec.params_sketched = Some(((params.rows + params.cols + 1) * k) as u64);
                rec.recon_rel_err = Some(relative(&a, &recon));
                rec.orth_err = Some(orth_residual(&res.u));
                time_op(run, p.trials, p.warmup)
            })
        }
        DecompKind::Cqrrpt => {
            let run = || cqrrpt(&a, params.gamma, params.rank_tol, seed);
            run().map(|res| {
                let recon = matmul(&res.q, &res.r_mat).expect("factor shapes agree");
                rec.low_rank = Some(res.rank);
                rec.params_sketched = Some(((params.rows + params.cols) * res.rank) as u64);
                rec.recon_rel_err = Some(relative(&a.select_cols(&res.pivots), &recon));
                rec.orth_err = Some(orth_residual(&res.q));
                time_op(run, p.trials, p.warmup)
            })
        }
    };
    match outcome {
        Ok(timing) => {
            rec.timing = Some(timing.map_err(|source| BenchError::Timing {
                op: rec.op.clone(),
                source,
            })?)
        }
        Err(e) => rec.skip(format!("failed: {e}")),
    }
    Ok(vec![rec])
}

fn relative(a: &Matrix, approx: &Matrix) -> f64 {
    let norm = a.frobenius_norm();
    let err = a.sub(approx).expect("same shape").frobenius_norm();
    if norm == 0.0 {
        err
    } else {
        err / norm
    }
}

fn orth_residual(q: &Matrix) -> f64 {
    let gram = matmul_tn(q, q).expect("same rows");
    gram.sub(&Matrix::identity(q.cols())).expect("square").frobenius_norm()
}
