use rnla_core::nn::memory::linear_bytes;
use rnla_core::nn::sk_linear::{exceeds_dense, sketched_size};
use rnla_core::nn::{DenseLinear, SkLinear};
use rnla_core::rng::{derive_seed, SeededRng};
use rnla_core::Matrix;

use super::{measure, BenchError, Protocol, DEFAULT_BATCH, DEFAULT_MAX_BYTES};
use crate::record::{BenchRecord, Impl, SKIP_EXCEEDS_DENSE};

#[derive(Clone, Debug, PartialEq)]
pub struct LinearGrid {
    pub d_in: Vec<usize>,
    pub d_out: Vec<usize>,
    pub num_terms: Vec<usize>,
    pub low_ranks: Vec<usize>,
    pub batch: usize,
    pub max_bytes: u64,
    pub protocol: Protocol,
}

impl Default for LinearGrid {
    fn default() -> Self {
        Self {
            d_in: Vec::new(),
            d_out: Vec::new(),
            num_terms: Vec::new(),
            low_ranks: Vec::new(),
            batch: DEFAULT_BATCH,
            max_bytes: DEFAULT_MAX_BYTES,
            protocol: Protocol::default(),
        }
    }
}

/// One dense record per `(d_in, d_out)` followed by one sketched record per
/// `(l, k)`.
pub fn run_linear_bench(grid: &LinearGrid) -> Result<Vec<BenchRecord>, BenchError> {
    grid.protocol.validate()?;
    if grid.batch == 0 {
        return Err(BenchError::Usage("batch must be at least 1".into()));
    }
    let mut out = Vec::new();
    for &d_in in &grid.d_in {
        for &d_out in &grid.d_out {
            if d_in == 0 || d_out == 0 {
                return Err(BenchError::Usage(format!("layer dimensions must be positive, got {d_in}x{d_out}")));
            }
            let shape_seed = derive_seed(grid.protocol.seed, (d_in as u64) << 32 | d_out as u64);
            let input = || -> rnla_core::Result<Matrix> {
                Ok(Matrix::random_normal(d_in, grid.batch, &mut SeededRng::new(shape_seed)))
            };
            let dense_params = (d_in * d_out) as u64;

            let mut rec = linear_record(grid, "linear", Impl::Dense, d_in, d_out);
            rec.params_dense = Some(dense_params);
            rec.est_mem_bytes = Some(linear_bytes(dense_params + d_out as u64, d_in, d_out, grid.batch, 8));
            measure(
                &mut rec,
                &grid.protocol,
                grid.max_bytes,
                || Ok((DenseLinear::random(d_in, d_out, derive_seed(shape_seed, 1)), input()?)),
                |(layer, x)| layer.forward(x).map(drop),
            )?;
            out.push(rec);

            for &l in &grid.num_terms {
                for &k in &grid.low_ranks {
                    if l == 0 || k == 0 {
                        return Err(BenchError::Usage(format!("l and k must be at least 1, got l={l}, k={k}")));
                    }
                    let mut rec = linear_record(grid, "linear", Impl::Sketched, d_in, d_out);
                    rec.num_terms = Some(l);
                    rec.low_rank = Some(k);
                    rec.params_dense = Some(dense_params);
                    let stored = sketched_size(l, k, d_in, d_out);
                    rec.params_sketched = Some(stored);
                    rec.est_mem_bytes = Some(linear_bytes(stored + d_out as u64, d_in, d_out, grid.batch, 8));
                    if exceeds_dense(l, k, d_in, d_out) {
                        rec.skip(SKIP_EXCEEDS_DENSE);
                    } else {
                        let seed = derive_seed(shape_seed, 2 + ((l as u64) << 20 | k as u64));
                        measure(
                            &mut rec,
                            &grid.protocol,
                            grid.max_bytes,
                            || Ok((SkLinear::new(d_in, d_out, l, k, seed)?, input()?)),
                            |(layer, x)| layer.forward(x).map(drop),
                        )?;
                    }
                    out.push(rec);
                }
            }
        }
    }
    Ok(out)
}

fn linear_record(grid: &LinearGrid, op: &str, implementation: Impl, d_in: usize, d_out: usize) -> BenchRecord {
    let mut rec = grid.protocol.record(op, implementation);
    rec.d_in = Some(d_in);
    rec.d_out = Some(d_out);
    rec.batch = Some(grid.batch);
    rec
}
