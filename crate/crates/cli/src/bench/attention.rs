use rnla_core::nn::memory::{exact_mha_bytes, rand_mha_bytes};
use rnla_core::nn::{AttentionKernel, ExactMha, MhaWeights, RandMha};
use rnla_core::rng::{derive_seed, SeededRng};
use rnla_core::Matrix;

use super::{core_err, measure, BenchError, Protocol, DEFAULT_MEM_BUDGET};
use crate::record::{BenchRecord, Impl, KernelCell, SKIP_MEMORY_BUDGET};

/// Largest relative disagreement tolerated by the single-token check.
const SPOT_CHECK_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionGrid {
    pub d_model: Vec<usize>,
    pub heads: Vec<usize>,
    pub num_features: Vec<usize>,
    pub kernels: Vec<AttentionKernel>,
    pub seq_lens: Vec<usize>,
    /// Rows whose estimated footprint exceeds this many bytes are skipped.
    pub mem_budget: u64,
    pub protocol: Protocol,
}

impl Default for AttentionGrid {
    fn default() -> Self {
        Self {
            d_model: Vec::new(),
            heads: Vec::new(),
            num_features: Vec::new(),
            kernels: vec![AttentionKernel::Softmax],
            seq_lens: Vec::new(),
            mem_budget: DEFAULT_MEM_BUDGET,
            protocol: Protocol::default(),
        }
    }
}

/// Exact attention and one random-feature row per `(kernel, m)` for every
/// `(d_model, heads, N)`.
pub fn run_attention_bench(grid: &AttentionGrid) -> Result<Vec<BenchRecord>, BenchError> {
    grid.protocol.validate()?;
    for &d in &grid.d_model {
        for &h in &grid.heads {
            if h == 0 || d == 0 || d % h != 0 {
                return Err(BenchError::Usage(format!("d_model {d} is not divisible by {h} heads")));
            }
        }
    }
    if grid.num_features.contains(&0) || grid.seq_lens.contains(&0) {
        return Err(BenchError::Usage("feature counts and sequence lengths must be positive".into()));
    }

    let mut out = Vec::new();
    for &d in &grid.d_model {
        for &h in &grid.heads {
            let weight_seed = derive_seed(grid.protocol.seed, (d as u64) << 16 | h as u64);
            let weights = MhaWeights::random(d, h, weight_seed).map_err(core_err("attention"))?;
            let exact = ExactMha::new(weights.clone());
            let rand_layers = grid
                .kernels
                .iter()
                .flat_map(|&kernel| grid.num_features.iter().map(move |&m| (kernel, m)))
                .map(|(kernel, m)| {
                    let seed = derive_seed(weight_seed, m as u64);
                    RandMha::new(weights.clone(), m, kernel, seed).map_err(core_err("attention"))
                })
                .collect::<Result<Vec<_>, _>>()?;
            for layer in &rand_layers {
                spot_check(&exact, layer, weight_seed)?;
            }

            for &n in &grid.seq_lens {
                let x = || -> rnla_core::Result<Matrix> {
                    Ok(Matrix::random_normal(n, d, &mut SeededRng::new(derive_seed(weight_seed, n as u64))))
                };
                let mut rec = attention_record(grid, Impl::Dense, d, h, n);
                rec.params_dense = Some(4 * (d * d) as u64);
                rec.est_mem_bytes = Some(exact_mha_bytes(d, h, n, 8));
                time_or_skip(&mut rec, grid, x, |x| exact.forward(x).map(drop))?;
                out.push(rec);

                for layer in &rand_layers {
                    let m = layer.num_features();
                    let mut rec = attention_record(grid, Impl::Sketched, d, h, n);
                    rec.kernel = Some(KernelCell::Attention(layer.kernel()));
                    rec.num_features = Some(m);
                    rec.params_dense = Some(4 * (d * d) as u64);
                    rec.params_sketched = Some((4 * d * d + m * d) as u64);
                    rec.est_mem_bytes = Some(rand_mha_bytes(d, h, m, n, 8));
                    time_or_skip(&mut rec, grid, x, |x| layer.forward(x).map(drop))?;
                    out.push(rec);
                }
            }
        }
    }
    Ok(out)
}

fn time_or_skip(
    rec: &mut BenchRecord,
    grid: &AttentionGrid,
    setup: impl FnOnce() -> rnla_core::Result<Matrix>,
    thunk: impl FnMut(&Matrix) -> rnla_core::Result<()>,
) -> Result<(), BenchError> {
    if rec.est_mem_bytes.is_some_and(|b| b > grid.mem_budget) {
        rec.skip(SKIP_MEMORY_BUDGET);
        return Ok(());
    }
    measure(rec, &grid.protocol, u64::MAX, setup, thunk)
}

/// A lone token attends only to itself, so both layers must return
/// `v · W_o` once the normalizer regularization is switched off.
fn spot_check(exact: &ExactMha, rand: &RandMha, seed: u64) -> Result<(), BenchError> {
    let d = exact.weights.embed_dim();
    let x = Matrix::random_normal(1, d, &mut SeededRng::new(derive_seed(seed, u64::MAX)));
    let mut probe = rand.clone();
    probe.epsilon = 0.0;
    let a = exact.forward(&x).map_err(core_err("attention"))?;
    let b = probe.forward(&x).map_err(core_err("attention"))?;
    let err = a.sub(&b).map_err(core_err("attention"))?.frobenius_norm() / a.frobenius_norm().max(f64::MIN_POSITIVE);
    if err > SPOT_CHECK_TOL {
        return Err(BenchError::Check(format!(
            "single-token outputs of exact and {} random-feature attention (m={}) differ by {err:e}",
            rand.kernel(),
            rand.num_features()
        )));
    }
    Ok(())
}

fn attention_record(grid: &AttentionGrid, implementation: Impl, d: usize, h: usize, n: usize) -> BenchRecord {
    let mut rec = grid.protocol.record("attention", implementation);
    rec.d_model = Some(d);
    rec.heads = Some(h);
    rec.seq_len = Some(n);
    rec
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_flags_rows_without_running_them() {
        let grid = AttentionGrid {
            d_model: vec![512],
            heads: vec![8],
            num_features: vec![256],
            seq_lens: vec![8192],
            // Tight enough to skip both rows so nothing is timed.
            mem_budget: 256 << 20,
            protocol: Protocol {
                trials: 1,
                warmup: 0,
                seed: 0,
            },
            ..AttentionGrid::default()
        };
        let recs = run_attention_bench(&grid).unwrap();
        assert_eq!(recs.len(), 2);
        assert!(recs.iter().all(|r| r.skip_reason.as_deref() == Some(SKIP_MEMORY_BUDGET)));
        assert!(recs[0].est_mem_bytes.unwrap() > 2 << 30);
        assert!(recs[1].est_mem_bytes.unwrap() < 2 << 30);
    }

    #[test]
    fn small_grid_runs_both_kernels() {
        let grid = AttentionGrid {
            d_model: vec![16],
            heads: vec![2],
            num_features: vec![8, 32],
            kernels: vec![AttentionKernel::Softmax, AttentionKernel::Relu],
            seq_lens: vec![4, 8],
            protocol: Protocol {
                trials: 2,
                warmup: 1,
                seed: 3,
            },
            ..AttentionGrid::default()
        };
        let recs = run_attention_bench(&grid).unwrap();
        assert_eq!(recs.len(), 2 * 5);
        assert!(recs.iter().all(|r| r.timing.is_some()));
        assert_eq!(recs[1].kernel, Some(KernelCell::Attention(AttentionKernel::Softmax)));
        assert_eq!(recs[4].kernel, Some(KernelCell::Attention(AttentionKernel::Relu)));
        let (e4, e8) = (recs[0].est_mem_bytes.unwrap(), recs[5].est_mem_bytes.unwrap());
        assert!(e8 > e4);
    }

    #[test]
    fn indivisible_heads_rejected() {
        let grid = AttentionGrid {
            d_model: vec![10],
            heads: vec![3],
            ..AttentionGrid::default()
        };
        assert!(matches!(run_attention_bench(&grid), Err(BenchError::Usage(_))));
    }
}
