//! Workload grids and the runners that turn them into [`BenchRecord`]s.

mod attention;
mod conv;
mod decomp;
mod linear;

pub use attention::{run_attention_bench, AttentionGrid};
pub use conv::{run_conv_bench, ConvGrid};
pub use decomp::{run_decomp_bench, DecompKind, DecompParams};
pub use linear::{run_linear_bench, LinearGrid};

use thiserror::Error;

use crate::record::{BenchRecord, SKIP_RESOURCE};
use crate::timing::{time_op, TimingError};

pub const DEFAULT_TRIALS: usize = 200;
pub const DEFAULT_WARMUP: usize = 10;
pub const DEFAULT_BATCH: usize = 32;
/// Above this analytic footprint a configuration is recorded as skipped
/// for lack of resources instead of being allocated.
pub const DEFAULT_MAX_BYTES: u64 = 4 << 30;
pub const DEFAULT_MEM_BUDGET: u64 = 2 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Protocol {
    pub trials: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            trials: DEFAULT_TRIALS,
            warmup: DEFAULT_WARMUP,
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    /// Rejected before anything was timed.
    #[error("{0}")]
    Usage(String),
    #[error("{op}: {source}")]
    Timing { op: String, source: TimingError },
    #[error("{op}: {source}")]
    Core { op: String, source: rnla_core::Error },
    #[error("{0}")]
    Check(String),
}

impl Protocol {
    fn validate(&self) -> Result<(), BenchError> {
        if self.trials == 0 {
            return Err(BenchError::Usage("trials must be at least 1".into()));
        }
        Ok(())
    }

    fn record(&self, op: &str, implementation: crate::record::Impl) -> BenchRecord {
        BenchRecord::new(op, implementation, self.seed, self.trials, self.warmup)
    }
}

fn core_err(op: &str) -> impl Fn(rnla_core::Error) -> BenchError + '_ {
    move |source| BenchError::Core { op: op.to_string(), source }
}

/// Times `thunk` into `rec`, unless the estimated footprint exceeds
/// `max_bytes`.
fn measure<T>(
    rec: &mut BenchRecord,
    protocol: &Protocol,
    max_bytes: u64,
    setup: impl FnOnce() -> rnla_core::Result<T>,
    mut thunk: impl FnMut(&T) -> rnla_core::Result<()>,
) -> Result<(), BenchError> {
    if rec.est_mem_bytes.is_some_and(|b| b > max_bytes) {
        rec.skip(SKIP_RESOURCE);
        return Ok(());
    }
    let state = setup().map_err(core_err(&rec.op))?;
    let timing = time_op(|| thunk(&state), protocol.trials, protocol.warmup).map_err(|source| BenchError::Timing {
        op: rec.op.clone(),
        source,
    })?;
    rec.timing = Some(timing);
    Ok(())
}
