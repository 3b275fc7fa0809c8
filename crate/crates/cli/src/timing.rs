use std::hint::black_box;
use std::time::Instant;

use thiserror::Error;

pub type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Timing {
    pub mean_ms: f64,
    /// Sample standard deviation; zero for a single trial.
    pub std_ms: f64,
}

#[derive(Debug, Error)]
pub enum TimingError {
    #[error("at least one timed trial is required")]
    NoTrials,
    #[error("{} iteration {iteration} failed: {source}", if *.warmup { "warmup" } else { "timed" })]
    Iteration {
        iteration: usize,
        warmup: bool,
        source: BoxError,
    },
}

/// Runs `warmup` discarded calls, then `trials` timed calls on the current
/// thread.
pub fn time_op<T, E>(mut thunk: impl FnMut() -> Result<T, E>, trials: usize, warmup: usize) -> Result<Timing, TimingError>
where
    E: Into<BoxError>,
{
    if trials == 0 {
        return Err(TimingError::NoTrials);
    }
    for iteration in 0..warmup {
        black_box(thunk().map_err(|e| TimingError::Iteration {
            iteration,
            warmup: true,
            source: e.into(),
        })?);
    }
    let mut samples = Vec::with_capacity(trials);
    for iteration in 0..trials {
        let start = Instant::now();
        let out = thunk();
        let elapsed = start.elapsed();
        black_box(out.map_err(|e| TimingError::Iteration {
            iteration,
            warmup: false,
            source: e.into(),
        })?);
        samples.push(elapsed.as_secs_f64() * 1e3);
    }
    Ok(summarize(&samples))
}

fn summarize(samples: &[f64]) -> Timing {
    let n = samples.len() as f64;
    let mean_ms = samples.iter().sum::<f64>() / n;
    let std_ms = if samples.len() < 2 {
        0.0
    } else {
        (samples.iter().map(|s| (s - mean_ms).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Timing { mean_ms, std_ms }
}
