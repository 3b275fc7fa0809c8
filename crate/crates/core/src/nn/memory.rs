//! Analytic forward-pass memory accounting: parameter floats plus the peak
//! set of live activation buffers, times the element width.

use super::conv::ConvGeometry;
use crate::error::Result;

/// Input extent for [`Layer::memory_estimate`](super::model::Layer::memory_estimate).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputShape {
    /// Number of columns fed to a linear layer.
    Batch(usize),
    Image { batch: usize, height: usize, width: usize },
    /// Sequence length for attention.
    Sequence(usize),
}

/// Exact multi-head attention with all `h` score matrices live at once:
/// `4d² + 6Nd + hN²` floats (projections; input, Q, K, V, heads, output;
/// scores).
pub fn exact_mha_bytes(d_model: usize, heads: usize, seq_len: usize, width: usize) -> u64 {
    let (d, h, n) = (d_model as u64, heads as u64, seq_len as u64);
    (4 * d * d + 6 * n * d + h * n * n) * width as u64
}

/// Random-feature attention: `4d² + md` parameters and features, the same
/// `6Nd` sequence buffers, `Φ_q` and `Φ_k` per head (`2hNm`), the per-head
/// `Φ_kᵀV` and `Φ_kᵀ1` summaries (`md + hm`) and the normalizers (`hN`).
pub fn rand_mha_bytes(
    d_model: usize,
    heads: usize,
    num_features: usize,
    seq_len: usize,
    width: usize,
) -> u64 {
    let (d, h, m, n) = (d_model as u64, heads as u64, num_features as u64, seq_len as u64);
    let params = 4 * d * d + m * d;
    let work = 6 * n * d + 2 * h * n * m + m * d + h * m + h * n;
    (params + work) * width as u64
}

/// Linear layer: `params` stored floats plus the input and output batches.
pub fn linear_bytes(params: u64, d_in: usize, d_out: usize, batch: usize, width: usize) -> u64 {
    (params + ((d_in + d_out) * batch) as u64) * width as u64
}

/// Convolution through im2col: `params` stored floats, the input maps, the
/// lowered patch matrix and two `c_out × patches` buffers (the matrix
/// product and the re-laid-out output).
pub fn conv_bytes(
    params: u64,
    geometry: &ConvGeometry,
    batch: usize,
    height: usize,
    width_px: usize,
    width: usize,
) -> Result<u64> {
    let (oh, ow) = geometry.output_dims(height, width_px)?;
    let patches = (batch * oh * ow) as u64;
    let floats = params
        + (batch * geometry.c_in * height * width_px) as u64
        + geometry.patch_len() as u64 * patches
        + 2 * geometry.c_out as u64 * patches;
    Ok(floats * width as u64)
}

/// Least-squares slope of `log(bytes)` against `log(n)`.
pub fn scaling_exponent(points: &[(usize, u64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .map(|&(n, b)| ((n as f64).ln(), (b as f64).ln()))
        .collect();
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
