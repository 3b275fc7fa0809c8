use rnla_core::nn::memory::conv_bytes;
use rnla_core::nn::sk_linear::{exceeds_dense, sketched_size};
use rnla_core::nn::{ConvGeometry, DenseConv2d, FeatureMaps, SkConv2d};
use rnla_core::rng::{derive_seed, SeededRng};

use super::{core_err, measure, BenchError, Protocol, DEFAULT_BATCH, DEFAULT_MAX_BYTES};
use crate::record::{BenchRecord, Impl, KernelCell, SKIP_EXCEEDS_DENSE};

/// Square kernels at stride 1 with `kernel / 2` zero padding.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrid {
    pub c_in: Vec<usize>,
    pub c_out: Vec<usize>,
    pub kernels: Vec<usize>,
    pub images: Vec<usize>,
    pub num_terms: Vec<usize>,
    pub low_ranks: Vec<usize>,
    pub batch: usize,
    pub max_bytes: u64,
    pub protocol: Protocol,
}

impl Default for ConvGrid {
    fn default() -> Self {
        Self {
            c_in: Vec::new(),
            c_out: Vec::new(),
            kernels: Vec::new(),
            images: Vec::new(),
            num_terms: Vec::new(),
            low_ranks: Vec::new(),
            batch: DEFAULT_BATCH,
            max_bytes: DEFAULT_MAX_BYTES,
            protocol: Protocol::default(),
        }
    }
}

pub fn run_conv_bench(grid: &ConvGrid) -> Result<Vec<BenchRecord>, BenchError> {
    grid.protocol.validate()?;
    if grid.batch == 0 {
        return Err(BenchError::Usage("batch must be at least 1".into()));
    }
    let mut out = Vec::new();
    for &c_in in &grid.c_in {
        for &c_out in &grid.c_out {
            for &kernel in &grid.kernels {
                for &image in &grid.images {
                    if c_in == 0 || c_out == 0 || kernel == 0 || image == 0 {
                        return Err(BenchError::Usage(format!(
                            "conv dimensions must be positive, got c_in={c_in} c_out={c_out} kernel={kernel} image={image}"
                        )));
                    }
                    run_shape(grid, ConvGeometry::square(c_in, c_out, kernel, 1, kernel / 2), image, &mut out)?;
                }
            }
        }
    }
    Ok(out)
}

fn run_shape(grid: &ConvGrid, g: ConvGeometry, image: usize, out: &mut Vec<BenchRecord>) -> Result<(), BenchError> {
    let (d_in, d_out) = (g.patch_len(), g.c_out);
    let shape_seed = derive_seed(
        grid.protocol.seed,
        (g.c_in as u64) << 40 | (g.c_out as u64) << 20 | (g.kernel_h as u64) << 10 | image as u64,
    );
    let input = || FeatureMaps::random_normal(grid.batch, g.c_in, image, image, &mut SeededRng::new(shape_seed));
    let bytes = |params: u64| conv_bytes(params, &g, grid.batch, image, image, 8).map_err(core_err("conv"));
    let dense_params = (d_in * d_out) as u64;

    let mut rec = conv_record(grid, Impl::Dense, &g, image);
    rec.params_dense = Some(dense_params);
    rec.est_mem_bytes = Some(bytes(dense_params + d_out as u64)?);
    measure(
        &mut rec,
        &grid.protocol,
        grid.max_bytes,
        || Ok((DenseConv2d::random(g, derive_seed(shape_seed, 1)), input())),
        |(layer, x)| layer.forward(x).map(drop),
    )?;
    out.push(rec);

    for &l in &grid.num_terms {
        for &k in &grid.low_ranks {
            if l == 0 || k == 0 {
                return Err(BenchError::Usage(format!("l and k must be at least 1, got l={l}, k={k}")));
            }
            let mut rec = conv_record(grid, Impl::Sketched, &g, image);
            rec.num_terms = Some(l);
            rec.low_rank = Some(k);
            rec.params_dense = Some(dense_params);
            let stored = sketched_size(l, k, d_in, d_out);
            rec.params_sketched = Some(stored);
            rec.est_mem_bytes = Some(bytes(stored + d_out as u64)?);
            if exceeds_dense(l, k, d_in, d_out) {
                rec.skip(SKIP_EXCEEDS_DENSE);
            } else {
                let seed = derive_seed(shape_seed, 2 + ((l as u64) << 20 | k as u64));
                measure(
                    &mut rec,
                    &grid.protocol,
                    grid.max_bytes,
                    || Ok((SkConv2d::new(g, l, k, seed)?, input())),
                    |(layer, x)| layer.forward(x).map(drop),
                )?;
            }
            out.push(rec);
        }
    }
    Ok(())
}

fn conv_record(grid: &ConvGrid, implementation: Impl, g: &ConvGeometry, image: usize) -> BenchRecord {
    let mut rec = grid.protocol.record("conv", implementation);
    rec.c_in = Some(g.c_in);
    rec.c_out = Some(g.c_out);
    rec.kernel = Some(KernelCell::Size(g.kernel_h));
    rec.image = Some(image);
    rec.d_in = Some(g.patch_len());
    rec.d_out = Some(g.c_out);
    rec.batch = Some(grid.batch);
    rec
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{run_linear_bench, LinearGrid};

    fn protocol() -> Protocol {
        Protocol {
            trials: 2,
            warmup: 0,
            seed: 4,
        }
    }

    #[test]
    fn large_config_admits_whole_grid() {
        let grid = ConvGrid {
            c_in: vec![256],
            c_out: vec![2048],
            kernels: vec![9],
            images: vec![64],
            num_terms: vec![1, 2, 3],
            low_ranks: vec![8, 16, 32],
            batch: 1,
            max_bytes: 0,
            protocol: protocol(),
        };
        let recs = run_conv_bench(&grid).unwrap();
        assert_eq!(recs.len(), 10);
        assert_eq!(recs[0].params_dense, Some(42_467_328));
        assert_eq!(recs[9].params_sketched, Some(4_374_528));
        // Nothing exceeds dense size; everything is resource-skipped at a zero budget.
        assert!(recs.iter().all(|r| r.skip_reason.as_deref() == Some("resource")));
    }

    #[test]
    fn pointwise_kernel_matches_linear_counts() {
        let conv = run_conv_bench(&ConvGrid {
            c_in: vec![32],
            c_out: vec![48],
            kernels: vec![1],
            images: vec![4],
            num_terms: vec![1, 2],
            low_ranks: vec![4],
            batch: 2,
            protocol: protocol(),
            ..ConvGrid::default()
        })
        .unwrap();
        let lin = run_linear_bench(&LinearGrid {
            d_in: vec![32],
            d_out: vec![48],
            num_terms: vec![1, 2],
            low_ranks: vec![4],
            batch: 2 * 4 * 4,
            protocol: protocol(),
            ..LinearGrid::default()
        })
        .unwrap();
        assert_eq!(conv.len(), lin.len());
        for (c, l) in conv.iter().zip(&lin) {
            assert_eq!((c.d_in, c.d_out), (l.d_in, l.d_out));
            assert_eq!(c.params_dense, l.params_dense);
            assert_eq!(c.params_sketched, l.params_sketched);
            assert!(c.timing.is_some() && l.timing.is_some());
        }
    }

    #[test]
    fn empty_grid_is_empty_output() {
        assert!(run_conv_bench(&ConvGrid::default()).unwrap().is_empty());
    }
}
