//! 2-D convolution lowered to matrix products via im2col.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::linalg::{matmul, matmul_nt, matmul_tn, Matrix};
use crate::nn::linear::DenseLinear;
use crate::nn::sk_linear::{ParamCount, SkLinear, SkLinearGrads};
use crate::nn::tensor::FeatureMaps;
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn square(c_in: usize, c_out: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            c_in,
            c_out,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
        }
    }

    /// Rows of the lowered patch matrix: `c_in · kernel_h · kernel_w`.
    pub fn patch_len(&self) -> usize {
        self.c_in * self.kernel_h * self.kernel_w
    }

    pub fn output_dims(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        if self.stride == 0 {
            return shape_err("stride must be positive");
        }
        let (ph, pw) = (height + 2 * self.padding, width + 2 * self.padding);
        if self.kernel_h == 0 || self.kernel_w == 0 || self.kernel_h > ph || self.kernel_w > pw {
            return shape_err(format!(
                "{}x{} kernel does not fit a {height}x{width} image with padding {}",
                self.kernel_h, self.kernel_w, self.padding
            ));
        }
        Ok((
            (ph - self.kernel_h) / self.stride + 1,
            (pw - self.kernel_w) / self.stride + 1,
        ))
    }

    fn check_input(&self, x: &FeatureMaps) -> Result<(usize, usize)> {
        if x.channels != self.c_in {
            return shape_err(format!(
                "input has {} channels, layer expects {}",
                x.channels, self.c_in
            ));
        }
        self.output_dims(x.height, x.width)
    }
}

/// Source pixel of patch row `(c, i, j)` at output position `(oy, ox)`, or
/// `None` when it falls in the zero padding.
#[inline]
fn source_index(
    g: &ConvGeometry,
    height: usize,
    width: usize,
    (c, i, j): (usize, usize, usize),
    (oy, ox): (usize, usize),
) -> Option<usize> {
    let y = (oy * g.stride + i) as isize - g.padding as isize;
    let x = (ox * g.stride + j) as isize - g.padding as isize;
    if y < 0 || x < 0 || y >= height as isize || x >= width as isize {
        return None;
    }
    Some((c * height + y as usize) * width + x as usize)
}

/// Lowers image `b` of `x` to a `(c_in·kh·kw) × (H'·W')` patch matrix.
///
/// Column `p = oy·W' + ox` holds the receptive field of output position
/// `(oy, ox)` flattened in `(channel, kernel row, kernel col)` order.
pub fn im2col(x: &FeatureMaps, b: usize, g: &ConvGeometry) -> Result<Matrix> {
    let (oh, ow) = g.check_input(x)?;
    let img = x.image(b);
    let mut cols = Matrix::zeros(g.patch_len(), oh * ow);
    fill_patches(img, x.height, x.width, g, oh, ow, &mut cols, 0);
    Ok(cols)
}

#[allow(clippy::too_many_arguments)]
fn fill_patches(
    img: &[f64],
    height: usize,
    width: usize,
    g: &ConvGeometry,
    oh: usize,
    ow: usize,
    cols: &mut Matrix,
    col_offset: usize,
) {
    let mut row = 0;
    for c in 0..g.c_in {
        for i in 0..g.kernel_h {
            for j in 0..g.kernel_w {
                let out = cols.row_mut(row);
                for oy in 0..oh {
                    for ox in 0..ow {
                        if let Some(src) = source_index(g, height, width, (c, i, j), (oy, ox)) {
                            out[col_offset + oy * ow + ox] = img[src];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Patch matrices of every image side by side: `(c_in·kh·kw) × (batch·H'·W')`.
pub fn im2col_batch(x: &FeatureMaps, g: &ConvGeometry) -> Result<Matrix> {
    let (oh, ow) = g.check_input(x)?;
    let p = oh * ow;
    let mut cols = Matrix::zeros(g.patch_len(), x.batch * p);
    for b in 0..x.batch {
        fill_patches(x.image(b), x.height, x.width, g, oh, ow, &mut cols, b * p);
    }
    Ok(cols)
}

/// Adjoint of [`im2col_batch`]: scatters patch-matrix entries back onto
/// images, summing overlaps.
pub fn col2im_batch(
    cols: &Matrix,
    batch: usize,
    height: usize,
    width: usize,
    g: &ConvGeometry,
) -> Result<FeatureMaps> {
    let (oh, ow) = g.output_dims(height, width)?;
    let p = oh * ow;
    if cols.shape() != (g.patch_len(), batch * p) {
        return shape_err("patch matrix does not match the geometry");
    }
    let mut out = FeatureMaps::zeros(batch, g.c_in, height, width);
    for b in 0..batch {
        let img = out.image_mut(b);
        let mut row = 0;
        for c in 0..g.c_in {
            for i in 0..g.kernel_h {
                for j in 0..g.kernel_w {
                    let src = cols.row(row);
                    for oy in 0..oh {
                        for ox in 0..ow {
                            if let Some(dst) = source_index(g, height, width, (c, i, j), (oy, ox)) {
                                img[dst] += src[b * p + oy * ow + ox];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
    Ok(out)
}

/// `c_out × (batch·P)` → feature maps.
fn matrix_to_maps(m: &Matrix, batch: usize, oh: usize, ow: usize) -> FeatureMaps {
    let p = oh * ow;
    let c_out = m.rows();
    let mut out = FeatureMaps::zeros(batch, c_out, oh, ow);
    for b in 0..batch {
        let img = out.image_mut(b);
        for c in 0..c_out {
            img[c * p..(c + 1) * p].copy_from_slice(&m.row(c)[b * p..(b + 1) * p]);
        }
    }
    out
}

fn maps_to_matrix(x: &FeatureMaps) -> Matrix {
    let p = x.height * x.width;
    let mut m = Matrix::zeros(x.channels, x.batch * p);
    for b in 0..x.batch {
        let img = x.image(b);
        for c in 0..x.channels {
            m.row_mut(c)[b * p..(b + 1) * p].copy_from_slice(&img[c * p..(c + 1) * p]);
        }
    }
    m
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseConv2d {
    pub geometry: ConvGeometry,
    /// `c_out × (c_in·kh·kw)`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DenseConv2dGrads {
    pub grad_x: FeatureMaps,
    pub grad_weight: Matrix,
    pub grad_bias: Vec<f64>,
}

impl DenseConv2d {
    pub fn new(geometry: ConvGeometry, weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weight.shape() != (geometry.c_out, geometry.patch_len()) || bias.len() != geometry.c_out {
            return shape_err("convolution weight or bias does not match the geometry");
        }
        Ok(Self {
            geometry,
            weight,
            bias,
        })
    }

    pub fn random(geometry: ConvGeometry, seed: u64) -> Self {
        let mut rng = SeededRng::new(seed);
        let std = (2.0 / geometry.patch_len() as f64).sqrt();
        let weight = Matrix::from_fn(geometry.c_out, geometry.patch_len(), |_, _| std * rng.normal());
        Self {
            geometry,
            weight,
            bias: vec![0.0; geometry.c_out],
        }
    }

    /// The lowered weight as a linear layer on patch columns.
    pub fn as_linear(&self) -> DenseLinear {
        DenseLinear {
            weight: self.weight.clone(),
            bias: self.bias.clone(),
        }
    }

    pub fn forward(&self, x: &FeatureMaps) -> Result<FeatureMaps> {
        let (oh, ow) = self.geometry.check_input(x)?;
        let cols = im2col_batch(x, &self.geometry)?;
        let mut y = matmul(&self.weight, &cols)?;
        y.add_row_broadcast(&self.bias)?;
        Ok(matrix_to_maps(&y, x.batch, oh, ow))
    }

    pub fn backward(&self, x: &FeatureMaps, grad_out: &FeatureMaps) -> Result<DenseConv2dGrads> {
        let (oh, ow) = self.geometry.check_input(x)?;
        if grad_out.shape() != (x.batch, self.geometry.c_out, oh, ow) {
            return shape_err("grad_out does not match the convolution output");
        }
        let cols = im2col_batch(x, &self.geometry)?;
        let g = maps_to_matrix(grad_out);
        let grad_cols = matmul_tn(&self.weight, &g)?;
        Ok(DenseConv2dGrads {
            grad_x: col2im_batch(&grad_cols, x.batch, x.height, x.width, &self.geometry)?,
            grad_weight: matmul_nt(&g, &cols)?,
            grad_bias: g.row_sums(),
        })
    }
}

/// Convolution whose lowered weight is a [`SkLinear`] layer.
#[derive(Clone, Debug, PartialEq)]
pub struct SkConv2d {
    pub geometry: ConvGeometry,
    pub inner: SkLinear,
}

#[derive(Clone, Debug)]
pub struct SkConv2dGrads {
    pub grad_x: FeatureMaps,
    pub inner: SkLinearGrads,
}

impl SkConv2d {
    pub fn new(geometry: ConvGeometry, num_terms: usize, low_rank: usize, seed: u64) -> Result<Self> {
        let inner = SkLinear::new(geometry.patch_len(), geometry.c_out, num_terms, low_rank, seed)?;
        Ok(Self { geometry, inner })
    }

    pub fn from_dense(dense: &DenseConv2d, num_terms: usize, low_rank: usize, seed: u64) -> Result<Self> {
        let inner = SkLinear::from_dense(&dense.as_linear(), num_terms, low_rank, seed)?;
        Ok(Self {
            geometry: dense.geometry,
            inner,
        })
    }

    pub fn from_inner(geometry: ConvGeometry, inner: SkLinear) -> Result<Self> {
        if inner.d_in() != geometry.patch_len() || inner.d_out() != geometry.c_out {
            return shape_err("inner sketched layer does not match the convolution geometry");
        }
        Ok(Self { geometry, inner })
    }

    pub fn forward(&self, x: &FeatureMaps) -> Result<FeatureMaps> {
        let (oh, ow) = self.geometry.check_input(x)?;
        let cols = im2col_batch(x, &self.geometry)?;
        let y = self.inner.forward(&cols)?;
        Ok(matrix_to_maps(&y, x.batch, oh, ow))
    }

    pub fn backward(&self, x: &FeatureMaps, grad_out: &FeatureMaps) -> Result<SkConv2dGrads> {
        let (oh, ow) = self.geometry.check_input(x)?;
        if grad_out.shape() != (x.batch, self.geometry.c_out, oh, ow) {
            return shape_err("grad_out does not match the convolution output");
        }
        let cols = im2col_batch(x, &self.geometry)?;
        let inner = self.inner.backward(&cols, &maps_to_matrix(grad_out))?;
        let grad_x = col2im_batch(&inner.grad_x, x.batch, x.height, x.width, &self.geometry)?;
        Ok(SkConv2dGrads { grad_x, inner })
    }

    pub fn param_count(&self) -> ParamCount {
        self.inner.param_count()
    }
}
