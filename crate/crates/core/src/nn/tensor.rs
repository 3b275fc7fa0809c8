use crate::error::{shape_err, Result};
use crate::linalg::Matrix;
use crate::rng::SeededRng;

/// Batch of multi-channel images, laid out `[batch][channel][row][col]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMaps {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    data: Vec<f64>,
}

impl FeatureMaps {
    pub fn zeros(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            batch,
            channels,
            height,
            width,
            data: vec![0.0; batch * channels * height * width],
        }
    }

    pub fn from_vec(
        batch: usize,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if data.len() != batch * channels * height * width {
            return shape_err(format!(
                "{} values for a {batch}x{channels}x{height}x{width} feature map",
                data.len()
            ));
        }
        Ok(Self {
            batch,
            channels,
            height,
            width,
            data,
        })
    }

    pub fn random_normal(
        batch: usize,
        channels: usize,
        height: usize,
        width: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let data = (0..batch * channels * height * width)
            .map(|_| rng.normal())
            .collect();
        Self {
            batch,
            channels,
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// One `channels × height × width` image.
    pub fn image(&self, b: usize) -> &[f64] {
        let n = self.image_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn image_mut(&mut self, b: usize) -> &mut [f64] {
        let n = self.image_len();
        &mut self.data[b * n..(b + 1) * n]
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[((b * self.channels + c) * self.height + y) * self.width + x]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.batch, self.channels, self.height, self.width)
    }
}

/// Value flowing between layers of a model.
///
/// Linear layers read a `features × batch` matrix, attention layers an
/// `N × d_model` sequence matrix, convolutions read feature maps.
#[derive(Clone, Debug, PartialEq)]
pub enum Tensor {
    Matrix(Matrix),
    Maps(FeatureMaps),
}

impl Tensor {
    pub fn as_matrix(&self) -> Result<&Matrix> {
        match self {
            Tensor::Matrix(m) => Ok(m),
            Tensor::Maps(_) => shape_err("expected a matrix, got feature maps"),
        }
    }

    pub fn as_maps(&self) -> Result<&FeatureMaps> {
        match self {
            Tensor::Maps(m) => Ok(m),
            Tensor::Matrix(_) => shape_err("expected feature maps, got a matrix"),
        }
    }

    pub fn into_matrix(self) -> Result<Matrix> {
        match self {
            Tensor::Matrix(m) => Ok(m),
            Tensor::Maps(_) => shape_err("expected a matrix, got feature maps"),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        match self {
            Tensor::Matrix(m) => m.as_slice(),
            Tensor::Maps(m) => m.as_slice(),
        }
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        match self {
            Tensor::Matrix(m) => m.as_mut_slice(),
            Tensor::Maps(m) => m.as_mut_slice(),
        }
    }
}

impl From<Matrix> for Tensor {
    fn from(m: Matrix) -> Self {
        Tensor::Matrix(m)
    }
}

impl From<FeatureMaps> for Tensor {
    fn from(m: FeatureMaps) -> Self {
        Tensor::Maps(m)
    }
}
