use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::attention::{ExactMha, MhaGrads, RandMha};
use super::conv::{DenseConv2d, SkConv2d};
use super::linear::DenseLinear;
use super::memory::{conv_bytes, exact_mha_bytes, linear_bytes, rand_mha_bytes, InputShape};
use super::sk_linear::{ParamCount, SkLinear, SkLinearGrads};
use super::tensor::{FeatureMaps, Tensor};
use crate::error::{shape_err, Error, Result};
use crate::linalg::Matrix;

/// Storage width of parameters in a saved model. Computation is always f64.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    #[default]
    F64,
    F32,
}

impl Dtype {
    pub fn width(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
        }
    }
}

impl FromStr for Dtype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f64" => Ok(Dtype::F64),
            "f32" => Ok(Dtype::F32),
            _ => Err(Error::Parameter(format!("unknown dtype {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    DenseLinear,
    SkLinear,
    DenseConv2d,
    SkConv2d,
    ExactMha,
    RandMha,
    Relu,
    Flatten,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::DenseLinear => "DenseLinear",
            LayerKind::SkLinear => "SkLinear",
            LayerKind::DenseConv2d => "DenseConv2d",
            LayerKind::SkConv2d => "SkConv2d",
            LayerKind::ExactMha => "ExactMha",
            LayerKind::RandMha => "RandMha",
            LayerKind::Relu => "Relu",
            LayerKind::Flatten => "Flatten",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Case-insensitive; also accepts the framework-style aliases `Linear`,
/// `Conv2d` and `MultiheadAttention`.
impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kind = match s.to_ascii_lowercase().as_str() {
            "linear" | "denselinear" => LayerKind::DenseLinear,
            "sklinear" => LayerKind::SkLinear,
            "conv2d" | "denseconv2d" => LayerKind::DenseConv2d,
            "skconv2d" => LayerKind::SkConv2d,
            "multiheadattention" | "exactmha" => LayerKind::ExactMha,
            "randmha" | "randmultiheadattention" => LayerKind::RandMha,
            "relu" => LayerKind::Relu,
            "flatten" => LayerKind::Flatten,
            _ => return Err(Error::Parameter(format!("unknown layer type {s:?}"))),
        };
        Ok(kind)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    DenseLinear(DenseLinear),
    SkLinear(SkLinear),
    DenseConv2d(DenseConv2d),
    SkConv2d(SkConv2d),
    ExactMha(ExactMha),
    RandMha(RandMha),
    /// Elementwise `max(0, x)`.
    Relu,
    /// Feature maps to a `(channels·height·width) × batch` matrix.
    Flatten,
}

/// Gradient of one layer: `∂L/∂input` plus one buffer per learnable slice,
/// in [`Layer::params`] order.
#[derive(Clone, Debug)]
pub struct LayerGrads {
    pub grad_input: Tensor,
    pub params: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Port {
    Features(usize),
    Channels(usize),
    Embed(usize),
}

fn sk_linear_grads(g: SkLinearGrads) -> (Matrix, Vec<Vec<f64>>) {
    let mut out = Vec::with_capacity(2 * g.grad_u1.len() + 1);
    for (u1, u2) in g.grad_u1.into_iter().zip(g.grad_u2) {
        out.push(u1.into_vec());
        out.push(u2.into_vec());
    }
    out.push(g.grad_bias);
    (g.grad_x, out)
}

fn mha_grads(g: MhaGrads) -> LayerGrads {
    LayerGrads {
        grad_input: g.grad_x.into(),
        params: vec![
            g.grad_w_q.into_vec(),
            g.grad_w_k.into_vec(),
            g.grad_w_v.into_vec(),
            g.grad_w_o.into_vec(),
        ],
    }
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::DenseLinear(_) => LayerKind::DenseLinear,
            Layer::SkLinear(_) => LayerKind::SkLinear,
            Layer::DenseConv2d(_) => LayerKind::DenseConv2d,
            Layer::SkConv2d(_) => LayerKind::SkConv2d,
            Layer::ExactMha(_) => LayerKind::ExactMha,
            Layer::RandMha(_) => LayerKind::RandMha,
            Layer::Relu => LayerKind::Relu,
            Layer::Flatten => LayerKind::Flatten,
        }
    }

    fn ports(&self) -> Option<(Port, Port)> {
        match self {
            Layer::DenseLinear(l) => Some((Port::Features(l.d_in()), Port::Features(l.d_out()))),
            Layer::SkLinear(l) => Some((Port::Features(l.d_in()), Port::Features(l.d_out()))),
            Layer::DenseConv2d(l) => Some((Port::Channels(l.geometry.c_in), Port::Channels(l.geometry.c_out))),
            Layer::SkConv2d(l) => Some((Port::Channels(l.geometry.c_in), Port::Channels(l.geometry.c_out))),
            Layer::ExactMha(l) => {
                let d = l.weights.embed_dim();
                Some((Port::Embed(d), Port::Embed(d)))
            }
            Layer::RandMha(l) => {
                let d = l.weights.embed_dim();
                Some((Port::Embed(d), Port::Embed(d)))
            }
            Layer::Relu | Layer::Flatten => None,
        }
    }

    /// `(d_in, d_out)` of the equivalent dense matrix for layers the tuner
    /// can replace; convolutions report the lowered `c_in·kh·kw`.
    pub fn sketch_dims(&self) -> Option<(usize, usize)> {
        match self {
            Layer::DenseLinear(l) => Some((l.d_in(), l.d_out())),
            Layer::DenseConv2d(l) => Some((l.geometry.patch_len(), l.geometry.c_out)),
            _ => None,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(match self {
            Layer::DenseLinear(l) => l.forward(x.as_matrix()?)?.into(),
            Layer::SkLinear(l) => l.forward(x.as_matrix()?)?.into(),
            Layer::DenseConv2d(l) => l.forward(x.as_maps()?)?.into(),
            Layer::SkConv2d(l) => l.forward(x.as_maps()?)?.into(),
            Layer::ExactMha(l) => l.forward(x.as_matrix()?)?.into(),
            Layer::RandMha(l) => l.forward(x.as_matrix()?)?.into(),
            Layer::Relu => {
                let mut y = x.clone();
                y.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
                y
            }
            Layer::Flatten => {
                let maps = x.as_maps()?;
                Matrix::from_fn(maps.image_len(), maps.batch, |i, b| maps.image(b)[i]).into()
            }
        })
    }

    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<LayerGrads> {
        Ok(match self {
            Layer::DenseLinear(l) => {
                let g = l.backward(x.as_matrix()?, grad_out.as_matrix()?)?;
                LayerGrads {
                    grad_input: g.grad_x.into(),
                    params: vec![g.grad_weight.into_vec(), g.grad_bias],
                }
            }
            Layer::SkLinear(l) => {
                let (grad_x, params) = sk_linear_grads(l.backward(x.as_matrix()?, grad_out.as_matrix()?)?);
                LayerGrads {
                    grad_input: grad_x.into(),
                    params,
                }
            }
            Layer::DenseConv2d(l) => {
                let g = l.backward(x.as_maps()?, grad_out.as_maps()?)?;
                LayerGrads {
                    grad_input: g.grad_x.into(),
                    params: vec![g.grad_weight.into_vec(), g.grad_bias],
                }
            }
            Layer::SkConv2d(l) => {
                let g = l.backward(x.as_maps()?, grad_out.as_maps()?)?;
                LayerGrads {
                    grad_input: g.grad_x.into(),
                    params: sk_linear_grads(g.inner).1,
                }
            }
            Layer::ExactMha(l) => mha_grads(l.backward(x.as_matrix()?, grad_out.as_matrix()?)?),
            Layer::RandMha(l) => mha_grads(l.backward(x.as_matrix()?, grad_out.as_matrix()?)?),
            Layer::Relu => {
                if x.as_slice().len() != grad_out.as_slice().len() {
                    return shape_err("relu grad_out does not match the input");
                }
                let mut g = grad_out.clone();
                for (gi, xi) in g.as_mut_slice().iter_mut().zip(x.as_slice()) {
                    if *xi <= 0.0 {
                        *gi = 0.0;
                    }
                }
                LayerGrads {
                    grad_input: g,
                    params: Vec::new(),
                }
            }
            Layer::Flatten => {
                let maps = x.as_maps()?;
                let g = grad_out.as_matrix()?;
                if g.shape() != (maps.image_len(), maps.batch) {
                    return shape_err("flatten grad_out does not match the input");
                }
                let mut gx = FeatureMaps::zeros(maps.batch, maps.channels, maps.height, maps.width);
                for b in 0..maps.batch {
                    for (i, v) in gx.image_mut(b).iter_mut().enumerate() {
                        *v = g[(i, b)];
                    }
                }
                LayerGrads {
                    grad_input: gx.into(),
                    params: Vec::new(),
                }
            }
        })
    }

    /// Learnable parameter buffers in a fixed order: weight then bias;
    /// `U1_i, U2_i` per sketch term then bias; `W_q, W_k, W_v, W_o`.
    pub fn params(&self) -> Vec<&[f64]> {
        match self {
            Layer::DenseLinear(l) => vec![l.weight.as_slice(), &l.bias],
            Layer::DenseConv2d(l) => vec![l.weight.as_slice(), &l.bias],
            Layer::SkLinear(l) => sk_params(l),
            Layer::SkConv2d(l) => sk_params(&l.inner),
            Layer::ExactMha(l) => {
                let w = &l.weights;
                vec![w.w_q.as_slice(), w.w_k.as_slice(), w.w_v.as_slice(), w.w_o.as_slice()]
            }
            Layer::RandMha(l) => {
                let w = &l.weights;
                vec![w.w_q.as_slice(), w.w_k.as_slice(), w.w_v.as_slice(), w.w_o.as_slice()]
            }
            Layer::Relu | Layer::Flatten => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::DenseLinear(l) => vec![l.weight.as_mut_slice(), &mut l.bias],
            Layer::DenseConv2d(l) => vec![l.weight.as_mut_slice(), &mut l.bias],
            Layer::SkLinear(l) => sk_params_mut(l),
            Layer::SkConv2d(l) => sk_params_mut(&mut l.inner),
            Layer::ExactMha(l) => {
                let w = &mut l.weights;
                vec![w.w_q.as_mut_slice(), w.w_k.as_mut_slice(), w.w_v.as_mut_slice(), w.w_o.as_mut_slice()]
            }
            Layer::RandMha(l) => {
                let w = &mut l.weights;
                vec![w.w_q.as_mut_slice(), w.w_k.as_mut_slice(), w.w_v.as_mut_slice(), w.w_o.as_mut_slice()]
            }
            Layer::Relu | Layer::Flatten => Vec::new(),
        }
    }

    pub fn param_count(&self) -> ParamCount {
        let dense = |n: u64| ParamCount {
            learnable: n,
            total_stored: n,
            dense_equivalent: n,
        };
        match self {
            Layer::DenseLinear(l) => dense((l.d_in() * l.d_out() + l.d_out()) as u64),
            Layer::DenseConv2d(l) => dense((l.weight.rows() * l.weight.cols() + l.bias.len()) as u64),
            Layer::SkLinear(l) => l.param_count(),
            Layer::SkConv2d(l) => l.param_count(),
            Layer::ExactMha(l) => dense(4 * (l.weights.embed_dim() as u64).pow(2)),
            Layer::RandMha(l) => {
                let d = l.weights.embed_dim() as u64;
                ParamCount {
                    learnable: 4 * d * d,
                    total_stored: 4 * d * d + l.num_features() as u64 * d,
                    dense_equivalent: 4 * d * d,
                }
            }
            Layer::Relu | Layer::Flatten => ParamCount::default(),
        }
    }

    /// Forward-pass bytes for one call at the given input extent.
    pub fn memory_estimate(&self, input: InputShape, width: usize) -> Result<u64> {
        let pc = self.param_count().total_stored;
        match (self, input) {
            (Layer::DenseLinear(_) | Layer::SkLinear(_), InputShape::Batch(b)) => {
                let (d_in, d_out) = match self {
                    Layer::DenseLinear(l) => (l.d_in(), l.d_out()),
                    Layer::SkLinear(l) => (l.d_in(), l.d_out()),
                    _ => unreachable!(),
                };
                Ok(linear_bytes(pc, d_in, d_out, b, width))
            }
            (
                Layer::DenseConv2d(DenseConv2d { geometry: g, .. }) | Layer::SkConv2d(SkConv2d { geometry: g, .. }),
                InputShape::Image { batch, height, width: w },
            ) => conv_bytes(pc, g, batch, height, w, width),
            (Layer::ExactMha(l), InputShape::Sequence(n)) => {
                Ok(exact_mha_bytes(l.weights.embed_dim(), l.weights.num_heads, n, width))
            }
            (Layer::RandMha(l), InputShape::Sequence(n)) => Ok(rand_mha_bytes(
                l.weights.embed_dim(),
                l.weights.num_heads,
                l.num_features(),
                n,
                width,
            )),
            (Layer::Relu, InputShape::Batch(n) | InputShape::Sequence(n)) => Ok(2 * n as u64 * width as u64),
            (Layer::Relu | Layer::Flatten, InputShape::Image { batch, height, width: w }) => {
                Ok(2 * (batch * height * w) as u64 * width as u64)
            }
            _ => shape_err(format!("{} cannot take input {input:?}", self.kind())),
        }
    }
}

fn sk_params(l: &SkLinear) -> Vec<&[f64]> {
    let mut v: Vec<&[f64]> = Vec::with_capacity(2 * l.num_terms() + 1);
    for t in l.terms() {
        v.push(t.u1.as_slice());
        v.push(t.u2.as_slice());
    }
    v.push(&l.bias);
    v
}

fn sk_params_mut(l: &mut SkLinear) -> Vec<&mut [f64]> {
    let n = l.num_terms();
    let mut v: Vec<&mut [f64]> = Vec::with_capacity(2 * n + 1);
    let (terms, bias) = l.terms_and_bias_mut();
    for t in terms {
        v.push(t.u1.as_mut_slice());
        v.push(t.u2.as_mut_slice());
    }
    v.push(bias);
    v
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedLayer {
    pub name: String,
    pub layer: Layer,
}

/// Ordered stack of named layers applied sequentially.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Model {
    layers: Vec<NamedLayer>,
    pub dtype: Dtype,
}

#[derive(Clone, Debug)]
pub struct ModelGrads {
    pub grad_input: Tensor,
    /// Per layer, per learnable buffer, aligned with [`Layer::params`].
    pub layers: Vec<Vec<Vec<f64>>>,
}

impl Model {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a model from `(name, layer)` pairs, validating as [`Model::push`].
    pub fn from_layers<S: Into<String>>(layers: impl IntoIterator<Item = (S, Layer)>) -> Result<Self> {
        let mut m = Self::new();
        for (name, layer) in layers {
            m.push(name, layer)?;
        }
        Ok(m)
    }

    /// Appends a layer. Names must be unique and non-empty, and the layer's
    /// input must match the previous parameterized layer's output.
    pub fn push(&mut self, name: impl Into<String>, layer: Layer) -> Result<()> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::Parameter("layer names must be non-empty".into()));
        }
        if self.index_of(&name).is_some() {
            return Err(Error::Parameter(format!("duplicate layer name {name:?}")));
        }
        if let (Some((prev_name, prev_out)), Some((input, _))) = (self.last_output(self.layers.len()), layer.ports()) {
            if prev_out != input {
                return shape_err(format!("layer {name:?} takes {input:?} but {prev_name:?} produces {prev_out:?}"));
            }
        }
        self.layers.push(NamedLayer { name, layer });
        Ok(())
    }

    /// Output port of the nearest parameterized layer before `before`;
    /// `Flatten` ends the search since it changes the representation.
    fn last_output(&self, before: usize) -> Option<(&str, Port)> {
        for l in self.layers[..before].iter().rev() {
            if l.layer == Layer::Flatten {
                return None;
            }
            if let Some((_, out)) = l.layer.ports() {
                return Some((l.name.as_str(), out));
            }
        }
        None
    }

    fn next_input(&self, after: usize) -> Option<Port> {
        for l in &self.layers[after + 1..] {
            if l.layer == Layer::Flatten {
                return None;
            }
            if let Some((input, _)) = l.layer.ports() {
                return Some(input);
            }
        }
        None
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layers(&self) -> &[NamedLayer] {
        &self.layers
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.layers.iter().map(|l| l.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Layer> {
        self.index_of(name).map(|i| &self.layers[i].layer)
    }

    /// Swaps in a new layer under an existing name, keeping port compatibility.
    pub fn replace(&mut self, name: &str, layer: Layer) -> Result<Layer> {
        let i = self
            .index_of(name)
            .ok_or_else(|| Error::Application(format!("no layer named {name:?}")))?;
        if let Some((input, output)) = layer.ports() {
            let prev = self.last_output(i).map(|p| p.1);
            let next = self.next_input(i);
            if prev.is_some_and(|p| p != input) || next.is_some_and(|n| n != output) {
                return shape_err(format!("replacement for {name:?} changes its shape"));
            }
        }
        Ok(std::mem::replace(&mut self.layers[i].layer, layer))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut cur = x.clone();
        for l in &self.layers {
            cur = l.layer.forward(&cur)?;
        }
        Ok(cur)
    }

    /// Input to every layer followed by the final output.
    pub fn forward_trace(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut trace = Vec::with_capacity(self.layers.len() + 1);
        trace.push(x.clone());
        for l in &self.layers {
            let next = l.layer.forward(trace.last().expect("trace starts non-empty"))?;
            trace.push(next);
        }
        Ok(trace)
    }

    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<ModelGrads> {
        let trace = self.forward_trace(x)?;
        let mut grad = grad_out.clone();
        let mut layers = vec![Vec::new(); self.layers.len()];
        for (i, l) in self.layers.iter().enumerate().rev() {
            let g = l.layer.backward(&trace[i], &grad)?;
            layers[i] = g.params;
            grad = g.grad_input;
        }
        Ok(ModelGrads {
            grad_input: grad,
            layers,
        })
    }

    /// Plain gradient descent step `p ← p − lr·g`.
    pub fn sgd_step(&mut self, grads: &ModelGrads, lr: f64) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return shape_err("gradient list does not match the model");
        }
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            let params = l.layer.params_mut();
            if params.len() != g.len() {
                return shape_err(format!("gradient buffers do not match layer {:?}", l.name));
            }
            for (p, gp) in params.into_iter().zip(g) {
                if p.len() != gp.len() {
                    return shape_err(format!("gradient length mismatch in layer {:?}", l.name));
                }
                p.iter_mut().zip(gp).for_each(|(p, g)| *p -= lr * g);
            }
        }
        Ok(())
    }

    pub fn param_count(&self) -> ParamCount {
        self.layers.iter().map(|l| l.layer.param_count()).sum()
    }
}

/// Convenience for building linear-stack inputs from rows of samples.
pub fn batch_from_samples(samples: &[Vec<f64>]) -> Result<Matrix> {
    let d = samples.first().map_or(0, Vec::len);
    if samples.iter().any(|s| s.len() != d) {
        return shape_err("samples have differing lengths");
    }
    Ok(Matrix::from_fn(d, samples.len(), |i, j| samples[j][i]))
}
