//! Discovery of sketchable layers and constrained search over
//! `(num_terms, low_rank)` per layer.

mod search;

use std::fmt;
use std::str::FromStr;

use regex::Regex;

use crate::error::{Error, Result};
use crate::nn::conv::SkConv2d;
use crate::nn::model::{Layer, LayerKind, Model};
use crate::nn::sk_linear::{exceeds_dense, sketched_size, SkLinear};

pub use search::{
    apply_best_params, best_params, best_trial, compare_trials, tune, tune_parallel, Assignment, BoxError, LayerChoice,
    TrialResult, TuneReport, TuneSettings,
};

pub const AUTO_NUM_TERMS: [usize; 3] = [1, 2, 3];
pub const AUTO_LOW_RANKS: [usize; 7] = [8, 16, 32, 64, 128, 256, 512];

/// Which layers of a model a [`LayerConfig`] applies to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerSelector {
    ByType(LayerKind),
    ByNames(Vec<String>),
    /// Regular expression that must match the whole dotted name.
    ByPattern(String),
}

impl fmt::Display for LayerSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSelector::ByType(k) => write!(f, "type:{k}"),
            LayerSelector::ByNames(n) => write!(f, "names:{}", n.join(",")),
            LayerSelector::ByPattern(p) => write!(f, "pattern:{p}"),
        }
    }
}

/// Parses `type:<Kind>`, `names:<a,b,...>` or `pattern:<regex>`.
impl FromStr for LayerSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (tag, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::Parameter(format!("selector {s:?} lacks a type:, names: or pattern: prefix")))?;
        match tag {
            "type" => Ok(LayerSelector::ByType(rest.parse()?)),
            "names" => Ok(LayerSelector::ByNames(
                rest.split(',').map(str::trim).filter(|n| !n.is_empty()).map(String::from).collect(),
            )),
            "pattern" => Ok(LayerSelector::ByPattern(rest.to_string())),
            _ => Err(Error::Parameter(format!("unknown selector kind {tag:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParamSpace {
    /// [`auto_search_space`] of each matched layer.
    Auto,
    Explicit(Vec<(usize, usize)>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerConfig {
    pub selector: LayerSelector,
    pub params: ParamSpace,
    /// Search each matched layer on its own, all others left dense.
    pub separate: bool,
    /// Initialize sketched layers from the dense weights instead of afresh.
    pub copy_weights: bool,
}

impl LayerConfig {
    pub fn new(selector: LayerSelector) -> Self {
        Self {
            selector,
            params: ParamSpace::Auto,
            separate: true,
            copy_weights: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SearchAlgorithm {
    Grid,
    Random { n_trials: usize, seed: u64 },
}

/// Names of the layers `selector` picks, in model order.
pub fn match_layers(model: &Model, selector: &LayerSelector) -> Result<Vec<String>> {
    let fail = |reason: String| Error::Selection {
        selector: selector.to_string(),
        reason,
    };
    if model.is_empty() {
        return Err(fail("model has no layers".into()));
    }
    let names: Vec<String> = match selector {
        LayerSelector::ByType(kind) => model
            .layers()
            .iter()
            .filter(|l| l.layer.kind() == *kind)
            .map(|l| l.name.clone())
            .collect(),
        LayerSelector::ByNames(wanted) => {
            if let Some(missing) = wanted.iter().find(|n| model.index_of(n).is_none()) {
                return Err(fail(format!("no layer named {missing:?}")));
            }
            model.names().filter(|n| wanted.iter().any(|w| w == n)).map(String::from).collect()
        }
        LayerSelector::ByPattern(p) => {
            let re = Regex::new(&format!("^(?:{p})$")).map_err(|e| fail(format!("invalid pattern: {e}")))?;
            model.names().filter(|n| re.is_match(n)).map(String::from).collect()
        }
    };
    if names.is_empty() {
        return Err(fail("matched no layers".into()));
    }
    Ok(names)
}

/// Every `(l, k)` with `l ∈ {1,2,3}`, `k ∈ {8,…,512}` whose sketched size
/// `2lk(d_in+d_out)` does not exceed `d_in·d_out`, smallest first. Empty when
/// the layer is too small to sketch profitably.
pub fn auto_search_space(d_in: usize, d_out: usize) -> Vec<(usize, usize)> {
    let mut space: Vec<(usize, usize)> = AUTO_NUM_TERMS
        .iter()
        .flat_map(|&l| AUTO_LOW_RANKS.iter().map(move |&k| (l, k)))
        .filter(|&(l, k)| !exceeds_dense(l, k, d_in, d_out))
        .collect();
    space.sort_by_key(|&(l, k)| sketched_size(l, k, d_in, d_out));
    space
}

/// Sketched replacement of a dense linear or convolution layer.
pub fn sketch_layer(layer: &Layer, num_terms: usize, low_rank: usize, seed: u64, copy_weights: bool) -> Result<Layer> {
    match layer {
        Layer::DenseLinear(d) if copy_weights => Ok(Layer::SkLinear(SkLinear::from_dense(d, num_terms, low_rank, seed)?)),
        Layer::DenseLinear(d) => Ok(Layer::SkLinear(SkLinear::new(d.d_in(), d.d_out(), num_terms, low_rank, seed)?)),
        Layer::DenseConv2d(c) if copy_weights => Ok(Layer::SkConv2d(SkConv2d::from_dense(c, num_terms, low_rank, seed)?)),
        Layer::DenseConv2d(c) => Ok(Layer::SkConv2d(SkConv2d::new(c.geometry, num_terms, low_rank, seed)?)),
        Layer::SkLinear(_) | Layer::SkConv2d(_) => Err(Error::Application("layer is already sketched".into())),
        other => Err(Error::Application(format!("{} layers cannot be sketched", other.kind()))),
    }
}
