//! Layers, models and their serialization.

pub mod attention;
pub mod conv;
pub mod io;
pub mod linear;
pub mod loss;
pub mod memory;
pub mod model;
pub mod sk_linear;
pub mod tensor;

pub use attention::{AttentionKernel, ExactMha, MhaGrads, MhaWeights, RandMha};
pub use conv::{ConvGeometry, DenseConv2d, SkConv2d};
pub use linear::DenseLinear;
pub use memory::InputShape;
pub use model::{Dtype, Layer, LayerGrads, LayerKind, Model, ModelGrads, NamedLayer};
pub use sk_linear::{ParamCount, SkLinear};
pub use tensor::{FeatureMaps, Tensor};
