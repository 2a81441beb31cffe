//! Sequential recommendation with a mixture of three temporal-range sequence
//! encoders, combined by a learned sigmoid gate, plus the surrounding
//! machinery: a minimal reverse-mode tensor core, MovieLens-style and
//! synthetic data pipelines, sampled-softmax training with Adagrad, mAP@n
//! evaluation, and a long-range-dependence analyzer for event sequences.

pub mod data;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod lrd;
pub mod model;
pub mod params;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default-precision aliases; the numeric stack is generic over [`Scalar`],
/// with 64-bit as the default and 32-bit selectable for speed.
pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape64 = tape::Tape<f64>;
pub type Tape32 = tape::Tape<f32>;
pub type ParamStore64 = params::ParamStore<f64>;
pub type ParamStore32 = params::ParamStore<f32>;
