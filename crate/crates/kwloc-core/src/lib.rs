//! Keyword detection and localisation in sequential feature streams.
//!
//! Four convolutional models — two with query attention, two without — are
//! trained from utterance-level supervision only (hard bag-of-words labels or
//! soft probabilities from a simulated visual tagger) and evaluated on both
//! keyword detection and frame-level localisation against known word spans.
//!
//! Everything numeric is generic over the scalar type: f32 is the production
//! precision, f64 backs the finite-difference gradient checks. Concrete
//! aliases for the common f32 instantiation live at the crate root.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod numerics;
pub mod saliency;
pub mod scalar;
pub mod supervision;
pub mod tape;
pub mod tensor;
pub mod vocab;

pub use error::{CoreError, Result};
pub use scalar::Scalar;

/// f32 tensor, the production precision.
pub type Tensor32 = tensor::Tensor<f32>;
/// f64 tensor, used by gradient verification.
pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape32 = tape::Tape<f32>;
pub type Tape64 = tape::Tape<f64>;
pub type Model32 = model::KeywordModel<f32>;
pub type Model64 = model::KeywordModel<f64>;
pub type Utterance32 = corpus::Utterance<f32>;
