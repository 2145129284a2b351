//! Non-global attentive classification head with hand-written gradients.
//!
//! The crate is generic over the element type ([`Scalar`]); `f32` is the
//! storage type used for training and checkpoints, `f64` backs the gradient
//! oracles. Aliases for both are exported below.

pub mod backbone;
pub mod bench;
pub mod config;
pub mod data;
mod error;
pub mod heads;
pub mod ops;
mod scalar;
pub mod tensor;
pub mod train;
pub mod viz;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Dims, GradientSet, Matrix, ParamArray, Parameterized, Tensor, Visit, VisitMut};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Matrix32 = Matrix<f32>;
pub type Matrix64 = Matrix<f64>;
pub type NoahHead32 = heads::NoahHeadParams<f32>;
pub type NoahHead64 = heads::NoahHeadParams<f64>;
pub type GapHead32 = heads::GapHeadParams<f32>;
pub type GapHead64 = heads::GapHeadParams<f64>;
pub type Model32 = train::Model<f32>;
pub type Model64 = train::Model<f64>;
