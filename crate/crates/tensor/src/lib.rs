//! Dense row-major tensors with a tape-based reverse-mode autodiff.
//!
//! The library is deliberately narrow: it covers the shapes and layers of a
//! recurrent convolutional encoder-decoder operating on `[H, W, C]` grids and
//! nothing else. There is no broadcasting; every binary op requires equal
//! shapes. All kernels reduce in a fixed order so results are bit-for-bit
//! reproducible for identical inputs.
//!
//! Precision is a type parameter ([`Real`]): training runs in `f32`, gradient
//! checks run in `f64`.

mod adam;
mod checkpoint;
mod error;
pub mod gradcheck;
mod kernels;
mod layers;
mod params;
mod real;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use error::TensorError;
pub use kernels::{ceil_padding, conv_output_dim, Padding};
pub use layers::Activation;
pub use params::{ParamId, ParamSet};
pub use real::Real;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub type Result<T> = std::result::Result<T, TensorError>;
