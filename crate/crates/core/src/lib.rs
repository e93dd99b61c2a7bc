//! Order-agnostic photometric stereo: a small autodiff engine, the
//! max-fusion network, a procedural renderer, least-squares baselines,
//! training and evaluation, and surface integration.

pub mod adam;
pub mod checkpoint;
pub mod classic;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod net;
pub mod ops;
pub mod recon;
pub mod render;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod viz;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
