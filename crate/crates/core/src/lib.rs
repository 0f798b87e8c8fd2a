//! UniFormer building blocks on a small reverse-mode autodiff engine.
//!
//! The crate covers the dense-tensor engine ([`autodiff`]), layer primitives
//! ([`nn`]), the local/global/window/hourglass blocks ([`block`],
//! [`hourglass`]), backbone assembly and 2D→3D inflation ([`model`]), a
//! closed-form parameter and MAC counter ([`analyzer`]), a toy training loop
//! ([`train`]) and the verification suites behind the `uniformer` CLI
//! ([`checks`]).

pub mod analyzer;
pub mod autodiff;
pub mod block;
pub mod checkpoint;
pub mod checks;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod hourglass;
pub mod model;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

pub use autodiff::{Graph, Var};
pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{Scalar, Tensor};
