#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod cli;
pub mod error;
pub mod evalkit;
pub mod io;
pub mod network;
pub mod perceptual;
pub mod physics;
pub mod tensor;
pub mod trainer;

pub use error::{ContainerError, Error, Result};
pub use tensor::{Real, Shape, Tensor};
