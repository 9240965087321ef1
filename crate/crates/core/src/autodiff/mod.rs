//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! Values live in [`Tensor`]; learnable leaves are shared [`Param`]s; a
//! [`Tape`] records one forward pass and [`Tape::backward`] replays the
//! gradient rules in reverse.

pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
mod ops;
mod param;
mod rules;
mod tape;
mod tensor;

pub use ops::BatchStats;
pub use param::{Module, Param, ParamRef};
pub use tape::{ChannelLayout, CustomOp, Tape, Var};
pub use tensor::{DType, Element, Tensor};
