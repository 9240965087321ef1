//! Camera-conditioned mental-rotation visual question answering.
//!
//! The crate is organized bottom-up:
//!
//! - [`autodiff`]: dense tensors and a reverse-mode tape.
//! - [`geometry`]: rigid transforms and differentiable trilinear resampling
//!   of feature volumes.
//! - [`nn`]: encoders, GRU question encoder, camera embedders, FILM blocks
//!   and the VQA model.
//! - [`contrastive`]: InfoNCE pretraining of a 2D-to-3D volume encoder.
//! - [`scene`]: procedural multi-view scenes, a software renderer, question
//!   templates, answer oracle and dataset shards.
//! - [`harness`]: Adam, training/evaluation loops, ablation runner, metrics.
//!
//! The `examples/` directory holds one runnable program per capability.

pub mod autodiff;
pub mod contrastive;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod nn;
pub mod scene;
pub mod seeds;

pub use error::{Error, Result};
