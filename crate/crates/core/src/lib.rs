//! LSTM networks with simplified gating.
//!
//! The crate trains the standard LSTM and three reduced-gate variants on
//! sequence classification tasks with a hand-derived backward pass:
//!
//! - [`linalg`]: deterministic dense kernels.
//! - [`cell`]: the four cell variants, initialization and parameter counts.
//! - [`bptt`]: sequence forward/backward and a finite-difference oracle.
//! - [`layers`]: embedding, dropout, classifier head and losses.
//! - [`optim`]: RMSprop, the loss-driven learning rate and early stopping.
//! - [`data`]: IDX images, image sequencing and the token pipeline.
//! - [`runner`]: training orchestration, checkpoints, metrics and reports.

pub mod bptt;
pub mod cell;
pub mod data;
pub mod error;
pub mod layers;
pub mod linalg;
pub mod optim;
pub mod runner;

pub use error::{Error, Result};
