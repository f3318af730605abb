//! Multi-modal brain-tumour segmentation with a 2D residual U-Net, a
//! class-weighted Dice loss and a three-view softmax-average ensemble.
//!
//! The crate is organised bottom-up: [`volume`] holds the in-memory data
//! model, [`io`] the file formats, [`phantom`] a synthetic case generator,
//! [`preprocess`] normalisation and patch extraction, [`nn`] the network,
//! [`loss`], [`train`], [`inference`] and [`metrics`] the learning and
//! evaluation stages, and [`cli`] the command-line pipeline.

pub mod cli;
pub mod error;
pub mod exec;
pub mod inference;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod phantom;
pub mod preprocess;
pub mod rng;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
pub use exec::Execution;
