//! Frequency-enhanced Hilbert-scan state-space forecasting for gridded
//! sea-ice concentration.
//!
//! The crate is organised bottom-up:
//!
//! * [`sfc`] builds locality-preserving scan orders over `(T, H, W)` cuboids.
//! * [`nd`] holds the dense [`Tensor`](nd::Tensor), a reverse-mode tape and
//!   the layers the network needs.
//! * [`wavelet`], [`ssm`] and [`hsa`] are the three ingredients of one
//!   frequency-enhanced state-space module.
//! * [`model`] assembles encoder, module stack and decoder, and trains it.
//! * [`data`] and [`metrics`] cover preprocessing, windowing and scoring.
//!
//! The guide under `book/` walks through each piece with runnable snippets.

pub mod data;
pub mod error;
pub mod hsa;
pub mod metrics;
pub mod model;
pub mod nd;
pub mod sfc;
pub mod ssm;
pub mod wavelet;

pub use error::{Error, Result};
