//! Reversible, group-convolutional 3D encoder-decoder for seismic
//! full-waveform inversion.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] dense N-D storage, seeded randomness and the `RVT1` file format.
//! * [`nn`] hand-written forward/backward kernels for every layer the network uses.
//! * [`invertible`] additive coupling layers and invertible modules whose backward
//!   pass reconstructs inputs instead of storing them.
//! * [`arch`] the layer table, symbolic shape inference and the four model variants.
//! * [`accounting`] exact parameter/FLOP counts and the stored-activation ledger.
//! * [`seismic`] synthetic velocity volumes, an acoustic finite-difference simulator
//!   and the input transforms used during evaluation.
//! * [`train`] loss, AdamW, learning-rate schedule, metrics and the training loop.

pub mod accounting;
pub mod arch;
pub mod error;
pub mod invertible;
pub mod nn;
pub mod seismic;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Real, Rng, Tensor};
