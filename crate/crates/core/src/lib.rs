//! FragmentVC: any-to-any voice conversion by retrieving fine-grained voice
//! fragments from target utterances with Transformer cross-attention.
//!
//! The crate bundles everything needed to train and run the model on a CPU:
//! a small reverse-mode autodiff engine ([`tensor`]), the audio front end
//! ([`audio`]), the network ([`model`]), two-stage training ([`train`]),
//! attention analysis ([`analysis`]) and the command-line driver ([`cli`]).

pub mod analysis;
pub mod audio;
pub mod cli;
pub mod error;
mod fsutil;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
