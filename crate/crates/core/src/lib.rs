//! Latent-ODE reconstruction of irregularly sampled multichannel signals.
//!
//! The crate is `no_std` with `alloc`; file formats, threads and the command
//! line live in the companion `odesig` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod datagen;
pub mod diffmath;
pub mod encoder;
pub mod error;
pub mod evalnet;
pub mod latentode;
pub mod relgraphs;
pub mod training;

pub use error::{Error, Result};
