//! Core numerics for probing the shape/texture bias of adversarially trained
//! classifiers: a small reverse-mode autodiff engine, a residual CNN, FGSM and
//! PGD adversaries, adversarial training, input-gradient saliency, and the
//! saturation, patch-shuffle and Fourier distortions.
//!
//! The crate is `no_std` (with `alloc`). File formats, the CLI and threaded
//! execution live in the `shapebias` companion crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod attack;
pub mod augment;
pub mod autodiff;
pub mod checkpoint;
pub mod cifar;
pub mod distort;
pub mod error;
pub mod eval;
pub mod fft;
pub mod gradcheck;
mod kernels;
pub mod exec;
pub mod image;
pub mod model;
pub mod rng;
pub mod saliency;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use autodiff::{GradientSet, Tape, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
