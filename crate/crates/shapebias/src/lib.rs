//! File formats, threaded execution and the command-line runner built on
//! `shapebias-core`.

pub mod cli;
pub mod codec;
pub mod data;
pub mod error;
pub mod experiment;
pub mod parallel;
pub mod store;

pub use error::{Error, Result};
