#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autograd;
pub mod data;
pub mod experiments;
pub mod preprocess;
pub mod synth;
mod error;
pub mod linalg;
pub mod models;
pub mod train;

pub use error::{Error, Result};
