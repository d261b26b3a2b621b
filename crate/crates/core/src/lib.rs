//! Cross-view consistent multi-camera generation primitives.
//!
//! Everything in this crate is pure computation over in-memory values and
//! builds without `std`; file formats, image IO and the command line live in
//! the `bevsync` companion crate.
//!
//! Views are indexed from 1 in every public contract that takes a view
//! index. Grids are stored row-major.
#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod attention;
pub mod camera;
pub mod correspondence;
pub mod diffusion;
mod error;
pub mod homography;
pub mod metrics;
pub mod projection;
pub mod rng;
pub mod scene;
pub mod tensor;

pub use error::{Error, Result};
