//! Multi-frame self-supervised depth estimation with attention-based cost
//! volumes, built on the `diffcore` autodiff engine.

pub mod checkpoint;
pub mod decoding;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod inference;
pub mod loss;
pub mod matching;
pub mod model;
pub mod params;
pub mod pnm;
pub mod synthdata;
pub mod train;

pub use error::{Error, Result};
