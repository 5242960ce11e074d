//! Learned low-dimensional projections of local patch descriptors.

pub mod cli;
pub mod cluster;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod nn;
pub mod numerics;
pub mod pca;
pub mod train;

pub use error::{Error, Result};
