//! Graph-to-sequence sketch modeling with drawing-order positional encodings.

pub mod config;
pub mod data;
pub mod error;
pub mod graph;
pub mod pe;

pub mod model;
pub mod pipeline;
pub mod train;
pub mod checkpoint;
pub mod classifier;
pub mod eval;
pub mod gradcheck;
pub mod util;

pub use error::{CoreError, Result};
