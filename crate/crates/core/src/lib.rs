//! Multi-task pointer-generator summarization with soft, layer-specific
//! parameter sharing, sized for a single machine.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod decoding;
pub mod error;
pub mod eval;
pub mod model;
pub mod params;
pub mod sharing;
pub mod training;

pub use error::{Error, Result};
