pub mod checkpoint;
pub mod cluvae;
pub mod context;
pub mod error;
pub mod evaluation;
pub mod grid;
pub mod neural;
pub mod pipeline;
pub mod service;
pub mod vgae;

pub use error::{Error, Result};
