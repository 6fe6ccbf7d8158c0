//! Top-down hierarchical reinforcement learning with option templates.

pub mod baseline;
pub mod craft;
pub mod error;
pub mod harness;
pub mod learners;
pub mod smdp;
pub mod templates;

pub use error::{Error, Result};
