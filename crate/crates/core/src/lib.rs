//! Dynamic radiance fields with a learned flow field tying time steps together.

pub mod error;
pub mod eval;
pub mod fields;
pub mod geometry;
pub mod image;
pub mod integrate;
pub mod losses;
pub mod metrics;
pub mod render;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
