pub mod corpus;
pub mod error;
pub mod eval;
pub mod glyphs;
pub mod image;
pub mod nn;
pub mod rng;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
