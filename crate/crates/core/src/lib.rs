//! Hierarchical grouping of visual elements in 2D layouts.
//!
//! A spatial-aware transformer predicts pairwise relatedness between the
//! elements of a layout; a bottom-up graph merge turns relatedness plus
//! spatial proximity into a strict grouping tree.

pub mod autodiff;
pub mod embed;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod grouping;
pub mod layout;
pub mod model;
pub mod proximity;
pub mod relatedness;
pub mod render;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
