//! Generative attribute-value prediction for product catalogs.
//!
//! The crate covers the whole loop at desk scale: a synthetic catalog with a
//! ground-truth oracle ([`synth`]), tokenization ([`text`]), a small
//! encoder-decoder transformer with exact gradients ([`model`]), two-stage
//! weak/strong training ([`train`]), beam decoding with a top-K softmax
//! confidence ([`decode`]), acceptance metrics ([`eval`]) and the extraction
//! and classification baselines ([`baselines`]).

pub mod baselines;
pub mod catalog;
pub mod decode;
pub mod model;
pub mod error;
pub mod eval;
pub mod seeds;
pub mod synth;
pub mod text;
pub mod train;

pub use error::{Error, Result};
