//! Subword-segmental language modelling on a character Transformer.
//!
//! Text is scored as a marginal over every segmentation of each word into
//! subwords of bounded length. Each segment's probability mixes a softmax
//! over a fixed subword lexicon with a character-by-character generator,
//! both conditioned on a causal Transformer encoding of the preceding text.
//!
//! The numeric core is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the aliases below name the common concrete types.

pub mod analysis;
pub mod autodiff;
pub mod config;
pub mod corpus;
pub mod decoding;
pub mod error;
pub mod lattice;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};

pub type SegmentalModelF32 = model::SegmentalModel<f32>;
pub type SegmentalModelF64 = model::SegmentalModel<f64>;
pub type SegmentScoresF32 = lattice::SegmentScores<f32>;
pub type SegmentScoresF64 = lattice::SegmentScores<f64>;
pub type LatticeF32 = lattice::Lattice<f32>;
pub type LatticeF64 = lattice::Lattice<f64>;
