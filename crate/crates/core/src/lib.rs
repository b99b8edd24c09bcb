//! Core library: stimulus synthesis, a reference transformer encoder, map
//! exchange, and the grouping and saliency metrics computed over block maps.

pub mod grouping;
pub mod mapio;
pub mod saliency;
pub mod stimgen;
pub mod toyvit;
