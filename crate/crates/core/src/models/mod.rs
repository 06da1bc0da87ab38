//! Tiny EDSR-like and RCAN-like super-resolution networks with feature taps.
//!
//! Neither architecture uses normalization layers. Intermediate features keep
//! the input's spatial size; only the upsampler at the end enlarges it, so a
//! tap tensor always has shape `(N, channels, h, w)` for an `(N, 3, h, w)`
//! input.

mod config;
mod network;
mod taps;

pub use config::{ModelConfig, Variant};
pub use network::{build_model, ChannelAttention, ConvLayer, ForwardOutput, Model, ResBlock};
pub use taps::{pair_tap_indices, pair_taps, FeatureTapSet, TapPair};
