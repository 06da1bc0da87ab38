//! Images, degradation, patch sampling and the synthetic texture corpus.

mod corpus;
mod image;
mod patch;
mod resize;
mod synth;

pub use corpus::{generate_synth_corpus, CorpusEntry, CorpusManifest, Dataset, ImagePair, Split, SynthCorpusConfig};
pub use image::{load_png, save_gray_png, save_png, ImageBuffer};
pub use patch::{
    batch_rng, flip_pair, flip_tensor, from_tensor, hflip, sample_patch, to_tensor, Batch, PatchMeta, PatchPair,
    DEFAULT_PATCH,
};
pub use resize::{bicubic_downscale, bicubic_resize, bicubic_upscale, cubic, resize_plane, CUBIC_A};
pub use synth::{synth_texture, Pattern, SynthSpec};
