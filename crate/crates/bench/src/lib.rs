//! Fixtures shared by the benchmarks.

use lsfd_core::data::{generate_synth_corpus, Split, SynthCorpusConfig};
use lsfd_core::{CorpusManifest, Dataset, Result, Shape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn random(shape: impl Into<Shape>, seed: u64) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// A small synthetic training set at `scale`.
pub fn corpus(images: usize, size: usize, scale: usize) -> Result<(CorpusManifest, Dataset)> {
    let manifest = generate_synth_corpus(&SynthCorpusConfig {
        train: images,
        val: 0,
        test: 0,
        size,
        ..SynthCorpusConfig::default()
    })?;
    let data = Dataset::from_manifest(&manifest, Split::Train, scale, std::path::Path::new(""))?;
    Ok((manifest, data))
}
