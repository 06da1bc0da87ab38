use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::image::{load_png, ImageBuffer};
use super::patch::{hflip, sample_patch, Batch};
use super::resize::bicubic_downscale;
use super::synth::{synth_texture, Pattern, SynthSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn label(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown split {s:?} (expected train, val or test)")))
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// One image: a PNG path (relative to the manifest) or a texture recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<SynthSpec>,
    /// Seeds the texture phase; unused for PNG entries.
    #[serde(default)]
    pub seed: u64,
    pub split: Split,
}

impl CorpusEntry {
    /// Loads or renders the HR image.
    pub fn load(&self, base_dir: &Path) -> Result<ImageBuffer> {
        match (&self.path, &self.spec) {
            (Some(p), None) => load_png(base_dir.join(p)),
            (None, Some(spec)) => synth_texture(spec, &mut ChaCha8Rng::seed_from_u64(self.seed)),
            _ => Err(Error::Config(format!(
                "entry {:?} needs exactly one of path or spec",
                self.id
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub entries: Vec<CorpusEntry>,
    /// Per-channel mean of the train split, in [0, 1].
    pub mean_rgb: [f64; 3],
}

impl CorpusManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: CorpusManifest = serde_json::from_str(&text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Config(format!("duplicate corpus id {:?}", e.id)));
            }
            if e.path.is_some() == e.spec.is_some() {
                return Err(Error::Config(format!(
                    "entry {:?} needs exactly one of path or spec",
                    e.id
                )));
            }
            if let Some(spec) = &e.spec {
                spec.validate()?;
            }
        }
        if !self.mean_rgb.iter().all(|m| m.is_finite()) {
            return Err(Error::Config("mean_rgb must be finite".into()));
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &CorpusEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Per-channel mean over the train split, pixel values scaled to [0, 1].
    pub fn compute_mean(&self, base_dir: &Path) -> Result<[f64; 3]> {
        let mut sums = [0.0f64; 3];
        let mut count = 0usize;
        for entry in self.split(Split::Train) {
            let img = entry.load(base_dir)?;
            for px in img.pixels().chunks_exact(3) {
                for c in 0..3 {
                    sums[c] += px[c] as f64;
                }
            }
            count += img.width() * img.height();
        }
        if count == 0 {
            return Err(Error::Config("corpus has no training images".into()));
        }
        Ok(sums.map(|s| s / count as f64 / 255.0))
    }

    /// Manifest over every `*.png` in `dir` (sorted by name), mean included.
    pub fn from_png_dir(dir: &Path, split: Split) -> Result<Self> {
        let mut names: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        names.sort();
        let entries = names
            .into_iter()
            .map(|p| CorpusEntry {
                id: p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                path: Some(p),
                spec: None,
                seed: 0,
                split,
            })
            .collect();
        let mut m = CorpusManifest {
            entries,
            mean_rgb: [0.0; 3],
        };
        m.validate()?;
        if split == Split::Train {
            m.mean_rgb = m.compute_mean(Path::new(""))?;
        }
        Ok(m)
    }
}

/// Recipe for a synthetic texture corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthCorpusConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub size: usize,
    pub min_period: usize,
    pub max_period: usize,
    pub seed: u64,
}

impl Default for SynthCorpusConfig {
    fn default() -> Self {
        SynthCorpusConfig {
            train: 200,
            val: 32,
            test: 0,
            size: 64,
            min_period: 3,
            max_period: 10,
            seed: 0,
        }
    }
}

impl SynthCorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_period < 2 || self.max_period < self.min_period {
            return Err(Error::Config(format!(
                "period range {}..={} is invalid",
                self.min_period, self.max_period
            )));
        }
        if self.size == 0 {
            return Err(Error::Config("image size must be positive".into()));
        }
        Ok(())
    }
}

/// Draws texture recipes reproducibly from `config.seed` and fills in the
/// train-split mean.
pub fn generate_synth_corpus(config: &SynthCorpusConfig) -> Result<CorpusManifest> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let splits = [
        (Split::Train, config.train, "train"),
        (Split::Val, config.val, "val"),
        (Split::Test, config.test, "test"),
    ];
    let mut entries = Vec::new();
    for (split, count, prefix) in splits {
        for i in 0..count {
            let pattern = Pattern::ALL[rng.random_range(0..Pattern::ALL.len())];
            let spec = SynthSpec {
                size: config.size,
                pattern,
                period: rng.random_range(config.min_period..=config.max_period),
                angle: rng.random_range(0.0..180.0),
                contrast: rng.random_range(0.5..=1.0),
                angle_jitter: 0.0,
                tint: [0; 3].map(|_| rng.random_range(0.6..=1.0)),
            };
            entries.push(CorpusEntry {
                id: format!("{prefix}_{i:04}"),
                path: None,
                spec: Some(spec),
                seed: rng.random(),
                split,
            });
        }
    }
    let mut manifest = CorpusManifest {
        entries,
        mean_rgb: [0.0; 3],
    };
    manifest.validate()?;
    if config.train > 0 {
        manifest.mean_rgb = manifest.compute_mean(Path::new(""))?;
    }
    Ok(manifest)
}

/// An HR image, its degraded LR version and its id.
#[derive(Clone, Debug)]
pub struct ImagePair {
    pub id: String,
    pub hr: ImageBuffer,
    pub lr: ImageBuffer,
}

impl ImagePair {
    /// Crops `hr` to a multiple of `scale` and downscales it.
    pub fn degrade(id: impl Into<String>, hr: &ImageBuffer, scale: usize) -> Result<Self> {
        let hr = hr.crop_to_multiple(scale)?;
        let lr = bicubic_downscale(&hr, scale)?;
        Ok(ImagePair { id: id.into(), hr, lr })
    }
}

/// Degraded image pairs held in memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    scale: usize,
    pairs: Vec<ImagePair>,
}

impl Dataset {
    pub fn from_images(images: Vec<(String, ImageBuffer)>, scale: usize) -> Result<Self> {
        let pairs = images
            .into_iter()
            .map(|(id, hr)| ImagePair::degrade(id, &hr, scale))
            .collect::<Result<_>>()?;
        Ok(Dataset { scale, pairs })
    }

    pub fn from_manifest(manifest: &CorpusManifest, split: Split, scale: usize, base_dir: &Path) -> Result<Self> {
        let images = manifest
            .split(split)
            .map(|e| Ok((e.id.clone(), e.load(base_dir)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_images(images, scale)
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[ImagePair] {
        &self.pairs
    }

    /// `batch` patches, images drawn uniformly with replacement.
    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        batch: usize,
        patch: usize,
        mean_rgb: [f64; 3],
        flip: bool,
        rng: &mut R,
    ) -> Result<Batch> {
        if self.pairs.is_empty() {
            return Err(Error::InvalidArgument("cannot sample from an empty dataset".into()));
        }
        let pairs = (0..batch)
            .map(|_| {
                let p = &self.pairs[rng.random_range(0..self.pairs.len())];
                let pair = sample_patch(&p.hr, &p.lr, &p.id, self.scale, patch, mean_rgb, rng)?;
                Ok(if flip { hflip(pair, rng) } else { pair })
            })
            .collect::<Result<Vec<_>>>()?;
        Batch::from_pairs(pairs)
    }
}
