use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

use super::image::ImageBuffer;

/// LR patch side used when none is configured.
pub const DEFAULT_PATCH: usize = 48;

/// `pixel / 255 - mean_rgb[c]`, as a `(1, 3, h, w)` tensor.
pub fn to_tensor(img: &ImageBuffer, mean_rgb: [f64; 3]) -> Tensor {
    let (w, h) = (img.width(), img.height());
    let mut t = Tensor::zeros([1, 3, h, w]);
    for (c, &mean) in mean_rgb.iter().enumerate() {
        let plane = t.plane_mut(0, c);
        for (dst, &v) in plane.iter_mut().zip(img.pixels().iter().skip(c).step_by(3)) {
            *dst = v as f64 / 255.0 - mean;
        }
    }
    t
}

/// Inverse of [`to_tensor`] for a single-sample RGB tensor; clamps and rounds.
pub fn from_tensor(t: &Tensor, mean_rgb: [f64; 3]) -> Result<ImageBuffer> {
    let s = t.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::InvalidShape(format!("expected (1, 3, h, w), got {s}")));
    }
    let mut pixels = vec![0u8; s.h * s.w * 3];
    for (c, &mean) in mean_rgb.iter().enumerate() {
        for (i, &v) in t.plane(0, c).iter().enumerate() {
            pixels[i * 3 + c] = ((v + mean) * 255.0).round().clamp(0.0, 255.0) as u8;
        }
    }
    ImageBuffer::new(s.w, s.h, pixels)
}

/// Mirrors every plane left-right.
pub fn flip_tensor(t: &Tensor) -> Tensor {
    let s = t.shape();
    let mut out = t.clone();
    for n in 0..s.n {
        for c in 0..s.c {
            let src = t.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..s.h {
                for x in 0..s.w {
                    dst[y * s.w + x] = src[y * s.w + s.w - 1 - x];
                }
            }
        }
    }
    out
}

/// Where a patch came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchMeta {
    pub source_id: String,
    /// Top-left corner of the LR crop, `(x, y)`.
    pub offset: (usize, usize),
    pub flipped: bool,
}

/// Aligned LR/HR crops as normalised tensors.
#[derive(Clone, Debug)]
pub struct PatchPair {
    pub lr: Tensor,
    pub hr: Tensor,
    pub meta: PatchMeta,
}

/// Uniform random `patch x patch` LR crop and the matching `scale`-times HR crop.
pub fn sample_patch<R: Rng + ?Sized>(
    hr: &ImageBuffer,
    lr: &ImageBuffer,
    source_id: &str,
    scale: usize,
    patch: usize,
    mean_rgb: [f64; 3],
    rng: &mut R,
) -> Result<PatchPair> {
    if hr.width() != lr.width() * scale || hr.height() != lr.height() * scale {
        return Err(Error::InvalidShape(format!(
            "HR {}x{} is not {scale}x LR {}x{}",
            hr.width(),
            hr.height(),
            lr.width(),
            lr.height()
        )));
    }
    if patch == 0 || lr.width() < patch || lr.height() < patch {
        return Err(Error::TooSmall {
            width: lr.width(),
            height: lr.height(),
            patch,
        });
    }
    let x = rng.random_range(0..=lr.width() - patch);
    let y = rng.random_range(0..=lr.height() - patch);
    let lr_crop = lr.crop(x, y, patch, patch)?;
    let hr_crop = hr.crop(x * scale, y * scale, patch * scale, patch * scale)?;
    Ok(PatchPair {
        lr: to_tensor(&lr_crop, mean_rgb),
        hr: to_tensor(&hr_crop, mean_rgb),
        meta: PatchMeta {
            source_id: source_id.to_string(),
            offset: (x, y),
            flipped: false,
        },
    })
}

/// Flips both crops left-right with probability 1/2. Never rotates.
pub fn hflip<R: Rng + ?Sized>(pair: PatchPair, rng: &mut R) -> PatchPair {
    if rng.random_bool(0.5) {
        flip_pair(pair)
    } else {
        pair
    }
}

/// Unconditional flip; toggles the recorded decision.
pub fn flip_pair(pair: PatchPair) -> PatchPair {
    PatchPair {
        lr: flip_tensor(&pair.lr),
        hr: flip_tensor(&pair.hr),
        meta: PatchMeta {
            flipped: !pair.meta.flipped,
            ..pair.meta
        },
    }
}

/// Independent random stream for one batch, derived from the run seed.
pub fn batch_rng(seed: u64, epoch: u64, batch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((epoch << 32) ^ batch);
    rng
}

/// Stacked patches, `(B, 3, p, p)` and `(B, 3, pS, pS)`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub lr: Tensor,
    pub hr: Tensor,
    pub meta: Vec<PatchMeta>,
}

impl Batch {
    pub fn from_pairs(pairs: Vec<PatchPair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let lr: Vec<Tensor> = pairs.iter().map(|p| p.lr.clone()).collect();
        let hr: Vec<Tensor> = pairs.iter().map(|p| p.hr.clone()).collect();
        Ok(Batch {
            lr: Tensor::stack(&lr)?,
            hr: Tensor::stack(&hr)?,
            meta: pairs.into_iter().map(|p| p.meta).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn lr_shape(&self) -> Shape {
        self.lr.shape()
    }
}
