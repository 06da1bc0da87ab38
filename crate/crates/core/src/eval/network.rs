use serde::{Deserialize, Serialize};

use crate::data::{bicubic_upscale, from_tensor, to_tensor, Dataset, ImageBuffer};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::tensor::Tensor;

use super::metrics::psnr;

/// Anything that maps an LR image to an SR image.
pub trait SrNetwork {
    fn label(&self) -> String;
    fn scale(&self) -> usize;
    fn upscale(&self, lr: &ImageBuffer, mean_rgb: [f64; 3]) -> Result<ImageBuffer>;
}

impl SrNetwork for Model {
    fn label(&self) -> String {
        format!("{:?}", self.config().variant).to_lowercase()
    }

    fn scale(&self) -> usize {
        Model::scale(self)
    }

    fn upscale(&self, lr: &ImageBuffer, mean_rgb: [f64; 3]) -> Result<ImageBuffer> {
        let (sr, _) = self.infer(&to_tensor(lr, mean_rgb))?;
        from_tensor(&sr, mean_rgb)
    }
}

/// The bicubic upsampling floor.
#[derive(Clone, Copy, Debug)]
pub struct Bicubic {
    pub scale: usize,
}

impl SrNetwork for Bicubic {
    fn label(&self) -> String {
        "bicubic".into()
    }

    fn scale(&self) -> usize {
        self.scale
    }

    fn upscale(&self, lr: &ImageBuffer, _mean_rgb: [f64; 3]) -> Result<ImageBuffer> {
        bicubic_upscale(lr, self.scale)
    }
}

/// Returns its input unchanged; only meaningful at scale 1.
#[derive(Clone, Copy, Debug)]
pub struct Passthrough;

impl SrNetwork for Passthrough {
    fn label(&self) -> String {
        "identity".into()
    }

    fn scale(&self) -> usize {
        1
    }

    fn upscale(&self, lr: &ImageBuffer, _mean_rgb: [f64; 3]) -> Result<ImageBuffer> {
        Ok(lr.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub id: String,
    pub psnr_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub images: Vec<ImageScore>,
    /// Arithmetic mean of the per-image values; infinite if any image matched exactly.
    pub mean_psnr_db: f64,
    pub config_digest: String,
    pub seed: u64,
}

/// Image as a `(1, 3, H, W)` tensor on the [0, 1] scale.
pub fn unit_tensor(img: &ImageBuffer) -> Tensor {
    to_tensor(img, [0.0; 3])
}

/// PSNR of every pair in `data` (Y channel unless `on_y` is false, border
/// shave equal to the scale).
pub fn evaluate(net: &dyn SrNetwork, data: &Dataset, mean_rgb: [f64; 3], on_y: bool) -> Result<EvalReport> {
    if net.scale() != data.scale() {
        return Err(Error::Config(format!(
            "network scale {} does not match data scale {}",
            net.scale(),
            data.scale()
        )));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let images = data
        .pairs()
        .iter()
        .map(|p| {
            let sr = net.upscale(&p.lr, mean_rgb)?;
            let v = psnr(&unit_tensor(&sr), &unit_tensor(&p.hr), data.scale(), on_y)?;
            Ok(ImageScore {
                id: p.id.clone(),
                psnr_db: v,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = images.iter().map(|s| s.psnr_db).sum::<f64>() / images.len() as f64;
    Ok(EvalReport {
        method: net.label(),
        images,
        mean_psnr_db: mean,
        config_digest: String::new(),
        seed: 0,
    })
}
