use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::tensor::Tensor;

/// Rectangle in SR coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

/// Input-gradient magnitude over the LR grid, scaled so the maximum is 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    pub source_id: String,
    pub region: Region,
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl AttributionMap {
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Pixels whose value exceeds `fraction` of the maximum.
    pub fn footprint_area(&self, fraction: f64) -> usize {
        let max = self.values.iter().cloned().fold(0.0, f64::max);
        if max == 0.0 {
            return 0;
        }
        self.values.iter().filter(|&&v| v > fraction * max).count()
    }

    /// Grayscale bytes, 255 at the maximum.
    pub fn to_gray(&self) -> Vec<u8> {
        self.values
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

/// Attribution of an arbitrary differentiable map `f` at the single-sample
/// input `lr`: gradient of the sum of outputs inside `region`, L2 norm over
/// input channels, normalised to max 1 (left as is when all zero).
pub fn attribution_with<F>(f: F, lr: &Tensor, region: Region, source_id: &str) -> Result<AttributionMap>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let s = lr.shape();
    if s.n != 1 {
        return Err(Error::InvalidShape(format!("attribution takes one image, got {s}")));
    }
    if region.w == 0 || region.h == 0 {
        return Err(Error::InvalidArgument("attribution region is empty".into()));
    }
    let mut tape = Tape::new();
    let x = tape.variable(lr.clone());
    let out = f(&mut tape, x)?;
    let o = tape.shape(out);
    if region.x + region.w > o.w || region.y + region.h > o.h {
        return Err(Error::InvalidArgument(format!(
            "region {}x{}+{}+{} outside the {}x{} output",
            region.w, region.h, region.x, region.y, o.w, o.h
        )));
    }
    let mut mask = Tensor::zeros(o);
    for c in 0..o.c {
        for y in region.y..region.y + region.h {
            for xx in region.x..region.x + region.w {
                mask.set(0, c, y, xx, 1.0);
            }
        }
    }
    let m = tape.constant(mask);
    let masked = tape.mul(out, m)?;
    let total = tape.sum(masked);
    let grads = tape.backward(total)?;
    let g = grads.get(x).cloned().unwrap_or_else(|| Tensor::zeros(s));
    let mut values: Vec<f64> = (0..s.h * s.w)
        .map(|i| (0..s.c).map(|c| g.plane(0, c)[i].powi(2)).sum::<f64>().sqrt())
        .collect();
    let max = values.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        values.iter_mut().for_each(|v| *v /= max);
    }
    Ok(AttributionMap {
        source_id: source_id.to_string(),
        region,
        width: s.w,
        height: s.h,
        values,
    })
}

/// [`attribution_with`] for a model's SR output.
pub fn attribution(model: &Model, lr: &Tensor, region: Region, source_id: &str) -> Result<AttributionMap> {
    attribution_with(
        |tape, x| {
            let bound = model.params.bind(tape, false);
            Ok(model.forward(tape, &bound, x)?.sr)
        },
        lr,
        region,
        source_id,
    )
}
