use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// BT.601 luma of a `(N, 3, H, W)` tensor on the [0, 1] scale.
pub fn rgb_to_y(img: &Tensor) -> Result<Tensor> {
    let s = img.shape();
    if s.c != 3 {
        return Err(Error::InvalidShape(format!("rgb_to_y expects 3 channels, got {s}")));
    }
    let mut out = Tensor::zeros(s.with_channels(1));
    for n in 0..s.n {
        let (r, g, b) = (img.plane(n, 0), img.plane(n, 1), img.plane(n, 2));
        for (i, y) in out.plane_mut(n, 0).iter_mut().enumerate() {
            *y = (65.738 * r[i] + 129.057 * g[i] + 25.064 * b[i]) / 256.0 + 16.0 / 256.0;
        }
    }
    Ok(out)
}

/// Snaps values to the 8-bit grid, clamping to [0, 1].
pub fn quantize(t: &Tensor) -> Tensor {
    t.map(|v| (v * 255.0).round().clamp(0.0, 255.0) / 255.0)
}

/// PSNR in dB with peak 1.0 after 8-bit quantisation and a `shave`-pixel
/// border crop. Identical inputs give `f64::INFINITY`.
pub fn psnr(pred: &Tensor, target: &Tensor, shave: usize, on_y: bool) -> Result<f64> {
    let s = pred.shape();
    if s != target.shape() {
        return Err(Error::InvalidShape(format!("psnr of {s} against {}", target.shape())));
    }
    if 2 * shave >= s.h || 2 * shave >= s.w {
        return Err(Error::InvalidArgument(format!(
            "shave {shave} leaves nothing of a {}x{} image",
            s.h, s.w
        )));
    }
    let (mut a, mut b) = (quantize(pred), quantize(target));
    if on_y {
        a = rgb_to_y(&a)?;
        b = rgb_to_y(&b)?;
    }
    let s = a.shape();
    let mut sum = 0.0;
    let mut count = 0usize;
    for n in 0..s.n {
        for c in 0..s.c {
            let (pa, pb) = (a.plane(n, c), b.plane(n, c));
            for y in shave..s.h - shave {
                for x in shave..s.w - shave {
                    let d = pa[y * s.w + x] - pb[y * s.w + x];
                    sum += d * d;
                }
            }
            count += (s.h - 2 * shave) * (s.w - 2 * shave);
        }
    }
    let mse = sum / count as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}
