//! Bicubic resampling with the a = -0.5 kernel.
//!
//! Downscaling widens the kernel by the scale factor (antialiasing), the same
//! convention as MATLAB's `imresize`, which produced the usual SR benchmark
//! LR images. Borders replicate the edge pixel.

use crate::error::{Error, Result};

use super::image::ImageBuffer;

pub const CUBIC_A: f64 = -0.5;

/// Keys' cubic convolution kernel.
pub fn cubic(x: f64) -> f64 {
    let a = CUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        (a + 2.0) * x * x * x - (a + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        a * x * x * x - 5.0 * a * x * x + 8.0 * a * x - 4.0 * a
    } else {
        0.0
    }
}

/// Per output index: first input index and normalised tap weights.
/// Indices are left unclamped; callers clamp to the valid range.
fn contributions(in_len: usize, out_len: usize) -> Vec<(isize, Vec<f64>)> {
    let scale = out_len as f64 / in_len as f64;
    let (stretch, width) = if scale < 1.0 { (scale, 4.0 / scale) } else { (1.0, 4.0) };
    let taps = width.ceil() as usize + 2;
    (0..out_len)
        .map(|i| {
            let u = (i as f64 + 0.5) / scale - 0.5;
            let left = (u - width / 2.0).floor() as isize;
            let mut w: Vec<f64> = (0..taps)
                .map(|t| stretch * cubic(stretch * (u - (left + t as isize) as f64)))
                .collect();
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= total);
            (left, w)
        })
        .collect()
}

fn resample_axis(src: &[f64], len: usize, stride: usize, count: usize, out_len: usize, step: usize) -> Vec<f64> {
    // resamples `count` lines of `len` samples; sample k of line j is at j*step + k*stride
    let plan = contributions(len, out_len);
    let mut out = vec![0.0; count * out_len];
    for j in 0..count {
        for (i, (left, w)) in plan.iter().enumerate() {
            let mut acc = 0.0;
            for (t, &wt) in w.iter().enumerate() {
                let k = (left + t as isize).clamp(0, len as isize - 1) as usize;
                acc += wt * src[j * step + k * stride];
            }
            out[j * out_len + i] = acc;
        }
    }
    out
}

/// Resizes one row-major float plane.
pub fn resize_plane(src: &[f64], width: usize, height: usize, new_width: usize, new_height: usize) -> Vec<f64> {
    assert_eq!(src.len(), width * height, "plane size");
    // vertical pass yields a column-major plane, the horizontal pass turns it back
    let cols = resample_axis(src, height, width, width, new_height, 1);
    resample_axis(&cols, width, new_height, new_height, new_width, 1)
}

/// Bicubic resize of every channel, rounded half away from zero and clamped.
pub fn bicubic_resize(img: &ImageBuffer, new_width: usize, new_height: usize) -> Result<ImageBuffer> {
    if new_width == 0 || new_height == 0 || img.width() == 0 || img.height() == 0 {
        return Err(Error::InvalidArgument("resize to or from an empty image".into()));
    }
    let planes: Vec<Vec<f64>> = (0..3)
        .map(|c| resize_plane(&img.channel(c), img.width(), img.height(), new_width, new_height))
        .collect();
    let pixels = (0..new_width * new_height)
        .flat_map(|i| planes.iter().map(move |p| p[i].round().clamp(0.0, 255.0) as u8))
        .collect();
    ImageBuffer::new(new_width, new_height, pixels)
}

/// Downscales by an integer factor. Sides must already be multiples of `scale`.
pub fn bicubic_downscale(img: &ImageBuffer, scale: usize) -> Result<ImageBuffer> {
    if scale == 0 {
        return Err(Error::InvalidArgument("scale must be positive".into()));
    }
    if !img.width().is_multiple_of(scale) || !img.height().is_multiple_of(scale) {
        return Err(Error::InvalidArgument(format!(
            "{}x{} image is not divisible by scale {scale}; crop it first",
            img.width(),
            img.height()
        )));
    }
    if scale == 1 {
        return Ok(img.clone());
    }
    bicubic_resize(img, img.width() / scale, img.height() / scale)
}

pub fn bicubic_upscale(img: &ImageBuffer, scale: usize) -> Result<ImageBuffer> {
    if scale == 0 {
        return Err(Error::InvalidArgument("scale must be positive".into()));
    }
    if scale == 1 {
        return Ok(img.clone());
    }
    bicubic_resize(img, img.width() * scale, img.height() * scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_interpolating() {
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
        assert!((cubic(0.5) - 0.5625).abs() < 1e-15);
    }

    #[test]
    fn weights_sum_to_one() {
        for (n, m) in [(8, 4), (9, 3), (4, 8), (5, 5)] {
            for (_, w) in contributions(n, m) {
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn resize_plane_identity_at_same_size() {
        let src: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let out = resize_plane(&src, 4, 3, 4, 3);
        for (a, b) in src.iter().zip(&out) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
