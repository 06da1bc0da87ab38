//! Procedural repetitive textures. Short periods alias once downscaled,
//! which is where selective distillation is expected to matter.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::image::ImageBuffer;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    /// Sinusoidal grating.
    Stripes,
    /// Square-wave checkerboard.
    Checker,
    /// Thin lines on both axes.
    Grid,
    /// Two slightly detuned, slightly rotated gratings.
    Moire,
}

impl Pattern {
    pub const ALL: [Pattern; 4] = [Pattern::Stripes, Pattern::Checker, Pattern::Grid, Pattern::Moire];
}

fn default_tint() -> [f64; 3] {
    [1.0, 1.0, 1.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    /// Side length in pixels.
    pub size: usize,
    pub pattern: Pattern,
    /// Pixels per cycle.
    pub period: usize,
    /// Orientation in degrees.
    #[serde(default)]
    pub angle: f64,
    /// Modulation depth in [0, 1].
    pub contrast: f64,
    /// Random orientation offset drawn from `[-angle_jitter, angle_jitter]`.
    #[serde(default)]
    pub angle_jitter: f64,
    #[serde(default = "default_tint")]
    pub tint: [f64; 3],
}

impl SynthSpec {
    pub fn new(size: usize, pattern: Pattern, period: usize) -> Self {
        SynthSpec {
            size,
            pattern,
            period,
            angle: 0.0,
            contrast: 1.0,
            angle_jitter: 0.0,
            tint: default_tint(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::Config("texture size must be positive".into()));
        }
        if self.period < 2 {
            return Err(Error::Config(format!(
                "texture period {} is below 2 pixels",
                self.period
            )));
        }
        if !(0.0..=1.0).contains(&self.contrast) {
            return Err(Error::Config(format!("contrast {} outside [0, 1]", self.contrast)));
        }
        if !self.tint.iter().all(|t| (0.0..=1.0).contains(t)) {
            return Err(Error::Config("tint components must lie in [0, 1]".into()));
        }
        if !(self.angle.is_finite() && self.angle_jitter.is_finite() && self.angle_jitter >= 0.0) {
            return Err(Error::Config(
                "angle and angle_jitter must be finite, jitter non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Position within the cycle in [0, 1). Exact for integer coordinates.
fn cycle(u: f64, period: f64) -> f64 {
    u.rem_euclid(period) / period
}

fn square(t: f64) -> f64 {
    if t < 0.5 {
        1.0
    } else {
        -1.0
    }
}

/// Renders `spec`. The rng only moves the phase (whole pixels) and, with
/// jitter, the angle.
pub fn synth_texture<R: Rng + ?Sized>(spec: &SynthSpec, rng: &mut R) -> Result<ImageBuffer> {
    spec.validate()?;
    let p = spec.period as f64;
    let phase_u = rng.random_range(0..spec.period) as f64;
    let phase_v = rng.random_range(0..spec.period) as f64;
    let jitter = if spec.angle_jitter > 0.0 {
        rng.random_range(-spec.angle_jitter..=spec.angle_jitter)
    } else {
        0.0
    };
    let theta = (spec.angle + jitter).to_radians();
    let (sin, cos) = if theta == 0.0 { (0.0, 1.0) } else { theta.sin_cos() };
    let (sin2, cos2) = (theta + 7f64.to_radians()).sin_cos();

    let value = |x: f64, y: f64| -> f64 {
        let u = x * cos + y * sin + phase_u;
        let v = -x * sin + y * cos + phase_v;
        match spec.pattern {
            Pattern::Stripes => (2.0 * PI * cycle(u, p)).cos(),
            Pattern::Checker => square(cycle(u, p)) * square(cycle(v, p)),
            Pattern::Grid => {
                let line = (0.25f64).max(1.0 / p);
                if cycle(u, p) < line || cycle(v, p) < line {
                    1.0
                } else {
                    -1.0
                }
            }
            Pattern::Moire => {
                let u2 = x * cos2 + y * sin2 + phase_u;
                0.5 * ((2.0 * PI * cycle(u, p)).cos() + (2.0 * PI * cycle(u2, p * 1.15)).cos())
            }
        }
    };

    Ok(ImageBuffer::from_fn(spec.size, spec.size, |x, y| {
        let level = 0.5 + 0.5 * spec.contrast * value(x as f64, y as f64);
        spec.tint.map(|t| (255.0 * t * level).round().clamp(0.0, 255.0) as u8)
    }))
}
