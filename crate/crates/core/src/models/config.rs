use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Plain residual blocks with a long skip.
    EdsrLike,
    /// Residual groups of channel-attention blocks.
    RcanLike,
}

/// Architecture description of a super-resolution network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub channels: usize,
    /// Blocks per group for `rcan_like`, total blocks for `edsr_like`.
    pub n_blocks: usize,
    /// Residual groups; ignored by `edsr_like`.
    #[serde(default = "one")]
    pub n_groups: usize,
    pub scale: usize,
    #[serde(default)]
    pub residual_scaling: Option<f64>,
    /// Channel-attention bottleneck ratio.
    #[serde(default = "default_reduction")]
    pub reduction: usize,
    #[serde(default)]
    pub seed: u64,
    /// Number of feature taps; defaults to one per group (`rcan_like`) or
    /// four evenly spaced block outputs (`edsr_like`).
    #[serde(default)]
    pub tap_count: Option<usize>,
}

fn one() -> usize {
    1
}

fn default_reduction() -> usize {
    16
}

impl ModelConfig {
    pub fn rcan(channels: usize, n_blocks: usize, n_groups: usize, scale: usize) -> Self {
        ModelConfig {
            variant: Variant::RcanLike,
            channels,
            n_blocks,
            n_groups,
            scale,
            residual_scaling: None,
            reduction: default_reduction(),
            seed: 0,
            tap_count: None,
        }
    }

    pub fn edsr(channels: usize, n_blocks: usize, scale: usize) -> Self {
        ModelConfig {
            variant: Variant::EdsrLike,
            n_groups: 1,
            ..Self::rcan(channels, n_blocks, 1, scale)
        }
    }

    pub fn with_reduction(mut self, reduction: usize) -> Self {
        self.reduction = reduction;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_taps(mut self, taps: usize) -> Self {
        self.tap_count = Some(taps);
        self
    }

    /// Residual branch multiplier: 0.1 for EDSR-style blocks, 1.0 for RCAB.
    pub fn residual_scaling(&self) -> f64 {
        self.residual_scaling.unwrap_or(match self.variant {
            Variant::EdsrLike => 0.1,
            Variant::RcanLike => 1.0,
        })
    }

    /// Number of trunk units a tap can sit behind.
    fn tap_units(&self) -> usize {
        match self.variant {
            Variant::EdsrLike => self.n_blocks,
            Variant::RcanLike => self.n_groups,
        }
    }

    pub fn tap_count(&self) -> usize {
        self.tap_count.unwrap_or(match self.variant {
            Variant::EdsrLike => self.n_blocks.min(4),
            Variant::RcanLike => self.n_groups,
        })
    }

    /// 1-based trunk units whose outputs are tapped, evenly spaced with the
    /// last tap on the final unit.
    pub fn tap_units_list(&self) -> Vec<usize> {
        let units = self.tap_units();
        let taps = self.tap_count();
        (1..=taps)
            .map(|j| ((j * units) as f64 / taps as f64).round() as usize)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(2..=4).contains(&self.scale) {
            return fail(format!("scale must be 2, 3 or 4, got {}", self.scale));
        }
        if self.channels == 0 {
            return fail("channels must be positive".into());
        }
        if self.n_blocks == 0 {
            return fail("n_blocks must be at least 1".into());
        }
        if self.variant == Variant::RcanLike {
            if self.n_groups == 0 {
                return fail("n_groups must be at least 1 for rcan_like".into());
            }
            if self.reduction == 0 || self.channels < self.reduction || !self.channels.is_multiple_of(self.reduction) {
                return fail(format!(
                    "channel attention needs channels ({}) divisible by reduction ({})",
                    self.channels, self.reduction
                ));
            }
        }
        let taps = self.tap_count();
        if taps == 0 || taps > self.tap_units() {
            return fail(format!(
                "tap count {taps} must lie in 1..={} for this trunk",
                self.tap_units()
            ));
        }
        if let Some(s) = self.residual_scaling {
            if !s.is_finite() {
                return fail("residual_scaling must be finite".into());
            }
        }
        Ok(())
    }

    /// Upsampling stages as pixel-shuffle factors.
    pub fn upsample_factors(&self) -> Vec<usize> {
        match self.scale {
            4 => vec![2, 2],
            s => vec![s],
        }
    }

    /// Closed-form parameter count of [`build_model`](super::build_model).
    pub fn parameter_count(&self) -> usize {
        let c = self.channels;
        let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k + cout;
        let body_block = 2 * conv(c, c, 3)
            + match self.variant {
                Variant::EdsrLike => 0,
                Variant::RcanLike => conv(c, c / self.reduction, 1) + conv(c / self.reduction, c, 1),
            };
        let trunk = match self.variant {
            Variant::EdsrLike => self.n_blocks * body_block,
            Variant::RcanLike => self.n_groups * (self.n_blocks * body_block + conv(c, c, 3)),
        };
        let up: usize = self.upsample_factors().iter().map(|r| conv(c, r * r * c, 3)).sum();
        conv(3, c, 3) + trunk + conv(c, c, 3) + up + conv(c, 3, 3)
    }
}
