use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Binding, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::models::ConvLayer;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressorKind {
    /// One 1x1 convolution with ReLU.
    Fitnet,
    /// Five 3x3 convolutions, each with leaky ReLU (slope 0.1).
    Deep,
}

/// Shape of the adapter that maps student features onto teacher channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressorSpec {
    pub kind: RegressorKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub depth: usize,
    pub kernel: usize,
    pub slope: f64,
}

impl RegressorSpec {
    pub fn fitnet(in_channels: usize, out_channels: usize) -> Self {
        RegressorSpec {
            kind: RegressorKind::Fitnet,
            in_channels,
            out_channels,
            depth: 1,
            kernel: 1,
            slope: 0.0,
        }
    }

    pub fn deep(in_channels: usize, out_channels: usize) -> Self {
        RegressorSpec {
            kind: RegressorKind::Deep,
            in_channels,
            out_channels,
            depth: 5,
            kernel: 3,
            slope: super::plan::DEFAULT_DEEP_SLOPE,
        }
    }

    pub fn for_kind(kind: RegressorKind, in_channels: usize, out_channels: usize) -> Self {
        match kind {
            RegressorKind::Fitnet => Self::fitnet(in_channels, out_channels),
            RegressorKind::Deep => Self::deep(in_channels, out_channels),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("regressor depth must be at least 1".into()));
        }
        if !matches!(self.kernel, 1 | 3) {
            return Err(Error::Config(format!(
                "regressor kernel must be 1 or 3, got {}",
                self.kernel
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("regressor channels must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.slope) {
            return Err(Error::Config(format!("activation slope {} outside [0, 1)", self.slope)));
        }
        Ok(())
    }

    /// Side length of the input window one output position depends on.
    pub fn receptive_field(&self) -> usize {
        1 + self.depth * (self.kernel - 1)
    }
}

/// An instantiated regressor. Trained with the student, discarded afterwards.
#[derive(Clone, Debug)]
pub struct Regressor {
    spec: RegressorSpec,
    pub params: ParamSet,
    layers: Vec<ConvLayer>,
}

impl Regressor {
    pub fn new(spec: RegressorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamSet::new();
        let layers = (0..spec.depth)
            .map(|i| {
                let cin = if i == 0 { spec.in_channels } else { spec.out_channels };
                ConvLayer::new(&mut params, &format!("layer{i}"), cin, spec.out_channels, spec.kernel)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &layers {
            let bound = (1.0 / l.fan_in() as f64).sqrt();
            let shape = params.get(l.weight).value.shape();
            params.get_mut(l.weight).value = Tensor::uniform(shape, -bound, bound, &mut rng);
        }
        Ok(Regressor { spec, params, layers })
    }

    pub fn spec(&self) -> &RegressorSpec {
        &self.spec
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Binding, x: Var) -> Result<Var> {
        let c = tape.shape(x).c;
        if c != self.spec.in_channels {
            return Err(Error::InvalidShape(format!(
                "regressor expects {} input channels, got {c}",
                self.spec.in_channels
            )));
        }
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward(tape, bound, h)?;
            h = tape.leaky_relu(h, self.spec.slope);
        }
        Ok(h)
    }
}
