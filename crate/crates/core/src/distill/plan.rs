use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{pair_taps, FeatureTapSet, Model};

use super::regressor::{Regressor, RegressorKind, RegressorSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Plain L1 to the ground truth; no teacher involvement.
    Vanilla,
    /// 1x1 regressor feature distillation.
    Fitnet,
    /// Deep-regressor feature distillation.
    Lfd,
    /// Deep-regressor distillation weighted by the output disagreement map.
    Lsfd,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Vanilla, Method::Fitnet, Method::Lfd, Method::Lsfd];

    pub fn label(self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::Fitnet => "fitnet",
            Method::Lfd => "lfd",
            Method::Lsfd => "lsfd",
        }
    }

    pub fn regressor(self) -> Option<RegressorKind> {
        match self {
            Method::Vanilla => None,
            Method::Fitnet => Some(RegressorKind::Fitnet),
            Method::Lfd | Method::Lsfd => Some(RegressorKind::Deep),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?} (expected vanilla, fitnet, lfd or lsfd)")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub fft_weight: f64,
    pub use_fft: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha1: 2000.0,
            alpha2: 10.0,
            fft_weight: 1.0,
            use_fft: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("fft_weight", self.fft_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be a finite non-negative number, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Whether the selective map passes gradients back to the SR outputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SfdGradient {
    #[default]
    Blocked,
    FlowThrough,
}

/// How the frequency loss compares spectra.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FftMode {
    /// L1 over real and imaginary planes treated as independent reals.
    #[default]
    Separate,
    /// L1 over the complex modulus of the spectral difference.
    Magnitude,
}

/// Serializable choice of method and loss settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSpec {
    pub method: Method,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub sfd_gradient: SfdGradient,
    #[serde(default)]
    pub fft_mode: FftMode,
    /// Negative-side slope of the deep regressor's leaky ReLU.
    #[serde(default = "default_slope")]
    pub deep_slope: f64,
}

pub const DEFAULT_DEEP_SLOPE: f64 = 0.1;

fn default_slope() -> f64 {
    DEFAULT_DEEP_SLOPE
}

impl PlanSpec {
    pub fn new(method: Method) -> Self {
        PlanSpec {
            method,
            weights: LossWeights::default(),
            sfd_gradient: SfdGradient::default(),
            fft_mode: FftMode::default(),
            deep_slope: DEFAULT_DEEP_SLOPE,
        }
    }

    pub fn with_fft(mut self, weight: f64) -> Self {
        self.weights.use_fft = true;
        self.weights.fft_weight = weight;
        self
    }

    pub fn needs_teacher(&self) -> bool {
        self.method != Method::Vanilla || self.weights.use_fft
    }
}

/// A method bound to concrete tap pairs and regressor parameters.
#[derive(Clone, Debug)]
pub struct DistillPlan {
    pub spec: PlanSpec,
    pub taps: FeatureTapSet,
    pub regressors: Vec<Regressor>,
}

impl DistillPlan {
    /// Pairs taps and instantiates one regressor per pair (none for vanilla).
    pub fn new(spec: PlanSpec, teacher: &Model, student: &Model, seed: u64) -> Result<Self> {
        spec.weights.validate()?;
        let (taps, regressors) = match spec.method.regressor() {
            None => (FeatureTapSet::default(), Vec::new()),
            Some(kind) => {
                let taps = pair_taps(teacher, student)?;
                let regressors = (0..taps.len())
                    .map(|i| {
                        let mut rs = RegressorSpec::for_kind(kind, student.channels(), teacher.channels());
                        if kind == RegressorKind::Deep {
                            rs.slope = spec.deep_slope;
                        }
                        Regressor::new(rs, seed.wrapping_mul(1_000_003).wrapping_add(i as u64))
                    })
                    .collect::<Result<_>>()?;
                (taps, regressors)
            }
        };
        let plan = DistillPlan { spec, taps, regressors };
        plan.validate()?;
        Ok(plan)
    }

    /// A plan with no teacher: plain L1 training.
    pub fn vanilla() -> Self {
        DistillPlan {
            spec: PlanSpec::new(Method::Vanilla),
            taps: FeatureTapSet::default(),
            regressors: Vec::new(),
        }
    }

    pub fn method(&self) -> Method {
        self.spec.method
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.weights.validate()?;
        if self.regressors.len() != self.taps.len() {
            return Err(Error::Config(format!(
                "{} regressors for {} tap pairs",
                self.regressors.len(),
                self.taps.len()
            )));
        }
        match self.spec.method {
            Method::Vanilla if !self.regressors.is_empty() => {
                Err(Error::Config("vanilla plan must not carry regressors".into()))
            }
            Method::Vanilla => Ok(()),
            m if self.taps.is_empty() => Err(Error::Config(format!("{m} plan needs at least one tap pair"))),
            _ => Ok(()),
        }
    }

    /// Parameters of every regressor, for counting.
    pub fn regressor_parameter_count(&self) -> usize {
        self.regressors.iter().map(|r| r.params.numel()).sum()
    }
}
