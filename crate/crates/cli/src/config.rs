use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lsfd_core::data::{Split, SynthCorpusConfig};
use lsfd_core::distill::{Method, PlanSpec};
use lsfd_core::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Everything a run needs. Read from JSON, then patched by flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scale: usize,
    pub seeds: Vec<u64>,
    pub corpus: Option<PathBuf>,
    pub out: PathBuf,
    pub teacher_ckpt: Option<PathBuf>,
    /// Model checkpoint for `eval` and `attribution`.
    pub ckpt: Option<PathBuf>,
    pub teacher: ModelConfig,
    pub student: ModelConfig,
    pub train: TrainConfig,
    pub plan: PlanSpec,
    /// Methods compared by `bench`.
    pub methods: Vec<Method>,
    pub synth: SynthCorpusConfig,
    pub split: Split,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scale: 2,
            seeds: vec![0],
            corpus: None,
            out: PathBuf::from("runs"),
            teacher_ckpt: None,
            ckpt: None,
            teacher: ModelConfig::rcan(16, 2, 4, 2).with_reduction(4),
            student: ModelConfig::rcan(8, 2, 2, 2).with_reduction(4),
            train: TrainConfig::default(),
            plan: PlanSpec::new(Method::Lsfd),
            methods: Method::ALL.to_vec(),
            synth: SynthCorpusConfig::default(),
            split: Split::Val,
            threads: 1,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("config {}", path.display()))
    }

    pub fn set_scale(&mut self, scale: usize) {
        self.scale = scale;
        self.teacher.scale = scale;
        self.student.scale = scale;
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale == 0 {
            bail!("scale must be at least 1");
        }
        for (name, m) in [("teacher", &self.teacher), ("student", &self.student)] {
            m.validate().with_context(|| format!("{name} model"))?;
            if m.scale != self.scale {
                bail!("{name}.scale is {} but scale is {}", m.scale, self.scale);
            }
        }
        self.train.validate().context("train")?;
        self.plan.weights.validate().context("plan.weights")?;
        if !(0.0..1.0).contains(&self.plan.deep_slope) {
            bail!("plan.deep_slope must lie in [0, 1), got {}", self.plan.deep_slope);
        }
        if self.seeds.is_empty() {
            bail!("seeds must not be empty");
        }
        if self.methods.is_empty() {
            bail!("methods must not be empty");
        }
        if self.threads == 0 {
            bail!("threads must be at least 1");
        }
        Ok(())
    }

    /// Short digest of the command and config (the output root excluded).
    pub fn run_id(&self, command: &str) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update([0]);
        h.update(&json);
        hex::encode(h.finalize())[..12].to_string()
    }
}
