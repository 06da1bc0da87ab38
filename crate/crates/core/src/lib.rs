pub mod autodiff;
pub mod data;
pub mod distill;
pub mod error;
pub mod eval;
pub mod models;
pub mod tensor;
pub mod train;

pub use autodiff::{Binding, Gradients, ParamSet, Parameter, Tape, Var};
pub use data::{CorpusManifest, Dataset, ImageBuffer};
pub use distill::{DistillPlan, LossWeights, Method, PlanSpec};
pub use error::{Error, Result};
pub use eval::{EvalReport, SrNetwork};
pub use models::{build_model, FeatureTapSet, Model, ModelConfig, Variant};
pub use tensor::{Shape, Tensor};
pub use train::{Checkpoint, TrainConfig};
