//! Output and feature distillation losses with their regressors.

mod chain;
mod losses;
mod plan;
mod regressor;

pub use chain::full_chain_check;
pub use losses::{
    feature_difference, fft_loss, l1_distance, lfd_loss, lsfd_loss, sfd_map, sr_loss, total_loss, DistillInputs,
    LossNodes, LossValues,
};
pub use plan::{DistillPlan, FftMode, LossWeights, Method, PlanSpec, SfdGradient, DEFAULT_DEEP_SLOPE};
pub use regressor::{Regressor, RegressorKind, RegressorSpec};
