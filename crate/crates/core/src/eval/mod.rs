//! PSNR, model evaluation, gradient attribution and method comparison.

mod attribution;
mod bench;
mod metrics;
mod network;

pub use attribution::{attribution, attribution_with, AttributionMap, Region};
pub use bench::{
    bench_compare, method_label, summarize, BenchCell, BenchData, BenchResult, BenchRow, BenchSpec, BenchSummary,
};
pub use metrics::{psnr, quantize, rgb_to_y};
pub use network::{evaluate, unit_tensor, Bicubic, EvalReport, ImageScore, Passthrough, SrNetwork};
