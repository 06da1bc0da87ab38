use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::distill::PlanSpec;
use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig};
use crate::train::{distill, Checkpoint, EpochLog, TrainConfig};

use super::network::evaluate;

/// Everything shared by the cells of a comparison.
#[derive(Clone, Debug)]
pub struct BenchSpec {
    pub methods: Vec<PlanSpec>,
    pub student: ModelConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    /// Worker threads; cells are independent so the result does not depend on it.
    pub threads: usize,
    pub val_on_y: bool,
}

/// Named evaluation sets; the first one also selects the best checkpoint.
pub struct BenchData<'a> {
    pub train: &'a Dataset,
    pub eval: Vec<(String, &'a Dataset)>,
    pub mean_rgb: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub seed: u64,
    pub split: String,
    pub psnr_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub method: String,
    pub split: String,
    pub runs: usize,
    pub mean_db: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std_db: f64,
}

/// One (method, seed) training run.
#[derive(Clone, Debug)]
pub struct BenchCell {
    pub method: String,
    pub seed: u64,
    pub logs: Vec<EpochLog>,
    pub best: Option<Checkpoint>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct BenchResult {
    pub cells: Vec<BenchCell>,
    pub rows: Vec<BenchRow>,
    pub summary: Vec<BenchSummary>,
}

pub fn method_label(spec: &PlanSpec) -> String {
    if spec.weights.use_fft {
        format!("{}+fft", spec.method)
    } else {
        spec.method.to_string()
    }
}

impl BenchResult {
    pub fn failures(&self) -> impl Iterator<Item = &BenchCell> {
        self.cells.iter().filter(|c| c.error.is_some())
    }

    /// Rows under the header `method,seed,split,psnr_db`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::Format(format!("csv: {e}")))?;
        }
        if self.rows.is_empty() {
            w.write_record(["method", "seed", "split", "psnr_db"])
                .map_err(|e| Error::Format(format!("csv: {e}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(format!("csv: {e}")))
    }

    pub fn summary_table(&self) -> String {
        let mut out = String::new();
        for s in &self.summary {
            let _ = writeln!(
                out,
                "{:<10} {:<6} {:.3} ± {:.3} dB (n={})",
                s.method, s.split, s.mean_db, s.std_db, s.runs
            );
        }
        out
    }

    pub fn mean(&self, method: &str, split: &str) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.method == method && s.split == split)
            .map(|s| s.mean_db)
    }

    pub fn psnr(&self, method: &str, seed: u64, split: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.seed == seed && r.split == split)
            .map(|r| r.psnr_db)
    }
}

pub fn summarize(rows: &[BenchRow]) -> Vec<BenchSummary> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in rows {
        let k = (r.method.clone(), r.split.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(method, split)| {
            let xs: Vec<f64> = rows
                .iter()
                .filter(|r| r.method == method && r.split == split)
                .map(|r| r.psnr_db)
                .collect();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let std_db = if xs.len() > 1 {
                (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            BenchSummary {
                method,
                split,
                runs: xs.len(),
                mean_db: mean,
                std_db,
            }
        })
        .collect()
}

/// PSNR per named evaluation split.
type Scores = Vec<(String, f64)>;

fn run_cell(
    teacher: &Model,
    spec: &BenchSpec,
    plan: &PlanSpec,
    seed: u64,
    data: &BenchData,
) -> Result<(Vec<EpochLog>, Checkpoint, Scores)> {
    let (_, select) = data
        .eval
        .first()
        .ok_or_else(|| Error::Config("benchmark needs at least one evaluation split".into()))?;
    let cfg = TrainConfig {
        seed,
        val_on_y: spec.val_on_y,
        ..spec.train.clone()
    };
    let student = spec.student.clone().with_seed(seed);
    let out = distill(
        teacher,
        &student,
        plan,
        &cfg,
        data.train,
        select,
        data.mean_rgb,
        &mut |_| Ok(()),
    )?;
    let model = out.best.to_model()?;
    let scores = data
        .eval
        .iter()
        .map(|(name, ds)| {
            Ok((
                name.clone(),
                evaluate(&model, ds, data.mean_rgb, spec.val_on_y)?.mean_psnr_db,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((out.logs, out.best, scores))
}

/// Trains and evaluates every (method, seed) cell. A failing cell is
/// recorded in its [`BenchCell::error`] and contributes no rows.
pub fn bench_compare(teacher: &Model, spec: &BenchSpec, data: &BenchData) -> Result<BenchResult> {
    if spec.methods.is_empty() || spec.seeds.is_empty() {
        return Err(Error::Config("benchmark needs at least one method and one seed".into()));
    }
    if data.eval.is_empty() {
        return Err(Error::Config("benchmark needs at least one evaluation split".into()));
    }
    spec.train.validate()?;
    spec.student.validate()?;
    let jobs: Vec<(usize, u64)> = (0..spec.methods.len())
        .flat_map(|m| spec.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<(BenchCell, Scores)>>> = Mutex::new(vec![None; jobs.len()]);
    let workers = spec.threads.clamp(1, jobs.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(m, seed)) = jobs.get(i) else { break };
                let plan = &spec.methods[m];
                let outcome = catch_unwind(AssertUnwindSafe(|| run_cell(teacher, spec, plan, seed, data)))
                    .unwrap_or_else(|p| {
                        let msg = p
                            .downcast_ref::<String>()
                            .cloned()
                            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                            .unwrap_or_else(|| "panic".into());
                        Err(Error::Contract(format!("run panicked: {msg}")))
                    });
                let method = method_label(plan);
                let cell = match outcome {
                    Ok((logs, best, scores)) => (
                        BenchCell {
                            method,
                            seed,
                            logs,
                            best: Some(best),
                            error: None,
                        },
                        scores,
                    ),
                    Err(e) => (
                        BenchCell {
                            method,
                            seed,
                            logs: Vec::new(),
                            best: None,
                            error: Some(e.to_string()),
                        },
                        Vec::new(),
                    ),
                };
                slots.lock().expect("bench slots")[i] = Some(cell);
            });
        }
    });
    let mut cells = Vec::with_capacity(jobs.len());
    let mut rows = Vec::new();
    for slot in slots.into_inner().expect("bench slots") {
        let (cell, scores) = slot.expect("every job ran");
        rows.extend(scores.into_iter().map(|(split, psnr_db)| BenchRow {
            method: cell.method.clone(),
            seed: cell.seed,
            split,
            psnr_db,
        }));
        cells.push(cell);
    }
    let summary = summarize(&rows);
    Ok(BenchResult { cells, rows, summary })
}
