mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use lsfd_core::data::Split;
use lsfd_core::distill::{LossWeights, Method, DEFAULT_DEEP_SLOPE};
use lsfd_core::eval::Region;
use lsfd_core::TrainConfig;

use config::RunConfig;

/// Why a command stopped: bad input (exit 1) or a failure while running (exit 2).
pub enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

pub type Outcome<T> = Result<T, Failure>;

pub trait Classify<T> {
    fn invalid(self) -> Outcome<T>;
    fn runtime(self) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn invalid(self) -> Outcome<T> {
        self.map_err(|e| Failure::Invalid(e.into()))
    }

    fn runtime(self) -> Outcome<T> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

/// Local-selective feature distillation for single-image super-resolution.
#[derive(Parser)]
#[command(name = "lsfd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic texture corpus and its manifest
    SynthData(SynthArgs),
    /// Train a network from scratch with plain L1 (the teacher)
    TrainTeacher(TrainArgs),
    /// Train a student against a frozen teacher
    Distill(DistillArgs),
    /// PSNR of a checkpoint, or of bicubic upsampling, on a corpus split
    Eval(EvalArgs),
    /// Finite-difference check of every differentiable op and the full loss chain
    Gradcheck(GradcheckArgs),
    /// Train and compare several methods over several seeds
    Bench(BenchArgs),
    /// Input-gradient attribution map of a model for one output region
    Attribution(AttributionArgs),
}

#[derive(Args)]
struct Common {
    /// JSON run config; flags given on the command line override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output root; results go to <OUT>/<run-id>/
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Upscaling factor
    #[arg(long, default_value_t = 2)]
    scale: usize,
    /// Comma-separated seeds
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct CorpusArgs {
    /// Corpus manifest (manifest.json from synth-data)
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Args)]
struct TrainFlags {
    /// ADAM learning rate
    #[arg(long, default_value_t = TrainConfig::default().lr)]
    lr: f64,
    /// Number of epochs
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    /// Optimizer steps per epoch
    #[arg(long, default_value_t = TrainConfig::default().steps_per_epoch)]
    steps_per_epoch: usize,
    /// Epoch at which the learning rate is halved
    #[arg(long, default_value_t = TrainConfig::default().halve_at_epoch)]
    halve_at_epoch: usize,
    /// LR patches per minibatch
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch_size: usize,
    /// LR patch side in pixels
    #[arg(long, default_value_t = TrainConfig::default().patch_size)]
    patch_size: usize,
}

#[derive(Args)]
struct PlanFlags {
    /// Feature distillation weight (alpha1)
    #[arg(long, default_value_t = LossWeights::default().alpha1)]
    alpha1: f64,
    /// Selective feature distillation weight (alpha2)
    #[arg(long, default_value_t = LossWeights::default().alpha2)]
    alpha2: f64,
    /// Leaky ReLU slope of the five-layer regressor
    #[arg(long, default_value_t = DEFAULT_DEEP_SLOPE)]
    slope: f64,
    /// Add the frequency-domain loss with this weight (off unless given)
    #[arg(long)]
    fft: Option<f64>,
    /// Frozen teacher checkpoint
    #[arg(long)]
    teacher_ckpt: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Training images
    #[arg(long, default_value_t = lsfd_core::data::SynthCorpusConfig::default().train)]
    train: usize,
    /// Validation images
    #[arg(long, default_value_t = lsfd_core::data::SynthCorpusConfig::default().val)]
    val: usize,
    /// Test images
    #[arg(long, default_value_t = lsfd_core::data::SynthCorpusConfig::default().test)]
    test: usize,
    /// HR image side in pixels
    #[arg(long, default_value_t = lsfd_core::data::SynthCorpusConfig::default().size)]
    size: usize,
    /// Also render every image as PNG
    #[arg(long)]
    png: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct DistillArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    plan: PlanFlags,
    /// vanilla, fitnet, lfd or lsfd
    #[arg(long, default_value = "lsfd")]
    method: Method,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    plan: PlanFlags,
    /// Comma-separated methods to compare
    #[arg(long, value_delimiter = ',', default_value = "vanilla,fitnet,lfd,lsfd")]
    methods: Vec<Method>,
    /// Worker threads for independent runs
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Model checkpoint to evaluate
    #[arg(long, conflicts_with = "bicubic")]
    ckpt: Option<PathBuf>,
    /// Evaluate bicubic upsampling instead of a model
    #[arg(long)]
    bicubic: bool,
    /// Corpus split
    #[arg(long, default_value = "val")]
    split: Split,
    /// PSNR on RGB instead of the Y channel
    #[arg(long)]
    rgb: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Seed for the random probe inputs
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AttributionArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Model checkpoint
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Corpus split
    #[arg(long, default_value = "val")]
    split: Split,
    /// Image id (defaults to the first image of the split)
    #[arg(long)]
    image: Option<String>,
    /// Output region x,y,w,h in SR pixels (defaults to a central 8x8 square)
    #[arg(long, value_parser = parse_region)]
    region: Option<Region>,
}

fn parse_region(s: &str) -> Result<Region, String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match *v.as_slice() {
        [x, y, w, h] if w > 0 && h > 0 => Ok(Region { x, y, w, h }),
        [_, _, _, _] => Err("region width and height must be positive".into()),
        _ => Err("expected x,y,w,h".into()),
    }
}

fn given(m: &ArgMatches, id: &str) -> bool {
    m.value_source(id) == Some(ValueSource::CommandLine)
}

fn base_config(c: &Common, m: &ArgMatches) -> Outcome<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p).invalid()?,
        None => RunConfig::default(),
    };
    if given(m, "out") {
        cfg.out = c.out.clone();
    }
    if given(m, "scale") {
        cfg.set_scale(c.scale);
    }
    if given(m, "seeds") {
        cfg.seeds = c.seeds.clone();
    }
    Ok(cfg)
}

fn apply_corpus(cfg: &mut RunConfig, a: &CorpusArgs) {
    if let Some(p) = &a.corpus {
        cfg.corpus = Some(p.clone());
    }
}

fn apply_train(cfg: &mut RunConfig, t: &TrainFlags, m: &ArgMatches) {
    let c = &mut cfg.train;
    if given(m, "lr") {
        c.lr = t.lr;
    }
    if given(m, "epochs") {
        // keep the halving point at the same fraction unless it is also given
        *c = c.clone().with_budget(t.epochs, c.steps_per_epoch);
    }
    if given(m, "steps_per_epoch") {
        c.steps_per_epoch = t.steps_per_epoch;
    }
    if given(m, "halve_at_epoch") {
        c.halve_at_epoch = t.halve_at_epoch;
    }
    if given(m, "batch_size") {
        c.batch_size = t.batch_size;
    }
    if given(m, "patch_size") {
        c.patch_size = t.patch_size;
    }
}

fn apply_plan(cfg: &mut RunConfig, p: &PlanFlags, m: &ArgMatches) {
    let w = &mut cfg.plan.weights;
    if given(m, "alpha1") {
        w.alpha1 = p.alpha1;
    }
    if given(m, "alpha2") {
        w.alpha2 = p.alpha2;
    }
    if let Some(f) = p.fft {
        w.use_fft = true;
        w.fft_weight = f;
    }
    if given(m, "slope") {
        cfg.plan.deep_slope = p.slope;
    }
    if let Some(t) = &p.teacher_ckpt {
        cfg.teacher_ckpt = Some(t.clone());
    }
}

fn validated(cfg: RunConfig) -> Outcome<RunConfig> {
    cfg.validate().invalid()?;
    Ok(cfg)
}

fn dispatch(cli: Cli, matches: &ArgMatches) -> Outcome<()> {
    let m = matches.subcommand().map(|(_, m)| m).expect("a subcommand is required");
    match cli.command {
        Command::SynthData(a) => {
            let mut cfg = base_config(&a.common, m)?;
            let s = &mut cfg.synth;
            if given(m, "seeds") {
                s.seed = a.common.seeds[0];
            }
            for (id, slot, v) in [
                ("train", &mut s.train, a.train),
                ("val", &mut s.val, a.val),
                ("test", &mut s.test, a.test),
                ("size", &mut s.size, a.size),
            ] {
                if given(m, id) {
                    *slot = v;
                }
            }
            commands::synth_data(&validated(cfg)?, a.png)
        }
        Command::TrainTeacher(a) => {
            let mut cfg = base_config(&a.common, m)?;
            apply_corpus(&mut cfg, &a.corpus);
            apply_train(&mut cfg, &a.train, m);
            commands::train_teacher_cmd(&validated(cfg)?)
        }
        Command::Distill(a) => {
            let mut cfg = base_config(&a.common, m)?;
            apply_corpus(&mut cfg, &a.corpus);
            apply_train(&mut cfg, &a.train, m);
            apply_plan(&mut cfg, &a.plan, m);
            if given(m, "method") {
                cfg.plan.method = a.method;
            }
            commands::distill_cmd(&validated(cfg)?)
        }
        Command::Bench(a) => {
            let mut cfg = base_config(&a.common, m)?;
            apply_corpus(&mut cfg, &a.corpus);
            apply_train(&mut cfg, &a.train, m);
            apply_plan(&mut cfg, &a.plan, m);
            if given(m, "methods") {
                cfg.methods = a.methods;
            }
            if given(m, "threads") {
                cfg.threads = a.threads;
            }
            commands::bench_cmd(&validated(cfg)?)
        }
        Command::Eval(a) => {
            let mut cfg = base_config(&a.common, m)?;
            apply_corpus(&mut cfg, &a.corpus);
            if let Some(c) = a.ckpt {
                cfg.ckpt = Some(c);
            }
            if given(m, "split") {
                cfg.split = a.split;
            }
            if a.rgb {
                cfg.train.val_on_y = false;
            }
            commands::eval_cmd(&validated(cfg)?, a.bicubic)
        }
        Command::Gradcheck(a) => {
            let cfg = RunConfig {
                seeds: vec![a.seed],
                ..RunConfig::default()
            };
            commands::gradcheck_cmd(&cfg)
        }
        Command::Attribution(a) => {
            let mut cfg = base_config(&a.common, m)?;
            apply_corpus(&mut cfg, &a.corpus);
            if let Some(c) = a.ckpt {
                cfg.ckpt = Some(c);
            }
            if given(m, "split") {
                cfg.split = a.split;
            }
            commands::attribution_cmd(&validated(cfg)?, a.image.as_deref(), a.region)
        }
    }
}

fn main() -> ExitCode {
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match dispatch(cli, &matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
