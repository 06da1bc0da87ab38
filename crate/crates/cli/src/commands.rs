use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use lsfd_core::autodiff::gradient_suite;
use lsfd_core::data::{generate_synth_corpus, save_gray_png, save_png, to_tensor, CorpusManifest, Dataset, Split};
use lsfd_core::distill::{full_chain_check, Method, PlanSpec};
use lsfd_core::eval::{
    attribution, bench_compare, evaluate, method_label, BenchData, BenchRow, BenchSpec, Bicubic, Region, SrNetwork,
};
use lsfd_core::models::{build_model, pair_taps, Model};
use lsfd_core::train::{distill, train_teacher, Checkpoint, EpochLog, RunOutcome};
use serde_json::json;

use crate::config::RunConfig;
use crate::run::{write_json, JsonLines, RunDir};
use crate::{Classify, Outcome};

pub const OP_TOLERANCE: f64 = 1e-5;
pub const CHAIN_TOLERANCE: f64 = 1e-4;

pub struct Corpus {
    pub manifest: CorpusManifest,
    pub base: PathBuf,
}

impl Corpus {
    pub fn split(&self, split: Split, scale: usize) -> Result<Dataset> {
        Dataset::from_manifest(&self.manifest, split, scale, &self.base)
            .with_context(|| format!("loading the {split} split"))
    }

    pub fn has(&self, split: Split) -> bool {
        self.manifest.split(split).next().is_some()
    }
}

fn load_corpus(cfg: &RunConfig) -> Outcome<Corpus> {
    let path = cfg
        .corpus
        .as_ref()
        .ok_or_else(|| anyhow!("--corpus is required (a manifest written by synth-data)"))
        .invalid()?;
    if !path.is_file() {
        return Err(anyhow!("--corpus {} does not exist", path.display())).invalid();
    }
    let manifest = CorpusManifest::load(path)
        .with_context(|| format!("--corpus {}", path.display()))
        .invalid()?;
    manifest.validate().context("--corpus").invalid()?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Corpus { manifest, base })
}

fn load_model(path: Option<&PathBuf>, flag: &str, scale: usize) -> Outcome<Model> {
    let path = path.ok_or_else(|| anyhow!("{flag} is required")).invalid()?;
    if !path.is_file() {
        return Err(anyhow!("{flag} {} does not exist", path.display())).invalid();
    }
    let model = Checkpoint::load(path)
        .and_then(|c| c.to_model())
        .with_context(|| format!("{flag} {}", path.display()))
        .invalid()?;
    if model.scale() != scale {
        return Err(anyhow!(
            "{flag} {} is a x{} model but scale is {scale}",
            path.display(),
            model.scale()
        ))
        .invalid();
    }
    Ok(model)
}

fn single_seed(cfg: &RunConfig, command: &str) -> Outcome<u64> {
    match cfg.seeds.as_slice() {
        [s] => Ok(*s),
        _ => Err(anyhow!("{command} takes a single seed; use bench for several")).invalid(),
    }
}

fn epoch_logger<'a>(log: &'a mut JsonLines, label: &'a str) -> impl FnMut(&EpochLog) -> lsfd_core::Result<()> + 'a {
    move |l: &EpochLog| {
        eprintln!(
            "[{label}] epoch {:>4}  lr {:.2e}  loss {:.5}  val {:.3} dB",
            l.epoch, l.lr, l.loss_total, l.val_psnr
        );
        log.append(l)
            .map_err(|e| lsfd_core::Error::Format(format!("run log: {e:#}")))
    }
}

fn write_rows(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let result = lsfd_core::eval::BenchResult {
        cells: Vec::new(),
        rows: rows.to_vec(),
        summary: Vec::new(),
    };
    std::fs::write(path, result.to_csv()?).with_context(|| format!("writing {}", path.display()))
}

fn save_outcome(run: &RunDir, out: &RunOutcome) -> Result<()> {
    out.best.save(run.file("checkpoint.ckpt"))?;
    out.last.save(run.file("last.ckpt"))?;
    Ok(())
}

pub fn synth_data(cfg: &RunConfig, png: bool) -> Outcome<()> {
    cfg.synth.validate().context("synth").invalid()?;
    let run = RunDir::create(cfg, "synth-data").runtime()?;
    let manifest = generate_synth_corpus(&cfg.synth).runtime()?;
    let path = run.file("manifest.json");
    manifest.save(&path).runtime()?;
    if png {
        let dir = run.file("images");
        std::fs::create_dir_all(&dir).runtime()?;
        for e in &manifest.entries {
            let img = e.load(&run.path).runtime()?;
            save_png(&img, dir.join(format!("{}.png", e.id))).runtime()?;
        }
    }
    let counts: Vec<_> = Split::ALL
        .iter()
        .map(|&s| (s.label(), manifest.split(s).count()))
        .collect();
    run.write_metadata(
        "synth-data",
        cfg,
        json!({ "images": counts, "mean_rgb": manifest.mean_rgb }),
    )
    .runtime()?;
    println!("{}", path.display());
    Ok(())
}

pub fn train_teacher_cmd(cfg: &RunConfig) -> Outcome<()> {
    let seed = single_seed(cfg, "train-teacher")?;
    let corpus = load_corpus(cfg)?;
    let train = corpus.split(Split::Train, cfg.scale).invalid()?;
    let val = corpus.split(Split::Val, cfg.scale).invalid()?;
    let model_cfg = cfg.teacher.clone().with_seed(seed);
    let tcfg = lsfd_core::TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let run = RunDir::create(cfg, "train-teacher").runtime()?;
    let net = build_model(&model_cfg).runtime()?;
    run.write_metadata(
        "train-teacher",
        cfg,
        json!({ "seed": seed, "taps": net.tap_points(), "parameters": net.parameter_count() }),
    )
    .runtime()?;
    let mut log = JsonLines::create(run.file("log.jsonl")).runtime()?;
    let mean = corpus.manifest.mean_rgb;
    let out = train_teacher(
        &model_cfg,
        &tcfg,
        &train,
        &val,
        mean,
        &mut epoch_logger(&mut log, "teacher"),
    )
    .runtime()?;
    save_outcome(&run, &out).runtime()?;
    let bicubic = evaluate(&Bicubic { scale: cfg.scale }, &val, mean, tcfg.val_on_y).runtime()?;
    let rows = [
        BenchRow {
            method: "teacher".into(),
            seed,
            split: "val".into(),
            psnr_db: out.best_val_psnr(),
        },
        BenchRow {
            method: "bicubic".into(),
            seed,
            split: "val".into(),
            psnr_db: bicubic.mean_psnr_db,
        },
    ];
    write_rows(&run.file("report.csv"), &rows).runtime()?;
    println!(
        "teacher best val {:.3} dB (bicubic {:.3} dB) -> {}",
        out.best_val_psnr(),
        bicubic.mean_psnr_db,
        run.path.display()
    );
    Ok(())
}

pub fn distill_cmd(cfg: &RunConfig) -> Outcome<()> {
    let seed = single_seed(cfg, "distill")?;
    let spec = cfg.plan.clone();
    let teacher = if spec.needs_teacher() {
        Some(load_model(cfg.teacher_ckpt.as_ref(), "--teacher-ckpt", cfg.scale)?)
    } else {
        None
    };
    let corpus = load_corpus(cfg)?;
    let train = corpus.split(Split::Train, cfg.scale).invalid()?;
    let val = corpus.split(Split::Val, cfg.scale).invalid()?;
    let student_cfg = cfg.student.clone().with_seed(seed);
    let student = build_model(&student_cfg).invalid()?;
    let taps = match &teacher {
        Some(t) if spec.method != Method::Vanilla => Some(pair_taps(t, &student).invalid()?),
        _ => None,
    };
    let tcfg = lsfd_core::TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let run = RunDir::create(cfg, "distill").runtime()?;
    run.write_metadata(
        "distill",
        cfg,
        json!({
            "seed": seed,
            "method": method_label(&spec),
            "student_taps": student.tap_points(),
            "teacher_taps": teacher.as_ref().map(|t| t.tap_points().to_vec()),
            "tap_pairs": taps,
            "student_parameters": student.parameter_count(),
        }),
    )
    .runtime()?;
    let mut log = JsonLines::create(run.file("log.jsonl")).runtime()?;
    let mean = corpus.manifest.mean_rgb;
    let label = method_label(&spec);
    let mut on_epoch = epoch_logger(&mut log, &label);
    let out = match &teacher {
        Some(t) => distill(t, &student_cfg, &spec, &tcfg, &train, &val, mean, &mut on_epoch),
        None => train_teacher(&student_cfg, &tcfg, &train, &val, mean, &mut on_epoch),
    }
    .runtime()?;
    save_outcome(&run, &out).runtime()?;
    let rows = [BenchRow {
        method: label.clone(),
        seed,
        split: "val".into(),
        psnr_db: out.best_val_psnr(),
    }];
    write_rows(&run.file("report.csv"), &rows).runtime()?;
    println!(
        "{label} best val {:.3} dB -> {}",
        out.best_val_psnr(),
        run.path.display()
    );
    Ok(())
}

pub fn eval_cmd(cfg: &RunConfig, bicubic: bool) -> Outcome<()> {
    let net: Box<dyn SrNetwork> = if bicubic {
        Box::new(Bicubic { scale: cfg.scale })
    } else {
        Box::new(load_model(cfg.ckpt.as_ref(), "--ckpt", cfg.scale)?)
    };
    let corpus = load_corpus(cfg)?;
    let data = corpus.split(cfg.split, cfg.scale).invalid()?;
    let run = RunDir::create(cfg, "eval").runtime()?;
    let mut report = evaluate(net.as_ref(), &data, corpus.manifest.mean_rgb, cfg.train.val_on_y).runtime()?;
    report.config_digest = run.id.clone();
    report.seed = cfg.seeds[0];
    write_json(&run.file("report.json"), &report).runtime()?;
    let rows = [BenchRow {
        method: report.method.clone(),
        seed: report.seed,
        split: cfg.split.to_string(),
        psnr_db: report.mean_psnr_db,
    }];
    write_rows(&run.file("report.csv"), &rows).runtime()?;
    run.write_metadata("eval", cfg, json!({ "bicubic": bicubic }))
        .runtime()?;
    for s in &report.images {
        println!("{:<16} {:.3}", s.id, s.psnr_db);
    }
    println!("mean {:.3} dB over {} images", report.mean_psnr_db, report.images.len());
    println!("-> {}", run.path.display());
    Ok(())
}

pub fn gradcheck_cmd(cfg: &RunConfig) -> Outcome<()> {
    let seed = cfg.seeds[0];
    let ops = gradient_suite(seed).runtime()?;
    let chain = full_chain_check(seed).runtime()?;
    let mut failed = Vec::new();
    for (entries, tol) in [(&ops, OP_TOLERANCE), (&chain, CHAIN_TOLERANCE)] {
        for e in entries.iter() {
            let ok = e.max_rel_err < tol;
            println!(
                "{:<24} {:>10.3e}  {}",
                e.op,
                e.max_rel_err,
                if ok { "ok" } else { "FAIL" }
            );
            if !ok {
                failed.push(e.op);
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(anyhow!("gradient check failed for {}", failed.join(", "))).runtime()
    }
}

pub fn bench_cmd(cfg: &RunConfig) -> Outcome<()> {
    let needs_teacher = cfg.methods.iter().any(|&m| {
        let mut p = cfg.plan.clone();
        p.method = m;
        p.needs_teacher()
    });
    let teacher = if needs_teacher {
        load_model(cfg.teacher_ckpt.as_ref(), "--teacher-ckpt", cfg.scale)?
    } else {
        build_model(&cfg.teacher).invalid()?
    };
    let corpus = load_corpus(cfg)?;
    let train = corpus.split(Split::Train, cfg.scale).invalid()?;
    let val = corpus.split(Split::Val, cfg.scale).invalid()?;
    let test = if corpus.has(Split::Test) {
        Some(corpus.split(Split::Test, cfg.scale).invalid()?)
    } else {
        None
    };
    let mut eval = vec![("val".to_string(), &val)];
    if let Some(t) = &test {
        eval.push(("test".to_string(), t));
    }
    let methods: Vec<PlanSpec> = cfg
        .methods
        .iter()
        .map(|&m| PlanSpec {
            method: m,
            ..cfg.plan.clone()
        })
        .collect();
    let spec = BenchSpec {
        methods,
        student: cfg.student.clone(),
        train: cfg.train.clone(),
        seeds: cfg.seeds.clone(),
        threads: cfg.threads,
        val_on_y: cfg.train.val_on_y,
    };
    let run = RunDir::create(cfg, "bench").runtime()?;
    let student = build_model(&cfg.student).invalid()?;
    let taps = if cfg.methods.iter().any(|m| m.regressor().is_some()) {
        Some(pair_taps(&teacher, &student).invalid()?)
    } else {
        None
    };
    let data = BenchData {
        train: &train,
        eval,
        mean_rgb: corpus.manifest.mean_rgb,
    };
    eprintln!(
        "bench: {} methods x {} seeds on {} thread(s)",
        spec.methods.len(),
        spec.seeds.len(),
        spec.threads
    );
    let result = bench_compare(&teacher, &spec, &data).runtime()?;
    let mut log = JsonLines::create(run.file("log.jsonl")).runtime()?;
    let ckpt_dir = run.file("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).runtime()?;
    for cell in &result.cells {
        for l in &cell.logs {
            log.append(&json!({ "method": cell.method, "seed": cell.seed, "epoch": l }))
                .runtime()?;
        }
        if let Some(best) = &cell.best {
            best.save(ckpt_dir.join(format!("{}-seed{}.ckpt", cell.method, cell.seed)))
                .runtime()?;
        }
    }
    std::fs::write(run.file("report.csv"), result.to_csv().runtime()?).runtime()?;
    std::fs::write(run.file("summary.txt"), result.summary_table()).runtime()?;
    let failures: Vec<_> = result
        .failures()
        .map(|c| json!({ "method": c.method, "seed": c.seed, "error": c.error }))
        .collect();
    run.write_metadata(
        "bench",
        cfg,
        json!({ "tap_pairs": taps, "teacher_taps": teacher.tap_points(), "failures": failures, "summary": result.summary }),
    )
    .runtime()?;
    print!("{}", result.summary_table());
    for f in result.failures() {
        eprintln!(
            "warning: {} seed {} failed: {}",
            f.method,
            f.seed,
            f.error.as_deref().unwrap_or("")
        );
    }
    println!("-> {}", run.path.display());
    Ok(())
}

pub fn attribution_cmd(cfg: &RunConfig, image: Option<&str>, region: Option<Region>) -> Outcome<()> {
    let model = load_model(cfg.ckpt.as_ref(), "--ckpt", cfg.scale)?;
    let corpus = load_corpus(cfg)?;
    let data = corpus.split(cfg.split, cfg.scale).invalid()?;
    let pair = match image {
        Some(id) => data
            .pairs()
            .iter()
            .find(|p| p.id == id)
            .ok_or_else(|| anyhow!("--image {id} is not in the {} split", cfg.split))
            .invalid()?,
        None => data
            .pairs()
            .first()
            .ok_or_else(|| anyhow!("the {} split is empty", cfg.split))
            .invalid()?,
    };
    let (w, h) = (pair.hr.width(), pair.hr.height());
    let region = region.unwrap_or(Region {
        x: w / 2 - w.min(8) / 2,
        y: h / 2 - h.min(8) / 2,
        w: w.min(8),
        h: h.min(8),
    });
    if region.x + region.w > w || region.y + region.h > h || region.w == 0 || region.h == 0 {
        return Err(anyhow!("--region {region:?} does not fit the {w}x{h} output")).invalid();
    }
    let run = RunDir::create(cfg, "attribution").runtime()?;
    let lr = to_tensor(&pair.lr, corpus.manifest.mean_rgb);
    let map = attribution(&model, &lr, region, &pair.id).runtime()?;
    save_gray_png(map.width, map.height, &map.to_gray(), run.file("attribution.png")).runtime()?;
    save_png(&pair.lr, run.file("input.png")).runtime()?;
    let area = map.footprint_area(0.05);
    write_json(
        &run.file("attribution.json"),
        &json!({
            "source_id": map.source_id,
            "region": map.region,
            "width": map.width,
            "height": map.height,
            "footprint_area_5pct": area,
        }),
    )
    .runtime()?;
    run.write_metadata("attribution", cfg, json!({ "image": pair.id, "region": region }))
        .runtime()?;
    println!(
        "{}: footprint {area} of {} LR pixels above 5% of max -> {}",
        pair.id,
        map.width * map.height,
        run.path.display()
    );
    Ok(())
}
