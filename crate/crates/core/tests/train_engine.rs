use std::path::Path;
use std::sync::OnceLock;

use lsfd_core::data::{generate_synth_corpus, Dataset, Split, SynthCorpusConfig};
use lsfd_core::distill::{DistillPlan, Method, PlanSpec};
use lsfd_core::eval::{evaluate, Bicubic};
use lsfd_core::models::{build_model, Model, ModelConfig};
use lsfd_core::train::{
    adam_step, distill, lr_at, read_header, run, train_teacher, AdamConfig, AdamState, Checkpoint, EpochLog, Trainer,
    MAGIC,
};
use lsfd_core::{Error, ParamSet, Result, Tensor, TrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Toy {
    train: Dataset,
    val: Dataset,
    mean: [f64; 3],
}

fn toy() -> &'static Toy {
    static TOY: OnceLock<Toy> = OnceLock::new();
    TOY.get_or_init(|| {
        let cfg = SynthCorpusConfig {
            train: 20,
            val: 8,
            size: 64,
            seed: 11,
            ..SynthCorpusConfig::default()
        };
        let m = generate_synth_corpus(&cfg).unwrap();
        Toy {
            train: Dataset::from_manifest(&m, Split::Train, 2, Path::new("")).unwrap(),
            val: Dataset::from_manifest(&m, Split::Val, 2, Path::new("")).unwrap(),
            mean: m.mean_rgb,
        }
    })
}

fn small_cfg(epochs: usize, steps: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        patch_size: 12,
        seed: 5,
        ..TrainConfig::default()
    }
    .with_budget(epochs, steps)
}

fn student_cfg() -> ModelConfig {
    ModelConfig::rcan(4, 1, 2, 2).with_reduction(2).with_seed(2)
}

fn teacher() -> &'static Model {
    static T: OnceLock<Model> = OnceLock::new();
    T.get_or_init(|| build_model(&ModelConfig::rcan(6, 2, 2, 2).with_reduction(2).with_seed(7)).unwrap())
}

fn ignore(_: &EpochLog) -> Result<()> {
    Ok(())
}

fn random_params(seed: u64) -> ParamSet {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::new();
    p.push("a", Tensor::uniform([2, 3, 1, 1], -1.0, 1.0, &mut r)).unwrap();
    p.push("b", Tensor::uniform([1, 5, 1, 1], -1.0, 1.0, &mut r)).unwrap();
    p
}

#[test]
fn adam_matches_a_scalar_reference() {
    let cfg = AdamConfig::default();
    let mut params = random_params(1);
    let mut state = AdamState::new(&params);
    let mut theta = params.flat_values();
    let (mut m, mut v) = (vec![0.0; theta.len()], vec![0.0; theta.len()]);
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let lr = 3e-3;
    for t in 1..=25 {
        let g: Vec<f64> = (0..theta.len()).map(|_| r.random_range(-2.0..2.0)).collect();
        let mut k = 0;
        for p in params.iter_mut() {
            for x in p.grad.data_mut() {
                *x = g[k];
                k += 1;
            }
        }
        adam_step(&mut params, &mut state, lr, &cfg).unwrap();
        for j in 0..theta.len() {
            m[j] = 0.9 * m[j] + 0.1 * g[j];
            v[j] = 0.99 * v[j] + 0.01 * g[j] * g[j];
            let mh = m[j] / (1.0 - 0.9f64.powi(t));
            let vh = v[j] / (1.0 - 0.99f64.powi(t));
            theta[j] -= lr * mh / (vh.sqrt() + 1e-8);
        }
        for (a, b) in params.flat_values().iter().zip(&theta) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
    assert_eq!(state.t, 25);
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut params = random_params(3);
    let before = params.flat_values();
    for p in params.iter_mut() {
        p.grad = p.grad.map(|_| -0.25);
    }
    let mut state = AdamState::new(&params);
    adam_step(&mut params, &mut state, 1e-3, &AdamConfig::default()).unwrap();
    for (a, b) in params.flat_values().iter().zip(&before) {
        assert!((a - b - 1e-3).abs() < 1e-10);
    }
}

#[test]
fn adam_zero_gradient_is_a_no_op() {
    let mut params = random_params(4);
    let before = params.flat_values();
    let mut state = AdamState::new(&params);
    for _ in 0..3 {
        adam_step(&mut params, &mut state, 0.1, &AdamConfig::default()).unwrap();
    }
    assert_eq!(params.flat_values(), before);
}

#[test]
fn adam_rejects_non_finite_gradients() {
    let mut params = random_params(5);
    params.get_mut(1).grad.data_mut()[2] = f64::NAN;
    let before = params.flat_values();
    let mut state = AdamState::new(&params);
    match adam_step(&mut params, &mut state, 0.1, &AdamConfig::default()) {
        Err(Error::NonFinite(msg)) => assert!(msg.contains('b'), "{msg}"),
        other => panic!("expected NonFinite, got {other:?}"),
    }
    assert_eq!(params.flat_values(), before);
    assert_eq!(state.t, 0);
    let mut other = AdamState::new(&random_params(6));
    other.m.pop();
    assert!(matches!(
        adam_step(&mut params, &mut other, 0.1, &AdamConfig::default()),
        Err(Error::Contract(_))
    ));
}

#[test]
fn schedule_halves_once() {
    let cfg = TrainConfig::default();
    assert_eq!(lr_at(0, &cfg), 1e-4);
    assert_eq!(lr_at(149, &cfg), 1e-4);
    assert_eq!(lr_at(150, &cfg), 5e-5);
    assert_eq!(lr_at(299, &cfg), 5e-5);
    let small = cfg.with_budget(10, 7);
    assert_eq!(small.halve_at_epoch, 5);
    assert_eq!(small.total_steps(), 70);
}

#[test]
fn config_validation_and_json() {
    assert!(TrainConfig::default().validate().is_ok());
    let bad = TrainConfig {
        batch_size: 0,
        ..TrainConfig::default()
    };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
    let json = r#"{"lr": 0.001, "epochs": 4}"#;
    let c: TrainConfig = serde_json::from_str(json).unwrap();
    assert_eq!((c.lr, c.epochs, c.batch_size), (0.001, 4, 16));
    assert!(serde_json::from_str::<TrainConfig>(r#"{"learning_rate": 1}"#).is_err());
}

fn vanilla_trainer(cfg: TrainConfig) -> Trainer<'static> {
    let t = toy();
    Trainer::new(
        cfg,
        build_model(&student_cfg()).unwrap(),
        DistillPlan::vanilla(),
        None,
        &t.train,
        t.mean,
    )
    .unwrap()
}

fn lsfd_trainer(cfg: TrainConfig) -> Trainer<'static> {
    let t = toy();
    let student = build_model(&student_cfg()).unwrap();
    let plan = DistillPlan::new(PlanSpec::new(Method::Lsfd).with_fft(1.0), teacher(), &student, 9).unwrap();
    Trainer::new(cfg, student, plan, Some(teacher()), &t.train, t.mean).unwrap()
}

#[test]
fn hundred_steps_are_deterministic() {
    let go = || {
        let mut tr = lsfd_trainer(small_cfg(1, 100));
        let losses: Vec<u64> = (0..100).map(|_| tr.step().unwrap().total.to_bits()).collect();
        (losses, tr.checkpoint().to_bytes().unwrap())
    };
    let (a, ca) = go();
    let (b, cb) = go();
    assert_eq!(a, b);
    assert_eq!(ca, cb);
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let mut tr = lsfd_trainer(small_cfg(2, 3));
    for _ in 0..3 {
        tr.step().unwrap();
    }
    let ckpt = tr.checkpoint();
    let bytes = ckpt.to_bytes().unwrap();
    assert_eq!(&bytes[..8], MAGIC);
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back.tensors.len(), ckpt.tensors.len());
    for ((na, ta), (nb, tb)) in ckpt.tensors.iter().zip(&back.tensors) {
        assert_eq!(na, nb);
        assert_eq!(ta.shape(), tb.shape());
        assert!(ta.data().iter().zip(tb.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(back.to_bytes().unwrap(), bytes);
    assert_eq!(back.meta, ckpt.meta);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ckpt");
    ckpt.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    let model = Checkpoint::load(&path).unwrap().to_model().unwrap();
    assert_eq!(model.params.flat_values(), tr.student().params.flat_values());
}

#[test]
fn checkpoint_directory_is_contiguous() {
    let bytes = Checkpoint::from_model(teacher()).to_bytes().unwrap();
    let (header, start) = read_header(&bytes).unwrap();
    let mut expected = 0;
    for e in &header.tensors {
        assert_eq!(e.offset, expected);
        assert_eq!(e.len, 8 * e.shape.iter().product::<usize>() as u64);
        expected += e.len;
    }
    assert_eq!(start as u64 + expected, bytes.len() as u64);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let bytes = Checkpoint::from_model(teacher()).to_bytes().unwrap();
    match Checkpoint::from_bytes(&bytes[..bytes.len() - 1]) {
        Err(Error::Checkpoint { offset, .. }) => assert_eq!(offset, bytes.len() as u64 - 1),
        other => panic!("expected a checkpoint error, got {other:?}"),
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(
        matches!(Checkpoint::from_bytes(&extra), Err(Error::Checkpoint { offset, .. }) if offset == bytes.len() as u64)
    );
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(
        Checkpoint::from_bytes(&magic),
        Err(Error::Checkpoint { offset: 0, .. })
    ));

    let text = String::from_utf8_lossy(&bytes[16..200]).to_string();
    let pos = text.find("\"version\":1").expect("version field near the start");
    let mut version = bytes.clone();
    version[16 + pos + 10] = b'7';
    match Checkpoint::from_bytes(&version) {
        Err(Error::Checkpoint { offset, reason }) => {
            assert_eq!(offset, 16);
            assert!(reason.contains('7'), "{reason}");
        }
        other => panic!("expected a version error, got {other:?}"),
    }
    assert!(matches!(
        Checkpoint::from_bytes(&bytes[..12]),
        Err(Error::Checkpoint { offset: 8, .. })
    ));
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        Checkpoint::load(dir.path().join("missing")),
        Err(Error::Io { .. })
    ));
}

#[test]
fn resume_reproduces_the_next_step() {
    for make in [vanilla_trainer as fn(TrainConfig) -> Trainer<'static>, lsfd_trainer] {
        let cfg = small_cfg(3, 4);
        let mut a = make(cfg.clone());
        for _ in 0..6 {
            a.step().unwrap();
        }
        let bytes = a.checkpoint().to_bytes().unwrap();
        let ckpt = Checkpoint::from_bytes(&bytes).unwrap();
        let t = toy();
        let tch = a.plan().spec.needs_teacher().then(teacher);
        let mut b = Trainer::resume(&ckpt, tch, &t.train, t.mean).unwrap();
        assert_eq!(b.step_count(), 6);
        assert_eq!(b.epoch(), 1);
        for _ in 0..3 {
            let (la, lb) = (a.step().unwrap(), b.step().unwrap());
            assert_eq!(la.total.to_bits(), lb.total.to_bits());
        }
        assert_eq!(a.checkpoint().to_bytes().unwrap(), b.checkpoint().to_bytes().unwrap());
    }
}

#[test]
fn trainer_rejects_inconsistent_setups() {
    let t = toy();
    let student = build_model(&student_cfg()).unwrap();
    let plan = DistillPlan::new(PlanSpec::new(Method::Lfd), teacher(), &student, 0).unwrap();
    assert!(matches!(
        Trainer::new(small_cfg(1, 1), student.clone(), plan, None, &t.train, t.mean),
        Err(Error::Config(_))
    ));
    let x3 = build_model(&ModelConfig::rcan(4, 1, 1, 3).with_reduction(2)).unwrap();
    assert!(matches!(
        Trainer::new(small_cfg(1, 1), x3, DistillPlan::vanilla(), None, &t.train, t.mean),
        Err(Error::Config(_))
    ));
}

struct Trained {
    model: Model,
    first: f64,
    tail: f64,
    val_psnr: f64,
}

// 200 steps of plain training, shared by the sanity and non-divergence tests
fn trained_teacher() -> &'static Trained {
    static T: OnceLock<Trained> = OnceLock::new();
    T.get_or_init(|| {
        let t = toy();
        let cfg = TrainConfig {
            lr: 1e-3,
            patch_size: 24,
            ..TrainConfig::default()
        }
        .with_budget(2, 100);
        let mut logs = Vec::new();
        let model = ModelConfig::rcan(16, 1, 2, 2).with_reduction(4);
        let out = train_teacher(&model, &cfg, &t.train, &t.val, t.mean, &mut |l| {
            logs.push(l.clone());
            Ok(())
        })
        .unwrap();
        assert_eq!(out.logs, logs);
        assert_eq!(out.step_losses.len(), 200);
        let best = logs.iter().map(|l| l.val_psnr).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.best_val_psnr(), best);
        Trained {
            model: out.best.to_model().unwrap(),
            first: out.step_losses[0].total,
            tail: out.step_losses[190..].iter().map(|l| l.total).sum::<f64>() / 10.0,
            val_psnr: best,
        }
    })
}

#[test]
fn toy_teacher_learns_and_beats_bicubic() {
    let t = toy();
    let tt = trained_teacher();
    assert!(tt.tail < tt.first, "{} vs {}", tt.tail, tt.first);
    let report = evaluate(&tt.model, &t.val, t.mean, true).unwrap();
    assert_eq!(report.mean_psnr_db, tt.val_psnr);
    let bicubic = evaluate(&Bicubic { scale: 2 }, &t.val, t.mean, true)
        .unwrap()
        .mean_psnr_db;
    assert!(tt.val_psnr > bicubic, "{} vs bicubic {bicubic}", tt.val_psnr);
}

#[test]
fn vanilla_distillation_is_plain_training() {
    let t = toy();
    let cfg = small_cfg(2, 10);
    let a = distill(
        teacher(),
        &student_cfg(),
        &PlanSpec::new(Method::Vanilla),
        &cfg,
        &t.train,
        &t.val,
        t.mean,
        &mut ignore,
    )
    .unwrap();
    let b = train_teacher(&student_cfg(), &cfg, &t.train, &t.val, t.mean, &mut ignore).unwrap();
    assert_eq!(a.logs, b.logs);
    assert_eq!(a.last.to_bytes().unwrap(), b.last.to_bytes().unwrap());
}

#[test]
fn lsfd_logs_are_finite_and_teacher_is_frozen() {
    let t = toy();
    let before = teacher().params.flat_values();
    let spec = PlanSpec::new(Method::Lsfd).with_fft(1.0);
    let out = distill(
        teacher(),
        &student_cfg(),
        &spec,
        &small_cfg(3, 10),
        &t.train,
        &t.val,
        t.mean,
        &mut ignore,
    )
    .unwrap();
    assert_eq!(out.logs.len(), 3);
    for l in &out.logs {
        for v in [l.loss_total, l.loss_sr, l.loss_distill, l.loss_fft] {
            assert!(v.is_finite() && v >= 0.0, "{l:?}");
        }
        assert!(l.loss_distill > 0.0 && l.loss_fft > 0.0);
        assert!(l.val_psnr.is_finite());
    }
    assert_eq!(teacher().params.flat_values(), before);
}

fn loss_ratio(m: Method) -> f64 {
    let t = toy();
    let teacher = &trained_teacher().model;
    let cfg = TrainConfig {
        lr: 1e-3,
        batch_size: 8,
        patch_size: 16,
        seed: 5,
        ..TrainConfig::default()
    }
    .with_budget(1, 500);
    let student = build_model(&ModelConfig::rcan(8, 1, 2, 2).with_reduction(2).with_seed(2)).unwrap();
    let plan = DistillPlan::new(PlanSpec::new(m), teacher, &student, 1).unwrap();
    let tch = plan.spec.needs_teacher().then_some(teacher);
    let mut tr = Trainer::new(cfg, student, plan, tch, &t.train, t.mean).unwrap();
    let losses: Vec<f64> = (0..500).map(|_| tr.step().unwrap().total).collect();
    assert!(losses.iter().all(|l| l.is_finite()));
    losses[490..].iter().sum::<f64>() / 10.0 / losses[0]
}

#[test]
fn vanilla_lfd_and_lsfd_halve_their_loss() {
    for m in [Method::Vanilla, Method::Lfd, Method::Lsfd] {
        let r = loss_ratio(m);
        assert!(r <= 0.5, "{m}: ratio {r}");
    }
}

// the 1x1 ReLU regressor cannot follow the negative half of the teacher
// features, so its distance plateaus well above half the starting value
#[test]
fn fitnet_loss_decreases_but_plateaus() {
    let r = loss_ratio(Method::Fitnet);
    assert!(r < 0.8, "ratio {r}");
}

#[test]
fn run_callback_errors_stop_training() {
    let t = toy();
    let mut tr = vanilla_trainer(small_cfg(3, 2));
    let err = run(&mut tr, &t.val, &mut |_| Err(Error::Config("stop".into()))).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert_eq!(tr.step_count(), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedule_is_monotone(halve in 1usize..50, epochs in 1usize..80, e in 0usize..100) {
        let cfg = TrainConfig { halve_at_epoch: halve.min(epochs), epochs, ..TrainConfig::default() };
        prop_assert!(lr_at(e + 1, &cfg) <= lr_at(e, &cfg));
        prop_assert!(lr_at(e, &cfg) == cfg.lr || lr_at(e, &cfg) == cfg.lr / 2.0);
    }
}
