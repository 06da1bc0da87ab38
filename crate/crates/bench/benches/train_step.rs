use criterion::{criterion_group, criterion_main, Criterion};
use lsfd_bench::corpus;
use lsfd_core::distill::DistillPlan;
use lsfd_core::train::Trainer;
use lsfd_core::{build_model, Method, ModelConfig, PlanSpec, TrainConfig};

fn train_step(c: &mut Criterion) {
    let (manifest, data) = corpus(16, 64, 2).unwrap();
    let teacher = build_model(&ModelConfig::rcan(16, 2, 4, 2).with_reduction(4)).unwrap();
    let student_cfg = ModelConfig::rcan(8, 2, 2, 2).with_reduction(4);
    let cfg = TrainConfig {
        batch_size: 16,
        patch_size: 24,
        ..TrainConfig::default()
    };
    let mut g = c.benchmark_group("train_step");
    g.sample_size(10);
    for method in Method::ALL {
        let student = build_model(&student_cfg).unwrap();
        let plan = DistillPlan::new(PlanSpec::new(method), &teacher, &student, 0).unwrap();
        let t = plan.spec.needs_teacher().then_some(&teacher);
        let mut trainer = Trainer::new(cfg.clone(), student, plan, t, &data, manifest.mean_rgb).unwrap();
        g.bench_function(method.to_string(), |b| b.iter(|| trainer.step().unwrap()));
    }
    let teacher_plan = DistillPlan::vanilla();
    let mut trainer = Trainer::new(
        cfg.clone(),
        teacher.clone(),
        teacher_plan,
        None,
        &data,
        manifest.mean_rgb,
    )
    .unwrap();
    g.bench_function("teacher", |b| b.iter(|| trainer.step().unwrap()));
    g.finish();
}

criterion_group!(benches, train_step);
criterion_main!(benches);
