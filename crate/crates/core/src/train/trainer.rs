use serde::{Deserialize, Serialize};

use crate::autodiff::{Binding, ParamSet, Tape};
use crate::data::{batch_rng, Batch, Dataset};
use crate::distill::{total_loss, DistillInputs, DistillPlan, LossNodes, LossValues, PlanSpec, Regressor};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::models::{build_model, Model, ModelConfig};

use super::adam::{adam_step, grad_norm, AdamConfig, AdamState};
use super::checkpoint::{load_params, Checkpoint, CheckpointMeta};
use super::config::{lr_at, TrainConfig};

/// One line of the run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_sr: f64,
    pub loss_distill: f64,
    pub loss_fft: f64,
    pub val_psnr: f64,
}

fn regressor_prefix(i: usize) -> String {
    format!("regressor{i}/")
}

fn adam_prefix(group: usize, moment: &str) -> String {
    format!("adam{group}/{moment}/")
}

/// Owns the student, its regressors and optimiser state; borrows the frozen
/// teacher and the training data.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    adam: AdamConfig,
    student: Model,
    plan: DistillPlan,
    teacher: Option<&'a Model>,
    data: &'a Dataset,
    mean_rgb: [f64; 3],
    optim: Vec<AdamState>,
    step: u64,
}

impl<'a> Trainer<'a> {
    pub fn new(
        cfg: TrainConfig,
        student: Model,
        plan: DistillPlan,
        teacher: Option<&'a Model>,
        data: &'a Dataset,
        mean_rgb: [f64; 3],
    ) -> Result<Self> {
        cfg.validate()?;
        plan.validate()?;
        if plan.spec.needs_teacher() && teacher.is_none() {
            return Err(Error::Config(format!("{} training needs a teacher", plan.method())));
        }
        if let Some(t) = teacher {
            if t.scale() != student.scale() {
                return Err(Error::Config(format!(
                    "teacher scale {} differs from student scale {}",
                    t.scale(),
                    student.scale()
                )));
            }
        }
        if data.scale() != student.scale() {
            return Err(Error::Config(format!(
                "data scale {} differs from model scale {}",
                data.scale(),
                student.scale()
            )));
        }
        let mut optim = vec![AdamState::new(&student.params)];
        optim.extend(plan.regressors.iter().map(|r| AdamState::new(&r.params)));
        let adam = AdamConfig {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
        };
        Ok(Trainer {
            cfg,
            adam,
            student,
            plan,
            teacher,
            data,
            mean_rgb,
            optim,
            step: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn student(&self) -> &Model {
        &self.student
    }

    pub fn plan(&self) -> &DistillPlan {
        &self.plan
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Epoch the next step belongs to.
    pub fn epoch(&self) -> usize {
        (self.step / self.cfg.steps_per_epoch as u64) as usize
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.cfg.total_steps()
    }

    /// The batch for the next step, from its own (seed, epoch, index) stream.
    pub fn next_batch(&self) -> Result<Batch> {
        let spe = self.cfg.steps_per_epoch as u64;
        let mut rng = batch_rng(self.cfg.seed, self.step / spe, self.step % spe);
        self.data.sample_batch(
            self.cfg.batch_size,
            self.cfg.patch_size,
            self.mean_rgb,
            self.cfg.flip,
            &mut rng,
        )
    }

    /// Loss on `batch` without updating anything.
    pub fn loss_on(&self, batch: &Batch) -> Result<LossValues> {
        let mut tape = Tape::new();
        let nodes = self.build_loss(&mut tape, batch, false)?;
        Ok(nodes.0.values(&tape))
    }

    fn build_loss(
        &self,
        tape: &mut Tape,
        batch: &Batch,
        trainable: bool,
    ) -> Result<(LossNodes, Binding, Vec<Binding>)> {
        let sb = self.student.params.bind(tape, trainable);
        let rb: Vec<_> = self
            .plan
            .regressors
            .iter()
            .map(|r| r.params.bind(tape, trainable))
            .collect();
        let x = tape.constant(batch.lr.clone());
        let hr = tape.constant(batch.hr.clone());
        let (sr_teacher, taps_teacher) = match self.teacher {
            Some(t) if self.plan.spec.needs_teacher() => {
                let (sr, taps) = t.infer(&batch.lr)?;
                let taps = if self.plan.taps.is_empty() {
                    Vec::new()
                } else {
                    taps.into_iter().map(|f| tape.constant(f)).collect()
                };
                (Some(tape.constant(sr)), taps)
            }
            _ => (None, Vec::new()),
        };
        let out = self.student.forward(tape, &sb, x)?;
        let inputs = DistillInputs {
            hr,
            sr_student: out.sr,
            taps_student: out.taps,
            sr_teacher,
            taps_teacher,
            scale: self.student.scale(),
        };
        let nodes = total_loss(tape, &self.plan, &rb, &inputs)?;
        Ok((nodes, sb, rb))
    }

    /// One optimiser step on the next batch; returns the pre-update losses.
    pub fn step(&mut self) -> Result<LossValues> {
        let batch = self.next_batch()?;
        let mut tape = Tape::new();
        let (nodes, sb, rb) = self.build_loss(&mut tape, &batch, true)?;
        let values = nodes.values(&tape);
        if let Some(term) = values.non_finite_term() {
            return Err(Error::NonFinite(format!("{term} at step {}", self.step)));
        }
        let grads = tape.backward(nodes.total)?;
        self.student.params.zero_grads();
        self.student.params.accumulate(&sb, &grads)?;
        for (r, b) in self.plan.regressors.iter_mut().zip(&rb) {
            r.params.zero_grads();
            r.params.accumulate(b, &grads)?;
        }
        if let Some(clip) = self.cfg.grad_clip {
            let mut sets: Vec<&ParamSet> = vec![&self.student.params];
            sets.extend(self.plan.regressors.iter().map(|r| &r.params));
            let norm = grad_norm(&sets);
            if norm > clip {
                let k = clip / norm;
                let scale = |p: &mut ParamSet| p.iter_mut().for_each(|q| q.grad = q.grad.map(|g| g * k));
                scale(&mut self.student.params);
                self.plan.regressors.iter_mut().for_each(|r| scale(&mut r.params));
            }
        }
        let lr = lr_at(self.epoch(), &self.cfg);
        adam_step(&mut self.student.params, &mut self.optim[0], lr, &self.adam)?;
        for (i, r) in self.plan.regressors.iter_mut().enumerate() {
            adam_step(&mut r.params, &mut self.optim[i + 1], lr, &self.adam)?;
        }
        self.step += 1;
        Ok(values)
    }

    /// Full training state: student, regressors, optimiser moments, position.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::from_model(&self.student);
        for (i, r) in self.plan.regressors.iter().enumerate() {
            let prefix = regressor_prefix(i);
            ckpt.tensors.extend(
                r.params
                    .iter()
                    .map(|p| (format!("{prefix}{}", p.name), p.value.clone())),
            );
        }
        let mut sets: Vec<&ParamSet> = vec![&self.student.params];
        sets.extend(self.plan.regressors.iter().map(|r| &r.params));
        for (g, (state, params)) in self.optim.iter().zip(&sets).enumerate() {
            for (moment, tensors) in [("m", &state.m), ("v", &state.v)] {
                let prefix = adam_prefix(g, moment);
                ckpt.tensors.extend(
                    params
                        .iter()
                        .zip(tensors.iter())
                        .map(|(p, t)| (format!("{prefix}{}", p.name), t.clone())),
                );
            }
        }
        ckpt.meta = CheckpointMeta {
            step: self.step,
            epoch: self.epoch(),
            seed: self.cfg.seed,
            plan: Some(self.plan.spec.clone()),
            regressors: self.plan.regressors.iter().map(|r| r.spec().clone()).collect(),
            train: Some(self.cfg.clone()),
            adam_steps: self.optim.iter().map(|s| s.t).collect(),
            val_psnr: None,
        };
        ckpt
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(
        ckpt: &Checkpoint,
        teacher: Option<&'a Model>,
        data: &'a Dataset,
        mean_rgb: [f64; 3],
    ) -> Result<Self> {
        let meta = &ckpt.meta;
        let cfg = meta
            .train
            .clone()
            .ok_or_else(|| Error::Config("checkpoint has no training config".into()))?;
        let spec = meta
            .plan
            .clone()
            .ok_or_else(|| Error::Config("checkpoint has no distillation plan".into()))?;
        let student = ckpt.to_model()?;
        let mut plan = DistillPlan::vanilla();
        plan.spec = spec;
        if !meta.regressors.is_empty() {
            let t = teacher.ok_or_else(|| Error::Config("resuming distillation needs the teacher".into()))?;
            plan.taps = crate::models::pair_taps(t, &student)?;
            plan.regressors = meta
                .regressors
                .iter()
                .enumerate()
                .map(|(i, rs)| {
                    let mut r = Regressor::new(rs.clone(), 0)?;
                    load_params(&mut r.params, ckpt, &regressor_prefix(i))?;
                    Ok(r)
                })
                .collect::<Result<_>>()?;
        }
        let mut trainer = Trainer::new(cfg, student, plan, teacher, data, mean_rgb)?;
        if meta.adam_steps.len() != trainer.optim.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} optimiser states, expected {}",
                meta.adam_steps.len(),
                trainer.optim.len()
            )));
        }
        let mut sets: Vec<&ParamSet> = vec![&trainer.student.params];
        sets.extend(trainer.plan.regressors.iter().map(|r| &r.params));
        let mut restored = Vec::with_capacity(sets.len());
        for (g, params) in sets.iter().enumerate() {
            let mut state = AdamState::new(params);
            state.t = meta.adam_steps[g];
            for (moment, slot) in [("m", &mut state.m), ("v", &mut state.v)] {
                let mut holder = (*params).clone();
                load_params(&mut holder, ckpt, &adam_prefix(g, moment))?;
                *slot = holder.iter().map(|p| p.value.clone()).collect();
            }
            restored.push(state);
        }
        trainer.optim = restored;
        trainer.step = meta.step;
        Ok(trainer)
    }
}

/// Result of a full run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    /// State at the epoch with the highest validation PSNR.
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub logs: Vec<EpochLog>,
    pub step_losses: Vec<LossValues>,
}

impl RunOutcome {
    pub fn best_val_psnr(&self) -> f64 {
        self.best.meta.val_psnr.unwrap_or(f64::NEG_INFINITY)
    }
}

fn mean_losses(xs: &[LossValues]) -> LossValues {
    let n = xs.len().max(1) as f64;
    let mut m = LossValues::default();
    for x in xs {
        m.total += x.total;
        m.sr += x.sr;
        m.distill += x.distill;
        m.fft += x.fft;
    }
    LossValues {
        total: m.total / n,
        sr: m.sr / n,
        distill: m.distill / n,
        fft: m.fft / n,
    }
}

/// Trains until the configured budget is spent, validating after each epoch.
pub fn run(
    trainer: &mut Trainer,
    val: &Dataset,
    on_epoch: &mut dyn FnMut(&EpochLog) -> Result<()>,
) -> Result<RunOutcome> {
    let spe = trainer.cfg.steps_per_epoch;
    let mut logs = Vec::new();
    let mut step_losses = Vec::new();
    let mut best: Option<Checkpoint> = None;
    while !trainer.is_done() {
        let epoch = trainer.epoch();
        let lr = lr_at(epoch, &trainer.cfg);
        let mut epoch_losses = Vec::with_capacity(spe);
        while trainer.epoch() == epoch && !trainer.is_done() {
            epoch_losses.push(trainer.step()?);
        }
        let report = evaluate(&trainer.student, val, trainer.mean_rgb, trainer.cfg.val_on_y)?;
        let m = mean_losses(&epoch_losses);
        let log = EpochLog {
            epoch,
            lr,
            loss_total: m.total,
            loss_sr: m.sr,
            loss_distill: m.distill,
            loss_fft: m.fft,
            val_psnr: report.mean_psnr_db,
        };
        on_epoch(&log)?;
        if best
            .as_ref()
            .is_none_or(|b| report.mean_psnr_db > b.meta.val_psnr.unwrap_or(f64::NEG_INFINITY))
        {
            let mut c = trainer.checkpoint();
            c.meta.val_psnr = Some(report.mean_psnr_db);
            best = Some(c);
        }
        logs.push(log);
        step_losses.extend(epoch_losses);
    }
    let mut last = trainer.checkpoint();
    last.meta.val_psnr = logs.last().map(|l| l.val_psnr);
    let best = best.unwrap_or_else(|| last.clone());
    Ok(RunOutcome {
        best,
        last,
        logs,
        step_losses,
    })
}

/// Trains a network from scratch with plain L1 to the ground truth.
pub fn train_teacher(
    model: &ModelConfig,
    cfg: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
    mean_rgb: [f64; 3],
    on_epoch: &mut dyn FnMut(&EpochLog) -> Result<()>,
) -> Result<RunOutcome> {
    let net = build_model(model)?;
    let mut trainer = Trainer::new(cfg.clone(), net, DistillPlan::vanilla(), None, train, mean_rgb)?;
    run(&mut trainer, val, on_epoch)
}

/// Trains a student of architecture `student` against a frozen teacher.
#[allow(clippy::too_many_arguments)]
pub fn distill(
    teacher: &Model,
    student: &ModelConfig,
    spec: &PlanSpec,
    cfg: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
    mean_rgb: [f64; 3],
    on_epoch: &mut dyn FnMut(&EpochLog) -> Result<()>,
) -> Result<RunOutcome> {
    let net = build_model(student)?;
    let plan = DistillPlan::new(spec.clone(), teacher, &net, cfg.seed)?;
    let teacher = spec.needs_teacher().then_some(teacher);
    let mut trainer = Trainer::new(cfg.clone(), net, plan, teacher, train, mean_rgb)?;
    run(&mut trainer, val, on_epoch)
}
