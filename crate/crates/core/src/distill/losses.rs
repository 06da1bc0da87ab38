//! The loss family. All `||.||_1` terms are mean absolute values so that the
//! weights `alpha1`/`alpha2` do not depend on tensor size.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Binding, Tape, Var};
use crate::error::{Error, Result};

use super::plan::{DistillPlan, FftMode, Method, SfdGradient};
use super::regressor::Regressor;

fn expect_same(tape: &Tape, vars: &[Var], what: &str) -> Result<()> {
    let first = tape.shape(vars[0]);
    if let Some(&v) = vars.iter().find(|&&v| tape.shape(v) != first) {
        return Err(Error::InvalidShape(format!(
            "{what}: shape {} differs from {}",
            tape.shape(v),
            first
        )));
    }
    Ok(())
}

/// `l1_mean(a - b)`.
pub fn l1_distance(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    Ok(tape.l1_mean(d))
}

/// Output distillation: `(l1_mean(sr_t - sr_s) + l1_mean(hr - sr_s)) / 2`.
pub fn sr_loss(tape: &mut Tape, sr_t: Var, sr_s: Var, hr: Var) -> Result<Var> {
    expect_same(tape, &[sr_t, sr_s, hr], "sr_loss")?;
    let mimic = l1_distance(tape, sr_t, sr_s)?;
    let truth = l1_distance(tape, hr, sr_s)?;
    let both = tape.add(mimic, truth)?;
    Ok(tape.scale(both, 0.5))
}

/// `D = f_t / |f_t| - r / |r|` with per-sample L2 norms.
pub fn feature_difference(tape: &mut Tape, f_t: Var, regressed: Var) -> Result<Var> {
    expect_same(tape, &[f_t, regressed], "feature difference")?;
    let t = tape.l2_normalize(f_t)?;
    let s = tape.l2_normalize(regressed)?;
    tape.sub(t, s)
}

/// Local feature distillation. Returns `(alpha1 * l1_mean(D), D)`.
///
/// `f_t` is detached, so no gradient reaches the teacher through it.
pub fn lfd_loss(
    tape: &mut Tape,
    f_t: Var,
    f_s: Var,
    regressor: &Regressor,
    bound: &Binding,
    alpha1: f64,
) -> Result<(Var, Var)> {
    let (ts, ss) = (tape.shape(f_t), tape.shape(f_s));
    if (ts.n, ts.h, ts.w) != (ss.n, ss.h, ss.w) {
        return Err(Error::InvalidShape(format!(
            "teacher feature {ts} and student feature {ss} differ spatially"
        )));
    }
    let f_t = tape.detach(f_t);
    let regressed = regressor.forward(tape, bound, f_s)?;
    let d = feature_difference(tape, f_t, regressed)?;
    let l1 = tape.l1_mean(d);
    Ok((tape.scale(l1, alpha1), d))
}

/// Selective map: channel-summed `|sr_t - sr_s|`, mean-pooled by `scale`,
/// broadcast to `channels`.
pub fn sfd_map(
    tape: &mut Tape,
    sr_t: Var,
    sr_s: Var,
    scale: usize,
    channels: usize,
    gradient: SfdGradient,
) -> Result<Var> {
    expect_same(tape, &[sr_t, sr_s], "sfd_map")?;
    let s = tape.shape(sr_t);
    if s.c != 3 {
        return Err(Error::InvalidShape(format!("sfd_map expects RGB outputs, got {s}")));
    }
    if scale == 0 || !s.h.is_multiple_of(scale) || !s.w.is_multiple_of(scale) {
        return Err(Error::InvalidShape(format!(
            "output size {}x{} is not divisible by scale {scale}",
            s.h, s.w
        )));
    }
    let (t, st) = match gradient {
        SfdGradient::Blocked => (tape.detach(sr_t), tape.detach(sr_s)),
        SfdGradient::FlowThrough => (sr_t, sr_s),
    };
    let diff = tape.sub(t, st)?;
    let mag = tape.abs(diff);
    let summed = tape.channel_sum(mag)?;
    let pooled = tape.avg_pool(summed, scale)?;
    tape.broadcast_channel(pooled, channels)
}

/// `alpha2 * l1_mean(sfd * D)`.
pub fn lsfd_loss(tape: &mut Tape, d: Var, sfd: Var, alpha2: f64) -> Result<Var> {
    expect_same(tape, &[d, sfd], "lsfd_loss")?;
    let weighted = tape.mul(sfd, d)?;
    let l1 = tape.l1_mean(weighted);
    Ok(tape.scale(l1, alpha2))
}

/// L1 distance between the 2-D spectra of two outputs.
pub fn fft_loss(tape: &mut Tape, sr_t: Var, sr_s: Var, mode: FftMode) -> Result<Var> {
    expect_same(tape, &[sr_t, sr_s], "fft_loss")?;
    let diff = tape.sub(sr_s, sr_t)?;
    let (re, im) = tape.dft2(diff);
    match mode {
        FftMode::Separate => {
            // mean over the concatenation of both planes
            let a = tape.l1_mean(re);
            let b = tape.l1_mean(im);
            let s = tape.add(a, b)?;
            Ok(tape.scale(s, 0.5))
        }
        FftMode::Magnitude => {
            let m = tape.complex_abs(re, im)?;
            Ok(tape.l1_mean(m))
        }
    }
}

/// Forward results consumed by [`total_loss`].
#[derive(Clone, Debug)]
pub struct DistillInputs {
    pub hr: Var,
    pub sr_student: Var,
    pub taps_student: Vec<Var>,
    /// Teacher output; required unless the plan is vanilla without FFT.
    pub sr_teacher: Option<Var>,
    pub taps_teacher: Vec<Var>,
    pub scale: usize,
}

/// Tape nodes of each logged term. `total = sr + distill + fft`.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub total: Var,
    pub sr: Var,
    pub distill: Option<Var>,
    /// Already multiplied by the FFT weight.
    pub fft: Option<Var>,
}

/// Numeric values of [`LossNodes`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub sr: f64,
    pub distill: f64,
    pub fft: f64,
}

impl LossNodes {
    pub fn values(&self, tape: &Tape) -> LossValues {
        let get = |v: Option<Var>| v.map_or(0.0, |v| tape.value(v).data()[0]);
        LossValues {
            total: get(Some(self.total)),
            sr: get(Some(self.sr)),
            distill: get(self.distill),
            fft: get(self.fft),
        }
    }
}

impl LossValues {
    pub fn is_finite(&self) -> bool {
        [self.total, self.sr, self.distill, self.fft]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Name of the first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("loss_sr", self.sr),
            ("loss_distill", self.distill),
            ("loss_fft", self.fft),
            ("loss_total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// Combines the terms selected by `plan`.
///
/// Teacher outputs are detached here, so the teacher never receives
/// gradient regardless of how it was bound.
pub fn total_loss(
    tape: &mut Tape,
    plan: &DistillPlan,
    regressors: &[Binding],
    inputs: &DistillInputs,
) -> Result<LossNodes> {
    plan.validate()?;
    if regressors.len() != plan.regressors.len() {
        return Err(Error::Config(format!(
            "{} regressor bindings for {} regressors",
            regressors.len(),
            plan.regressors.len()
        )));
    }
    let weights = &plan.spec.weights;
    let sr_t = match inputs.sr_teacher {
        Some(v) => Some(tape.detach(v)),
        None if plan.spec.needs_teacher() => {
            return Err(Error::Config(format!("{} plan needs teacher outputs", plan.method())));
        }
        None => None,
    };

    let sr = match (plan.method(), sr_t) {
        (Method::Vanilla, _) => l1_distance(tape, inputs.hr, inputs.sr_student)?,
        (_, Some(t)) => sr_loss(tape, t, inputs.sr_student, inputs.hr)?,
        (_, None) => unreachable!("non-vanilla plans require the teacher"),
    };

    let distill = if plan.method() == Method::Vanilla {
        None
    } else {
        let sr_t = sr_t.expect("checked above");
        let mut per_tap = Vec::with_capacity(plan.taps.len());
        let mut sfd = None;
        for (i, pair) in plan.taps.pairs.iter().enumerate() {
            let f_t = *inputs.taps_teacher.get(pair.teacher).ok_or_else(|| {
                Error::Config(format!("teacher tap {} ({}) missing", pair.teacher, pair.teacher_label))
            })?;
            let f_s = *inputs.taps_student.get(pair.student).ok_or_else(|| {
                Error::Config(format!("student tap {} ({}) missing", pair.student, pair.student_label))
            })?;
            let reg = &plan.regressors[i];
            let term = match plan.method() {
                Method::Fitnet | Method::Lfd => lfd_loss(tape, f_t, f_s, reg, &regressors[i], weights.alpha1)?.0,
                Method::Lsfd => {
                    let (_, d) = lfd_loss(tape, f_t, f_s, reg, &regressors[i], weights.alpha1)?;
                    let c = tape.shape(d).c;
                    let map = match sfd {
                        Some(m) if tape.shape(m).c == c => m,
                        _ => {
                            let m = sfd_map(tape, sr_t, inputs.sr_student, inputs.scale, c, plan.spec.sfd_gradient)?;
                            sfd = Some(m);
                            m
                        }
                    };
                    lsfd_loss(tape, d, map, weights.alpha2)?
                }
                Method::Vanilla => unreachable!(),
            };
            per_tap.push(term);
        }
        let mut acc = per_tap[0];
        for &t in &per_tap[1..] {
            acc = tape.add(acc, t)?;
        }
        Some(tape.scale(acc, 1.0 / per_tap.len() as f64))
    };

    let fft = if weights.use_fft {
        let t = sr_t.expect("use_fft requires the teacher");
        let f = fft_loss(tape, t, inputs.sr_student, plan.spec.fft_mode)?;
        Some(tape.scale(f, weights.fft_weight))
    } else {
        None
    };

    let mut total = sr;
    if let Some(d) = distill {
        total = tape.add(total, d)?;
    }
    if let Some(f) = fft {
        total = tape.add(total, f)?;
    }
    Ok(LossNodes {
        total,
        sr,
        distill,
        fft,
    })
}
