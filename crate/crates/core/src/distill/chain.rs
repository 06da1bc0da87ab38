use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check_params_steps, Binding, GradCheckEntry, Tape};
use crate::error::Result;
use crate::models::{build_model, ModelConfig};
use crate::tensor::Tensor;

use super::losses::{total_loss, DistillInputs};
use super::plan::{DistillPlan, Method, PlanSpec, SfdGradient};

const STEPS: [f64; 4] = [1e-4, 1e-5, 1e-6, 1e-7];

/// Finite-difference check of the whole student -> tap -> deep regressor ->
/// LSFD + output loss chain on a toy teacher/student pair.
///
/// The selective map flows gradients here (a blocked map is constant to the
/// tape but not to finite differences) and unit weights keep the loss O(1).
/// Each element takes its best agreement over several steps so L1 kinks near
/// a probe point do not dominate.
pub fn full_chain_check(seed: u64) -> Result<Vec<GradCheckEntry>> {
    let teacher = build_model(&ModelConfig::rcan(8, 1, 4, 2).with_reduction(4).with_seed(seed + 1))?;
    let student = build_model(&ModelConfig::rcan(4, 1, 2, 2).with_reduction(2).with_seed(seed + 2))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lr = Tensor::uniform([2, 3, 4, 4], -0.5, 0.5, &mut rng);
    let hr = Tensor::uniform([2, 3, 8, 8], -0.5, 0.5, &mut rng);

    let mut spec = PlanSpec::new(Method::Lsfd);
    spec.sfd_gradient = SfdGradient::FlowThrough;
    spec.weights.alpha1 = 1.0;
    spec.weights.alpha2 = 1.0;
    let plan = DistillPlan::new(spec, &teacher, &student, seed + 3)?;
    let (sr_t, taps_t) = teacher.infer(&lr)?;
    let loss = |tape: &mut Tape, sb: &Binding, regs: &[Binding]| {
        let x = tape.constant(lr.clone());
        let hr = tape.constant(hr.clone());
        let out = student.forward(tape, sb, x)?;
        let inputs = DistillInputs {
            hr,
            sr_student: out.sr,
            taps_student: out.taps,
            sr_teacher: Some(tape.constant(sr_t.clone())),
            taps_teacher: taps_t.iter().map(|t| tape.constant(t.clone())).collect(),
            scale: 2,
        };
        Ok(total_loss(tape, &plan, regs, &inputs)?.total)
    };

    let student_err = grad_check_params_steps(
        |tape, b| {
            let regs: Vec<Binding> = plan.regressors.iter().map(|r| r.params.bind(tape, false)).collect();
            loss(tape, b, &regs)
        },
        &student.params,
        &STEPS,
        1e-8,
    )?;
    let mut reg_err: f64 = 0.0;
    for (i, reg) in plan.regressors.iter().enumerate() {
        let err = grad_check_params_steps(
            |tape, b| {
                let sb = student.params.bind(tape, false);
                let regs: Vec<Binding> = plan
                    .regressors
                    .iter()
                    .enumerate()
                    .map(|(j, r)| if j == i { b.clone() } else { r.params.bind(tape, false) })
                    .collect();
                loss(tape, &sb, &regs)
            },
            &reg.params,
            &STEPS,
            1e-8,
        )?;
        reg_err = reg_err.max(err);
    }
    Ok(vec![
        GradCheckEntry {
            op: "chain/student",
            max_rel_err: student_err,
        },
        GradCheckEntry {
            op: "chain/regressors",
            max_rel_err: reg_err,
        },
    ])
}
