use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Shape, Tensor};

use super::params::{Binding, ParamSet};
use super::tape::{Operand, PointwiseKind, ReduceKind, Tape, Var};

/// Central-difference step used when none is given.
pub const DEFAULT_EPS: f64 = 1e-6;

/// Largest relative deviation between the tape gradient of `f` at `x` and
/// central finite differences with step `eps`.
///
/// Relative error per element is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_steps(f, x, &[eps])
}

/// Per-element minimum of the [`grad_check`] error over several steps.
pub fn grad_check_steps<F>(f: F, x: &Tensor, steps: &[f64]) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.variable(x.clone());
    let loss = f(&mut tape, xv)?;
    let grads = tape.backward(loss)?;
    let analytic = grads.get(xv).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));

    let eval = |probe: Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.constant(probe);
        let out = f(&mut t, v)?;
        t.value(out).item()
    };

    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        let a = analytic.data()[i];
        let mut best = f64::INFINITY;
        for &eps in steps {
            probe.data_mut()[i] = orig + eps;
            let plus = eval(probe.clone())?;
            probe.data_mut()[i] = orig - eps;
            let minus = eval(probe.clone())?;
            let numeric = (plus - minus) / (2.0 * eps);
            best = best.min((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8));
        }
        probe.data_mut()[i] = orig;
        worst = worst.max(best);
    }
    Ok(worst)
}

/// Result of checking one operation.
#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub op: &'static str,
    pub max_rel_err: f64,
}

/// Uniform values whose magnitude is at least `gap`, for ops with a kink at 0.
fn away_from_zero(shape: Shape, gap: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..shape.numel())
        .map(|_| {
            let m = rng.random_range(gap..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

/// Reduces `y` to a scalar through a fixed random weighting so that every
/// output element carries a distinct, nonzero upstream gradient.
fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = Tensor::uniform(tape.shape(y), -1.0, 1.0, &mut rng);
    let r = tape.constant(r);
    let prod = tape.mul(y, r)?;
    Ok(tape.sum(prod))
}

/// Finite-difference check of every differentiable tape operation on seeded
/// inputs no larger than `(2, 4, 8, 8)`.
pub fn gradient_suite(seed: u64) -> Result<Vec<GradCheckEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |op: &'static str, err: f64| out.push(GradCheckEntry { op, max_rel_err: err });
    let eps: &[f64] = &[1e-4, 1e-5, DEFAULT_EPS];

    let x = Tensor::uniform([2, 3, 5, 5], -1.0, 1.0, &mut rng);
    let w = Tensor::uniform([4, 3, 3, 3], -0.5, 0.5, &mut rng);
    let b = Tensor::uniform([1, 4, 1, 1], -0.5, 0.5, &mut rng);
    {
        let (w, b) = (w.clone(), b.clone());
        push(
            "conv2d/input",
            grad_check_steps(
                |t, x| {
                    let (w, b) = (t.constant(w.clone()), t.constant(b.clone()));
                    let y = t.conv2d(x, w, b, 1)?;
                    weighted_sum(t, y, 1)
                },
                &x,
                eps,
            )?,
        );
    }
    {
        let (x, b) = (x.clone(), b.clone());
        push(
            "conv2d/weight",
            grad_check_steps(
                |t, w| {
                    let (x, b) = (t.constant(x.clone()), t.constant(b.clone()));
                    let y = t.conv2d(x, w, b, 1)?;
                    weighted_sum(t, y, 2)
                },
                &w,
                eps,
            )?,
        );
    }
    {
        let (x, w) = (x.clone(), w.clone());
        push(
            "conv2d/bias",
            grad_check_steps(
                |t, b| {
                    let (x, w) = (t.constant(x.clone()), t.constant(w.clone()));
                    let y = t.conv2d(x, w, b, 1)?;
                    weighted_sum(t, y, 3)
                },
                &b,
                eps,
            )?,
        );
    }
    {
        let w1 = Tensor::uniform([4, 3, 1, 1], -0.5, 0.5, &mut rng);
        let b1 = Tensor::zeros([1, 4, 1, 1]);
        push(
            "conv2d/1x1",
            grad_check_steps(
                |t, x| {
                    let (w, b) = (t.constant(w1.clone()), t.constant(b1.clone()));
                    let y = t.conv2d(x, w, b, 0)?;
                    weighted_sum(t, y, 4)
                },
                &x,
                eps,
            )?,
        );
    }

    let kinked = away_from_zero(Shape::new(2, 4, 8, 8), 1e-4, &mut rng);
    push(
        "leaky_relu",
        grad_check_steps(
            |t, x| {
                let y = t.leaky_relu(x, 0.1);
                weighted_sum(t, y, 5)
            },
            &kinked,
            eps,
        )?,
    );
    push(
        "abs",
        grad_check_steps(
            |t, x| {
                let y = t.abs(x);
                weighted_sum(t, y, 6)
            },
            &kinked,
            eps,
        )?,
    );
    let a = Tensor::uniform([2, 4, 8, 8], -1.0, 1.0, &mut rng);
    let other = Tensor::uniform([2, 4, 8, 8], -1.0, 1.0, &mut rng);
    push(
        "sigmoid",
        grad_check_steps(
            |t, x| {
                let y = t.sigmoid(x);
                weighted_sum(t, y, 7)
            },
            &a,
            eps,
        )?,
    );
    for (name, kind) in [
        ("pointwise/add", PointwiseKind::Add),
        ("pointwise/sub", PointwiseKind::Sub),
        ("pointwise/mul", PointwiseKind::Mul),
    ] {
        let other = other.clone();
        push(
            name,
            grad_check_steps(
                |t, x| {
                    let y = t.constant(other.clone());
                    let z = t.pointwise(x, Operand::Var(y), kind)?;
                    weighted_sum(t, z, 8)
                },
                &a,
                eps,
            )?,
        );
    }
    push(
        "pointwise/scale",
        grad_check_steps(
            |t, x| {
                let z = t.pointwise(x, Operand::Scalar(-2.5), PointwiseKind::Scale)?;
                weighted_sum(t, z, 9)
            },
            &a,
            eps,
        )?,
    );
    push(
        "avg_pool",
        grad_check_steps(
            |t, x| {
                let y = t.avg_pool(x, 4)?;
                weighted_sum(t, y, 10)
            },
            &a,
            eps,
        )?,
    );
    push(
        "global_avg_pool",
        grad_check_steps(
            |t, x| {
                let y = t.global_avg_pool(x);
                weighted_sum(t, y, 11)
            },
            &a,
            eps,
        )?,
    );
    let single = Tensor::uniform([2, 1, 8, 8], -1.0, 1.0, &mut rng);
    push(
        "broadcast_channel",
        grad_check_steps(
            |t, x| {
                let y = t.broadcast_channel(x, 4)?;
                weighted_sum(t, y, 12)
            },
            &single,
            eps,
        )?,
    );
    let gate = Tensor::uniform([2, 4, 1, 1], 0.1, 1.0, &mut rng);
    {
        let gate = gate.clone();
        push(
            "scale_channels/input",
            grad_check_steps(
                |t, x| {
                    let g = t.constant(gate.clone());
                    let y = t.scale_channels(x, g)?;
                    weighted_sum(t, y, 13)
                },
                &a,
                eps,
            )?,
        );
    }
    {
        let a = a.clone();
        push(
            "scale_channels/gate",
            grad_check_steps(
                |t, g| {
                    let x = t.constant(a.clone());
                    let y = t.scale_channels(x, g)?;
                    weighted_sum(t, y, 14)
                },
                &gate,
                eps,
            )?,
        );
    }
    push(
        "pixel_shuffle",
        grad_check_steps(
            |t, x| {
                let y = t.pixel_shuffle(x, 2)?;
                weighted_sum(t, y, 15)
            },
            &a,
            eps,
        )?,
    );
    push(
        "l2_normalize",
        grad_check_steps(
            |t, x| {
                let y = t.l2_normalize(x)?;
                weighted_sum(t, y, 16)
            },
            &a,
            eps,
        )?,
    );
    push(
        "reduce/l1_mean",
        grad_check_steps(|t, x| t.reduce(x, ReduceKind::L1Mean), &kinked, eps)?,
    );
    push(
        "reduce/mean",
        grad_check_steps(|t, x| t.reduce(x, ReduceKind::Mean), &a, eps)?,
    );
    push(
        "reduce/sum",
        grad_check_steps(|t, x| t.reduce(x, ReduceKind::Sum), &a, eps)?,
    );
    let rgb = Tensor::uniform([2, 3, 8, 8], -1.0, 1.0, &mut rng);
    push(
        "reduce/channel_sum",
        grad_check_steps(
            |t, x| {
                let y = t.reduce(x, ReduceKind::ChannelSum)?;
                weighted_sum(t, y, 17)
            },
            &rgb,
            eps,
        )?,
    );
    push(
        "dft2/real",
        grad_check_steps(
            |t, x| {
                let (re, _) = t.dft2(x);
                weighted_sum(t, re, 18)
            },
            &rgb,
            eps,
        )?,
    );
    push(
        "dft2/imag",
        grad_check_steps(
            |t, x| {
                let (_, im) = t.dft2(x);
                weighted_sum(t, im, 19)
            },
            &rgb,
            eps,
        )?,
    );
    let partner = Tensor::uniform([2, 3, 8, 8], 0.2, 1.0, &mut rng);
    push(
        "complex_abs",
        grad_check_steps(
            |t, x| {
                let im = t.constant(partner.clone());
                let y = t.complex_abs(x, im)?;
                weighted_sum(t, y, 20)
            },
            &rgb,
            eps,
        )?,
    );
    Ok(out)
}

/// [`grad_check`] over every element of a parameter set.
///
/// `f` builds a scalar loss from a binding of `params`; other inputs should
/// be captured as constants.
pub fn grad_check_params<F>(f: F, params: &ParamSet, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &Binding) -> Result<Var>,
{
    grad_check_params_steps(f, params, &[eps], 1e-8)
}

/// Per-element minimum of the [`grad_check_params`] error over several steps.
///
/// Piecewise-linear losses need a small step near their kinks while entries
/// with tiny gradients need a large one to rise above roundoff; a correct
/// gradient agrees with finite differences at one of them.
pub fn grad_check_params_steps<F>(f: F, params: &ParamSet, steps: &[f64], floor: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &Binding) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let loss = f(&mut tape, &bound)?;
    let grads = tape.backward(loss)?;
    let mut analytic = params.clone();
    analytic.zero_grads();
    analytic.accumulate(&bound, &grads)?;

    let eval = |probe: &ParamSet| -> Result<f64> {
        let mut t = Tape::new();
        let b = probe.bind(&mut t, false);
        let out = f(&mut t, &b)?;
        t.value(out).item()
    };

    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for p in 0..params.len() {
        for i in 0..params.get(p).value.numel() {
            let orig = probe.get(p).value.data()[i];
            let a = analytic.get(p).grad.data()[i];
            let mut best = f64::INFINITY;
            for &eps in steps {
                probe.get_mut(p).value.data_mut()[i] = orig + eps;
                let plus = eval(&probe)?;
                probe.get_mut(p).value.data_mut()[i] = orig - eps;
                let minus = eval(&probe)?;
                let numeric = (plus - minus) / (2.0 * eps);
                best = best.min((a - numeric).abs() / a.abs().max(numeric.abs()).max(floor));
            }
            probe.get_mut(p).value.data_mut()[i] = orig;
            worst = worst.max(best);
        }
    }
    Ok(worst)
}
