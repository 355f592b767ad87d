use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const STEP: f64 = 1e-4;
const ABS_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, element index)` of the worst element.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

fn eval<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<(Tape<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.ensure_finite()?;
    Ok((tape, vars, out))
}

/// Compares tape gradients of the scalar function `f` against central
/// differences with step `1e-4`, in `f64`.
///
/// Relative error is `|a - n| / max(|a|, |n|)`, falling back to the absolute
/// error where that denominator is below `1e-8`.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>]) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    grad_check_with_step(f, inputs, STEP)
}

/// [`grad_check`] with an explicit difference step. Deep ReLU networks need
/// a smaller step so that probes rarely cross an activation kink.
pub fn grad_check_with_step<F>(f: F, inputs: &[Tensor<f64>], step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) || !step.is_finite() {
        return Err(crate::error::invalid(format!(
            "difference step must be > 0, got {step}"
        )));
    }
    let (mut tape, vars, out) = eval(&f, inputs)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect();
    drop(tape);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for k in 0..t.len() {
            let orig = t.data()[k];
            probe[ti].data_mut()[k] = orig + step;
            let (tp, _, op) = eval(&f, &probe)?;
            let plus = tp.value(op).item();
            probe[ti].data_mut()[k] = orig - step;
            let (tm, _, om) = eval(&f, &probe)?;
            let minus = tm.value(om).item();
            probe[ti].data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[ti].data()[k];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of input {ti} element {k}"
                )));
            }
            let denom = a.abs().max(numeric.abs());
            let err = if denom < ABS_FLOOR {
                (a - numeric).abs()
            } else {
                (a - numeric).abs() / denom
            };
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (ti, k);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
