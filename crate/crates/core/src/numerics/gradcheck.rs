//! Central finite-difference verification of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Outcome of a gradient check. Failures are data, not errors.
#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub passed: bool,
    pub max_rel_error: f64,
    /// (input index, flat coordinate) of the worst mismatch.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub error: Option<String>,
}

/// Denominator floor for the relative error, so that near-zero gradients
/// are judged on absolute agreement instead of amplified roundoff.
pub const REL_FLOOR: f64 = 1e-6;

/// Checks `f`'s tape gradients against central differences at every input coordinate.
pub fn gradcheck<F>(f: F, inputs: &[Tensor], step: f64, tol: f64) -> GradcheckReport
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let analytic = match analytic_grads(&f, inputs) {
        Ok(g) => g,
        Err(e) => return failed(e.to_string()),
    };
    compare_gradients(&f, inputs, &analytic, step, tol)
}

/// Compares supplied gradients (possibly not from the tape) to central differences.
pub fn compare_gradients<F>(f: &F, inputs: &[Tensor], analytic: &[Tensor], step: f64, tol: f64) -> GradcheckReport
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if step <= 0.0 || analytic.len() != inputs.len() {
        return failed("step must be positive and one gradient given per input".into());
    }
    let mut worst = None;
    let mut max_rel = 0.0f64;
    let mut checked = 0;
    let mut probe = inputs.to_vec();
    for (k, inp) in inputs.iter().enumerate() {
        if analytic[k].shape() != inp.shape() {
            return failed(format!("gradient {k} has shape {:?}, input {:?}", analytic[k].shape(), inp.shape()));
        }
        for c in 0..inp.len() {
            let x0 = inp.data()[c];
            probe[k].data_mut()[c] = x0 + step;
            let fp = eval(f, &probe);
            probe[k].data_mut()[c] = x0 - step;
            let fm = eval(f, &probe);
            probe[k].data_mut()[c] = x0;
            let (fp, fm) = match (fp, fm) {
                (Ok(a), Ok(b)) => (a, b),
                (Err(e), _) | (_, Err(e)) => return failed(e.to_string()),
            };
            let num = (fp - fm) / (2.0 * step);
            let ana = analytic[k].data()[c];
            let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(REL_FLOOR);
            if rel > max_rel || worst.is_none() {
                max_rel = max_rel.max(rel);
                worst = Some((k, c));
            }
            checked += 1;
        }
    }
    GradcheckReport { passed: max_rel < tol, max_rel_error: max_rel, worst, checked, error: None }
}

pub fn analytic_grads<F>(f: &F, inputs: &[Tensor]) -> Result<Vec<Tensor>>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let g = tape.backward(out)?;
    Ok(vars.iter().map(|&v| g.wrt(v).clone()).collect())
}

fn eval<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    Ok(f(&tape, &vars)?.item())
}

fn failed(msg: String) -> GradcheckReport {
    GradcheckReport { passed: false, max_rel_error: f64::INFINITY, worst: None, checked: 0, error: Some(msg) }
}
