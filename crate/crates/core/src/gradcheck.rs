//! Finite-difference verification of tape gradients.

use alloc::vec::Vec;

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error over all checked coordinates.
    pub max_rel_error: f64,
    /// (input index, flat coordinate) where the maximum occurred.
    pub worst: Option<(usize, usize)>,
    pub coordinates: usize,
}

/// Relative error with the `max(|a|, |n|, 1e-8)` denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Compare the analytic gradient of the scalar built by `f` against central
/// differences `(f(x+εe) − f(x−εe)) / 2ε`, coordinate by coordinate, for every
/// tensor in `inputs`.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor<f64>], with_grad: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let value = tape.value(out).data()[0];
        let mut grads = Vec::new();
        if with_grad {
            tape.backward(out)?;
            for (v, t) in vars.iter().zip(vals) {
                grads.push(tape.grad(*v).map_or_else(|| alloc::vec![0.0; t.len()], <[f64]>::to_vec));
            }
        }
        Ok((value, grads))
    };

    let (_, analytic) = eval(inputs, true)?;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    for (ti, t) in inputs.iter().enumerate() {
        for c in 0..t.len() {
            let orig = t.data()[c];
            work[ti].data_mut()[c] = orig + eps;
            let (plus, _) = eval(&work, false)?;
            work[ti].data_mut()[c] = orig - eps;
            let (minus, _) = eval(&work, false)?;
            work[ti].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic[ti][c], numeric);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((ti, c));
                }
            }
        }
    }
    Ok(report)
}

/// Single-input form of [`grad_check_many`]; returns the max relative error.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), core::slice::from_ref(x), eps).map(|r| r.max_rel_error)
}
