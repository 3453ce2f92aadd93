use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Largest relative disagreement between the reverse-mode gradient of `f`
/// at `input` and central finite differences with spacing `step`.
///
/// Per coordinate the error is `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
/// `f` must be deterministic and its output must depend on its argument.
pub fn grad_check<F>(f: F, input: &Tensor<f64>, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    grad_check_with(f, input, step, 1e-8)
}

/// [`grad_check`] with an explicit denominator floor.
pub fn grad_check_with<F>(f: F, input: &Tensor<f64>, step: f64, floor: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.param(input.clone());
    let loss = f(&mut g, x)?;
    if !g.requires_grad(loss) {
        return Err(Error::contract("grad_check: function output is detached from its input"));
    }
    g.backward(loss)?;
    let analytic = g.grad(x).unwrap_or_else(|| Tensor::zeros(input.shape()));

    let eval = |t: Tensor<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.constant(t);
        let y = f(&mut g, x)?;
        Ok(g.value(y).data()[0])
    };
    let mut worst: f64 = 0.0;
    for i in 0..input.len() {
        let mut plus = input.clone();
        plus.data_mut()[i] += step;
        let mut minus = input.clone();
        minus.data_mut()[i] -= step;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * step);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Relative slope change between the two one-sided differences above which
/// a coordinate is treated as straddling a kink.
pub const KINK_RATIO: f64 = 1e-2;

/// Outcome of [`grad_check_kinks`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KinkReport {
    /// Worst relative error over coordinates where the function is smooth
    /// within `±step`.
    pub max_rel_error: f64,
    /// Coordinates whose forward and backward one-sided slopes disagree.
    pub kinks: usize,
}

/// [`grad_check_with`] that separates kinks from gradient errors.
///
/// A coordinate whose error reaches `tolerance` is classified by its two
/// one-sided slopes: if they disagree, a ReLU or `|·|` switches inside the
/// stencil and the coordinate is counted as a kink instead of scored. The
/// classification uses forward evaluations only. A wrong analytic gradient at
/// a smooth point keeps matching one-sided slopes and is still reported;
/// callers redraw the sample point when kinks are found.
pub fn grad_check_kinks<F>(f: F, input: &Tensor<f64>, step: f64, floor: f64, tolerance: f64) -> Result<KinkReport>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.param(input.clone());
    let loss = f(&mut g, x)?;
    if !g.requires_grad(loss) {
        return Err(Error::contract("grad_check: function output is detached from its input"));
    }
    let f0 = g.value(loss).data()[0];
    g.backward(loss)?;
    let analytic = g.grad(x).unwrap_or_else(|| Tensor::zeros(input.shape()));

    let eval = |t: Tensor<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.constant(t);
        let y = f(&mut g, x)?;
        Ok(g.value(y).data()[0])
    };
    let mut report = KinkReport {
        max_rel_error: 0.0,
        kinks: 0,
    };
    for i in 0..input.len() {
        let mut plus = input.clone();
        plus.data_mut()[i] += step;
        let mut minus = input.clone();
        minus.data_mut()[i] -= step;
        let (fp, fm) = (eval(plus)?, eval(minus)?);
        let numeric = (fp - fm) / (2.0 * step);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        if err >= tolerance {
            let (right, left) = ((fp - f0) / step, (f0 - fm) / step);
            if (right - left).abs() > KINK_RATIO * right.abs().max(left.abs()).max(floor) {
                report.kinks += 1;
                continue;
            }
        }
        report.max_rel_error = report.max_rel_error.max(err);
    }
    Ok(report)
}
