//! Central finite-difference oracle for tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Universal finite-difference step.
pub const FD_STEP: f64 = 1e-6;

/// Denominator floor for relative error, so near-zero gradients are compared absolutely.
pub const REL_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    /// Max relative error per input tensor.
    pub max_rel_error: Vec<f64>,
    pub tol: f64,
    pub pass: bool,
}

impl CheckReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().cloned().fold(0.0, f64::max)
    }
}

fn eval<F>(builder: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = builder(&mut tape, &vars)?;
    let v = tape.value(loss);
    if v.len() != 1 {
        return Err(Error::NonScalarLoss(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Compare tape gradients of `builder` against central differences with step `step`.
///
/// The builder receives one leaf per entry of `params` and must return a scalar.
pub fn finite_diff_check<F>(builder: F, params: &[Tensor], step: f64, tol: f64) -> Result<CheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let first = eval(&builder, params)?;
    let second = eval(&builder, params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = builder(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut max_rel_error = Vec::with_capacity(params.len());
    let mut probe = params.to_vec();
    for (pi, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(params[pi].shape()));
        let mut worst = 0.0f64;
        for k in 0..params[pi].len() {
            let orig = params[pi].data()[k];
            probe[pi].data_mut()[k] = orig + step;
            let up = eval(&builder, &probe)?;
            probe[pi].data_mut()[k] = orig - step;
            let down = eval(&builder, &probe)?;
            probe[pi].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(relative_error(analytic.data()[k], numeric));
        }
        max_rel_error.push(worst);
    }
    let pass = max_rel_error.iter().all(|&e| e < tol);
    Ok(CheckReport {
        max_rel_error,
        tol,
        pass,
    })
}
