use serde::Serialize;

use super::cross_correlation;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::supernet::OpKind;

/// One mixed edge `y = Σ_i p_i x W_i` trained on half squared error.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub ops: Vec<OpKind>,
    pub weights: Vec<Tensor>,
    pub gates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionBatch {
    pub inputs: Tensor,
    pub targets: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeOp {
    pub p: f64,
    pub grad_before: f64,
    /// After the step, output gradients held at their pre-step values.
    pub grad_after_held: f64,
    /// After the step, everything recomputed.
    pub grad_after_full: f64,
    pub measured_change: f64,
    pub expected_change: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub eta: f64,
    pub raw_correlation: f64,
    pub normalized_correlation: f64,
    pub ops: Vec<ProbeOp>,
}

impl ProbeReport {
    pub fn max_rel_error(&self) -> f64 {
        self.ops.iter().map(|o| o.rel_error).fold(0.0, f64::max)
    }
}

struct ProbePass {
    grad_p: Vec<f64>,
    grad_w: Vec<Tensor>,
    /// Gradient of the mean loss w.r.t. the edge output.
    grad_y: Tensor,
}

impl LinearProbe {
    fn check(&self, batch: &RegressionBatch) -> Result<usize> {
        if let Some(op) = self.ops.iter().find(|o| **o != OpKind::Lin) {
            return Err(Error::ProbeRefused(format!("op {op} is not linear-learnable")));
        }
        if self.ops.is_empty() || self.weights.len() != self.ops.len() || self.gates.len() != self.ops.len() {
            return Err(Error::ProbeRefused("ops, weights and gates differ in length".into()));
        }
        let d = batch.inputs.cols();
        if self.weights.iter().any(|w| w.shape() != [d, d]) || batch.targets.shape() != batch.inputs.shape() {
            return Err(Error::shape("probe", format!("inputs {:?}", batch.inputs.shape())));
        }
        Ok(d)
    }

    fn pass(&self, weights: &[Tensor], batch: &RegressionBatch) -> Result<ProbePass> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.inputs.clone());
        let ws: Vec<Var> = weights.iter().map(|w| tape.param(w.clone())).collect();
        let ps: Vec<Var> = self.gates.iter().map(|&p| tape.param(Tensor::scalar(p))).collect();
        let mut terms = Vec::new();
        for (&w, &p) in ws.iter().zip(&ps) {
            let o = tape.matmul(x, w)?;
            terms.push(tape.scale(p, o)?);
        }
        let y = tape.add_n(&terms)?;
        let loss = tape.squared_error(y, batch.targets.clone())?;
        let g = tape.backward(loss)?;
        Ok(ProbePass {
            grad_p: ps.iter().map(|&p| g.scalar(p)).collect(),
            grad_w: ws
                .iter()
                .zip(weights)
                .map(|(&v, w)| g.get(v).cloned().unwrap_or_else(|| Tensor::zeros(w.shape())))
                .collect(),
            grad_y: g.get(y).cloned().unwrap_or_else(|| Tensor::zeros(batch.targets.shape())),
        })
    }
}

fn rel(a: f64, b: f64) -> f64 {
    let m = a.abs().max(b.abs());
    if m == 0.0 {
        0.0
    } else {
        (a - b).abs() / m
    }
}

/// Measure how one SGD weight step on `batch_a` moves `dL/dp_i` on `batch_b`,
/// against the predicted `-eta * p_i * raw_correlation(a, b)`.
pub fn bias_decomposition_probe(
    probe: &LinearProbe,
    batch_a: &RegressionBatch,
    batch_b: &RegressionBatch,
    eta: f64,
) -> Result<ProbeReport> {
    probe.check(batch_a)?;
    probe.check(batch_b)?;
    let before_b = probe.pass(&probe.weights, batch_b)?;
    let on_a = probe.pass(&probe.weights, batch_a)?;
    let stepped: Vec<Tensor> = probe
        .weights
        .iter()
        .zip(&on_a.grad_w)
        .map(|(w, g)| {
            let data = w.data().iter().zip(g.data()).map(|(w, g)| w - eta * g).collect();
            Tensor::new(w.shape().to_vec(), data).expect("same shape")
        })
        .collect();
    let after_b = probe.pass(&stepped, batch_b)?;

    let (n, m) = (batch_a.inputs.rows() as f64, batch_b.inputs.rows() as f64);
    let ga = on_a.grad_y.map(|v| v * n);
    let gb = before_b.grad_y.map(|v| v * m);
    let (raw, normalized) = cross_correlation(&batch_a.inputs, &ga, &batch_b.inputs, &gb);

    let mut ops = Vec::with_capacity(probe.ops.len());
    for (i, w) in stepped.iter().enumerate() {
        let xw = Tensor::new(
            vec![batch_b.inputs.rows(), w.cols()],
            crate::autodiff::tensor::matmul_raw(
                batch_b.inputs.data(),
                w.data(),
                batch_b.inputs.rows(),
                w.rows(),
                w.cols(),
            ),
        )?;
        let held = before_b.grad_y.dot(&xw);
        let measured = held - before_b.grad_p[i];
        let expected = -eta * probe.gates[i] * raw;
        ops.push(ProbeOp {
            p: probe.gates[i],
            grad_before: before_b.grad_p[i],
            grad_after_held: held,
            grad_after_full: after_b.grad_p[i],
            measured_change: measured,
            expected_change: expected,
            rel_error: rel(measured, expected),
        });
    }
    Ok(ProbeReport {
        eta,
        raw_correlation: raw,
        normalized_correlation: normalized.clamp(-1.0, 1.0),
        ops,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_dim() -> (LinearProbe, RegressionBatch) {
        let probe = LinearProbe {
            ops: vec![OpKind::Lin],
            weights: vec![Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap()],
            gates: vec![0.5],
        };
        let batch = RegressionBatch {
            inputs: Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap(),
            targets: Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap(),
        };
        (probe, batch)
    }

    #[test]
    fn single_sample_change_by_hand() {
        // y = 0.5 x = [0.5, 1], g = y - t = [0.5, 1], |g|^2 = 1.25, |x|^2 = 5
        let (probe, batch) = two_dim();
        let r = bias_decomposition_probe(&probe, &batch, &batch, 0.1).unwrap();
        assert!((r.raw_correlation - 6.25).abs() < 1e-12);
        let o = &r.ops[0];
        assert!((o.grad_before - 2.5).abs() < 1e-12);
        assert!((o.expected_change + 0.1 * 0.5 * 6.25).abs() < 1e-12);
        assert!(o.rel_error < 1e-12);
    }

    #[test]
    fn zero_eta_changes_nothing() {
        let (probe, batch) = two_dim();
        let r = bias_decomposition_probe(&probe, &batch, &batch, 0.0).unwrap();
        assert_eq!(r.ops[0].measured_change, 0.0);
        assert_eq!(r.ops[0].grad_after_full, r.ops[0].grad_before);
    }

    #[test]
    fn nonlinear_ops_refused() {
        let (mut probe, batch) = two_dim();
        probe.ops[0] = OpKind::NonLin;
        assert!(matches!(
            bias_decomposition_probe(&probe, &batch, &batch, 0.1),
            Err(Error::ProbeRefused(_))
        ));
    }
}
