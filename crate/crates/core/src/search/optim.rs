use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

pub const SGD_MOMENTUM: f64 = 0.9;
pub const ADAM_BETAS: (f64, f64) = (0.5, 0.999);
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    /// SGD with momentum 0.9.
    SgdMomentum,
    /// Adam with betas (0.5, 0.999), eps 1e-8.
    Adam,
}

/// `lr0 * (1 + cos(pi * step / total)) / 2`
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> f64 {
    if total_steps == 0 {
        return lr0;
    }
    let s = step.min(total_steps) as f64 / total_steps as f64;
    lr0 * (1.0 + (PI * s).cos()) / 2.0
}

/// Buffers for one optimizer over a fixed list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    momentum: f64,
    ids: Vec<ParamId>,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, store: &ParamStore, ids: &[ParamId]) -> Self {
        Self::with_momentum(kind, SGD_MOMENTUM, store, ids)
    }

    /// Like [`OptimizerState::new`] with a custom SGD momentum (ignored by Adam).
    pub fn with_momentum(kind: OptimizerKind, momentum: f64, store: &ParamStore, ids: &[ParamId]) -> Self {
        let zeros: Vec<Tensor> = ids
            .iter()
            .map(|&id| Tensor::zeros(store.get(id).tensor.shape()))
            .collect();
        OptimizerState {
            kind,
            momentum,
            ids: ids.to_vec(),
            second: if kind == OptimizerKind::Adam { zeros.clone() } else { Vec::new() },
            first: zeros,
            step: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update with coupled weight decay (`g + wd * theta`).
    pub fn apply(&mut self, store: &mut ParamStore, grads: &[Tensor], lr: f64, weight_decay: f64) -> Result<()> {
        if grads.len() != self.ids.len() {
            return Err(Error::shape(
                "optimizer",
                format!("{} grads for {} params", grads.len(), self.ids.len()),
            ));
        }
        for (g, &id) in grads.iter().zip(&self.ids) {
            if g.shape() != store.get(id).tensor.shape() {
                return Err(Error::shape(
                    "optimizer",
                    format!("grad {:?} vs param {:?}", g.shape(), store.get(id).tensor.shape()),
                ));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        for (i, (g, &id)) in grads.iter().zip(&self.ids).enumerate() {
            let theta = store.get_mut(id).tensor.data_mut();
            let m = self.first[i].data_mut();
            match self.kind {
                OptimizerKind::SgdMomentum => {
                    for ((th, &gi), mi) in theta.iter_mut().zip(g.data()).zip(m.iter_mut()) {
                        let gd = gi + weight_decay * *th;
                        *mi = self.momentum * *mi + gd;
                        *th -= lr * *mi;
                    }
                }
                OptimizerKind::Adam => {
                    let (b1, b2) = ADAM_BETAS;
                    let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
                    let v = self.second[i].data_mut();
                    for (((th, &gi), mi), vi) in theta.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        let gd = gi + weight_decay * *th;
                        *mi = b1 * *mi + (1.0 - b1) * gd;
                        *vi = b2 * *vi + (1.0 - b2) * gd * gd;
                        *th -= lr * (*mi / c1) / ((*vi / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Param;

    fn store(v: Vec<f64>) -> (ParamStore, Vec<ParamId>) {
        let mut s = ParamStore::new();
        let id = s.push(Param::new(Tensor::vector(v), "p"));
        (s, vec![id])
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 100, 0.1), 0.1);
        assert!(cosine_lr(100, 100, 0.1).abs() < 1e-18);
        assert!((cosine_lr(50, 100, 0.1) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn plain_sgd_step() {
        let (mut s, ids) = store(vec![1.0, -2.0]);
        let mut o = OptimizerState::with_momentum(OptimizerKind::SgdMomentum, 0.0, &s, &ids);
        o.apply(&mut s, &[Tensor::vector(vec![0.5, 1.0])], 0.1, 0.0).unwrap();
        assert_eq!(s.get(ids[0]).tensor.data(), &[1.0 - 0.05, -2.0 - 0.1]);
    }

    #[test]
    fn weight_decay_alone_shrinks() {
        let (mut s, ids) = store(vec![2.0]);
        let mut o = OptimizerState::new(OptimizerKind::SgdMomentum, &s, &ids);
        o.apply(&mut s, &[Tensor::vector(vec![0.0])], 0.1, 0.01).unwrap();
        assert!((s.get(ids[0]).tensor.data()[0] - (2.0 - 0.1 * 0.01 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn momentum_accumulates() {
        let (mut s, ids) = store(vec![0.0]);
        let mut o = OptimizerState::new(OptimizerKind::SgdMomentum, &s, &ids);
        let g = [Tensor::vector(vec![1.0])];
        o.apply(&mut s, &g, 1.0, 0.0).unwrap();
        o.apply(&mut s, &g, 1.0, 0.0).unwrap();
        // buffers: 1, 1.9
        assert!((s.get(ids[0]).tensor.data()[0] + 2.9).abs() < 1e-15);
    }

    #[test]
    fn first_adam_step_is_sign_like() {
        let g = [3.0, -0.25, 1e-3];
        let (mut s, ids) = store(vec![0.0; 3]);
        let mut o = OptimizerState::new(OptimizerKind::Adam, &s, &ids);
        o.apply(&mut s, &[Tensor::vector(g.to_vec())], 0.01, 0.0).unwrap();
        for (th, gi) in s.get(ids[0]).tensor.data().iter().zip(g) {
            let want = -0.01 * gi / (gi.abs() + ADAM_EPS);
            assert!((th - want).abs() < 1e-15, "{th} vs {want}");
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let (mut s, ids) = store(vec![0.0; 2]);
        let mut o = OptimizerState::new(OptimizerKind::Adam, &s, &ids);
        assert!(o.apply(&mut s, &[Tensor::vector(vec![1.0])], 0.1, 0.0).is_err());
    }
}
