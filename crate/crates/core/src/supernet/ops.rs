use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{gaussian_vec, Rng};

/// Candidate operation on an edge. All act on row-vector features of width `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    /// Constant zero.
    Zero,
    /// Identity.
    Skip,
    /// Fixed width-3 circular moving average.
    Smooth,
    /// Learnable `d x d` linear map.
    Lin,
    /// Learnable `d x d` map, tanh, second `d x d` map.
    NonLin,
}

impl OpKind {
    pub const ALL: [OpKind; 5] = [
        OpKind::Zero,
        OpKind::Skip,
        OpKind::Smooth,
        OpKind::Lin,
        OpKind::NonLin,
    ];

    pub fn learnable(self) -> bool {
        matches!(self, OpKind::Lin | OpKind::NonLin)
    }

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Zero => "zero",
            OpKind::Skip => "skip",
            OpKind::Smooth => "smooth",
            OpKind::Lin => "lin",
            OpKind::NonLin => "nonlin",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown op `{s}`")))
    }
}

/// Row-stochastic circular moving average over three neighbours.
pub fn smoothing_matrix(d: usize) -> Tensor {
    let mut t = Tensor::zeros(&[d, d]);
    for i in 0..d {
        for off in [d - 1, 0, 1] {
            let j = (i + off) % d;
            t.data_mut()[i * d + j] += 1.0 / 3.0;
        }
    }
    t
}

/// Parameters owned by one op instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpWeights {
    None,
    Lin(ParamId),
    NonLin(ParamId, ParamId),
}

impl OpWeights {
    /// Allocate Gaussian(0, 1/d) weights for `kind` in `store`.
    pub fn init(kind: OpKind, d: usize, store: &mut ParamStore, rng: &mut Rng, tag: &str) -> Self {
        let std = (1.0 / d as f64).sqrt();
        let mut mat = |suffix: &str, rng: &mut Rng| {
            let t = Tensor::matrix(d, d, gaussian_vec(rng, d * d, std)).expect("d*d values");
            store.push(crate::autodiff::Param::new(t, format!("{tag}.{suffix}")))
        };
        match kind {
            OpKind::Lin => OpWeights::Lin(mat("w", rng)),
            OpKind::NonLin => {
                let a = mat("w1", rng);
                let b = mat("w2", rng);
                OpWeights::NonLin(a, b)
            }
            _ => OpWeights::None,
        }
    }

    pub fn ids(self) -> Vec<ParamId> {
        match self {
            OpWeights::None => vec![],
            OpWeights::Lin(a) => vec![a],
            OpWeights::NonLin(a, b) => vec![a, b],
        }
    }
}

/// Apply `kind` to a `[n, d]` node. Returns `None` for `Zero`.
pub(crate) fn apply_op(
    tape: &mut Tape,
    kind: OpKind,
    weights: OpWeights,
    bound: &Bound,
    smooth: Var,
    x: Var,
) -> Result<Option<Var>> {
    let y = match (kind, weights) {
        (OpKind::Zero, _) => return Ok(None),
        (OpKind::Skip, _) => x,
        (OpKind::Smooth, _) => tape.matmul(x, smooth)?,
        (OpKind::Lin, OpWeights::Lin(w)) => tape.matmul(x, bound.var(w))?,
        (OpKind::NonLin, OpWeights::NonLin(w1, w2)) => {
            let h = tape.matmul(x, bound.var(w1))?;
            let h = tape.tanh(h)?;
            tape.matmul(h, bound.var(w2))?
        }
        (k, w) => {
            return Err(Error::shape(
                "apply_op",
                format!("op {k} given weights {w:?}"),
            ))
        }
    };
    Ok(Some(y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothing_is_row_stochastic_and_fixed() {
        for d in [3, 4, 16] {
            let s = smoothing_matrix(d);
            for i in 0..d {
                let sum: f64 = s.row(i).iter().sum();
                assert!((sum - 1.0).abs() < 1e-15);
            }
            assert!(s.same_bits(&smoothing_matrix(d)));
        }
    }

    #[test]
    fn learnable_flags() {
        let l: Vec<bool> = OpKind::ALL.iter().map(|o| o.learnable()).collect();
        assert_eq!(l, vec![false, false, false, true, true]);
    }

    #[test]
    fn names_round_trip() {
        for o in OpKind::ALL {
            assert_eq!(o.name().parse::<OpKind>().unwrap(), o);
        }
        assert!("conv".parse::<OpKind>().is_err());
    }
}
