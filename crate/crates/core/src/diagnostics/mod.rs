//! Measurements of gate gradients and gradient correlations on a fixed
//! parameter snapshot.

mod probe;
mod trace;

pub use probe::{bias_decomposition_probe, LinearProbe, ProbeOp, ProbeReport, RegressionBatch};
pub use trace::{
    domination_trace, masses, CorrKind, CorrRecord, DominationReport, EdgeSeries, GateRecord, PTraceRecord,
    SearchTrace, StepRecord, TraceHeader, TraceRecord, TRACE_SCHEMA, TRACE_VERSION,
};

use crate::autodiff::tensor::{matmul_tn, Tensor};
use crate::autodiff::{Bound, Gradients, Tape};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::supernet::{Edge, ForwardRecord, GateSource, SuperNet};

/// One forward/backward of the cross-entropy loss on a batch.
#[derive(Debug)]
pub struct Pass {
    pub tape: Tape,
    pub bound: Bound,
    pub record: ForwardRecord,
    pub grads: Gradients,
    pub loss: f64,
    pub batch_len: usize,
    /// Fingerprint of the parameters the pass was taken at.
    pub snapshot: String,
}

impl Pass {
    pub fn new(net: &SuperNet, batch: &Batch) -> Result<Pass> {
        let mut tape = Tape::new();
        let bound = net.store().bind(&mut tape);
        let record = net.forward(&mut tape, &bound, &batch.inputs, GateSource::Arch)?;
        let loss_var = tape.cross_entropy(record.logits, &batch.labels)?;
        let grads = tape.backward(loss_var)?;
        let loss = tape.value(loss_var).item();
        Ok(Pass {
            tape,
            bound,
            record,
            grads,
            loss,
            batch_len: batch.len(),
            snapshot: net.store().fingerprint(),
        })
    }

    /// Gradient of the mean loss w.r.t. a node, zeros when the node does not reach the loss.
    fn node_grad(&self, cell: usize, node: usize) -> Tensor {
        let v = self.record.nodes[cell][node];
        self.grads
            .get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.tape.value(v).shape()))
    }

    /// Edge input `x` and per-sample output gradient `g` (rows), for edge index `ei`.
    pub fn edge_signals(&self, net: &SuperNet, cell: usize, ei: usize) -> (Tensor, Tensor) {
        let e = net.topology().edges()[ei];
        let x = self.tape.value(self.record.nodes[cell][e.from]).clone();
        let n = self.batch_len as f64;
        let g = self.node_grad(cell, e.to).map(|v| v * n);
        (x, g)
    }
}

/// `dL/dp` for every op of edge `ei` in every cell, `[cell][op]`, from the
/// inner product of the target-node gradient with each ungated op output.
pub fn grad_p_from_pass(pass: &Pass, net: &SuperNet, ei: usize) -> Vec<Vec<f64>> {
    let e = net.topology().edges()[ei];
    (0..net.space().num_cells)
        .map(|c| {
            let g = pass.node_grad(c, e.to);
            pass.record.op_outputs[c][ei]
                .iter()
                .map(|o| match o {
                    None => 0.0,
                    Some(v) => g.dot(pass.tape.value(*v)),
                })
                .collect()
        })
        .collect()
}

/// Per-cell, per-op `dL/dp` on `batch` for one edge.
pub fn grad_wrt_p(net: &SuperNet, edge: Edge, batch: &Batch) -> Result<Vec<Vec<f64>>> {
    let ei = net
        .topology()
        .edge_index(edge)
        .ok_or_else(|| Error::UnknownEdge(edge.key()))?;
    let pass = Pass::new(net, batch)?;
    Ok(grad_p_from_pass(&pass, net, ei))
}

fn row_norm_products(x: &Tensor, g: &Tensor) -> Vec<f64> {
    (0..x.rows())
        .map(|i| {
            let nx: f64 = x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            let ng: f64 = g.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            nx * ng
        })
        .collect()
}

fn outer_sum(x: &Tensor, g: &Tensor) -> Vec<f64> {
    matmul_tn(x.data(), g.data(), x.rows(), x.cols(), g.cols())
}

/// `raw = (1/NM) Σ_j Σ_k <g_j^a, g_k^b> <x_k^b, x_j^a>` and its normalization
/// by the mean per-sample `|g||x|` of each batch. Returns `(raw, unclamped)`.
pub fn cross_correlation(xa: &Tensor, ga: &Tensor, xb: &Tensor, gb: &Tensor) -> (f64, f64) {
    let (n, m) = (xa.rows() as f64, xb.rows() as f64);
    // Σ_j Σ_k <g_j, g_k><x_j, x_k> = <Σ_j x_j^T g_j, Σ_k x_k^T g_k>_F
    let a = outer_sum(xa, ga);
    let b = outer_sum(xb, gb);
    let raw = a.iter().zip(&b).map(|(p, q)| p * q).sum::<f64>() / (n * m);
    let ma = row_norm_products(xa, ga).iter().sum::<f64>() / n;
    let mb = row_norm_products(xb, gb).iter().sum::<f64>() / m;
    let denom = ma * mb;
    let normalized = if denom > 0.0 { raw / denom } else { 0.0 };
    (raw, normalized)
}

fn finish(mut rec: CorrRecord, unclamped: f64) -> CorrRecord {
    rec.normalized = unclamped.clamp(-1.0, 1.0);
    if unclamped.abs() > 1.0 + 1e-6 {
        rec.warning = Some(format!("normalized correlation {unclamped} clamped"));
    }
    rec
}

/// Cross-batch correlation for edge `ei` of `cell`; both passes must share a snapshot.
pub fn grad_correlation(
    net: &SuperNet,
    pass_a: &Pass,
    pass_b: &Pass,
    cell: usize,
    ei: usize,
    step: usize,
) -> Result<CorrRecord> {
    if pass_a.snapshot != pass_b.snapshot || pass_a.snapshot != net.store().fingerprint() {
        return Err(Error::SnapshotMismatch);
    }
    let (xa, ga) = pass_a.edge_signals(net, cell, ei);
    let (xb, gb) = pass_b.edge_signals(net, cell, ei);
    let (raw, unclamped) = cross_correlation(&xa, &ga, &xb, &gb);
    let e = net.topology().edges()[ei];
    Ok(finish(
        CorrRecord {
            step,
            cell,
            node: e.to,
            edge: e.name(),
            raw,
            normalized: 0.0,
            kind: CorrKind::CrossBatch,
            warning: None,
        },
        unclamped,
    ))
}

/// Diagonal same-batch term `(1/N^2) Σ_j |g_j|^2 |x_j|^2`, normalized pairwise.
pub fn self_correlation_raw(x: &Tensor, g: &Tensor) -> (f64, f64) {
    let n = x.rows() as f64;
    let prods = row_norm_products(x, g);
    let raw = prods.iter().map(|p| p * p).sum::<f64>() / (n * n);
    // each diagonal pair <g_j,g_j><x_j,x_j> divided by its own |g_j||x_j| |g_j||x_j|
    (raw, if raw > 0.0 { 1.0 } else { 0.0 })
}

pub fn self_correlation(net: &SuperNet, pass: &Pass, cell: usize, ei: usize, step: usize) -> CorrRecord {
    let (x, g) = pass.edge_signals(net, cell, ei);
    let (raw, normalized) = self_correlation_raw(&x, &g);
    let e = net.topology().edges()[ei];
    CorrRecord {
        step,
        cell,
        node: e.to,
        edge: e.name(),
        raw,
        normalized,
        kind: CorrKind::SelfDiagonal,
        warning: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_teacher_dataset, TeacherSpec};
    use crate::rng::{gaussian_vec, rng_for};
    use crate::supernet::{GateMode, OpKind, SpaceConfig};
    use proptest::prelude::*;

    fn setup(seed: u64, mode: GateMode) -> (SuperNet, Batch, Batch) {
        let spec = TeacherSpec {
            n_samples: 256,
            batch_size: 16,
            ..TeacherSpec::default()
        };
        let td = gen_teacher_dataset(&spec, seed).unwrap();
        let mut net = SuperNet::new(SpaceConfig::micro(), mode, seed).unwrap();
        // move gates off their symmetric start
        let mut r = rng_for(seed, "alpha-jitter");
        for e in 0..net.topology().num_edges() {
            let a = gaussian_vec(&mut r, net.space().ops.len(), 1.0);
            net.set_alpha(e, &a).unwrap();
        }
        let a = td.split.data.batch(&td.split.train_idx[..16]);
        let b = td.split.data.batch(&td.split.valid_idx[..12]);
        (net, a, b)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn grad_p_matches_autodiff_gate_gradient(seed in 0u64..500, sig in any::<bool>()) {
            let mode = if sig { GateMode::Sigmoid } else { GateMode::Softmax };
            let (net, a, _) = setup(seed, mode);
            let pass = Pass::new(&net, &a).unwrap();
            for ei in 0..net.topology().num_edges() {
                let gp = grad_p_from_pass(&pass, &net, ei);
                for (c, per_op) in gp.iter().enumerate() {
                    for (k, &v) in per_op.iter().enumerate() {
                        let auto = pass.grads.scalar(pass.record.gates[c][ei][k]);
                        prop_assert!((v - auto).abs() <= 1e-10 * (1.0 + auto.abs()), "{v} vs {auto}");
                    }
                }
            }
        }
    }

    #[test]
    fn zero_op_has_zero_grad_p() {
        let (net, a, _) = setup(1, GateMode::Softmax);
        let z = net.space().op_index(OpKind::Zero).unwrap();
        for e in net.topology().edges().to_vec() {
            for per_op in grad_wrt_p(&net, e, &a).unwrap() {
                assert_eq!(per_op[z], 0.0);
            }
        }
        assert!(matches!(
            grad_wrt_p(&net, Edge::new(0, 7), &a),
            Err(Error::UnknownEdge(_))
        ));
    }

    #[test]
    fn identical_single_samples_correlate_perfectly() {
        let x = Tensor::matrix(1, 3, vec![1.0, 2.0, -1.0]).unwrap();
        let g = Tensor::matrix(1, 3, vec![0.5, 0.0, 2.0]).unwrap();
        let (raw, norm) = cross_correlation(&x, &g, &x, &g);
        let want = (1.0 + 4.0 + 1.0) * (0.25 + 4.0);
        assert!((raw - want).abs() < 1e-12);
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_gradients_give_zero_raw() {
        let x = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.3, 0.7]).unwrap();
        let ga = Tensor::matrix(2, 2, vec![1.0, 0.0, 2.0, 0.0]).unwrap();
        let gb = Tensor::matrix(2, 2, vec![0.0, 1.0, 0.0, -3.0]).unwrap();
        let (raw, _) = cross_correlation(&x, &ga, &x, &gb);
        assert_eq!(raw, 0.0);
    }

    #[test]
    fn cross_correlation_matches_double_sum() {
        let mut r = rng_for(3, "t");
        let xa = Tensor::matrix(5, 4, gaussian_vec(&mut r, 20, 1.0)).unwrap();
        let ga = Tensor::matrix(5, 4, gaussian_vec(&mut r, 20, 1.0)).unwrap();
        let xb = Tensor::matrix(3, 4, gaussian_vec(&mut r, 12, 1.0)).unwrap();
        let gb = Tensor::matrix(3, 4, gaussian_vec(&mut r, 12, 1.0)).unwrap();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let mut want = 0.0;
        for j in 0..5 {
            for k in 0..3 {
                want += dot(ga.row(j), gb.row(k)) * dot(xb.row(k), xa.row(j));
            }
        }
        want /= 15.0;
        let (raw, norm) = cross_correlation(&xa, &ga, &xb, &gb);
        assert!((raw - want).abs() < 1e-12);
        assert!(norm.abs() <= 1.0);
    }

    #[test]
    fn self_correlation_is_nonnegative_and_zero_when_fit() {
        let (net, a, _) = setup(2, GateMode::Sigmoid);
        let pass = Pass::new(&net, &a).unwrap();
        for c in 0..3 {
            for ei in 0..3 {
                let r = self_correlation(&net, &pass, c, ei, 0);
                assert!(r.raw > 0.0);
                assert_eq!(r.normalized, 1.0);
            }
        }
        let x = Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap();
        let g = Tensor::zeros(&[1, 2]);
        assert_eq!(self_correlation_raw(&x, &g), (0.0, 0.0));
    }

    #[test]
    fn correlation_requires_shared_snapshot_and_is_pure() {
        let (mut net, a, b) = setup(4, GateMode::Softmax);
        let before = net.clone();
        let pa = Pass::new(&net, &a).unwrap();
        let pb = Pass::new(&net, &b).unwrap();
        let rec = grad_correlation(&net, &pa, &pb, 0, 0, 0).unwrap();
        assert!(rec.normalized.abs() <= 1.0);
        assert!(net.store().same_bits(before.store()));
        net.set_alpha(0, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        let pc = Pass::new(&net, &b).unwrap();
        assert!(matches!(
            grad_correlation(&net, &pa, &pc, 0, 0, 0),
            Err(Error::SnapshotMismatch)
        ));
    }
}
