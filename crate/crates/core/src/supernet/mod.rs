//! Cell-based micro search space: mixed-operation edges, gate activations and
//! discrete genotype derivation.
//!
//! A network is `stem -> cell x num_cells -> head`. Inside a cell node 0 is
//! the cell input and node `j` is the sum over `i < j` of the edge output
//! `f_{i,j}(x_i)`; the last node is the cell output. In the supernet every
//! edge is a gated mixture of all candidate ops. Gates are shared across
//! cells, op weights are owned per cell.

mod discrete;
mod genotype;
mod ops;

pub use discrete::{discrete_forward, DiscreteNet};
pub use genotype::{CellTopology, Edge, Genotype};
pub use ops::{smoothing_matrix, OpKind, OpWeights};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Param, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{gaussian_vec, rng_for, Rng};

pub(crate) use ops::apply_op;

/// Activation that turns `alpha` into gate values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateMode {
    Softmax,
    Sigmoid,
}

/// Shape of the search space and of the networks built in it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    pub num_nodes: usize,
    pub ops: Vec<OpKind>,
    pub num_cells: usize,
    pub width: usize,
    pub d_in: usize,
    pub n_classes: usize,
}

impl Default for SpaceConfig {
    fn default() -> Self {
        SpaceConfig {
            num_nodes: 4,
            ops: OpKind::ALL.to_vec(),
            num_cells: 3,
            width: 16,
            d_in: 16,
            n_classes: 4,
        }
    }
}

impl SpaceConfig {
    /// 3 nodes, 3 edges, 4 ops: the space the tabular oracle enumerates.
    pub fn micro() -> Self {
        SpaceConfig {
            num_nodes: 3,
            ops: vec![OpKind::Zero, OpKind::Skip, OpKind::Lin, OpKind::NonLin],
            ..SpaceConfig::default()
        }
    }

    pub fn topology(&self) -> Result<CellTopology> {
        CellTopology::new(self.num_nodes)
    }

    pub fn validate(&self) -> Result<()> {
        self.topology()?;
        if self.ops.len() < 2 {
            return Err(Error::config("ops", "need at least 2 candidate ops"));
        }
        let mut seen = self.ops.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.ops.len() {
            return Err(Error::config("ops", "duplicate op"));
        }
        for (name, v) in [
            ("num_cells", self.num_cells),
            ("width", self.width),
            ("d_in", self.d_in),
            ("n_classes", self.n_classes),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if self.ops.contains(&OpKind::Smooth) && self.width < 3 {
            return Err(Error::config("width", "smooth op needs width >= 3"));
        }
        Ok(())
    }

    pub fn op_index(&self, op: OpKind) -> Option<usize> {
        self.ops.iter().position(|&o| o == op)
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Architecture parameters of one edge together with their activation.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeGates {
    pub alpha: Vec<f64>,
    pub gate_mode: GateMode,
}

impl EdgeGates {
    pub fn gates(&self) -> Vec<f64> {
        gate_values(&self.alpha, self.gate_mode)
    }
}

pub fn gate_values(alpha: &[f64], mode: GateMode) -> Vec<f64> {
    match mode {
        GateMode::Softmax => {
            let max = alpha.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = alpha.iter().map(|a| (a - max).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        }
        GateMode::Sigmoid => alpha.iter().map(|&a| sigmoid(a)).collect(),
    }
}

/// Softmax: i.i.d. Gaussian with std 1e-3. Sigmoid: every entry `-ln(n_ops - 1)`,
/// so each gate starts at `1 / n_ops`.
pub fn init_alphas(mode: GateMode, n_ops: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    if n_ops < 2 {
        return Err(Error::config("n_ops", "need at least 2 ops"));
    }
    Ok(match mode {
        GateMode::Softmax => gaussian_vec(rng, n_ops, 1e-3),
        GateMode::Sigmoid => vec![-((n_ops - 1) as f64).ln(); n_ops],
    })
}

/// Where gate values come from in a forward pass.
#[derive(Debug, Clone, Copy)]
pub enum GateSource<'a> {
    /// Activated architecture parameters (differentiable).
    Arch,
    /// Constant one-hot gates selecting the genotype's op on each edge.
    OneHot(&'a Genotype),
    /// Constant gate values, `[edge][op]`.
    Fixed(&'a [Vec<f64>]),
}

/// Tape handles recorded by [`SuperNet::forward`].
#[derive(Debug, Clone)]
pub struct ForwardRecord {
    pub logits: Var,
    /// `[cell][node]`
    pub nodes: Vec<Vec<Var>>,
    /// Per-cell gate scalars `[cell][edge][op]`; their gradients are the per-cell `dL/dp`.
    pub gates: Vec<Vec<Vec<Var>>>,
    /// Ungated op outputs `[cell][edge][op]`, `None` for `Zero`.
    pub op_outputs: Vec<Vec<Vec<Option<Var>>>>,
}

/// Gated sum `Σ_k p_k o_k(x)` over the ops of one edge.
///
/// Returns the edge output and the ungated op outputs. An edge whose ops all
/// vanish yields a zero constant of the input's shape.
#[allow(clippy::too_many_arguments)]
pub fn mixed_edge_forward(
    tape: &mut Tape,
    bound: &Bound,
    smooth: Var,
    x: Var,
    ops: &[OpKind],
    weights: &[OpWeights],
    gates: &[Var],
) -> Result<(Var, Vec<Option<Var>>)> {
    if ops.len() != weights.len() || ops.len() != gates.len() {
        return Err(Error::shape(
            "mixed_edge",
            format!("{} ops, {} weights, {} gates", ops.len(), weights.len(), gates.len()),
        ));
    }
    let width = tape.value(smooth).rows();
    if tape.value(x).cols() != width {
        return Err(Error::shape(
            "mixed_edge",
            format!("input {:?} vs width {width}", tape.value(x).shape()),
        ));
    }
    let mut outs = Vec::with_capacity(ops.len());
    let mut terms = Vec::new();
    for ((&op, &w), &g) in ops.iter().zip(weights).zip(gates) {
        let y = apply_op(tape, op, w, bound, smooth, x)?;
        if let Some(y) = y {
            terms.push(tape.scale(g, y)?);
        }
        outs.push(y);
    }
    let out = if terms.is_empty() {
        let shape = tape.value(x).shape().to_vec();
        tape.constant(Tensor::zeros(&shape))
    } else {
        tape.add_n(&terms)?
    };
    Ok((out, outs))
}

/// Supernet over a [`SpaceConfig`] with shared gates.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperNet {
    space: SpaceConfig,
    topology: CellTopology,
    gate_mode: GateMode,
    store: ParamStore,
    alphas: Vec<ParamId>,
    stem: ParamId,
    head: ParamId,
    /// `[cell][edge][op]`
    cells: Vec<Vec<Vec<OpWeights>>>,
    smooth: Tensor,
}

impl SuperNet {
    pub fn new(space: SpaceConfig, gate_mode: GateMode, seed: u64) -> Result<Self> {
        space.validate()?;
        let topology = space.topology()?;
        let mut store = ParamStore::new();
        let mut arch_rng = rng_for(seed, "alpha");
        let mut w_rng = rng_for(seed, "weights");

        let mut alphas = Vec::new();
        for e in topology.edges() {
            let a = init_alphas(gate_mode, space.ops.len(), &mut arch_rng)?;
            alphas.push(store.push(Param::new(
                Tensor::vector(a),
                format!("alpha.{}", e.name()),
            )));
        }
        let (stem, head, cells) = init_body(&space, &topology, &mut store, &mut w_rng, |_, _| true)?;
        let smooth = smoothing_matrix(space.width);
        Ok(SuperNet {
            space,
            topology,
            gate_mode,
            store,
            alphas,
            stem,
            head,
            cells,
            smooth,
        })
    }

    pub fn space(&self) -> &SpaceConfig {
        &self.space
    }

    pub fn topology(&self) -> &CellTopology {
        &self.topology
    }

    pub fn gate_mode(&self) -> GateMode {
        self.gate_mode
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn arch_ids(&self) -> &[ParamId] {
        &self.alphas
    }

    /// All non-architecture parameters (stem, op weights, head).
    pub fn weight_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.stem];
        for cell in &self.cells {
            for edge in cell {
                for w in edge {
                    ids.extend(w.ids());
                }
            }
        }
        ids.push(self.head);
        ids
    }

    pub fn stem_id(&self) -> ParamId {
        self.stem
    }

    pub fn head_id(&self) -> ParamId {
        self.head
    }

    pub fn op_weights(&self, cell: usize, edge: usize, op: usize) -> OpWeights {
        self.cells[cell][edge][op]
    }

    pub fn alpha(&self, edge: usize) -> &[f64] {
        self.store.get(self.alphas[edge]).tensor.data()
    }

    pub fn set_alpha(&mut self, edge: usize, values: &[f64]) -> Result<()> {
        let p = self.store.get_mut(self.alphas[edge]);
        if p.tensor.len() != values.len() {
            return Err(Error::shape(
                "set_alpha",
                format!("{} values for {} ops", values.len(), p.tensor.len()),
            ));
        }
        p.tensor.data_mut().copy_from_slice(values);
        Ok(())
    }

    pub fn edge_gates(&self, edge: usize) -> EdgeGates {
        EdgeGates {
            alpha: self.alpha(edge).to_vec(),
            gate_mode: self.gate_mode,
        }
    }

    /// Activated gates for every edge, `[edge][op]`.
    pub fn gates(&self) -> Vec<Vec<f64>> {
        (0..self.topology.num_edges())
            .map(|e| self.edge_gates(e).gates())
            .collect()
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        inputs: &Tensor,
        source: GateSource<'_>,
    ) -> Result<ForwardRecord> {
        if inputs.shape().len() != 2 || inputs.cols() != self.space.d_in {
            return Err(Error::shape(
                "supernet_forward",
                format!("inputs {:?} vs d_in {}", inputs.shape(), self.space.d_in),
            ));
        }
        let n_ops = self.space.ops.len();
        let gate_vecs: Vec<Var> = match source {
            GateSource::Arch => {
                let mut v = Vec::new();
                for &a in &self.alphas {
                    let av = bound.var(a);
                    v.push(match self.gate_mode {
                        GateMode::Softmax => tape.softmax(av)?,
                        GateMode::Sigmoid => tape.sigmoid(av)?,
                    });
                }
                v
            }
            GateSource::OneHot(g) => {
                if !g.matches_topology(&self.topology) {
                    return Err(Error::shape("supernet_forward", "genotype does not match topology"));
                }
                let mut v = Vec::new();
                for op in g.ops() {
                    let k = self.space.op_index(op).ok_or_else(|| {
                        Error::shape("supernet_forward", format!("op {op} not in space"))
                    })?;
                    let mut oh = vec![0.0; n_ops];
                    oh[k] = 1.0;
                    v.push(tape.constant(Tensor::vector(oh)));
                }
                v
            }
            GateSource::Fixed(vals) => {
                if vals.len() != self.topology.num_edges() || vals.iter().any(|g| g.len() != n_ops) {
                    return Err(Error::shape("supernet_forward", "fixed gates have wrong shape"));
                }
                vals.iter()
                    .map(|g| tape.constant(Tensor::vector(g.clone())))
                    .collect()
            }
        };

        let smooth = tape.constant(self.smooth.clone());
        let x = tape.constant(inputs.clone());
        let mut cur = tape.matmul(x, bound.var(self.stem))?;

        let mut rec_nodes = Vec::with_capacity(self.space.num_cells);
        let mut rec_gates = Vec::with_capacity(self.space.num_cells);
        let mut rec_outs = Vec::with_capacity(self.space.num_cells);
        for cell in &self.cells {
            let mut nodes = vec![cur];
            let mut cell_gates = Vec::with_capacity(self.topology.num_edges());
            let mut cell_outs = Vec::with_capacity(self.topology.num_edges());
            let mut edge_out = Vec::with_capacity(self.topology.num_edges());
            for (ei, e) in self.topology.edges().iter().enumerate() {
                // edges are sorted by target, so `nodes[e.from]` is complete here
                let gates: Vec<Var> = (0..n_ops)
                    .map(|k| tape.select(gate_vecs[ei], k))
                    .collect::<Result<_>>()?;
                let (y, outs) = mixed_edge_forward(
                    tape,
                    bound,
                    smooth,
                    nodes[e.from],
                    &self.space.ops,
                    &cell[ei],
                    &gates,
                )?;
                cell_gates.push(gates);
                cell_outs.push(outs);
                edge_out.push(y);
                let last_into_target = self
                    .topology
                    .edges()
                    .get(ei + 1)
                    .is_none_or(|next| next.to != e.to);
                if last_into_target {
                    let ins: Vec<Var> = self
                        .topology
                        .incoming(e.to)
                        .map(|(i, _)| edge_out[i])
                        .collect();
                    nodes.push(tape.add_n(&ins)?);
                }
            }
            cur = *nodes.last().expect("cell has nodes");
            rec_nodes.push(nodes);
            rec_gates.push(cell_gates);
            rec_outs.push(cell_outs);
        }
        let logits = tape.matmul(cur, bound.var(self.head))?;
        Ok(ForwardRecord {
            logits,
            nodes: rec_nodes,
            gates: rec_gates,
            op_outputs: rec_outs,
        })
    }

    /// Argmax gate per edge, ties to the lowest op index.
    pub fn derive_genotype(&self) -> Genotype {
        let ops: Vec<OpKind> = self
            .gates()
            .iter()
            .map(|g| self.space.ops[argmax_first(g)])
            .collect();
        Genotype::from_ops(&self.topology, &ops).expect("one op per edge")
    }
}

pub(crate) fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

type Body = (ParamId, ParamId, Vec<Vec<Vec<OpWeights>>>);

/// Stem, per-cell op weights and head. `keep(edge, op)` selects which ops get weights.
pub(crate) fn init_body(
    space: &SpaceConfig,
    topology: &CellTopology,
    store: &mut ParamStore,
    rng: &mut Rng,
    keep: impl Fn(usize, OpKind) -> bool,
) -> Result<Body> {
    let d = space.width;
    let stem = store.push(Param::new(
        Tensor::matrix(
            space.d_in,
            d,
            gaussian_vec(rng, space.d_in * d, (1.0 / space.d_in as f64).sqrt()),
        )?,
        "stem",
    ));
    let mut cells = Vec::with_capacity(space.num_cells);
    for c in 0..space.num_cells {
        let mut edges = Vec::with_capacity(topology.num_edges());
        for (ei, e) in topology.edges().iter().enumerate() {
            let mut ws = Vec::with_capacity(space.ops.len());
            for &op in &space.ops {
                let w = if keep(ei, op) {
                    OpWeights::init(op, d, store, rng, &format!("cell{c}.{}.{op}", e.name()))
                } else {
                    OpWeights::None
                };
                ws.push(w);
            }
            edges.push(ws);
        }
        cells.push(edges);
    }
    let head = store.push(Param::new(
        Tensor::matrix(
            d,
            space.n_classes,
            gaussian_vec(rng, d * space.n_classes, (1.0 / d as f64).sqrt()),
        )?,
        "head",
    ));
    Ok((stem, head, cells))
}
