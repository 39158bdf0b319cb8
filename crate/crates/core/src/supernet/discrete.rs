use super::genotype::{CellTopology, Genotype};
use super::ops::{smoothing_matrix, OpKind, OpWeights};
use super::{apply_op, init_body, SpaceConfig, SuperNet};
use crate::autodiff::{Bound, Param, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// A network with exactly one op per edge, gate weight 1.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteNet {
    space: SpaceConfig,
    topology: CellTopology,
    genotype: Genotype,
    store: ParamStore,
    stem: ParamId,
    head: ParamId,
    /// `[cell][edge]`
    cells: Vec<Vec<OpWeights>>,
    smooth: Tensor,
}

impl DiscreteNet {
    /// Fresh weights for `genotype` drawn from `rng`.
    pub fn new(space: SpaceConfig, genotype: Genotype, rng: &mut Rng) -> Result<Self> {
        space.validate()?;
        let topology = space.topology()?;
        check_genotype(&space, &topology, &genotype)?;
        let ops = genotype.ops();
        let mut store = ParamStore::new();
        let (stem, head, full) = init_body(&space, &topology, &mut store, rng, |ei, op| ops[ei] == op)?;
        let cells = pick_chosen(&space, &ops, &full);
        let smooth = smoothing_matrix(space.width);
        Ok(DiscreteNet {
            space,
            topology,
            genotype,
            store,
            stem,
            head,
            cells,
            smooth,
        })
    }

    /// Copy the stem, head and chosen op weights out of a supernet.
    pub fn from_supernet(net: &SuperNet, genotype: &Genotype) -> Result<Self> {
        let space = net.space().clone();
        let topology = net.topology().clone();
        check_genotype(&space, &topology, genotype)?;
        let ops = genotype.ops();
        let mut store = ParamStore::new();
        let copy = |id: ParamId, store: &mut ParamStore| {
            let p = net.store().get(id);
            store.push(Param::new(p.tensor.clone(), p.tag.clone()))
        };
        let stem = copy(net.stem_id(), &mut store);
        let mut cells = Vec::new();
        for c in 0..space.num_cells {
            let mut edges = Vec::new();
            for (ei, &op) in ops.iter().enumerate() {
                let k = space.op_index(op).expect("checked");
                let w = match net.op_weights(c, ei, k) {
                    OpWeights::None => OpWeights::None,
                    OpWeights::Lin(a) => OpWeights::Lin(copy(a, &mut store)),
                    OpWeights::NonLin(a, b) => {
                        let a = copy(a, &mut store);
                        OpWeights::NonLin(a, copy(b, &mut store))
                    }
                };
                edges.push(w);
            }
            cells.push(edges);
        }
        let head = copy(net.head_id(), &mut store);
        let smooth = smoothing_matrix(space.width);
        Ok(DiscreteNet {
            space,
            topology,
            genotype: genotype.clone(),
            store,
            stem,
            head,
            cells,
            smooth,
        })
    }

    pub fn genotype(&self) -> &Genotype {
        &self.genotype
    }

    pub fn space(&self) -> &SpaceConfig {
        &self.space
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn stem_id(&self) -> ParamId {
        self.stem
    }

    pub fn head_id(&self) -> ParamId {
        self.head
    }

    pub fn op_weights(&self, cell: usize, edge: usize) -> OpWeights {
        self.cells[cell][edge]
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.store.iter().map(|(id, _)| id).collect()
    }

    /// Logits for `inputs [n, d_in]`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, inputs: &Tensor) -> Result<Var> {
        if inputs.shape().len() != 2 || inputs.cols() != self.space.d_in {
            return Err(Error::shape(
                "discrete_forward",
                format!("inputs {:?} vs d_in {}", inputs.shape(), self.space.d_in),
            ));
        }
        let ops = self.genotype.ops();
        let smooth = tape.constant(self.smooth.clone());
        let x = tape.constant(inputs.clone());
        let mut cur = tape.matmul(x, bound.var(self.stem))?;
        let zeros = |tape: &mut Tape, like: Var| {
            let shape = tape.value(like).shape().to_vec();
            tape.constant(Tensor::zeros(&shape))
        };
        for cell in &self.cells {
            let mut nodes = vec![cur];
            for j in 1..self.topology.num_nodes {
                let mut ins = Vec::new();
                for (ei, e) in self.topology.incoming(j) {
                    if let Some(y) = apply_op(tape, ops[ei], cell[ei], bound, smooth, nodes[e.from])? {
                        ins.push(y);
                    }
                }
                let node = if ins.is_empty() {
                    zeros(tape, cur)
                } else {
                    tape.add_n(&ins)?
                };
                nodes.push(node);
            }
            cur = *nodes.last().expect("cell has nodes");
        }
        tape.matmul(cur, bound.var(self.head))
    }
}

fn check_genotype(space: &SpaceConfig, topology: &CellTopology, g: &Genotype) -> Result<()> {
    if !g.matches_topology(topology) {
        return Err(Error::shape("genotype", "genotype does not match topology"));
    }
    if let Some(op) = g.ops().into_iter().find(|o| space.op_index(*o).is_none()) {
        return Err(Error::shape("genotype", format!("op {op} not in space")));
    }
    Ok(())
}

fn pick_chosen(space: &SpaceConfig, ops: &[OpKind], full: &[Vec<Vec<OpWeights>>]) -> Vec<Vec<OpWeights>> {
    full.iter()
        .map(|cell| {
            cell.iter()
                .zip(ops)
                .map(|(ws, &op)| ws[space.op_index(op).expect("checked")])
                .collect()
        })
        .collect()
}

/// Evaluate a discrete network on a batch without recording gradients for later use.
pub fn discrete_forward(genotype: &Genotype, weights: &DiscreteNet, inputs: &Tensor) -> Result<Tensor> {
    if genotype != weights.genotype() {
        return Err(Error::shape("discrete_forward", "weights built for another genotype"));
    }
    let mut tape = Tape::new();
    let bound = weights.store().bind(&mut tape);
    let logits = weights.forward(&mut tape, &bound, inputs)?;
    Ok(tape.value(logits).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian_vec, rng_for};
    use crate::supernet::{GateMode, GateSource};
    use proptest::prelude::*;

    fn inputs(n: usize, d: usize, seed: u64) -> Tensor {
        let mut r = rng_for(seed, "x");
        Tensor::matrix(n, d, gaussian_vec(&mut r, n * d, 1.0)).unwrap()
    }

    #[test]
    fn all_zero_genotype_gives_zero_logits() {
        let space = SpaceConfig::micro();
        let t = space.topology().unwrap();
        let g = Genotype::uniform(&t, OpKind::Zero);
        let net = DiscreteNet::new(space, g.clone(), &mut rng_for(1, "w")).unwrap();
        let out = discrete_forward(&g, &net, &inputs(5, 16, 0)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn all_skip_is_a_fixed_linear_map() {
        // micro: x1 = x0, x2 = x0 + x1 = 2 x0 per cell, 3 cells → 8 x0
        let space = SpaceConfig::micro();
        let t = space.topology().unwrap();
        let g = Genotype::uniform(&t, OpKind::Skip);
        let net = DiscreteNet::new(space, g.clone(), &mut rng_for(2, "w")).unwrap();
        let x = inputs(3, 16, 3);
        let out = discrete_forward(&g, &net, &x).unwrap();
        let stem = &net.store().get(net.stem_id()).tensor;
        let head = &net.store().get(net.head_id()).tensor;
        for i in 0..3 {
            let x0: Vec<f64> = (0..16)
                .map(|c| (0..16).map(|k| x.row(i)[k] * stem.data()[k * 16 + c]).sum())
                .collect();
            for c in 0..4 {
                let want: f64 = (0..16).map(|k| 8.0 * x0[k] * head.data()[k * 4 + c]).sum();
                assert!((want - out.row(i)[c]).abs() < 1e-12);
            }
        }
    }

    fn arb_ops(n_edges: usize, n_ops: usize) -> impl Strategy<Value = Vec<usize>> {
        proptest::collection::vec(0..n_ops, n_edges)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn one_hot_supernet_equals_discrete(ix in arb_ops(6, 5), seed in 0u64..1000) {
            let space = SpaceConfig::default();
            let t = space.topology().unwrap();
            let ops: Vec<OpKind> = ix.iter().map(|&i| space.ops[i]).collect();
            let g = Genotype::from_ops(&t, &ops).unwrap();
            let net = SuperNet::new(space, GateMode::Softmax, seed).unwrap();
            let x = inputs(6, 16, seed);
            let mut tape = Tape::new();
            let b = net.store().bind(&mut tape);
            let rec = net.forward(&mut tape, &b, &x, GateSource::OneHot(&g)).unwrap();
            let disc = DiscreteNet::from_supernet(&net, &g).unwrap();
            let out = discrete_forward(&g, &disc, &x).unwrap();
            for (a, b) in tape.value(rec.logits).data().iter().zip(out.data()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
