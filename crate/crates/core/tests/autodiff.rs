mod common;

use std::collections::BTreeSet;

use common::{supernet_fd_worst, RandomGraph, ALL_PRIMITIVES};
use darts_lab::autodiff::{finite_diff_check, Tape, Tensor, FD_STEP};
use darts_lab::data::{gen_teacher_dataset, TeacherSpec};
use darts_lab::supernet::{GateMode, OpKind, SpaceConfig, SuperNet};

#[test]
fn random_graphs_match_finite_differences() {
    let mut used = BTreeSet::new();
    for seed in 0..60 {
        let g = RandomGraph::new(seed);
        let r = finite_diff_check(|t, v| g.build(t, v), &g.params, FD_STEP, 1e-5).unwrap();
        assert!(r.pass, "graph {seed}: {:?} {:?}", g.chain, r.max_rel_error);
        used.extend(g.used.borrow().iter().copied());
    }
    for p in ALL_PRIMITIVES {
        assert!(used.contains(p), "{p} never exercised");
    }
}

#[test]
fn gradients_accumulate_over_fan_out() {
    // loss = sum(x + x + x) has gradient 3 everywhere
    let mut t = Tape::new();
    let x = t.param(Tensor::vector(vec![0.3, -1.2]));
    let y = t.add_n(&[x, x, x]).unwrap();
    let u = t.constant(Tensor::vector(vec![1.0, 1.0]));
    let c = t.concat(&[y, u]).unwrap();
    let a = t.select(c, 0).unwrap();
    let b = t.select(c, 1).unwrap();
    let loss = t.add(a, b).unwrap();
    let g = t.backward(loss).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[3.0, 3.0]);
    assert!(g.get(u).is_none() || g.get(u).unwrap().data() == [0.0, 0.0]);
}

#[test]
fn backward_is_bitwise_deterministic() {
    let g = RandomGraph::new(7);
    let run = || {
        let mut t = Tape::new();
        let vars: Vec<_> = g.params.iter().map(|p| t.param(p.clone())).collect();
        let loss = g.build(&mut t, &vars).unwrap();
        let grads = t.backward(loss).unwrap();
        vars.iter().map(|v| grads.get(*v).cloned()).collect::<Vec<_>>()
    };
    let (a, b) = (run(), run());
    for (x, y) in a.iter().zip(&b) {
        match (x, y) {
            (Some(x), Some(y)) => assert!(x.same_bits(y)),
            (None, None) => {}
            _ => panic!("gradient presence differs"),
        }
    }
}

fn small_space(ops: Vec<OpKind>) -> SpaceConfig {
    SpaceConfig {
        ops,
        width: 4,
        d_in: 4,
        num_cells: 2,
        ..SpaceConfig::micro()
    }
}

fn batch_for(space: &SpaceConfig) -> darts_lab::data::Batch {
    let spec = TeacherSpec {
        space: space.clone(),
        n_samples: 64,
        batch_size: 8,
        ..TeacherSpec::default()
    };
    let td = gen_teacher_dataset(&spec, 3).unwrap();
    td.split.data.batch(&td.split.train_idx[..6])
}

#[test]
fn micro_supernet_gradients_match_finite_differences() {
    for mode in [GateMode::Softmax, GateMode::Sigmoid] {
        let space = small_space(SpaceConfig::micro().ops);
        let net = SuperNet::new(space.clone(), mode, 5).unwrap();
        let worst = supernet_fd_worst(&net, &batch_for(&space));
        assert!(worst < 1e-5, "{mode:?}: {worst}");
    }
}

#[test]
fn full_op_set_supernet_gradients_match_finite_differences() {
    let space = SpaceConfig {
        num_nodes: 4,
        ..small_space(OpKind::ALL.to_vec())
    };
    let net = SuperNet::new(space.clone(), GateMode::Softmax, 9).unwrap();
    let batch = batch_for(&small_space(SpaceConfig::micro().ops));
    let worst = supernet_fd_worst(&net, &batch);
    assert!(worst < 1e-5, "{worst}");
}
