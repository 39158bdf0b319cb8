#![allow(dead_code)]

use std::cell::RefCell;
use std::collections::BTreeSet;

use darts_lab::autodiff::{Tape, Tensor, Var};
use darts_lab::rng::{gaussian_vec, rng_for};
use darts_lab::Result;
use rand::Rng;

#[derive(Debug, Clone, Copy)]
pub enum Unary {
    Tanh,
    Relu,
    Sigmoid,
    Scale,
    ScaleConst(f64),
    Residual,
    MatMulC,
}

#[derive(Debug, Clone)]
pub enum Head {
    CrossEntropy(Vec<usize>),
    SquaredError(Tensor),
    Reduced {
        softmax: bool,
        matvec: bool,
        concat: bool,
        end: ReducedEnd,
    },
}

#[derive(Debug, Clone)]
pub enum ReducedEnd {
    Select(usize),
    SquaredError(Vec<f64>),
}

/// Random composition of tape primitives ending in a scalar loss.
///
/// Leaves: `A [n,k]`, `B [k,m]`, `C [m,m]`, `s` scalar, `M [m,m]`, `u [m]`.
#[derive(Debug, Clone)]
pub struct RandomGraph {
    pub params: Vec<Tensor>,
    pub chain: Vec<Unary>,
    pub head: Head,
    pub used: RefCell<BTreeSet<&'static str>>,
}

fn mat(rng: &mut darts_lab::rng::Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, gaussian_vec(rng, r * c, 0.6)).unwrap()
}

impl RandomGraph {
    pub fn new(seed: u64) -> Self {
        let mut rng = rng_for(seed, "graph");
        let n = rng.random_range(2..=4);
        let k = rng.random_range(2..=4);
        let m = rng.random_range(2..=4);
        let params = vec![
            mat(&mut rng, n, k),
            mat(&mut rng, k, m),
            mat(&mut rng, m, m),
            Tensor::scalar(rng.random_range(0.5..1.5)),
            mat(&mut rng, m, m),
            Tensor::vector(gaussian_vec(&mut rng, m, 0.6)),
        ];
        let len = rng.random_range(2..=5);
        let chain = (0..len)
            .map(|_| match rng.random_range(0..7) {
                0 => Unary::Tanh,
                1 => Unary::Relu,
                2 => Unary::Sigmoid,
                3 => Unary::Scale,
                4 => Unary::ScaleConst(rng.random_range(-2.0..2.0)),
                5 => Unary::Residual,
                _ => Unary::MatMulC,
            })
            .collect();
        let head = match rng.random_range(0..3) {
            0 => Head::CrossEntropy((0..n).map(|_| rng.random_range(0..m)).collect()),
            1 => Head::SquaredError(mat(&mut rng, n, m)),
            _ => {
                let concat = rng.random_bool(0.5);
                let out_len = if concat { 2 * m } else { m };
                let end = if rng.random_bool(0.5) {
                    ReducedEnd::Select(rng.random_range(0..out_len))
                } else {
                    ReducedEnd::SquaredError(gaussian_vec(&mut rng, out_len, 0.5))
                };
                Head::Reduced {
                    softmax: rng.random_bool(0.5),
                    matvec: rng.random_bool(0.5),
                    concat,
                    end,
                }
            }
        };
        RandomGraph {
            params,
            chain,
            head,
            used: RefCell::new(BTreeSet::new()),
        }
    }

    fn mark(&self, name: &'static str) {
        self.used.borrow_mut().insert(name);
    }

    pub fn build(&self, t: &mut Tape, v: &[Var]) -> Result<Var> {
        let (a, b, c, s, mm, u) = (v[0], v[1], v[2], v[3], v[4], v[5]);
        self.mark("matmul");
        let mut h = t.matmul(a, b)?;
        for op in &self.chain {
            h = match *op {
                Unary::Tanh => {
                    self.mark("tanh");
                    t.tanh(h)?
                }
                Unary::Relu => {
                    self.mark("relu");
                    t.relu(h)?
                }
                Unary::Sigmoid => {
                    self.mark("sigmoid");
                    t.sigmoid(h)?
                }
                Unary::Scale => {
                    self.mark("scale");
                    t.scale(s, h)?
                }
                Unary::ScaleConst(k) => {
                    self.mark("scale_const");
                    t.scale_const(h, k)?
                }
                Unary::Residual => {
                    self.mark("add");
                    let hc = t.matmul(h, c)?;
                    t.add(h, hc)?
                }
                Unary::MatMulC => t.matmul(h, c)?,
            };
        }
        match &self.head {
            Head::CrossEntropy(labels) => {
                self.mark("cross_entropy");
                t.cross_entropy(h, labels)
            }
            Head::SquaredError(target) => {
                self.mark("squared_error");
                t.squared_error(h, target.clone())
            }
            Head::Reduced {
                softmax,
                matvec,
                concat,
                end,
            } => {
                self.mark("mean_rows");
                let mut r = t.mean_rows(h)?;
                if *matvec {
                    self.mark("matvec");
                    r = t.matvec(mm, r)?;
                }
                if *softmax {
                    self.mark("softmax");
                    r = t.softmax(r)?;
                }
                if *concat {
                    self.mark("concat");
                    r = t.concat(&[r, u])?;
                }
                match end {
                    ReducedEnd::Select(k) => {
                        self.mark("select");
                        t.select(r, *k)
                    }
                    ReducedEnd::SquaredError(target) => {
                        self.mark("squared_error");
                        t.squared_error(r, Tensor::vector(target.clone()))
                    }
                }
            }
        }
    }
}

pub const ALL_PRIMITIVES: [&str; 14] = [
    "matmul",
    "matvec",
    "add",
    "scale",
    "scale_const",
    "tanh",
    "relu",
    "sigmoid",
    "softmax",
    "mean_rows",
    "squared_error",
    "cross_entropy",
    "concat",
    "select",
];

use darts_lab::autodiff::{relative_error, FD_STEP};
use darts_lab::data::Batch;
use darts_lab::diagnostics::Pass;
use darts_lab::supernet::SuperNet;

/// Worst relative error between tape and central-difference gradients over
/// every scalar of every supernet parameter.
pub fn supernet_fd_worst(net: &SuperNet, batch: &Batch) -> f64 {
    let pass = Pass::new(net, batch).unwrap();
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for (id, p) in net.store().iter() {
        let analytic = pass
            .grads
            .get(pass.bound.var(id))
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(p.tensor.shape()));
        for k in 0..p.tensor.len() {
            let orig = p.tensor.data()[k];
            probe.store_mut().get_mut(id).tensor.data_mut()[k] = orig + FD_STEP;
            let up = Pass::new(&probe, batch).unwrap().loss;
            probe.store_mut().get_mut(id).tensor.data_mut()[k] = orig - FD_STEP;
            let down = Pass::new(&probe, batch).unwrap().loss;
            probe.store_mut().get_mut(id).tensor.data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic.data()[k], numeric));
        }
    }
    worst
}
