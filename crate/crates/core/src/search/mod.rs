//! Bi-level and single-level update regimes and the end-to-end search loop.

mod optim;

pub use optim::{cosine_lr, OptimizerKind, OptimizerState, ADAM_BETAS, ADAM_EPS, SGD_MOMENTUM};

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, Tensor};
use crate::data::{Batch, BatchMode, BatchPair, BatchSampler, SplitDataset};
use crate::diagnostics::{
    grad_correlation, grad_p_from_pass, self_correlation, GateRecord, PTraceRecord, Pass, SearchTrace,
    StepRecord, TraceHeader, TraceRecord, TRACE_SCHEMA, TRACE_VERSION,
};
use crate::error::{Error, Result};
use crate::supernet::{GateMode, Genotype, SpaceConfig, SuperNet};

/// Nonlearnable ratio above which the learning-rate advisory fires.
pub const ADVISORY_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Level {
    BiLevel,
    SingleLevel,
}

impl Level {
    pub fn name(self) -> &'static str {
        match self {
            Level::BiLevel => "bi-level",
            Level::SingleLevel => "single-level",
        }
    }
}

impl std::str::FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bi-level" | "bi" => Ok(Level::BiLevel),
            "single-level" | "single" => Ok(Level::SingleLevel),
            _ => Err(Error::Parse(format!("unknown level `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// Cosine decay to zero over the whole run.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub level: Level,
    pub batch_mode: BatchMode,
    pub gate_mode: GateMode,
    pub lr_w: f64,
    pub lr_alpha: f64,
    pub w_optimizer: OptimizerKind,
    pub alpha_optimizer: OptimizerKind,
    pub lr_schedule_w: Schedule,
    pub weight_decay_w: f64,
    /// Defaults to 0 for sigmoid gates and 1e-3 for softmax gates.
    pub weight_decay_alpha: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Second-order coefficient; only 0 is supported.
    pub xi: f64,
    pub record_every: usize,
    pub space: SpaceConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            level: Level::SingleLevel,
            batch_mode: BatchMode::SameBatch,
            gate_mode: GateMode::Sigmoid,
            lr_w: 0.005,
            lr_alpha: 3e-4,
            w_optimizer: OptimizerKind::SgdMomentum,
            alpha_optimizer: OptimizerKind::Adam,
            lr_schedule_w: Schedule::Cosine,
            weight_decay_w: 3e-4,
            weight_decay_alpha: None,
            epochs: 50,
            batch_size: 64,
            seed: 0,
            xi: 0.0,
            record_every: 10,
            space: SpaceConfig::micro(),
        }
    }
}

impl SearchConfig {
    /// Both optimizers SGD with momentum, sharing one learning rate.
    pub fn sgd_both(level: Level, batch_mode: BatchMode, gate_mode: GateMode, lr: f64) -> Self {
        SearchConfig {
            level,
            batch_mode,
            gate_mode,
            lr_w: lr,
            lr_alpha: lr,
            alpha_optimizer: OptimizerKind::SgdMomentum,
            ..SearchConfig::default()
        }
    }

    pub fn weight_decay_alpha(&self) -> f64 {
        self.weight_decay_alpha.unwrap_or(match self.gate_mode {
            GateMode::Sigmoid => 0.0,
            GateMode::Softmax => 1e-3,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.space.validate()?;
        match (self.level, self.batch_mode) {
            (Level::SingleLevel, m) if m != BatchMode::SameBatch => {
                return Err(Error::config("batch_mode", "single-level requires same-batch"));
            }
            (Level::BiLevel, BatchMode::SameBatch) => {
                return Err(Error::config("batch_mode", "bi-level needs two distinct batches"));
            }
            _ => {}
        }
        if self.xi != 0.0 {
            return Err(Error::config("xi", "only the first-order update (xi = 0) is supported"));
        }
        if self.w_optimizer != OptimizerKind::SgdMomentum {
            return Err(Error::config("w_optimizer", "weights are trained with sgd-momentum"));
        }
        for (field, v) in [
            ("lr_w", self.lr_w),
            ("lr_alpha", self.lr_alpha),
            ("weight_decay_w", self.weight_decay_w),
            ("weight_decay_alpha", self.weight_decay_alpha()),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(field, "must be finite and >= 0"));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.record_every == 0 {
            return Err(Error::config("record_every", "must be positive"));
        }
        Ok(())
    }
}

/// Optimizer state for the weight and architecture groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizers {
    pub w: OptimizerState,
    pub alpha: OptimizerState,
    pub weight_decay_w: f64,
    pub weight_decay_alpha: f64,
}

impl Optimizers {
    pub fn new(net: &SuperNet, config: &SearchConfig) -> Self {
        Optimizers {
            w: OptimizerState::new(config.w_optimizer, net.store(), &net.weight_ids()),
            alpha: OptimizerState::new(config.alpha_optimizer, net.store(), net.arch_ids()),
            weight_decay_w: config.weight_decay_w,
            weight_decay_alpha: config.weight_decay_alpha(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLrs {
    pub w: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub loss_w: f64,
    pub loss_alpha: f64,
}

fn grads_for(pass: &Pass, ids: &[ParamId], net: &SuperNet) -> Vec<Tensor> {
    ids.iter()
        .map(|&id| {
            pass.grads
                .get(pass.bound.var(id))
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(net.store().get(id).tensor.shape()))
        })
        .collect()
}

fn apply_alpha(net: &mut SuperNet, opt: &mut Optimizers, grads: &[Tensor], lr: f64) -> Result<()> {
    let wd = opt.weight_decay_alpha;
    opt.alpha.apply(net.store_mut(), grads, lr, wd)
}

fn apply_w(net: &mut SuperNet, opt: &mut Optimizers, grads: &[Tensor], lr: f64) -> Result<()> {
    let wd = opt.weight_decay_w;
    opt.w.apply(net.store_mut(), grads, lr, wd)
}

/// α step from an already computed pass on `batch_alpha`, then a fresh w pass.
fn bilevel_from(
    net: &mut SuperNet,
    opt: &mut Optimizers,
    pass_alpha: &Pass,
    batch_w: &Batch,
    lrs: StepLrs,
) -> Result<StepLosses> {
    let ga = grads_for(pass_alpha, &opt.alpha.ids().to_vec(), net);
    apply_alpha(net, opt, &ga, lrs.alpha)?;
    let pass_w = Pass::new(net, batch_w)?;
    let gw = grads_for(&pass_w, &opt.w.ids().to_vec(), net);
    apply_w(net, opt, &gw, lrs.w)?;
    Ok(StepLosses {
        loss_w: pass_w.loss,
        loss_alpha: pass_alpha.loss,
    })
}

/// First-order alternating step: α on `batch_alpha`, then w on `batch_w`.
pub fn step_bilevel(net: &mut SuperNet, pair: &BatchPair, opt: &mut Optimizers, lrs: StepLrs) -> Result<StepLosses> {
    if pair.mode == BatchMode::SameBatch {
        return Err(Error::config("batch_mode", "bi-level step needs two distinct batches"));
    }
    let pass_alpha = Pass::new(net, &pair.batch_alpha)?;
    bilevel_from(net, opt, &pass_alpha, &pair.batch_w, lrs)
}

fn single_from(net: &mut SuperNet, opt: &mut Optimizers, pass: &Pass, lrs: StepLrs, alpha_first: bool) -> Result<StepLosses> {
    let ga = grads_for(pass, &opt.alpha.ids().to_vec(), net);
    let gw = grads_for(pass, &opt.w.ids().to_vec(), net);
    if alpha_first {
        apply_alpha(net, opt, &ga, lrs.alpha)?;
        apply_w(net, opt, &gw, lrs.w)?;
    } else {
        apply_w(net, opt, &gw, lrs.w)?;
        apply_alpha(net, opt, &ga, lrs.alpha)?;
    }
    Ok(StepLosses {
        loss_w: pass.loss,
        loss_alpha: pass.loss,
    })
}

/// Simultaneous update of α and w from one pass on the shared batch.
pub fn step_single(net: &mut SuperNet, pair: &BatchPair, opt: &mut Optimizers, lrs: StepLrs) -> Result<StepLosses> {
    if pair.mode != BatchMode::SameBatch {
        return Err(Error::config("batch_mode", "single-level step needs same-batch"));
    }
    let pass = Pass::new(net, &pair.batch_w)?;
    single_from(net, opt, &pass, lrs, true)
}

#[doc(hidden)]
pub fn step_single_w_first(net: &mut SuperNet, pair: &BatchPair, opt: &mut Optimizers, lrs: StepLrs) -> Result<StepLosses> {
    let pass = Pass::new(net, &pair.batch_w)?;
    single_from(net, opt, &pass, lrs, false)
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub genotype: Genotype,
    pub trace: SearchTrace,
    pub final_gates: Vec<Vec<f64>>,
    pub final_alphas: Vec<Vec<f64>>,
    pub nonlearnable_ratio: f64,
    pub advisory: Option<String>,
    pub total_steps: usize,
    pub steps_completed: usize,
    /// Set when the run stopped early on a non-finite value.
    pub aborted: Option<String>,
    pub net: SuperNet,
}

pub fn advisory_for(ratio: f64) -> Option<String> {
    (ratio > ADVISORY_THRESHOLD).then(|| {
        format!(
            "non-learnable ops chosen on {:.0}% of edges (threshold {:.0}%): decrease lr_w and search again",
            ratio * 100.0,
            ADVISORY_THRESHOLD * 100.0
        )
    })
}

fn record_pre_step(
    trace: &mut SearchTrace,
    net: &SuperNet,
    step: usize,
    pass_alpha: &Pass,
    pass_w: Option<&Pass>,
) -> Result<()> {
    record_gates(trace, net, step);
    let gates = net.gates();
    for (ei, e) in net.topology().edges().iter().enumerate() {
        for (cell, per_op) in grad_p_from_pass(pass_alpha, net, ei).into_iter().enumerate() {
            for (k, grad_p) in per_op.into_iter().enumerate() {
                trace.push(TraceRecord::GradP(PTraceRecord {
                    step,
                    cell,
                    edge: e.name(),
                    op: net.space().ops[k],
                    p: gates[ei][k],
                    grad_p,
                }));
            }
        }
    }
    for cell in 0..net.space().num_cells {
        for ei in 0..net.topology().num_edges() {
            let rec = match pass_w {
                Some(pw) => grad_correlation(net, pw, pass_alpha, cell, ei, step)?,
                None => self_correlation(net, pass_alpha, cell, ei, step),
            };
            trace.push(TraceRecord::Corr(rec));
        }
    }
    Ok(())
}

fn record_gates(trace: &mut SearchTrace, net: &SuperNet, step: usize) {
    for (ei, e) in net.topology().edges().iter().enumerate() {
        let eg = net.edge_gates(ei);
        trace.push(TraceRecord::Gates(GateRecord {
            step,
            edge: e.name(),
            gates: eg.gates(),
            alpha: eg.alpha,
        }));
    }
}

/// Run a full search on `split` and derive the genotype.
pub fn run_search(config: &SearchConfig, split: &SplitDataset) -> Result<SearchResult> {
    config.validate()?;
    if split.d_in() != config.space.d_in || split.n_classes() != config.space.n_classes {
        return Err(Error::config(
            "space",
            format!(
                "dataset has d_in {} and {} classes, space expects {} and {}",
                split.d_in(),
                split.n_classes(),
                config.space.d_in,
                config.space.n_classes
            ),
        ));
    }
    let mut net = SuperNet::new(config.space.clone(), config.gate_mode, config.seed)?;
    let mut opt = Optimizers::new(&net, config);
    let mut sampler = BatchSampler::new(split, config.batch_size, config.seed)?;
    let total = config.epochs * sampler.steps_per_epoch();
    let mut trace = SearchTrace::new(TraceHeader {
        schema: TRACE_SCHEMA.into(),
        version: TRACE_VERSION,
        gate_mode: config.gate_mode,
        ops: config.space.ops.clone(),
        edges: net.topology().edges().iter().map(|e| e.name()).collect(),
        num_cells: config.space.num_cells,
        total_steps: total,
        record_every: config.record_every,
    });

    let mut aborted = None;
    let mut done = 0;
    for step in 0..total {
        let pair = sampler.next_batch_pair(&split.data, config.batch_mode)?;
        let lrs = StepLrs {
            w: cosine_lr(step, total, config.lr_w),
            alpha: config.lr_alpha,
        };
        let recording = step % config.record_every == 0;
        let outcome = (|| -> Result<StepLosses> {
            let pass_alpha = Pass::new(&net, &pair.batch_alpha)?;
            match config.level {
                Level::BiLevel => {
                    if recording {
                        let pass_w = Pass::new(&net, &pair.batch_w)?;
                        record_pre_step(&mut trace, &net, step, &pass_alpha, Some(&pass_w))?;
                    }
                    bilevel_from(&mut net, &mut opt, &pass_alpha, &pair.batch_w, lrs)
                }
                Level::SingleLevel => {
                    if recording {
                        record_pre_step(&mut trace, &net, step, &pass_alpha, None)?;
                    }
                    single_from(&mut net, &mut opt, &pass_alpha, lrs, true)
                }
            }
        })();
        match outcome {
            Ok(l) => {
                if recording {
                    trace.push(TraceRecord::Step(StepRecord {
                        step,
                        lr_w: lrs.w,
                        loss_w: l.loss_w,
                        loss_alpha: l.loss_alpha,
                    }));
                }
                done = step + 1;
            }
            Err(Error::NonFinite { op }) => {
                aborted = Some(format!("non-finite value in {op} at step {step}"));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    record_gates(&mut trace, &net, done);

    let genotype = net.derive_genotype();
    let ratio = genotype.nonlearnable_ratio();
    Ok(SearchResult {
        final_gates: net.gates(),
        final_alphas: (0..net.topology().num_edges()).map(|e| net.alpha(e).to_vec()).collect(),
        advisory: advisory_for(ratio),
        nonlearnable_ratio: ratio,
        genotype,
        trace,
        total_steps: total,
        steps_completed: done,
        aborted,
        net,
    })
}
