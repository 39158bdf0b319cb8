use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Subcommand};
use darts_lab::autodiff::Tensor;
use darts_lab::diagnostics::{
    bias_decomposition_probe, domination_trace, masses, CorrKind, LinearProbe, RegressionBatch, SearchTrace,
};
use darts_lab::rng::{derive_seed, gaussian_vec, rng_for, Rng};
use darts_lab::supernet::OpKind;
use rand::Rng as _;
use serde::Serialize;

use crate::search::TRACE_FILE;
use crate::VerificationFailure;

/// Largest probe relative error accepted by `diag probe`.
pub const PROBE_TOL: f64 = 1e-6;
const PROBE_DIM: usize = 16;
const PROBE_ROWS: usize = 64;

#[derive(Debug, Subcommand)]
pub enum DiagCommand {
    /// Gradient correlation series of a run.
    Corr(RunArgs),
    /// Gate value and gate gradient series of a run.
    Gradp(RunArgs),
    /// Non-learnable vs learnable gate mass per edge of a run.
    Domination(RunArgs),
    /// Check the one-step bias decomposition on random linear probes.
    Probe {
        #[arg(long, default_value_t = 50)]
        trials: u64,
        /// Fixed step size; drawn per trial when absent.
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV; defaults to `<out-root>/diag/probe.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Search run directory.
    #[arg(long)]
    run: PathBuf,
    /// Output CSV; defaults to a file in the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct CorrRow<'a> {
    pub run: &'a str,
    pub step: usize,
    pub cell: usize,
    pub node: usize,
    pub edge: &'a str,
    pub kind: &'static str,
    pub raw: f64,
    pub normalized: f64,
}

#[derive(Debug, Serialize)]
pub struct GradPRow<'a> {
    pub run: &'a str,
    pub step: usize,
    pub cell: usize,
    pub edge: &'a str,
    pub op: String,
    pub p: f64,
    pub grad_p: f64,
}

#[derive(Debug, Serialize)]
pub struct DominationRow<'a> {
    pub run: &'a str,
    pub step: usize,
    pub edge: &'a str,
    pub nonlearnable_mass: f64,
    pub learnable_mass: f64,
    pub dominated_at: Option<usize>,
}

#[derive(Debug, Serialize)]
struct ProbeRow {
    trial: u64,
    eta: f64,
    op: usize,
    p: f64,
    raw_correlation: f64,
    normalized_correlation: f64,
    grad_before: f64,
    grad_after_held: f64,
    grad_after_full: f64,
    measured_change: f64,
    expected_change: f64,
    rel_error: f64,
}

pub fn read_trace(run: &Path) -> Result<SearchTrace> {
    let path = run.join(TRACE_FILE);
    let f = fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    Ok(SearchTrace::read_jsonl(BufReader::new(f))?)
}

pub fn run_label(run: &Path) -> String {
    run.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| run.display().to_string())
}

pub fn write_corr<W: std::io::Write>(w: &mut csv::Writer<W>, run: &str, t: &SearchTrace) -> Result<()> {
    for c in t.corr() {
        w.serialize(CorrRow {
            run,
            step: c.step,
            cell: c.cell,
            node: c.node,
            edge: &c.edge,
            kind: match c.kind {
                CorrKind::CrossBatch => "cross-batch",
                CorrKind::SelfDiagonal => "self-diagonal",
            },
            raw: c.raw,
            normalized: c.normalized,
        })?;
    }
    Ok(())
}

pub fn write_grad_p<W: std::io::Write>(w: &mut csv::Writer<W>, run: &str, t: &SearchTrace) -> Result<()> {
    for r in t.grad_p() {
        w.serialize(GradPRow {
            run,
            step: r.step,
            cell: r.cell,
            edge: &r.edge,
            op: r.op.to_string(),
            p: r.p,
            grad_p: r.grad_p,
        })?;
    }
    Ok(())
}

pub fn write_domination<W: std::io::Write>(w: &mut csv::Writer<W>, run: &str, t: &SearchTrace) -> Result<()> {
    let d = domination_trace(t)?;
    for e in &d.edges {
        for (step, gates) in e.steps.iter().zip(&e.gates) {
            let (non, learn) = masses(&d.ops, gates);
            w.serialize(DominationRow {
                run,
                step: *step,
                edge: &e.edge,
                nonlearnable_mass: non,
                learnable_mass: learn,
                dominated_at: e.dominated_at,
            })?;
        }
    }
    Ok(())
}

pub fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

type Extract = fn(&mut csv::Writer<fs::File>, &str, &SearchTrace) -> Result<()>;

fn from_run(a: RunArgs, file: &str, f: Extract) -> Result<()> {
    let t = read_trace(&a.run)?;
    let out = a.out.unwrap_or_else(|| a.run.join(file));
    let mut w = csv_writer(&out)?;
    f(&mut w, &run_label(&a.run), &t)?;
    w.flush()?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn run(c: DiagCommand, out_root: &Path) -> Result<()> {
    match c {
        DiagCommand::Corr(a) => from_run(a, "corr.csv", write_corr),
        DiagCommand::Gradp(a) => from_run(a, "grad_p.csv", write_grad_p),
        DiagCommand::Domination(a) => {
            let t = read_trace(&a.run)?;
            let d = domination_trace(&t)?;
            println!(
                "dominated fraction {:.3}, early onset fraction {:.3}",
                d.dominated_fraction(),
                d.early_onset_fraction(0.2)
            );
            from_run(a, "domination.csv", write_domination)
        }
        DiagCommand::Probe { trials, eta, seed, out } => probe(trials, eta, seed, out.unwrap_or_else(|| out_root.join("diag").join("probe.csv"))),
    }
}

fn matrix(rng: &mut Rng, rows: usize, std: f64) -> Tensor {
    Tensor::matrix(rows, PROBE_DIM, gaussian_vec(rng, rows * PROBE_DIM, std)).expect("sizes agree")
}

fn probe(trials: u64, eta: Option<f64>, seed: u64, out: PathBuf) -> Result<()> {
    if let Some(e) = eta {
        if !(e.is_finite() && e > 0.0) {
            return Err(crate::usage("--eta must be positive"));
        }
    }
    let mut w = csv_writer(&out)?;
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let mut rng = rng_for(derive_seed(seed, &format!("trial.{trial}")), "probe");
        let n_ops = rng.random_range(1..=4);
        let p = LinearProbe {
            ops: vec![OpKind::Lin; n_ops],
            weights: (0..n_ops).map(|_| matrix(&mut rng, PROBE_DIM, 0.25)).collect(),
            gates: (0..n_ops).map(|_| rng.random_range(0.05..1.0)).collect(),
        };
        let mut batch = || RegressionBatch {
            inputs: matrix(&mut rng, PROBE_ROWS, 1.0),
            targets: matrix(&mut rng, PROBE_ROWS, 1.0),
        };
        let (a, b) = (batch(), batch());
        let eta = eta.unwrap_or_else(|| rng.random_range(1e-3..0.1));
        let r = bias_decomposition_probe(&p, &a, &b, eta)?;
        worst = worst.max(r.max_rel_error());
        for (i, o) in r.ops.iter().enumerate() {
            w.serialize(ProbeRow {
                trial,
                eta,
                op: i,
                p: o.p,
                raw_correlation: r.raw_correlation,
                normalized_correlation: r.normalized_correlation,
                grad_before: o.grad_before,
                grad_after_held: o.grad_after_held,
                grad_after_full: o.grad_after_full,
                measured_change: o.measured_change,
                expected_change: o.expected_change,
                rel_error: o.rel_error,
            })?;
        }
    }
    w.flush()?;
    println!("{trials} trials, worst relative error {worst:.2e}");
    println!("wrote {}", out.display());
    if worst > PROBE_TOL {
        return Err(VerificationFailure(format!("probe error {worst:.2e} exceeds {PROBE_TOL:.0e}")).into());
    }
    Ok(())
}
