use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use darts_lab::bench::{load_table, rank, BenchTable};
use darts_lab::data::{BatchMode, DatasetSidecar, SplitDataset};
use darts_lab::search::{run_search, Level, OptimizerKind, SearchConfig, SearchResult};
use darts_lab::supernet::GateMode;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::manifest::{load_config, write_json, ExperimentManifest};
use crate::{data, usage};

pub const RESULT_FILE: &str = "result.json";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const GENOTYPE_FILE: &str = "genotype.txt";

const GRID_LRS: [f64; 3] = [0.001, 0.005, 0.025];

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Dataset directory; taken from the manifest when `--config` is one.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Search config JSON, or a manifest from an earlier `search`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `bi-level` or `single-level`.
    #[arg(long)]
    level: Option<Level>,
    /// `diff-dataset`, `same-dataset-diff-batch` or `same-batch`.
    #[arg(long)]
    batch_mode: Option<BatchMode>,
    /// `softmax` or `sigmoid`.
    #[arg(long, value_parser = parse_enum::<GateMode>)]
    gate: Option<GateMode>,
    #[arg(long)]
    lr_w: Option<f64>,
    #[arg(long)]
    lr_alpha: Option<f64>,
    /// `sgd-momentum` or `adam`.
    #[arg(long, value_parser = parse_enum::<OptimizerKind>)]
    alpha_optimizer: Option<OptimizerKind>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    weight_decay_alpha: Option<f64>,
    #[arg(long)]
    record_every: Option<usize>,
    /// Bench table used to rank the derived genotype.
    #[arg(long)]
    bench: Option<PathBuf>,
    /// Run the standard grid (level x gate x lr) for every seed in `--seeds`.
    #[arg(long)]
    grid: bool,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    /// Worker threads for `--grid`; 0 uses one per core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Output directory; defaults to `<out-root>/search/<run name>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parse a kebab-case serde enum from a flag value.
pub fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchScore {
    pub fingerprint: String,
    pub rank: f64,
    pub valid_accuracy: f64,
}

/// Summary written to `result.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub genotype: String,
    pub nonlearnable_ratio: f64,
    pub advisory: Option<String>,
    pub final_gates: Vec<Vec<f64>>,
    pub final_alphas: Vec<Vec<f64>>,
    pub total_steps: usize,
    pub steps_completed: usize,
    pub aborted: Option<String>,
    pub dataset_fingerprint: String,
    pub bench: Option<BenchScore>,
}

pub fn run_name(c: &SearchConfig) -> String {
    let level = match c.level {
        Level::BiLevel => "bi",
        Level::SingleLevel => "single",
    };
    let gate = match c.gate_mode {
        GateMode::Softmax => "softmax",
        GateMode::Sigmoid => "sigmoid",
    };
    format!("{level}-{gate}-lr{}-s{}", c.lr_w, c.seed)
}

pub fn run(a: SearchArgs, out_root: &Path) -> Result<()> {
    let loaded = load_config::<SearchConfig>(a.config.as_deref(), "search")?;
    let mut cfg = loaded.config;
    apply_overrides(&a, &mut cfg);
    let data_dir = a
        .data
        .clone()
        .or_else(|| loaded.manifest.as_ref().and_then(|m| m.find_input("dataset")).map(|i| i.path.clone()))
        .ok_or_else(|| usage("--data is required"))?;
    let bench_path = a
        .bench
        .clone()
        .or_else(|| loaded.manifest.as_ref().and_then(|m| m.find_input("bench")).map(|i| i.path.clone()));
    let (split, sidecar) = data::load(&data_dir)?;
    let table = bench_path.as_deref().map(load_table).transpose()?;
    if let Some(t) = &table {
        if t.dataset_fingerprint != sidecar.fingerprint {
            return Err(darts_lab::Error::FingerprintMismatch {
                expected: sidecar.fingerprint.clone(),
                found: t.dataset_fingerprint.clone(),
            }
            .into());
        }
    }
    let ctx = RunInputs {
        split: &split,
        sidecar: &sidecar,
        data_dir: &data_dir,
        bench: table.as_ref().zip(bench_path.as_deref()),
    };

    if !a.grid {
        cfg.validate()?;
        let dir = a.out.clone().unwrap_or_else(|| out_root.join("search").join(run_name(&cfg)));
        let r = one(&cfg, &ctx, &dir)?;
        return finish(&r, &dir);
    }

    let root = a.out.clone().unwrap_or_else(|| out_root.join("search"));
    let mut cfgs = Vec::new();
    for &seed in &a.seeds {
        for level in [Level::BiLevel, Level::SingleLevel] {
            for gate in [GateMode::Softmax, GateMode::Sigmoid] {
                for lr in GRID_LRS {
                    let mut c = cfg.clone();
                    c.level = level;
                    c.batch_mode = match level {
                        Level::BiLevel => BatchMode::DiffDataset,
                        Level::SingleLevel => BatchMode::SameBatch,
                    };
                    c.gate_mode = gate;
                    c.lr_w = lr;
                    c.seed = seed;
                    c.validate()?;
                    cfgs.push(c);
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(a.workers).build()?;
    let results: Vec<Result<(String, RunResult)>> = pool.install(|| {
        cfgs.par_iter()
            .map(|c| {
                let name = run_name(c);
                one(c, &ctx, &root.join(&name)).map(|r| (name, r))
            })
            .collect()
    });
    let mut aborted = 0;
    for r in results {
        let (name, r) = r?;
        let rank = r.bench.as_ref().map(|b| format!(" rank {:.3}", b.rank)).unwrap_or_default();
        println!("{name:28} {} ratio {:.2}{rank}", r.genotype, r.nonlearnable_ratio);
        aborted += usize::from(r.aborted.is_some());
    }
    println!("wrote {} runs under {}", cfgs.len(), root.display());
    if aborted > 0 {
        anyhow::bail!("{aborted} runs aborted");
    }
    Ok(())
}

fn apply_overrides(a: &SearchArgs, c: &mut SearchConfig) {
    if let Some(v) = a.level {
        c.level = v;
    }
    if let Some(v) = a.batch_mode {
        c.batch_mode = v;
    }
    if let Some(v) = a.gate {
        c.gate_mode = v;
    }
    if let Some(v) = a.lr_w {
        c.lr_w = v;
    }
    if let Some(v) = a.lr_alpha {
        c.lr_alpha = v;
    }
    if let Some(v) = a.alpha_optimizer {
        c.alpha_optimizer = v;
    }
    if let Some(v) = a.epochs {
        c.epochs = v;
    }
    if let Some(v) = a.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = a.weight_decay_alpha {
        c.weight_decay_alpha = Some(v);
    }
    if let Some(v) = a.record_every {
        c.record_every = v;
    }
}

struct RunInputs<'a> {
    split: &'a SplitDataset,
    sidecar: &'a DatasetSidecar,
    data_dir: &'a Path,
    bench: Option<(&'a BenchTable, &'a Path)>,
}

fn one(cfg: &SearchConfig, ctx: &RunInputs<'_>, dir: &Path) -> Result<RunResult> {
    let r: SearchResult = run_search(cfg, ctx.split)?;
    let bench = match ctx.bench {
        Some((t, _)) if r.aborted.is_none() => Some(BenchScore {
            fingerprint: t.fingerprint.clone(),
            rank: rank(t, &r.genotype)?,
            valid_accuracy: t.entry(&r.genotype).map(|e| e.valid_accuracy).unwrap_or(f64::NAN),
        }),
        _ => None,
    };
    let result = RunResult {
        genotype: r.genotype.key(),
        nonlearnable_ratio: r.nonlearnable_ratio,
        advisory: r.advisory.clone(),
        final_gates: r.final_gates.clone(),
        final_alphas: r.final_alphas.clone(),
        total_steps: r.total_steps,
        steps_completed: r.steps_completed,
        aborted: r.aborted.clone(),
        dataset_fingerprint: ctx.sidecar.fingerprint.clone(),
        bench,
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join(GENOTYPE_FILE), r.genotype.to_text())?;
    write_json(&dir.join(RESULT_FILE), &result)?;
    let f = fs::File::create(dir.join(TRACE_FILE))?;
    r.trace.write_jsonl(BufWriter::new(f))?;
    let mut m = ExperimentManifest::new("search", cfg, vec![cfg.seed])?;
    m.input("dataset", ctx.data_dir, &ctx.sidecar.fingerprint);
    if let Some((t, p)) = ctx.bench {
        m.input("bench", p, &t.fingerprint);
    }
    m.outputs = vec![GENOTYPE_FILE.into(), RESULT_FILE.into(), TRACE_FILE.into()];
    m.write(dir)?;
    Ok(result)
}

fn finish(r: &RunResult, dir: &Path) -> Result<()> {
    println!("genotype {}", r.genotype);
    println!("nonlearnable ratio {:.3}", r.nonlearnable_ratio);
    if let Some(b) = &r.bench {
        println!("bench rank {:.4} valid accuracy {:.4}", b.rank, b.valid_accuracy);
    }
    if let Some(msg) = &r.advisory {
        println!("advisory: {msg}");
    }
    println!("wrote {}", dir.display());
    if let Some(why) = &r.aborted {
        anyhow::bail!("search aborted after {} of {} steps: {why}", r.steps_completed, r.total_steps);
    }
    Ok(())
}
