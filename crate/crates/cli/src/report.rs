use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use darts_lab::diagnostics::domination_trace;
use darts_lab::search::SearchConfig;
use serde::Serialize;

use crate::diag::{csv_writer, read_trace, run_label, write_corr, write_domination, write_grad_p};
use crate::manifest::{read_json, ExperimentManifest, MANIFEST_FILE};
use crate::search::{RunResult, RESULT_FILE};
use crate::{usage, VerificationFailure};

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories, or parents whose subdirectories are runs.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Output directory; defaults to `<out-root>/report`.
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Run {
    dir: PathBuf,
    label: String,
    config: SearchConfig,
    result: RunResult,
}

#[derive(Debug, Serialize)]
struct SummaryRow {
    level: &'static str,
    gate: String,
    batch_mode: &'static str,
    lr_w: f64,
    lr_alpha: f64,
    alpha_optimizer: String,
    n: usize,
    seeds: String,
    ratio_mean: f64,
    ratio_std: f64,
    rank_mean: Option<f64>,
    rank_std: Option<f64>,
    accuracy_mean: Option<f64>,
    accuracy_std: Option<f64>,
    dominated_mean: f64,
    dominated_std: f64,
}

fn is_run(dir: &Path) -> bool {
    dir.join(MANIFEST_FILE).is_file() && dir.join(RESULT_FILE).is_file()
}

fn expand(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if is_run(p) {
            out.push(p.clone());
            continue;
        }
        let mut subs: Vec<PathBuf> = std::fs::read_dir(p)
            .map_err(|e| usage(format!("{}: {e}", p.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|d| is_run(d))
            .collect();
        if subs.is_empty() {
            return Err(usage(format!("{} contains no search runs", p.display())));
        }
        subs.sort();
        out.extend(subs);
    }
    Ok(out)
}

/// Population mean and standard deviation.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn load(dir: &Path) -> Result<Run> {
    let m = ExperimentManifest::read(dir)?;
    if m.command != "search" {
        return Err(usage(format!("{} is not a search run", dir.display())));
    }
    Ok(Run {
        dir: dir.to_path_buf(),
        label: run_label(dir),
        config: serde_json::from_value(m.config)?,
        result: read_json(&dir.join(RESULT_FILE))?,
    })
}

fn same<'a>(what: &str, mut vals: impl Iterator<Item = Option<&'a str>>) -> Result<()> {
    let first = vals.next().flatten();
    if vals.any(|v| v != first) {
        return Err(VerificationFailure(format!("runs were made against different {what}s")).into());
    }
    Ok(())
}

fn enum_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

pub fn run(a: ReportArgs, out_root: &Path) -> Result<()> {
    let runs: Vec<Run> = expand(&a.runs)?.iter().map(|d| load(d)).collect::<Result<_>>()?;
    same("dataset", runs.iter().map(|r| Some(r.result.dataset_fingerprint.as_str())))?;
    same("bench table", runs.iter().map(|r| r.result.bench.as_ref().map(|b| b.fingerprint.as_str())))?;

    let out = a.out.unwrap_or_else(|| out_root.join("report"));
    let mut dom = csv_writer(&out.join("domination.csv"))?;
    let mut gp = csv_writer(&out.join("grad_p.csv"))?;
    let mut corr = csv_writer(&out.join("corr.csv"))?;
    let mut groups: BTreeMap<String, Vec<(&Run, f64)>> = BTreeMap::new();
    for r in &runs {
        let t = read_trace(&r.dir)?;
        write_domination(&mut dom, &r.label, &t)?;
        write_grad_p(&mut gp, &r.label, &t)?;
        write_corr(&mut corr, &r.label, &t)?;
        let dominated = domination_trace(&t)?.dominated_fraction();
        let c = &r.config;
        let key = format!(
            "{}|{}|{}|{}|{}|{}",
            c.level.name(),
            enum_name(&c.gate_mode),
            c.batch_mode.name(),
            c.lr_w,
            c.lr_alpha,
            enum_name(&c.alpha_optimizer)
        );
        groups.entry(key).or_default().push((r, dominated));
    }
    dom.flush()?;
    gp.flush()?;
    corr.flush()?;

    let mut summary = csv_writer(&out.join("summary.csv"))?;
    for members in groups.values() {
        let c = &members[0].0.config;
        let ratio = mean_std(&members.iter().map(|(r, _)| r.result.nonlearnable_ratio).collect::<Vec<_>>());
        let dominated = mean_std(&members.iter().map(|(_, d)| *d).collect::<Vec<_>>());
        let scored: Option<Vec<(f64, f64)>> = members
            .iter()
            .map(|(r, _)| r.result.bench.as_ref().map(|b| (b.rank, b.valid_accuracy)))
            .collect();
        let (rank, acc) = match &scored {
            Some(s) => {
                let r = mean_std(&s.iter().map(|x| x.0).collect::<Vec<_>>());
                let a = mean_std(&s.iter().map(|x| x.1).collect::<Vec<_>>());
                (Some(r), Some(a))
            }
            None => (None, None),
        };
        let mut seeds: Vec<u64> = members.iter().map(|(r, _)| r.config.seed).collect();
        seeds.sort_unstable();
        summary.serialize(SummaryRow {
            level: c.level.name(),
            gate: enum_name(&c.gate_mode),
            batch_mode: c.batch_mode.name(),
            lr_w: c.lr_w,
            lr_alpha: c.lr_alpha,
            alpha_optimizer: enum_name(&c.alpha_optimizer),
            n: members.len(),
            seeds: seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(" "),
            ratio_mean: ratio.0,
            ratio_std: ratio.1,
            rank_mean: rank.map(|x| x.0),
            rank_std: rank.map(|x| x.1),
            accuracy_mean: acc.map(|x| x.0),
            accuracy_std: acc.map(|x| x.1),
            dominated_mean: dominated.0,
            dominated_std: dominated.1,
        })?;
    }
    summary.flush()?;
    println!("{} runs in {} groups", runs.len(), groups.len());
    println!("wrote {}", out.display());
    Ok(())
}
