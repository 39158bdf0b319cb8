use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Subcommand;
use darts_lab::dynamics::{verify_sweep, InstanceRanges};

use crate::diag::csv_writer;
use crate::{usage, VerificationFailure};

#[derive(Debug, Subcommand)]
pub enum TheoremCommand {
    /// Compare hit times against the bound on random instances.
    Verify {
        /// Total instances, split evenly over eps values and both directions.
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.01")]
        eps: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Worker threads; 0 uses one per core.
        #[arg(long, default_value_t = 0)]
        workers: usize,
        /// Output CSV; defaults to `<out-root>/theorem/verify.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn run(c: TheoremCommand, out_root: &Path) -> Result<()> {
    let TheoremCommand::Verify {
        instances,
        eps,
        seed,
        workers,
        out,
    } = c;
    if eps.is_empty() || instances == 0 {
        return Err(usage("need at least one instance and one eps value"));
    }
    let per = instances.div_ceil(eps.len() * 2);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    let rows = pool.install(|| verify_sweep(seed, per, &eps, &InstanceRanges::default()))?;

    let out = out.unwrap_or_else(|| out_root.join("theorem").join("verify.csv"));
    let mut w = csv_writer(&out)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;

    let failed = rows.iter().filter(|r| !r.pass).count();
    let over = rows.iter().filter(|r| r.t_hit.map_or(true, |t| t as f64 > r.bound)).count();
    let gap = rows.iter().filter(|r| r.gap_violation_at.is_some()).count();
    let worst = rows
        .iter()
        .filter_map(|r| r.t_hit.map(|t| t as f64 / r.bound))
        .fold(0.0f64, f64::max);
    println!("{} instances, {} within the bound", rows.len(), rows.len() - failed);
    println!("{over} exceed the bound (worst t/bound {worst:.2}), {gap} break the gap inequality");
    println!("wrote {}", out.display());
    if failed > 0 {
        return Err(VerificationFailure(format!("{failed} of {} instances violate the bound", rows.len())).into());
    }
    Ok(())
}
