use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Subcommand};
use darts_lab::bench::{build_table, load_table, optimal, rank, BenchConfig, BuildOptions};
use darts_lab::supernet::Genotype;

use crate::manifest::{load_config, ExperimentManifest};
use crate::{data, usage};

pub const TABLE_FILE: &str = "table.json";

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Train every genotype of the space and write the table.
    Build(BuildArgs),
    /// Rank of one genotype in a table (0 is best).
    Rank {
        #[arg(long)]
        table: PathBuf,
        /// Genotype key, or a path to a genotype file.
        #[arg(long)]
        genotype: String,
    },
    /// Best genotype of a table.
    Optimal {
        #[arg(long)]
        table: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Dataset directory written by `gen-data`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Bench config JSON, or a manifest from an earlier `bench build`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_steps: Option<usize>,
    /// Worker threads; 0 uses one per core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Continue a partial table found in the output directory.
    #[arg(long)]
    resume: bool,
    /// Output directory; defaults to `<out-root>/bench`.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn parse_genotype(s: &str) -> Result<Genotype> {
    let p = Path::new(s);
    if p.is_file() {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        return Ok(Genotype::from_text(&text)?);
    }
    Ok(Genotype::from_key(s)?)
}

pub fn run(c: BenchCommand, out_root: &Path) -> Result<()> {
    match c {
        BenchCommand::Build(a) => build(a, out_root),
        BenchCommand::Rank { table, genotype } => {
            let t = load_table(&table)?;
            let g = parse_genotype(&genotype)?;
            let e = t.entry(&g).ok_or_else(|| usage(format!("{g} is not in the table")))?;
            println!("{g} rank {:.4} valid accuracy {:.4}", rank(&t, &g)?, e.valid_accuracy);
            Ok(())
        }
        BenchCommand::Optimal { table } => {
            let t = load_table(&table)?;
            let g = optimal(&t)?;
            println!("{g} valid accuracy {:.4}", t.entry(&g).expect("optimal is in table").valid_accuracy);
            Ok(())
        }
    }
}

fn build(a: BuildArgs, out_root: &Path) -> Result<()> {
    let loaded = load_config::<BenchConfig>(a.config.as_deref(), "bench build")?;
    let mut cfg = loaded.config;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.train_steps {
        cfg.train_steps = s;
    }
    cfg.validate()?;
    let data_dir = a
        .data
        .or_else(|| loaded.manifest.as_ref().and_then(|m| m.find_input("dataset")).map(|i| i.path.clone()))
        .ok_or_else(|| usage("--data is required"))?;
    let (split, sidecar) = data::load(&data_dir)?;
    if sidecar.spec.space != cfg.space {
        return Err(usage("bench space differs from the dataset's teacher space"));
    }

    let dir = a.out.unwrap_or_else(|| out_root.join("bench"));
    let path = dir.join(TABLE_FILE);
    let resume_from = if a.resume && path.exists() {
        let t = load_table(&path)?;
        println!("resuming with {} of {} entries", t.entries.len(), t.total);
        Some(t)
    } else {
        None
    };
    let t0 = Instant::now();
    let table = build_table(
        &cfg,
        &split,
        &sidecar.fingerprint,
        BuildOptions {
            workers: a.workers,
            resume_from,
            checkpoint: Some(&path),
        },
    )?;
    let mut m = ExperimentManifest::new("bench build", &cfg, vec![cfg.seed])?;
    m.input("dataset", &data_dir, &sidecar.fingerprint);
    m.outputs = vec![TABLE_FILE.into()];
    m.write(&dir)?;

    let best = optimal(&table)?;
    let teacher = &sidecar.teacher_genotype;
    println!("{} entries in {:.1}s, {} diverged", table.entries.len(), t0.elapsed().as_secs_f64(), table.diverged().count());
    println!("optimal {best} ({:.4})", table.entry(&best).expect("in table").valid_accuracy);
    if let Some(e) = table.entry(teacher) {
        println!("teacher {teacher} ({:.4}, rank {:.4})", e.valid_accuracy, rank(&table, teacher)?);
    }
    println!("fingerprint {}", table.fingerprint);
    println!("wrote {}", path.display());
    Ok(())
}
