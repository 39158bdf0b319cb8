use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use darts_lab::data::{gen_teacher_dataset, load_dataset, save_dataset, DatasetSidecar, SplitDataset, TeacherSpec};
use darts_lab::supernet::Genotype;

use crate::manifest::{load_config, ExperimentManifest};

pub const DATA_STEM: &str = "data";

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Teacher spec JSON, or a manifest from an earlier `gen-data`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    noise_std: Option<f64>,
    #[arg(long)]
    n_samples: Option<usize>,
    /// Teacher genotype key, e.g. `1<-0=lin|2<-0=skip|2<-1=nonlin`.
    #[arg(long)]
    teacher: Option<String>,
    /// Output directory; defaults to `<out-root>/data/seed<seed>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(a: GenDataArgs, out_root: &Path) -> Result<()> {
    let loaded = load_config::<TeacherSpec>(a.config.as_deref(), "gen-data")?;
    let mut spec = loaded.config;
    let seed = a
        .seed
        .or_else(|| loaded.manifest.as_ref().and_then(|m| m.seeds.first().copied()))
        .unwrap_or(0);
    if let Some(v) = a.noise_std {
        spec.noise_std = v;
    }
    if let Some(v) = a.n_samples {
        spec.n_samples = v;
    }
    if let Some(k) = &a.teacher {
        spec.genotype = Some(Genotype::from_key(k)?);
    }
    spec.validate()?;

    let dir = a.out.unwrap_or_else(|| out_root.join("data").join(format!("seed{seed}")));
    let td = gen_teacher_dataset(&spec, seed)?;
    let fp = save_dataset(&td, &dir, DATA_STEM)?;
    let mut m = ExperimentManifest::new("gen-data", &spec, vec![seed])?;
    m.outputs = vec![format!("{DATA_STEM}.bin"), format!("{DATA_STEM}.json")];
    m.write(&dir)?;
    println!("teacher {}", td.genotype);
    println!("class fractions {:?}", td.split.data.class_fractions());
    println!("wrote {}", dir.display());
    println!("fingerprint {fp}");
    Ok(())
}

pub fn load(dir: &Path) -> Result<(SplitDataset, DatasetSidecar)> {
    load_dataset(dir, DATA_STEM).with_context(|| format!("loading dataset from {}", dir.display()))
}
