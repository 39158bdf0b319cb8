//! Brute-force tabular benchmark: every genotype of a small space trained
//! from scratch and scored on the validation split.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::data::{BatchMode, BatchSampler, SplitDataset};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, fingerprint, rng_for};
use crate::search::{cosine_lr, OptimizerKind, OptimizerState};
use crate::supernet::{CellTopology, DiscreteNet, Genotype, OpKind, SpaceConfig};

pub const TABLE_VERSION: u32 = 1;
/// Largest enumeration accepted.
pub const MAX_GENOTYPES: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub space: SpaceConfig,
    pub train_steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub n_seeds: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            space: SpaceConfig::micro(),
            train_steps: 400,
            lr: 0.05,
            weight_decay: 3e-4,
            batch_size: 64,
            n_seeds: 1,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        self.space.validate()?;
        if self.n_seeds == 0 {
            return Err(Error::config("n_seeds", "must be positive"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::config("lr", "must be finite and >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        Ok(())
    }

    /// Hash of this config together with the dataset fingerprint.
    pub fn fingerprint(&self, dataset_fingerprint: &str) -> String {
        let cfg = serde_json::to_vec(self).expect("config serializes");
        let mut bytes = cfg;
        bytes.extend_from_slice(b"\n");
        bytes.extend_from_slice(dataset_fingerprint.as_bytes());
        fingerprint(&bytes)
    }
}

/// All genotypes in lexicographic order of per-edge op indices, first edge most significant.
pub fn enumerate_genotypes(topology: &CellTopology, ops: &[OpKind]) -> Result<Vec<Genotype>> {
    if ops.len() < 2 {
        return Err(Error::config("ops", "need at least 2 ops"));
    }
    let m = topology.num_edges() as u32;
    let count = (ops.len() as u128).checked_pow(m).unwrap_or(u128::MAX);
    if count > MAX_GENOTYPES {
        return Err(Error::EnumerationOverflow(count));
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut idx = vec![0usize; m as usize];
    loop {
        let chosen: Vec<OpKind> = idx.iter().map(|&i| ops[i]).collect();
        out.push(Genotype::from_ops(topology, &chosen)?);
        // odometer increment from the last edge
        let mut pos = idx.len();
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < ops.len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchEntry {
    pub index: usize,
    pub genotype: String,
    /// `None` for diverged entries.
    pub train_loss: Option<f64>,
    pub valid_accuracy: f64,
    pub valid_loss: Option<f64>,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchTable {
    pub version: u32,
    pub fingerprint: String,
    pub dataset_fingerprint: String,
    pub config: BenchConfig,
    /// Expected number of entries.
    pub total: usize,
    pub entries: Vec<BenchEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOutcome {
    pub train_loss: f64,
    pub valid_accuracy: f64,
    pub valid_loss: f64,
}

fn evaluate(net: &DiscreteNet, inputs: &Tensor, labels: &[usize]) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let b = net.store().bind(&mut tape);
    let logits = net.forward(&mut tape, &b, inputs)?;
    let loss = tape.cross_entropy(logits, labels)?;
    let lv = tape.value(logits);
    let correct: f64 = (0..lv.rows()).map(|i| tie_credit(lv.row(i), labels[i])).sum();
    Ok((correct / labels.len() as f64, tape.value(loss).item()))
}

/// Credit for one prediction with ties among the top logits broken uniformly at random, in expectation.
pub fn tie_credit(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if logits[label] < max {
        return 0.0;
    }
    1.0 / logits.iter().filter(|&&v| v == max).count() as f64
}

/// Train one discrete network from a genotype-seeded init and score it.
pub fn train_genotype(config: &BenchConfig, split: &SplitDataset, genotype: &Genotype, run: usize) -> Result<TrainOutcome> {
    let seed = derive_seed(config.seed, &format!("bench.{}.{run}", genotype.key()));
    let mut net = DiscreteNet::new(config.space.clone(), genotype.clone(), &mut rng_for(seed, "weights"))?;
    let ids = net.param_ids();
    let mut opt = OptimizerState::new(OptimizerKind::SgdMomentum, net.store(), &ids);
    let mut sampler = BatchSampler::new(split, config.batch_size, seed)?;
    for step in 0..config.train_steps {
        let (idx, _) = sampler.next_indices(BatchMode::SameBatch)?;
        let batch = split.data.batch(&idx);
        let mut tape = Tape::new();
        let b = net.store().bind(&mut tape);
        let logits = net.forward(&mut tape, &b, &batch.inputs)?;
        let loss = tape.cross_entropy(logits, &batch.labels)?;
        let g = tape.backward(loss)?;
        let grads: Vec<Tensor> = ids
            .iter()
            .map(|&id| {
                g.get(b.var(id))
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(net.store().get(id).tensor.shape()))
            })
            .collect();
        let lr = cosine_lr(step, config.train_steps, config.lr);
        opt.apply(net.store_mut(), &grads, lr, config.weight_decay)?;
    }
    let train = split.train();
    let valid = split.valid();
    let (_, train_loss) = evaluate(&net, &train.inputs, &train.labels)?;
    let (valid_accuracy, valid_loss) = evaluate(&net, &valid.inputs, &valid.labels)?;
    Ok(TrainOutcome {
        train_loss,
        valid_accuracy,
        valid_loss,
    })
}

fn score(config: &BenchConfig, split: &SplitDataset, index: usize, g: &Genotype) -> Result<BenchEntry> {
    let mut acc = (0.0, 0.0, 0.0);
    for run in 0..config.n_seeds {
        match train_genotype(config, split, g, run) {
            Ok(o) => {
                acc.0 += o.train_loss;
                acc.1 += o.valid_accuracy;
                acc.2 += o.valid_loss;
            }
            Err(Error::NonFinite { .. }) => {
                return Ok(BenchEntry {
                    index,
                    genotype: g.key(),
                    train_loss: None,
                    valid_accuracy: 0.0,
                    valid_loss: None,
                    diverged: true,
                })
            }
            Err(e) => return Err(e),
        }
    }
    let k = config.n_seeds as f64;
    Ok(BenchEntry {
        index,
        genotype: g.key(),
        train_loss: Some(acc.0 / k),
        valid_accuracy: acc.1 / k,
        valid_loss: Some(acc.2 / k),
        diverged: false,
    })
}

/// Options for [`build_table`].
#[derive(Debug, Clone, Default)]
pub struct BuildOptions<'a> {
    /// Worker threads; 0 uses the rayon default.
    pub workers: usize,
    /// Continue from this partial table when its fingerprint matches.
    pub resume_from: Option<BenchTable>,
    /// Rewrite this file after every chunk of finished entries.
    pub checkpoint: Option<&'a Path>,
}

/// Train and score every genotype of the configured space.
pub fn build_table(config: &BenchConfig, split: &SplitDataset, dataset_fingerprint: &str, opts: BuildOptions<'_>) -> Result<BenchTable> {
    config.validate()?;
    let topology = config.space.topology()?;
    let all = enumerate_genotypes(&topology, &config.space.ops)?;
    let fp = config.fingerprint(dataset_fingerprint);
    let mut done: BTreeMap<usize, BenchEntry> = BTreeMap::new();
    if let Some(prev) = opts.resume_from {
        if prev.fingerprint != fp {
            return Err(Error::FingerprintMismatch {
                expected: fp,
                found: prev.fingerprint,
            });
        }
        done.extend(prev.entries.into_iter().map(|e| (e.index, e)));
    }
    let mut table = BenchTable {
        version: TABLE_VERSION,
        fingerprint: fp,
        dataset_fingerprint: dataset_fingerprint.to_string(),
        config: config.clone(),
        total: all.len(),
        entries: Vec::new(),
    };
    let todo: Vec<(usize, &Genotype)> = all.iter().enumerate().filter(|(i, _)| !done.contains_key(i)).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    let chunk = pool.current_num_threads().max(1) * 4;
    for part in todo.chunks(chunk) {
        let scored: Vec<Result<BenchEntry>> =
            pool.install(|| part.par_iter().map(|(i, g)| score(config, split, *i, g)).collect());
        for e in scored {
            let e = e?;
            done.insert(e.index, e);
        }
        if let Some(path) = opts.checkpoint {
            table.entries = done.values().cloned().collect();
            save_table(&table, path)?;
        }
    }
    table.entries = done.into_values().collect();
    Ok(table)
}

pub fn save_table(table: &BenchTable, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_string_pretty(table)? + "\n")?;
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn load_table(path: &Path) -> Result<BenchTable> {
    let t: BenchTable = serde_json::from_str(&fs::read_to_string(path)?)?;
    if t.version != TABLE_VERSION {
        return Err(Error::Parse(format!("unsupported table version {}", t.version)));
    }
    Ok(t)
}

impl BenchTable {
    pub fn is_complete(&self) -> bool {
        self.entries.len() == self.total
    }

    pub fn entry(&self, genotype: &Genotype) -> Option<&BenchEntry> {
        let key = genotype.key();
        self.entries.iter().find(|e| e.genotype == key)
    }

    pub fn diverged(&self) -> impl Iterator<Item = &BenchEntry> {
        self.entries.iter().filter(|e| e.diverged)
    }

    pub fn check_fingerprint(&self, expected: &str) -> Result<()> {
        if self.fingerprint != expected {
            return Err(Error::FingerprintMismatch {
                expected: expected.to_string(),
                found: self.fingerprint.clone(),
            });
        }
        Ok(())
    }
}

/// Fraction of scored entries with strictly higher valid accuracy; 0 is best.
pub fn rank(table: &BenchTable, genotype: &Genotype) -> Result<f64> {
    let e = table
        .entry(genotype)
        .filter(|e| !e.diverged)
        .ok_or_else(|| Error::UnknownGenotype(genotype.key()))?;
    let scored: Vec<&BenchEntry> = table.entries.iter().filter(|e| !e.diverged).collect();
    let better = scored.iter().filter(|o| o.valid_accuracy > e.valid_accuracy).count();
    Ok(better as f64 / scored.len() as f64)
}

/// [`rank`] against a table that must carry `fingerprint`.
pub fn rank_checked(table: &BenchTable, fingerprint: &str, genotype: &Genotype) -> Result<f64> {
    table.check_fingerprint(fingerprint)?;
    rank(table, genotype)
}

/// Best valid accuracy; ties go to the earliest genotype in enumeration order.
pub fn optimal(table: &BenchTable) -> Result<Genotype> {
    if !table.is_complete() || table.entries.is_empty() {
        return Err(Error::IncompleteTable {
            have: table.entries.len(),
            want: table.total,
        });
    }
    let best = table
        .entries
        .iter()
        .filter(|e| !e.diverged)
        .min_by(|a, b| {
            b.valid_accuracy
                .partial_cmp(&a.valid_accuracy)
                .expect("accuracies are finite")
                .then(a.index.cmp(&b.index))
        })
        .ok_or(Error::IncompleteTable { have: 0, want: table.total })?;
    Genotype::from_key(&best.genotype)
}
