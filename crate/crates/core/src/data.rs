//! Teacher-generated classification data, train/valid splits and batch pairing.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{fingerprint, gaussian_vec, rng_for, Rng};
use crate::supernet::{discrete_forward, DiscreteNet, Genotype, OpKind, SpaceConfig};

/// Attempts at drawing teacher weights before giving up on class balance.
pub const TEACHER_DRAWS: usize = 10;

const MAGIC: &[u8; 4] = b"DLDS";
const FORMAT_VERSION: u32 = 1;

/// How a synthetic dataset is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherSpec {
    /// Space the teacher network lives in (fixes `d_in`, width and `n_classes`).
    pub space: SpaceConfig,
    /// Teacher architecture; drawn from the seed when absent.
    pub genotype: Option<Genotype>,
    pub noise_std: f64,
    pub n_samples: usize,
    pub split_fraction: f64,
    pub batch_size: usize,
}

impl Default for TeacherSpec {
    fn default() -> Self {
        TeacherSpec {
            space: SpaceConfig::micro(),
            genotype: None,
            noise_std: 0.0,
            n_samples: 4096,
            split_fraction: 0.5,
            batch_size: 64,
        }
    }
}

impl TeacherSpec {
    pub fn validate(&self) -> Result<()> {
        self.space.validate()?;
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config("noise_std", "must be finite and >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.n_samples < 4 * self.batch_size {
            return Err(Error::config(
                "n_samples",
                format!("need at least 4 x batch_size = {}", 4 * self.batch_size),
            ));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::config("split_fraction", "must lie in (0, 1)"));
        }
        if self.space.n_classes < 2 {
            return Err(Error::config("space.n_classes", "need at least 2 classes"));
        }
        if let Some(g) = &self.genotype {
            if !g.matches_topology(&self.space.topology()?) {
                return Err(Error::config("genotype", "does not match the space topology"));
            }
            if !g.ops().iter().any(|o| o.learnable()) {
                return Err(Error::config("genotype", "teacher needs at least one learnable op"));
            }
            if g.ops().iter().any(|o| self.space.op_index(*o).is_none()) {
                return Err(Error::config("genotype", "uses an op outside the space"));
            }
        }
        Ok(())
    }
}

/// Inputs `[n, d_in]` with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_fractions(&self) -> Vec<f64> {
        class_fractions(&self.labels, self.n_classes)
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        Batch {
            indices: indices.to_vec(),
            inputs: self.inputs.gather_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

fn class_fractions(labels: &[usize], n_classes: usize) -> Vec<f64> {
    let mut c = vec![0usize; n_classes];
    for &l in labels {
        c[l] += 1;
    }
    c.into_iter().map(|v| v as f64 / labels.len() as f64).collect()
}

/// A gathered mini-batch together with its global sample indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// One dataset partitioned into disjoint train and valid index sets.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub data: Dataset,
    pub train_idx: Vec<usize>,
    pub valid_idx: Vec<usize>,
    pub split_fraction: f64,
}

impl SplitDataset {
    pub fn split(data: Dataset, split_fraction: f64, seed: u64) -> Self {
        let n = data.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng_for(seed, "split"));
        let n_train = ((n as f64) * split_fraction).round() as usize;
        let mut train_idx = idx[..n_train].to_vec();
        let mut valid_idx = idx[n_train..].to_vec();
        train_idx.sort_unstable();
        valid_idx.sort_unstable();
        SplitDataset {
            data,
            train_idx,
            valid_idx,
            split_fraction,
        }
    }

    pub fn train(&self) -> Batch {
        self.data.batch(&self.train_idx)
    }

    pub fn valid(&self) -> Batch {
        self.data.batch(&self.valid_idx)
    }

    pub fn n_classes(&self) -> usize {
        self.data.n_classes
    }

    pub fn d_in(&self) -> usize {
        self.data.inputs.cols()
    }
}

/// The generating network plus the data it labelled.
#[derive(Debug, Clone)]
pub struct TeacherData {
    pub spec: TeacherSpec,
    pub seed: u64,
    pub genotype: Genotype,
    pub teacher: DiscreteNet,
    /// Inputs before observation noise.
    pub clean_inputs: Tensor,
    pub split: SplitDataset,
}

/// Whether some input-to-output path carries a learnable op through nonzero edges.
pub fn has_learnable_path(g: &Genotype, num_nodes: usize) -> bool {
    // state per node: 0 unreachable, 1 reachable, 2 reachable via a learnable op
    let mut state = vec![0u8; num_nodes];
    state[0] = 1;
    for (e, op) in g.choices() {
        if *op == OpKind::Zero || state[e.from] == 0 {
            continue;
        }
        let s = if op.learnable() { 2 } else { state[e.from] };
        state[e.to] = state[e.to].max(s);
    }
    state[num_nodes - 1] == 2
}

/// Uniform draw among genotypes of `space` whose output depends on a learnable op.
pub fn draw_teacher_genotype(space: &SpaceConfig, rng: &mut Rng) -> Result<Genotype> {
    use rand::Rng as _;
    let topology = space.topology()?;
    if !space.ops.iter().any(|o| o.learnable()) {
        return Err(Error::config("space.ops", "no learnable op to build a teacher from"));
    }
    loop {
        let ops: Vec<OpKind> = (0..topology.num_edges())
            .map(|_| space.ops[rng.random_range(0..space.ops.len())])
            .collect();
        let g = Genotype::from_ops(&topology, &ops)?;
        if has_learnable_path(&g, topology.num_nodes) {
            return Ok(g);
        }
    }
}

fn argmax_labels(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| crate::supernet::argmax_first(logits.row(i)))
        .collect()
}

/// Generate a labelled, split dataset from a seeded teacher.
///
/// Up to [`TEACHER_DRAWS`] teacher weight sets are drawn; the most balanced one
/// whose class fractions all lie in `[1/(2c), 2/c]` is kept.
pub fn gen_teacher_dataset(spec: &TeacherSpec, seed: u64) -> Result<TeacherData> {
    spec.validate()?;
    let space = &spec.space;
    let genotype = match &spec.genotype {
        Some(g) => g.clone(),
        None => draw_teacher_genotype(space, &mut rng_for(seed, "teacher.genotype"))?,
    };
    let n = spec.n_samples;
    let clean = Tensor::matrix(
        n,
        space.d_in,
        gaussian_vec(&mut rng_for(seed, "inputs"), n * space.d_in, 1.0),
    )?;

    let c = space.n_classes as f64;
    let (lo, hi) = (1.0 / (2.0 * c), 2.0 / c);
    let mut best: Option<(f64, DiscreteNet, Vec<usize>)> = None;
    let mut worst_seen = (0usize, 0.0f64);
    for attempt in 0..TEACHER_DRAWS {
        let mut rng = rng_for(seed, &format!("teacher.weights.{attempt}"));
        let net = DiscreteNet::new(space.clone(), genotype.clone(), &mut rng)?;
        let labels = argmax_labels(&discrete_forward(&genotype, &net, &clean)?);
        let fr = class_fractions(&labels, space.n_classes);
        let (top, top_f) = fr
            .iter()
            .enumerate()
            .fold((0, 0.0), |acc, (i, &f)| if f > acc.1 { (i, f) } else { acc });
        if top_f > worst_seen.1 && best.is_none() {
            worst_seen = (top, top_f);
        }
        if fr.iter().all(|&f| f >= lo && f <= hi) {
            let dev = fr.iter().map(|f| (f - 1.0 / c).abs()).fold(0.0, f64::max);
            if best.as_ref().is_none_or(|b| dev < b.0) {
                best = Some((dev, net, labels));
            }
        }
    }
    let Some((_, teacher, labels)) = best else {
        return Err(Error::DegenerateTeacher {
            class: worst_seen.0,
            fraction: worst_seen.1,
            attempts: TEACHER_DRAWS,
        });
    };

    let inputs = if spec.noise_std > 0.0 {
        let noise = gaussian_vec(&mut rng_for(seed, "noise"), n * space.d_in, spec.noise_std);
        let data = clean.data().iter().zip(noise).map(|(a, b)| a + b).collect();
        Tensor::matrix(n, space.d_in, data)?
    } else {
        clean.clone()
    };
    let data = Dataset {
        inputs,
        labels,
        n_classes: space.n_classes,
    };
    Ok(TeacherData {
        spec: spec.clone(),
        seed,
        genotype,
        teacher,
        clean_inputs: clean,
        split: SplitDataset::split(data, spec.split_fraction, seed),
    })
}

/// Which data feeds the weight step and which feeds the architecture step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchMode {
    /// Weights on train, architecture on valid.
    DiffDataset,
    /// Both on train, disjoint batches.
    SameDatasetDiffBatch,
    /// One shared batch.
    SameBatch,
}

impl BatchMode {
    pub const ALL: [BatchMode; 3] = [
        BatchMode::DiffDataset,
        BatchMode::SameDatasetDiffBatch,
        BatchMode::SameBatch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BatchMode::DiffDataset => "diff-dataset",
            BatchMode::SameDatasetDiffBatch => "same-dataset-diff-batch",
            BatchMode::SameBatch => "same-batch",
        }
    }
}

impl std::str::FromStr for BatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BatchMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown batch mode `{s}`")))
    }
}

#[derive(Debug, Clone)]
pub struct BatchPair {
    pub batch_w: Batch,
    pub batch_alpha: Batch,
    pub mode: BatchMode,
}

/// Epoch-based sampling without replacement over an index pool.
#[derive(Debug, Clone)]
struct Stream {
    pool: Vec<usize>,
    perm: Vec<usize>,
    pos: usize,
    epoch: usize,
}

impl Stream {
    fn new(pool: Vec<usize>, rng: &mut Rng) -> Self {
        let mut perm = pool.clone();
        perm.shuffle(rng);
        Stream {
            pool,
            perm,
            pos: 0,
            epoch: 0,
        }
    }

    /// Next chunk; the final chunk of an epoch may be short so every index is seen once.
    fn next(&mut self, size: usize, rng: &mut Rng) -> Vec<usize> {
        if self.pos >= self.perm.len() {
            self.perm = self.pool.clone();
            self.perm.shuffle(rng);
            self.pos = 0;
            self.epoch += 1;
        }
        let end = (self.pos + size).min(self.perm.len());
        let out = self.perm[self.pos..end].to_vec();
        self.pos = end;
        out
    }

    /// Next `size` indices avoiding `exclude`, wrapping epochs as needed.
    fn next_excluding(&mut self, size: usize, exclude: &[usize], rng: &mut Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos >= self.perm.len() {
                self.perm = self.pool.clone();
                self.perm.shuffle(rng);
                self.pos = 0;
                self.epoch += 1;
            }
            let i = self.perm[self.pos];
            self.pos += 1;
            if !exclude.contains(&i) && !out.contains(&i) {
                out.push(i);
            }
        }
        out
    }
}

/// Seeded source of [`BatchPair`]s.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    batch_size: usize,
    rng: Rng,
    w_stream: Stream,
    train_alpha: Stream,
    valid_alpha: Stream,
}

impl BatchSampler {
    pub fn new(split: &SplitDataset, batch_size: usize, seed: u64) -> Result<Self> {
        let smallest = split.train_idx.len().min(split.valid_idx.len());
        if batch_size == 0 || batch_size > smallest {
            return Err(Error::BatchTooLarge {
                batch: batch_size,
                split: smallest,
            });
        }
        let mut rng = rng_for(seed, "sampler");
        let w_stream = Stream::new(split.train_idx.clone(), &mut rng);
        let train_alpha = Stream::new(split.train_idx.clone(), &mut rng);
        let valid_alpha = Stream::new(split.valid_idx.clone(), &mut rng);
        Ok(BatchSampler {
            batch_size,
            rng,
            w_stream,
            train_alpha,
            valid_alpha,
        })
    }

    /// Weight-stream batches per epoch.
    pub fn steps_per_epoch(&self) -> usize {
        self.w_stream.pool.len().div_ceil(self.batch_size)
    }

    pub fn epoch(&self) -> usize {
        self.w_stream.epoch
    }

    pub fn next_indices(&mut self, mode: BatchMode) -> Result<(Vec<usize>, Vec<usize>)> {
        let w = self.w_stream.next(self.batch_size, &mut self.rng);
        let a = match mode {
            BatchMode::SameBatch => w.clone(),
            BatchMode::DiffDataset => self.valid_alpha.next(w.len(), &mut self.rng),
            BatchMode::SameDatasetDiffBatch => {
                let avail = self.train_alpha.pool.len() - w.len();
                if w.len() > avail {
                    return Err(Error::BatchTooLarge {
                        batch: w.len(),
                        split: avail,
                    });
                }
                self.train_alpha.next_excluding(w.len(), &w, &mut self.rng)
            }
        };
        Ok((w, a))
    }

    pub fn next_batch_pair(&mut self, data: &Dataset, mode: BatchMode) -> Result<BatchPair> {
        let (w, a) = self.next_indices(mode)?;
        Ok(BatchPair {
            batch_w: data.batch(&w),
            batch_alpha: data.batch(&a),
            mode,
        })
    }
}

/// JSON sidecar stored next to the binary dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSidecar {
    pub spec: TeacherSpec,
    pub seed: u64,
    pub teacher_genotype: Genotype,
    pub fingerprint: String,
}

/// Little-endian binary form: magic, version, d_in, n_classes, n_samples, f64 inputs, i32 labels.
pub fn encode_dataset(data: &Dataset) -> Vec<u8> {
    let d_in = data.inputs.cols();
    let mut out = Vec::with_capacity(24 + data.inputs.len() * 8 + data.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(d_in as u32).to_le_bytes());
    out.extend_from_slice(&(data.n_classes as u32).to_le_bytes());
    out.extend_from_slice(&(data.len() as u64).to_le_bytes());
    for v in data.inputs.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &l in &data.labels {
        out.extend_from_slice(&(l as i32).to_le_bytes());
    }
    out
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = bytes;
    let mut take = |n: usize| -> Result<&[u8]> {
        if r.len() < n {
            return Err(Error::Parse("dataset file truncated".into()));
        }
        let (a, b) = r.split_at(n);
        r = b;
        Ok(a)
    };
    if take(4)? != MAGIC {
        return Err(Error::Parse("bad dataset magic".into()));
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
    let version = u32_at(take(4)?);
    if version != FORMAT_VERSION {
        return Err(Error::Parse(format!("unsupported dataset version {version}")));
    }
    let d_in = u32_at(take(4)?) as usize;
    let n_classes = u32_at(take(4)?) as usize;
    let n = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
    let mut inputs = Vec::with_capacity(n * d_in);
    for chunk in take(n * d_in * 8)?.chunks_exact(8) {
        inputs.push(f64::from_le_bytes(chunk.try_into().expect("8 bytes")));
    }
    let mut labels = Vec::with_capacity(n);
    for chunk in take(n * 4)?.chunks_exact(4) {
        let l = i32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if l < 0 || l as usize >= n_classes {
            return Err(Error::Parse(format!("label {l} out of range")));
        }
        labels.push(l as usize);
    }
    if !take(0)?.is_empty() || !r.is_empty() {
        return Err(Error::Parse("trailing bytes in dataset file".into()));
    }
    Ok(Dataset {
        inputs: Tensor::matrix(n, d_in, inputs)?,
        labels,
        n_classes,
    })
}

/// Write `<stem>.bin` and `<stem>.json`; returns the dataset fingerprint.
pub fn save_dataset(td: &TeacherData, dir: &Path, stem: &str) -> Result<String> {
    fs::create_dir_all(dir)?;
    let bytes = encode_dataset(&td.split.data);
    let fp = fingerprint(&bytes);
    fs::File::create(dir.join(format!("{stem}.bin")))?.write_all(&bytes)?;
    let sidecar = DatasetSidecar {
        spec: td.spec.clone(),
        seed: td.seed,
        teacher_genotype: td.genotype.clone(),
        fingerprint: fp.clone(),
    };
    fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&sidecar)? + "\n",
    )?;
    Ok(fp)
}

/// Read a dataset pair written by [`save_dataset`] and rebuild its split.
pub fn load_dataset(dir: &Path, stem: &str) -> Result<(SplitDataset, DatasetSidecar)> {
    let mut bytes = Vec::new();
    fs::File::open(dir.join(format!("{stem}.bin")))?.read_to_end(&mut bytes)?;
    let sidecar: DatasetSidecar =
        serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
    let fp = fingerprint(&bytes);
    if fp != sidecar.fingerprint {
        return Err(Error::FingerprintMismatch {
            expected: sidecar.fingerprint,
            found: fp,
        });
    }
    let data = decode_dataset(&bytes)?;
    let split = SplitDataset::split(data, sidecar.spec.split_fraction, sidecar.seed);
    Ok((split, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_spec() -> TeacherSpec {
        TeacherSpec {
            n_samples: 512,
            batch_size: 16,
            ..TeacherSpec::default()
        }
    }

    #[test]
    fn noiseless_teacher_reproduces_labels() {
        let td = gen_teacher_dataset(&small_spec(), 3).unwrap();
        let logits = discrete_forward(&td.genotype, &td.teacher, &td.split.data.inputs).unwrap();
        assert_eq!(argmax_labels(&logits), td.split.data.labels);
        assert!(td.genotype.ops().iter().any(|o| o.learnable()));
    }

    #[test]
    fn learnable_path_detection() {
        let t = SpaceConfig::micro().topology().unwrap();
        use OpKind::*;
        let cases = [
            ([Lin, Zero, Zero], false),
            ([Lin, Zero, Skip], true),
            ([Zero, Skip, NonLin], false),
            ([Skip, Zero, NonLin], true),
            ([Zero, Lin, Zero], true),
        ];
        for (ops, want) in cases {
            let g = Genotype::from_ops(&t, &ops).unwrap();
            assert_eq!(has_learnable_path(&g, 3), want, "{g}");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_teacher_dataset(&small_spec(), 9).unwrap();
        let b = gen_teacher_dataset(&small_spec(), 9).unwrap();
        assert_eq!(encode_dataset(&a.split.data), encode_dataset(&b.split.data));
        assert_eq!(a.split, b.split);
    }

    #[test]
    fn default_classes_are_balanced() {
        let td = gen_teacher_dataset(&TeacherSpec::default(), 0).unwrap();
        for f in td.split.data.class_fractions() {
            assert!((0.125..=0.5).contains(&f), "{f}");
        }
    }

    #[test]
    fn split_is_a_partition() {
        let td = gen_teacher_dataset(&small_spec(), 1).unwrap();
        let mut all = td.split.train_idx.clone();
        all.extend(&td.split.valid_idx);
        all.sort_unstable();
        assert_eq!(all, (0..512).collect::<Vec<_>>());
        assert_eq!(td.split.train_idx.len(), 256);
    }

    #[test]
    fn invalid_specs_name_the_field() {
        let mut s = small_spec();
        s.noise_std = -1.0;
        match gen_teacher_dataset(&s, 0) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "noise_std"),
            other => panic!("{other:?}"),
        }
        let mut s = small_spec();
        s.n_samples = 10;
        assert!(matches!(gen_teacher_dataset(&s, 0), Err(Error::Config { .. })));
    }

    #[test]
    fn binary_round_trip_and_rejects_garbage() {
        let td = gen_teacher_dataset(&small_spec(), 2).unwrap();
        let bytes = encode_dataset(&td.split.data);
        assert_eq!(&bytes[..4], b"DLDS");
        assert_eq!(decode_dataset(&bytes).unwrap(), td.split.data);
        assert!(decode_dataset(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_dataset(&bad).is_err());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let td = gen_teacher_dataset(&small_spec(), 4).unwrap();
        let fp = save_dataset(&td, dir.path(), "data").unwrap();
        let (split, side) = load_dataset(dir.path(), "data").unwrap();
        assert_eq!(side.fingerprint, fp);
        assert_eq!(split, td.split);
    }

    #[test]
    fn batch_larger_than_split_rejected() {
        let td = gen_teacher_dataset(&small_spec(), 5).unwrap();
        assert!(matches!(
            BatchSampler::new(&td.split, 1000, 0),
            Err(Error::BatchTooLarge { .. })
        ));
    }

    #[test]
    fn one_epoch_covers_train_exactly_once() {
        let td = gen_teacher_dataset(&small_spec(), 6).unwrap();
        for bs in [16, 20] {
            let mut s = BatchSampler::new(&td.split, bs, 1).unwrap();
            let mut seen = Vec::new();
            for _ in 0..s.steps_per_epoch() {
                seen.extend(s.next_indices(BatchMode::SameBatch).unwrap().0);
            }
            seen.sort_unstable();
            assert_eq!(seen, td.split.train_idx);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(4))]
        #[test]
        fn pairs_respect_mode_invariants(seed in 0u64..1000) {
            let td = gen_teacher_dataset(&small_spec(), 7).unwrap();
            let train: std::collections::HashSet<_> = td.split.train_idx.iter().copied().collect();
            let valid: std::collections::HashSet<_> = td.split.valid_idx.iter().copied().collect();
            let mut s = BatchSampler::new(&td.split, 16, seed).unwrap();
            for draw in 0..1000 {
                let mode = BatchMode::ALL[draw % 3];
                let (w, a) = s.next_indices(mode).unwrap();
                prop_assert!(w.iter().all(|i| train.contains(i)));
                match mode {
                    BatchMode::SameBatch => prop_assert_eq!(&w, &a),
                    BatchMode::SameDatasetDiffBatch => {
                        prop_assert!(a.iter().all(|i| train.contains(i)));
                        prop_assert!(a.iter().all(|i| !w.contains(i)));
                    }
                    BatchMode::DiffDataset => {
                        prop_assert!(a.iter().all(|i| valid.contains(i)));
                    }
                }
            }
        }
    }
}
