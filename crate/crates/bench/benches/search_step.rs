use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use darts_lab::data::{gen_teacher_dataset, BatchMode, BatchSampler, TeacherSpec};
use darts_lab::search::{step_bilevel, step_single, Level, Optimizers, SearchConfig, StepLrs};
use darts_lab::supernet::{GateMode, SuperNet};

fn steps(c: &mut Criterion) {
    let spec = TeacherSpec {
        n_samples: 1024,
        ..TeacherSpec::default()
    };
    let td = gen_teacher_dataset(&spec, 0).unwrap();
    let split = &td.split;
    let cases = [
        (Level::BiLevel, BatchMode::DiffDataset),
        (Level::BiLevel, BatchMode::SameDatasetDiffBatch),
        (Level::SingleLevel, BatchMode::SameBatch),
    ];
    for (level, mode) in cases {
        let cfg = SearchConfig::sgd_both(level, mode, GateMode::Softmax, 0.005);
        let net = SuperNet::new(cfg.space.clone(), cfg.gate_mode, 0).unwrap();
        let opt = Optimizers::new(&net, &cfg);
        let pair = BatchSampler::new(split, cfg.batch_size, 0)
            .unwrap()
            .next_batch_pair(&split.data, mode)
            .unwrap();
        let lrs = StepLrs { w: 0.005, alpha: 0.005 };
        c.bench_function(&format!("search_step/{}/{}", level.name(), mode.name()), |b| {
            b.iter_batched(
                || (net.clone(), opt.clone()),
                |(mut n, mut o)| match level {
                    Level::BiLevel => step_bilevel(&mut n, &pair, &mut o, lrs).unwrap(),
                    Level::SingleLevel => step_single(&mut n, &pair, &mut o, lrs).unwrap(),
                },
                BatchSize::SmallInput,
            )
        });
    }
}

criterion_group!(benches, steps);
criterion_main!(benches);
