use darts_lab::bench::*;
use darts_lab::data::{gen_teacher_dataset, save_dataset, SplitDataset, TeacherSpec};
use darts_lab::supernet::{Genotype, OpKind, SpaceConfig};
use darts_lab::Error;

fn setup() -> (SplitDataset, String, BenchConfig) {
    let spec = TeacherSpec {
        n_samples: 256,
        ..TeacherSpec::default()
    };
    let td = gen_teacher_dataset(&spec, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let fp = save_dataset(&td, dir.path(), "data").unwrap();
    let cfg = BenchConfig {
        train_steps: 20,
        ..BenchConfig::default()
    };
    (td.split, fp, cfg)
}

#[test]
fn micro_table_has_every_genotype_and_rebuilds_identically() {
    let (split, fp, cfg) = setup();
    let a = build_table(&cfg, &split, &fp, BuildOptions::default()).unwrap();
    assert_eq!(a.entries.len(), 64);
    assert!(a.is_complete());
    let b = build_table(&cfg, &split, &fp, BuildOptions { workers: 3, ..Default::default() }).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn resume_from_checkpoint_matches_full_build() {
    let (split, fp, cfg) = setup();
    let full = build_table(&cfg, &split, &fp, BuildOptions::default()).unwrap();
    let mut partial = full.clone();
    partial.entries.retain(|e| e.index % 3 == 0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("table.json");
    let resumed = build_table(
        &cfg,
        &split,
        &fp,
        BuildOptions {
            workers: 2,
            resume_from: Some(partial),
            checkpoint: Some(&path),
        },
    )
    .unwrap();
    assert_eq!(resumed, full);
    assert_eq!(load_table(&path).unwrap(), full);
}

#[test]
fn resume_refuses_foreign_table() {
    let (split, fp, cfg) = setup();
    let mut other = build_table(&cfg, &split, &fp, BuildOptions::default()).unwrap();
    other.fingerprint = "0".repeat(64);
    let res = build_table(&cfg, &split, &fp, BuildOptions { resume_from: Some(other), ..Default::default() });
    assert!(matches!(res, Err(Error::FingerprintMismatch { .. })));
}

#[test]
fn rank_is_consistent_with_accuracy_order() {
    let (split, fp, cfg) = setup();
    let t = build_table(&cfg, &split, &fp, BuildOptions::default()).unwrap();
    let best = optimal(&t).unwrap();
    assert_eq!(rank(&t, &best).unwrap(), 0.0);
    for a in &t.entries {
        for b in &t.entries {
            let ra = rank(&t, &Genotype::from_key(&a.genotype).unwrap()).unwrap();
            let rb = rank(&t, &Genotype::from_key(&b.genotype).unwrap()).unwrap();
            if a.valid_accuracy > b.valid_accuracy {
                assert!(ra < rb);
            }
            if a.valid_accuracy == b.valid_accuracy {
                assert_eq!(ra, rb);
            }
        }
    }
    assert!(matches!(rank_checked(&t, "nope", &best), Err(Error::FingerprintMismatch { .. })));
}

#[test]
fn all_zero_genotype_scores_chance_exactly() {
    let (split, _, cfg) = setup();
    let topo = SpaceConfig::micro().topology().unwrap();
    let out = train_genotype(&cfg, &split, &Genotype::uniform(&topo, OpKind::Zero), 0).unwrap();
    assert!((out.valid_accuracy - 0.25).abs() < 1e-12);
}

#[test]
fn tie_credit_splits_evenly() {
    assert_eq!(tie_credit(&[1.0, 1.0, 0.0], 0), 0.5);
    assert_eq!(tie_credit(&[1.0, 1.0, 0.0], 2), 0.0);
    assert_eq!(tie_credit(&[0.0, 2.0], 1), 1.0);
}

#[test]
fn incomplete_table_has_no_optimum() {
    let (split, fp, cfg) = setup();
    let mut t = build_table(&cfg, &split, &fp, BuildOptions::default()).unwrap();
    t.entries.pop();
    assert!(matches!(optimal(&t), Err(Error::IncompleteTable { .. })));
}
