use darts_lab::dynamics::*;
use darts_lab::rng::{derive_seed, gaussian_vec, rng_for};
use darts_lab::Error;

fn instances(count: usize) -> Vec<DynamicsInstance> {
    (0..count)
        .map(|i| {
            let dir = if i % 2 == 0 { Direction::Ascent } else { Direction::Descent };
            random_instance(derive_seed(42, &format!("id.{i}")), &InstanceRanges::default(), 0.1, dir).unwrap()
        })
        .collect()
}

#[test]
fn closed_form_gradient_matches_autodiff_at_random_points() {
    for (i, inst) in instances(300).iter().enumerate() {
        let alpha = gaussian_vec(&mut rng_for(i as u64, "alpha"), inst.n(), 1.0);
        let cf = softmax_alpha_grad(inst, &alpha);
        let ad = softmax_alpha_grad_autodiff(inst, &alpha).unwrap();
        for (a, b) in cf.iter().zip(&ad) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()), "{i}: {a} vs {b}");
        }
        assert!(cf.iter().sum::<f64>().abs() < 1e-12);
    }
}

#[test]
fn leader_eventually_takes_over() {
    for inst in instances(40) {
        let t = hit_time(&inst, 1_000_000);
        assert!(t.is_some(), "n {} eta {}", inst.n(), inst.eta());
    }
}

#[test]
fn two_branch_counterexample_to_the_iteration_bound() {
    // u = (1, 0): alpha grows by eta * p0 * p1 per step, slower than the bound assumes
    let inst = DynamicsInstance::new(
        vec![vec![1.0], vec![0.0]],
        vec![1.0],
        vec![0.0, 0.0],
        0.01,
        0.1,
        Direction::Ascent,
    )
    .unwrap();
    assert!((margin(&inst) - 1.0).abs() < 1e-15);
    let t = hit_time(&inst, 100_000).unwrap();
    assert!(t as f64 > inst.bound().ceil(), "t {t} bound {}", inst.bound());
    let out = iterations_to_dominate(&inst).unwrap();
    assert!(!out.within_bound);
    assert!(matches!(alpha_gap_trace(&inst, 10), Err(Error::TheoremViolation(_))));
}

#[test]
fn sweep_is_deterministic_and_covers_both_directions() {
    let ranges = InstanceRanges::default();
    let a = verify_sweep(5, 6, &[0.1, 0.01], &ranges).unwrap();
    let b = verify_sweep(5, 6, &[0.1, 0.01], &ranges).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 24);
    assert!(a.iter().any(|r| r.direction == Direction::Descent));
    assert!(a.iter().all(|r| (2..=8).contains(&r.n)));
}

#[test]
fn invalid_preconditions_rejected() {
    let z = vec![vec![1.0], vec![0.0]];
    // leader by score is branch 0 but alpha0 favours branch 1
    assert!(DynamicsInstance::new(z.clone(), vec![1.0], vec![0.0, 0.5], 0.1, 0.1, Direction::Ascent).is_err());
    // eps outside (0, 1 - 1/n)
    assert!(DynamicsInstance::new(z.clone(), vec![1.0], vec![0.0, 0.0], 0.1, 0.6, Direction::Ascent).is_err());
    // zero margin
    assert!(DynamicsInstance::new(vec![vec![1.0], vec![1.0]], vec![1.0], vec![0.0, 0.0], 0.1, 0.1, Direction::Ascent).is_err());
}
