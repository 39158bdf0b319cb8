//! Gradient dynamics of a softmax mixture `l = a^T Σ_i p_i z_i` under plain
//! gradient ascent or descent on the mixing logits.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::rng::{gaussian_vec, rng_for};
use crate::supernet::gate_values;
use crate::supernet::GateMode;

/// Default dimension of the branch vectors.
pub const DEFAULT_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Ascent,
    Descent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsInstance {
    z: Vec<Vec<f64>>,
    a: Vec<f64>,
    alpha0: Vec<f64>,
    eta: f64,
    eps: f64,
    direction: Direction,
    leader: usize,
    delta: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl DynamicsInstance {
    pub fn new(z: Vec<Vec<f64>>, a: Vec<f64>, alpha0: Vec<f64>, eta: f64, eps: f64, direction: Direction) -> Result<Self> {
        let n = z.len();
        if n < 2 {
            return Err(Error::config("n", "need at least 2 branches"));
        }
        if z.iter().any(|zi| zi.len() != a.len()) || alpha0.len() != n {
            return Err(Error::shape("dynamics", format!("{n} branches, a of length {}", a.len())));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::config("eta", "must be positive"));
        }
        if !(eps > 0.0 && eps < 1.0 - 1.0 / n as f64) {
            return Err(Error::config("eps", format!("must lie in (0, {})", 1.0 - 1.0 / n as f64)));
        }
        let sign = match direction {
            Direction::Ascent => 1.0,
            Direction::Descent => -1.0,
        };
        let u: Vec<f64> = z.iter().map(|zi| sign * dot(&a, zi)).collect();
        let leader = crate::supernet::argmax_first(&u);
        let delta = (0..n)
            .filter(|&i| i != leader)
            .map(|i| u[leader] - u[i])
            .fold(f64::INFINITY, f64::min);
        if !(delta > 0.0) {
            return Err(Error::config("z", format!("margin must be strictly positive, got {delta}")));
        }
        if alpha0.iter().any(|&x| x > alpha0[leader]) {
            return Err(Error::config("alpha0", "the leading branch must start with the largest logit"));
        }
        Ok(DynamicsInstance {
            z,
            a,
            alpha0,
            eta,
            eps,
            direction,
            leader,
            delta,
        })
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    /// Index of the branch expected to take over.
    pub fn leader(&self) -> usize {
        self.leader
    }

    pub fn alpha0(&self) -> &[f64] {
        &self.alpha0
    }

    /// `a^T z_i` per branch.
    pub fn scores(&self) -> Vec<f64> {
        self.z.iter().map(|zi| dot(&self.a, zi)).collect()
    }

    /// `n ln((1-eps) n) / (eta delta)`
    pub fn bound(&self) -> f64 {
        let n = self.n() as f64;
        n * ((1.0 - self.eps) * n).ln() / (self.eta * self.delta)
    }

    /// One plain gradient step on α in the instance's direction.
    pub fn step(&self, alpha: &mut [f64]) {
        let g = softmax_alpha_grad(self, alpha);
        let s = match self.direction {
            Direction::Ascent => self.eta,
            Direction::Descent => -self.eta,
        };
        for (a, gi) in alpha.iter_mut().zip(g) {
            *a += s * gi;
        }
    }
}

/// Closed form `dl/dα_i = p_i Σ_j p_j a^T (z_i - z_j)`.
pub fn softmax_alpha_grad(inst: &DynamicsInstance, alpha: &[f64]) -> Vec<f64> {
    let p = gate_values(alpha, GateMode::Softmax);
    let u = inst.scores();
    (0..p.len())
        .map(|i| p[i] * (0..p.len()).map(|j| p[j] * (u[i] - u[j])).sum::<f64>())
        .collect()
}

/// The same gradient through the autodiff tape.
pub fn softmax_alpha_grad_autodiff(inst: &DynamicsInstance, alpha: &[f64]) -> Result<Vec<f64>> {
    let (n, m) = (inst.n(), inst.a.len());
    let mut tape = Tape::new();
    let al = tape.param(Tensor::vector(alpha.to_vec()));
    let p = tape.softmax(al)?;
    // z^T as [m, n] so that z^T p is the mixture
    let mut zt = vec![0.0; m * n];
    for (i, zi) in inst.z.iter().enumerate() {
        for (k, v) in zi.iter().enumerate() {
            zt[k * n + i] = *v;
        }
    }
    let zt = tape.constant(Tensor::matrix(m, n, zt)?);
    let zbar = tape.matvec(zt, p)?;
    let a = tape.constant(Tensor::matrix(1, m, inst.a.clone())?);
    let l = tape.matvec(a, zbar)?;
    let l = tape.select(l, 0)?;
    let g = tape.backward(l)?;
    Ok(g.get(al).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; n]))
}

/// Exact minimum margin over the non-leading branches.
pub fn margin(inst: &DynamicsInstance) -> f64 {
    inst.delta
}

/// Smallest `t` with `p_leader > 1 - eps`, simulating at most `max_steps` steps.
pub fn hit_time(inst: &DynamicsInstance, max_steps: usize) -> Option<usize> {
    let mut alpha = inst.alpha0.clone();
    let target = 1.0 - inst.eps;
    for t in 0..=max_steps {
        if gate_values(&alpha, GateMode::Softmax)[inst.leader] > target {
            return Some(t);
        }
        inst.step(&mut alpha);
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DominationOutcome {
    pub t_hit: usize,
    pub bound: f64,
    pub within_bound: bool,
}

/// Steps until the leader's probability exceeds `1 - eps`, with the iteration bound.
///
/// Fails with a theorem violation when no hit occurs within ten times the bound.
pub fn iterations_to_dominate(inst: &DynamicsInstance) -> Result<DominationOutcome> {
    let bound = inst.bound();
    let cap = (10.0 * bound).ceil() as usize;
    match hit_time(inst, cap) {
        Some(t) => Ok(DominationOutcome {
            t_hit: t,
            bound,
            within_bound: t as f64 <= bound.ceil(),
        }),
        None => Err(Error::TheoremViolation(format!(
            "p did not exceed 1 - eps = {} within 10 x bound = {cap} steps",
            1.0 - inst.eps
        ))),
    }
}

/// `min_{i != leader} (α_leader - α_i)` at steps `0..=steps`.
pub fn gap_series(inst: &DynamicsInstance, steps: usize) -> Vec<f64> {
    let mut alpha = inst.alpha0.clone();
    let mut out = Vec::with_capacity(steps + 1);
    for t in 0..=steps {
        let l = alpha[inst.leader];
        out.push(
            (0..inst.n())
                .filter(|&i| i != inst.leader)
                .map(|i| l - alpha[i])
                .fold(f64::INFINITY, f64::min),
        );
        if t < steps {
            inst.step(&mut alpha);
        }
    }
    out
}

/// First step whose gap falls below `eta t delta / n`.
pub fn first_gap_violation(inst: &DynamicsInstance, series: &[f64]) -> Option<usize> {
    let rate = inst.eta * inst.delta / inst.n() as f64;
    let tol = 1e-12;
    series
        .iter()
        .enumerate()
        .find(|(t, &g)| g < rate * *t as f64 - tol * (1.0 + g.abs()))
        .map(|(t, _)| t)
}

/// Gap series over `steps` steps; errors if the linear lower bound is crossed.
pub fn alpha_gap_trace(inst: &DynamicsInstance, steps: usize) -> Result<Vec<f64>> {
    let s = gap_series(inst, steps);
    match first_gap_violation(inst, &s) {
        None => Ok(s),
        Some(t) => Err(Error::TheoremViolation(format!(
            "gap {} at t = {t} is below eta t delta / n = {}",
            s[t],
            inst.eta * inst.delta * t as f64 / inst.n() as f64
        ))),
    }
}

/// Ranges for random instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRanges {
    pub n: (usize, usize),
    pub delta: (f64, f64),
    pub eta: (f64, f64),
    pub dim: usize,
}

impl Default for InstanceRanges {
    fn default() -> Self {
        InstanceRanges {
            n: (2, 8),
            delta: (0.05, 2.0),
            eta: (0.001, 0.5),
            dim: DEFAULT_DIM,
        }
    }
}

/// Instance with an exact margin drawn from `ranges`, leader logit largest at start.
pub fn random_instance(seed: u64, ranges: &InstanceRanges, eps: f64, direction: Direction) -> Result<DynamicsInstance> {
    let mut rng = rng_for(seed, "dynamics");
    let n = rng.random_range(ranges.n.0..=ranges.n.1);
    let delta = rng.random_range(ranges.delta.0..=ranges.delta.1);
    let eta = (rng.random_range(ranges.eta.0.ln()..=ranges.eta.1.ln())).exp();
    let m = ranges.dim;
    let a = gaussian_vec(&mut rng, m, 1.0);
    let aa = dot(&a, &a);
    let leader = rng.random_range(0..n);
    let runner_up = (leader + 1 + rng.random_range(0..n - 1)) % n;
    let sign = match direction {
        Direction::Ascent => 1.0,
        Direction::Descent => -1.0,
    };
    let mut z = Vec::with_capacity(n);
    for i in 0..n {
        let gap = if i == leader {
            0.0
        } else if i == runner_up {
            delta
        } else {
            delta + rng.random_range(0.0..2.0)
        };
        let target = -sign * gap;
        let mut zi = gaussian_vec(&mut rng, m, 1.0);
        let shift = (target - dot(&a, &zi)) / aa;
        zi.iter_mut().zip(&a).for_each(|(v, ai)| *v += shift * ai);
        z.push(zi);
    }
    let mut alpha0 = gaussian_vec(&mut rng, n, 0.1);
    let top = alpha0.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    alpha0[leader] = top;
    DynamicsInstance::new(z, a, alpha0, eta, eps, direction)
}

/// One row of a bound verification sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyRow {
    pub id: usize,
    pub direction: Direction,
    pub n: usize,
    pub delta: f64,
    pub eta: f64,
    pub eps: f64,
    /// `None` when the leader had not taken over after ten times the bound.
    pub t_hit: Option<usize>,
    pub bound: f64,
    pub gap_violation_at: Option<usize>,
    pub pass: bool,
}

pub fn verify_instance(id: usize, inst: &DynamicsInstance) -> VerifyRow {
    let bound = inst.bound();
    let (t_hit, within) = match iterations_to_dominate(inst) {
        Ok(o) => (Some(o.t_hit), o.within_bound),
        Err(_) => (None, false),
    };
    let horizon = t_hit.unwrap_or(bound.ceil() as usize).max(1);
    let gap = first_gap_violation(inst, &gap_series(inst, horizon));
    VerifyRow {
        id,
        direction: inst.direction,
        n: inst.n(),
        delta: inst.delta,
        eta: inst.eta,
        eps: inst.eps,
        t_hit,
        bound,
        gap_violation_at: gap,
        pass: within && gap.is_none(),
    }
}

/// `count` random instances per (eps, direction) pair, verified in parallel.
pub fn verify_sweep(seed: u64, count: usize, eps_values: &[f64], ranges: &InstanceRanges) -> Result<Vec<VerifyRow>> {
    let mut jobs = Vec::new();
    for &eps in eps_values {
        for dir in [Direction::Ascent, Direction::Descent] {
            for _ in 0..count {
                jobs.push((jobs.len(), eps, dir));
            }
        }
    }
    jobs.into_par_iter()
        .map(|(id, eps, dir)| {
            let inst = random_instance(crate::rng::derive_seed(seed, &format!("instance.{id}")), ranges, eps, dir)?;
            Ok(verify_instance(id, &inst))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_branch(u: [f64; 2], eta: f64, eps: f64) -> DynamicsInstance {
        DynamicsInstance::new(
            vec![vec![u[0]], vec![u[1]]],
            vec![1.0],
            vec![0.0, 0.0],
            eta,
            eps,
            Direction::Ascent,
        )
        .unwrap()
    }

    #[test]
    fn equal_logits_two_branches() {
        let inst = two_branch([1.0, 0.0], 0.1, 0.1);
        let g = softmax_alpha_grad(&inst, &[0.0, 0.0]);
        assert!((g[0] - 0.25).abs() < 1e-15);
        assert!((g[1] + 0.25).abs() < 1e-15);
        assert_eq!(margin(&inst), 1.0);
    }

    #[test]
    fn margin_is_the_direct_minimum() {
        let inst = DynamicsInstance::new(
            vec![vec![3.0], vec![2.5], vec![1.0]],
            vec![1.0],
            vec![0.0; 3],
            0.1,
            0.1,
            Direction::Ascent,
        )
        .unwrap();
        assert_eq!(margin(&inst), 0.5);
        let d = DynamicsInstance::new(
            vec![vec![3.0], vec![2.5], vec![1.0]],
            vec![1.0],
            vec![0.0; 3],
            0.1,
            0.1,
            Direction::Descent,
        )
        .unwrap();
        assert_eq!(d.leader(), 2);
        assert_eq!(margin(&d), 1.5);
    }

    #[test]
    fn preconditions_enforced() {
        let z = vec![vec![1.0], vec![1.0]];
        assert!(DynamicsInstance::new(z, vec![1.0], vec![0.0; 2], 0.1, 0.1, Direction::Ascent).is_err());
        let z = vec![vec![1.0], vec![0.0]];
        assert!(DynamicsInstance::new(z.clone(), vec![1.0], vec![0.0, 1.0], 0.1, 0.1, Direction::Ascent).is_err());
        assert!(DynamicsInstance::new(z, vec![1.0], vec![0.0; 2], 0.1, 0.5, Direction::Ascent).is_err());
    }

    #[test]
    fn bound_arithmetic() {
        // n = 4, eps = 0.1, eta = 0.01, delta = 0.5
        let z = vec![vec![0.5], vec![0.0], vec![0.0], vec![0.0]];
        let inst = DynamicsInstance::new(z, vec![1.0], vec![0.0; 4], 0.01, 0.1, Direction::Ascent).unwrap();
        let want = 4.0 * (3.6f64).ln() / 0.005;
        assert!((inst.bound() - want).abs() < 1e-9);
        assert!((inst.bound() - 1024.75).abs() < 0.01);
    }

    #[test]
    fn closed_form_matches_autodiff_and_sums_to_zero() {
        for s in 0..50 {
            let inst = random_instance(s, &InstanceRanges::default(), 0.1, Direction::Ascent).unwrap();
            let alpha = gaussian_vec(&mut rng_for(s, "alpha"), inst.n(), 2.0);
            let a = softmax_alpha_grad(&inst, &alpha);
            let b = softmax_alpha_grad_autodiff(&inst, &alpha).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-10);
            }
            assert!(a.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn shift_invariance() {
        let inst = random_instance(5, &InstanceRanges::default(), 0.1, Direction::Descent).unwrap();
        let alpha = gaussian_vec(&mut rng_for(1, "a"), inst.n(), 1.0);
        let shifted: Vec<f64> = alpha.iter().map(|a| a + 3.0).collect();
        let (g1, g2) = (softmax_alpha_grad(&inst, &alpha), softmax_alpha_grad(&inst, &shifted));
        for (x, y) in g1.iter().zip(&g2) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn random_instances_have_the_requested_margin() {
        let r = InstanceRanges::default();
        for s in 0..40 {
            for dir in [Direction::Ascent, Direction::Descent] {
                let inst = random_instance(s, &r, 0.1, dir).unwrap();
                let u = inst.scores();
                let sign = if dir == Direction::Ascent { 1.0 } else { -1.0 };
                let mut brute = f64::INFINITY;
                for i in 0..u.len() {
                    if i != inst.leader() {
                        brute = brute.min(sign * (u[inst.leader()] - u[i]));
                    }
                }
                assert!((margin(&inst) - brute).abs() < 1e-12);
                assert!(margin(&inst) >= 0.05 - 1e-9 && margin(&inst) <= 2.0 + 1e-9);
            }
        }
    }

    #[test]
    fn gap_is_monotone_and_starts_at_zero() {
        let inst = random_instance(9, &InstanceRanges::default(), 0.1, Direction::Ascent).unwrap();
        let inst = DynamicsInstance::new(
            inst.z.clone(),
            inst.a.clone(),
            vec![0.0; inst.n()],
            inst.eta,
            inst.eps,
            inst.direction,
        )
        .unwrap();
        let s = gap_series(&inst, 200);
        assert_eq!(s[0], 0.0);
        assert!(s.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn leader_eventually_dominates() {
        let inst = two_branch([1.0, 0.0], 0.5, 0.1);
        assert!(hit_time(&inst, 100_000).is_some());
    }

    #[test]
    fn two_branch_hit_time_exceeds_the_stated_bound() {
        // continuous-time hit time for n = 2 is (2 ln 9 + 9 - 1/9) / (2 eta delta) ~ 6.6 / (eta delta),
        // while the bound is 2 ln 1.8 / (eta delta) ~ 1.18 / (eta delta)
        let inst = two_branch([1.0, 0.0], 0.01, 0.1);
        let o = iterations_to_dominate(&inst).unwrap();
        assert!((o.t_hit as f64 - 664.0).abs() < 5.0, "{}", o.t_hit);
        assert!(!o.within_bound);
    }

    #[test]
    fn small_eps_trips_the_violation_error() {
        // hit time ~ 54 / (eta delta) against a bound of ~ 1.37 / (eta delta)
        let inst = two_branch([1.0, 0.0], 0.1, 0.01);
        assert!(matches!(iterations_to_dominate(&inst), Err(Error::TheoremViolation(_))));
    }

    #[test]
    fn two_branch_gap_falls_below_the_linear_rate() {
        // t = 1: gap = 2 eta delta p1 p2 = eta delta / 2, exactly the rate; afterwards p1 p2 < 1/4
        let inst = two_branch([1.0, 0.0], 0.1, 0.1);
        let s = gap_series(&inst, 100);
        assert_eq!(first_gap_violation(&inst, &s), Some(2));
        assert!(alpha_gap_trace(&inst, 100).is_err());
    }
}
