//! Whale optimization for transmit-power allocation: encircling, spiral and
//! exploration moves, penalty fitness, projection onto the power budget and
//! an elitist optimizer with a per-iteration trace.

use crate::rng::Rng;
use rand::seq::IndexedRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum WoaError {
    #[error("invalid WOA hyperparameters: {0}")]
    Hyper(String),
    #[error("bounds mismatch: {0}")]
    Bounds(String),
    #[error("non-finite rate for entry {0}")]
    NonFiniteRate(usize),
    #[error("fitness evaluation failed: {0}")]
    Eval(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WoaHyper {
    pub pop_size: usize,
    pub max_iters: usize,
    pub spiral_b: f64,
    pub penalty_mu: f64,
    pub r_min_bps: f64,
}

impl Default for WoaHyper {
    fn default() -> Self {
        Self {
            pop_size: 30,
            max_iters: 500,
            spiral_b: 1.0,
            penalty_mu: 1e14,
            r_min_bps: 1e-24,
        }
    }
}

impl WoaHyper {
    pub fn validate(&self) -> Result<(), WoaError> {
        if self.pop_size < 1 {
            return Err(WoaError::Hyper("pop_size must be at least 1".into()));
        }
        if self.max_iters < 1 {
            return Err(WoaError::Hyper("max_iters must be at least 1".into()));
        }
        if !(self.penalty_mu > 0.0 && self.penalty_mu.is_finite()) {
            return Err(WoaError::Hyper("penalty_mu must be positive".into()));
        }
        if !self.spiral_b.is_finite() {
            return Err(WoaError::Hyper("spiral_b must be finite".into()));
        }
        if !(self.r_min_bps >= 0.0 && self.r_min_bps.is_finite()) {
            return Err(WoaError::Hyper("r_min_bps must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-whale coefficients of one iteration; A and C hold one entry per
/// dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Coeffs {
    pub a: f64,
    pub big_a: Vec<f64>,
    pub c: Vec<f64>,
    pub l: f64,
    pub p: f64,
}

/// a decays linearly from 2 to 0; A = 2a·r − a, C = 2r with fresh
/// r ~ U[0, 1] per entry, l ~ U[−1, 1], p ~ U[0, 1].
pub fn coeffs(t: usize, max_iters: usize, dim: usize, rng: &mut Rng) -> Coeffs {
    let a = 2.0 * (1.0 - t as f64 / max_iters as f64);
    let big_a = (0..dim).map(|_| 2.0 * a * rng.random::<f64>() - a).collect();
    let c = (0..dim).map(|_| 2.0 * rng.random::<f64>()).collect();
    Coeffs {
        a,
        big_a,
        c,
        l: rng.random_range(-1.0..=1.0),
        p: rng.random(),
    }
}

/// x' = x_best − A·|C·x_best − x|, element-wise.
pub fn encircle(x: &[f64], best: &[f64], big_a: &[f64], c: &[f64]) -> Vec<f64> {
    (0..x.len()).map(|k| best[k] - big_a[k] * (c[k] * best[k] - x[k]).abs()).collect()
}

/// x' = |x_best − x|·e^{bl}·cos(2πl) + x_best.
pub fn spiral(x: &[f64], best: &[f64], b: f64, l: f64) -> Vec<f64> {
    let f = (b * l).exp() * (TAU * l).cos();
    x.iter().zip(best).map(|(&xi, &bi)| (bi - xi).abs() * f + bi).collect()
}

/// Same move as [`encircle`] around a randomly chosen whale.
pub fn explore(x: &[f64], x_rand: &[f64], big_a: &[f64], c: &[f64]) -> Vec<f64> {
    encircle(x, x_rand, big_a, c)
}

/// Fitness value with the number of violated rate constraints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub fitness: f64,
    pub violations: usize,
}

/// −Σ R + μ·Σ_{R < R_min} (R − R_min)². A shortfall below `tol` does not
/// count as a violation.
pub fn penalty_fitness(rates: &[f64], r_min: f64, mu: f64, tol: f64) -> Result<Evaluation, WoaError> {
    let mut sum = 0.0;
    let mut penalty = 0.0;
    let mut violations = 0;
    for (i, &r) in rates.iter().enumerate() {
        if !r.is_finite() {
            return Err(WoaError::NonFiniteRate(i));
        }
        sum += r;
        let f = r - r_min;
        if f < 0.0 {
            penalty += f * f;
            if -f > tol {
                violations += 1;
            }
        }
    }
    Ok(Evaluation {
        fitness: -sum + mu * penalty,
        violations,
    })
}

/// Box bounds plus per-group sum budgets (one group per GBS).
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub groups: Vec<(Vec<usize>, f64)>,
}

impl Bounds {
    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self {
            lower,
            upper,
            groups: Vec::new(),
        }
    }

    /// Power bounds: each entry in [0, p_max] and each group summing to at
    /// most p_max.
    pub fn power(groups: Vec<Vec<usize>>, dim: usize, p_max: f64) -> Self {
        Self {
            lower: vec![0.0; dim],
            upper: vec![p_max; dim],
            groups: groups.into_iter().map(|g| (g, p_max)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    fn validate(&self) -> Result<(), WoaError> {
        if self.lower.len() != self.upper.len() || self.lower.is_empty() {
            return Err(WoaError::Bounds(format!("{} lower vs {} upper", self.lower.len(), self.upper.len())));
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite()) {
            return Err(WoaError::Bounds("need finite lower ≤ upper".into()));
        }
        for (g, cap) in &self.groups {
            if g.iter().any(|&i| i >= self.dim()) {
                return Err(WoaError::Bounds("group index out of range".into()));
            }
            if g.iter().any(|&i| self.lower[i] < 0.0) || !(*cap >= 0.0) {
                return Err(WoaError::Bounds("budget groups need non-negative entries".into()));
            }
        }
        Ok(())
    }

    /// Clips to the box, then scales any over-budget group radially onto its
    /// budget.
    pub fn project(&self, x: &mut [f64]) {
        for ((v, &lo), &hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = if v.is_nan() { lo } else { v.clamp(lo, hi) };
        }
        for (g, cap) in &self.groups {
            let sum: f64 = g.iter().map(|&i| x[i]).sum();
            if sum > *cap {
                let s = cap / sum;
                g.iter().for_each(|&i| x[i] *= s);
            }
        }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.iter()
            .zip(&self.lower)
            .zip(&self.upper)
            .all(|((&v, &lo), &hi)| v >= lo - tol && v <= hi + tol)
            && self.groups.iter().all(|(g, cap)| g.iter().map(|&i| x[i]).sum::<f64>() <= cap + tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WoaResult {
    pub best: Vec<f64>,
    pub best_eval: Evaluation,
    pub trace: Vec<TraceRow>,
}

fn evaluate_all<F>(pop: &[Vec<f64>], eval: &F, workers: usize) -> Result<Vec<Evaluation>, WoaError>
where
    F: Fn(&[f64]) -> Result<Evaluation, WoaError> + Sync,
{
    if workers > 1 {
        pop.par_iter().map(|x| eval(x)).collect()
    } else {
        pop.iter().map(|x| eval(x)).collect()
    }
}

fn checked(e: Evaluation) -> Result<Evaluation, WoaError> {
    if e.fitness.is_nan() {
        Err(WoaError::Eval("NaN fitness".into()))
    } else {
        Ok(e)
    }
}

/// Minimizes `eval` over `bounds`. Whale 0 starts at `init` when given; the
/// rest start uniformly in the box. Every position is projected after each
/// move and the best-so-far whale is kept. Whales are ranked by violation
/// count, then fitness, so the best fitness never increases while the
/// violation count stays fixed. Row 0 of the trace is the initial population.
pub fn optimize<F>(
    bounds: &Bounds,
    init: Option<&[f64]>,
    eval: F,
    hyper: &WoaHyper,
    rng: &mut Rng,
    workers: usize,
) -> Result<WoaResult, WoaError>
where
    F: Fn(&[f64]) -> Result<Evaluation, WoaError> + Sync,
{
    hyper.validate()?;
    bounds.validate()?;
    let eval = |x: &[f64]| eval(x).and_then(checked);
    let dim = bounds.dim();
    if let Some(x0) = init {
        if x0.len() != dim {
            return Err(WoaError::Bounds(format!("initial point has {} entries, expected {dim}", x0.len())));
        }
    }
    let mut pop: Vec<Vec<f64>> = (0..hyper.pop_size)
        .map(|i| {
            let mut x: Vec<f64> = match init {
                Some(x0) if i == 0 => x0.to_vec(),
                _ => (0..dim)
                    .map(|k| bounds.lower[k] + rng.random::<f64>() * (bounds.upper[k] - bounds.lower[k]))
                    .collect(),
            };
            bounds.project(&mut x);
            x
        })
        .collect();
    let mut evals = evaluate_all(&pop, &eval, workers)?;
    let (mut best, mut best_eval) = {
        let i = argmin(&evals);
        (pop[i].clone(), evals[i])
    };
    let mut trace = vec![row(0, &best_eval, &evals)];
    for t in 0..hyper.max_iters {
        let snapshot = pop.clone();
        for x in pop.iter_mut() {
            let k = coeffs(t, hyper.max_iters, dim, rng);
            let mut next = if k.p < 0.5 {
                // Entries with |A| < 1 close in on the best whale; the rest
                // move relative to a random whale.
                let other = snapshot.choose(rng).expect("non-empty population");
                let near = encircle(x, &best, &k.big_a, &k.c);
                let far = explore(x, other, &k.big_a, &k.c);
                (0..dim).map(|j| if k.big_a[j].abs() < 1.0 { near[j] } else { far[j] }).collect()
            } else {
                spiral(x, &best, hyper.spiral_b, k.l)
            };
            bounds.project(&mut next);
            *x = next;
        }
        evals = evaluate_all(&pop, &eval, workers)?;
        let i = argmin(&evals);
        if better(&evals[i], &best_eval) {
            best = pop[i].clone();
            best_eval = evals[i];
        }
        trace.push(row(t + 1, &best_eval, &evals));
    }
    Ok(WoaResult { best, best_eval, trace })
}

/// Fewer violations first, then lower fitness.
fn better(a: &Evaluation, b: &Evaluation) -> bool {
    (a.violations, a.fitness) < (b.violations, b.fitness)
}

fn argmin(evals: &[Evaluation]) -> usize {
    let mut k = 0;
    for (i, e) in evals.iter().enumerate() {
        if better(e, &evals[k]) {
            k = i;
        }
    }
    k
}

fn row(iter: usize, best: &Evaluation, evals: &[Evaluation]) -> TraceRow {
    TraceRow {
        iter,
        best_fitness: best.fitness,
        mean_fitness: evals.iter().map(|e| e.fitness).sum::<f64>() / evals.len() as f64,
        violations: best.violations,
    }
}
