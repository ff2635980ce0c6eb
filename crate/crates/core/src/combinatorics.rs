//! Probabilistic constants of the bounds: minimum class mass, coupon-collector
//! coverage, collision probabilities, harmonic numbers and collector
//! stopping-time statistics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::stats::{CompensatedSum, LossEstimate, MeanAccumulator};

/// Largest class count handled by exact inclusion-exclusion.
pub const MAX_EXACT_CLASSES: usize = 25;

const UNIFORM_TOL: f64 = 1e-12;
const TRIAL_CHUNK: usize = 4096;

fn validate_rho(rho: &[f64]) -> Result<()> {
    if rho.is_empty() {
        return Err(Error::InvalidModel("empty class prior".into()));
    }
    if rho.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
        return Err(Error::InvalidModel("class prior entries must be positive".into()));
    }
    let total: f64 = rho.iter().sum();
    if (total - 1.0).abs() > UNIFORM_TOL {
        return Err(Error::InvalidModel(format!("class prior sums to {total}")));
    }
    Ok(())
}

fn is_uniform(rho: &[f64]) -> bool {
    let u = 1.0 / rho.len() as f64;
    rho.iter().all(|p| (p - u).abs() <= UNIFORM_TOL)
}

/// `H_n = sum_{i=1..n} 1/i`, added smallest term first. `H_0 = 0`.
pub fn harmonic(n: usize) -> f64 {
    (1..=n).rev().map(|i| 1.0 / i as f64).sum()
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c.round()
}

/// Probability that `n_draws` i.i.d. draws from `rho` cover every class, by
/// inclusion-exclusion `sum_S (-1)^|S| (1 - rho(S))^N`.
pub fn coupon_coverage_exact(rho: &[f64], n_draws: usize) -> Result<f64> {
    validate_rho(rho)?;
    let n_c = rho.len();
    if n_c > MAX_EXACT_CLASSES {
        return Err(Error::TooManyClasses {
            got: n_c,
            max: MAX_EXACT_CLASSES,
        });
    }
    if n_draws < n_c {
        return Ok(0.0);
    }
    let n = i32::try_from(n_draws).map_err(|_| invalid("too many draws"))?;
    let mut sum = CompensatedSum::default();
    if is_uniform(rho) {
        for j in 0..=n_c {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            let rest = (n_c - j) as f64 / n_c as f64;
            sum.add(sign * binomial(n_c, j) * rest.powi(n));
        }
    } else {
        // `outside` is the mass of the classes not in S, summed directly so
        // that S = C contributes exactly 0.
        fn walk(rho: &[f64], i: usize, odd: bool, outside: f64, n: i32, sum: &mut CompensatedSum) {
            if i == rho.len() {
                let term = outside.powi(n);
                sum.add(if odd { -term } else { term });
                return;
            }
            walk(rho, i + 1, !odd, outside, n, sum);
            walk(rho, i + 1, odd, outside + rho[i], n, sum);
        }
        walk(rho, 0, false, 0.0, n, &mut sum);
    }
    Ok(sum.value().clamp(0.0, 1.0))
}

fn sample_class<R: Rng + ?Sized>(cumulative: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1)
}

fn cumulative(rho: &[f64]) -> Vec<f64> {
    rho.iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect()
}

/// Fraction of `n_trials` simulated collections of `n_draws` that cover every
/// class, with its binomial half-width.
pub fn coupon_coverage_mc<R: Rng + ?Sized>(
    rho: &[f64],
    n_draws: usize,
    n_trials: usize,
    rng: &mut R,
) -> Result<LossEstimate> {
    validate_rho(rho)?;
    if n_trials == 0 {
        return Err(invalid("n_trials must be >= 1"));
    }
    let cdf = cumulative(rho);
    let base: u64 = rng.random();
    let mut acc = MeanAccumulator::default();
    let mut seen = vec![false; rho.len()];
    for (j, start) in (0..n_trials).step_by(TRIAL_CHUNK).enumerate() {
        let mut r = rng::derive(base, j as u64);
        for _ in start..(start + TRIAL_CHUNK).min(n_trials) {
            seen.iter_mut().for_each(|s| *s = false);
            let mut distinct = 0;
            for _ in 0..n_draws {
                let c = sample_class(&cdf, &mut r);
                if !seen[c] {
                    seen[c] = true;
                    distinct += 1;
                }
            }
            acc.push(if distinct == rho.len() { 1.0 } else { 0.0 });
        }
    }
    Ok(acc.finish())
}

/// `tau_N^+ = sum_c rho(c)^{N+1}`.
pub fn collision_prob(rho: &[f64], n_draws: usize) -> Result<f64> {
    validate_rho(rho)?;
    if n_draws == 0 {
        return Err(invalid("collision probability needs N >= 1"));
    }
    let e = i32::try_from(n_draws + 1).map_err(|_| invalid("too many draws"))?;
    let mut sum = CompensatedSum::default();
    for p in rho {
        sum.add(p.powf(f64::from(e)));
    }
    Ok(sum.value())
}

/// Default "large N" for the coverage bound: `ceil(N_C H_{N_C}) + N_C`.
pub fn large_n_threshold(n_classes: usize) -> usize {
    (n_classes as f64 * harmonic(n_classes)).ceil() as usize + n_classes
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub beta: f64,
    pub frequency: f64,
    pub bound: f64,
    /// Three binomial standard deviations at the bound.
    pub slack: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectorStats {
    pub n_classes: usize,
    pub n_trials: usize,
    pub mean: LossEstimate,
    pub variance: f64,
    /// `N_C H_{N_C}`.
    pub expected_mean: f64,
    /// `(N_C pi)^2 / 6`.
    pub variance_bound: f64,
    pub tails: Vec<TailRow>,
}

/// Simulates the collector stopping time `T` (draws until every class is
/// seen) under a uniform prior and tabulates `P(|T - N_C H| >= beta N_C)`
/// against the Chebyshev bound `pi^2 / (6 beta^2)`.
pub fn collector_stopping_stats<R: Rng + ?Sized>(
    rho: &[f64],
    n_trials: usize,
    betas: &[f64],
    rng: &mut R,
) -> Result<CollectorStats> {
    validate_rho(rho)?;
    let n_c = rho.len();
    if !is_uniform(rho) {
        let u = 1.0 / n_c as f64;
        return Err(Error::NonUniformPrior {
            n_classes: n_c,
            deviation: rho.iter().map(|p| (p - u).abs()).fold(0.0, f64::max),
        });
    }
    if n_trials < 100 {
        return Err(invalid("collector statistics need at least 100 trials"));
    }
    if betas.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
        return Err(invalid("beta must be positive"));
    }
    let base: u64 = rng.random();
    let mut times = Vec::with_capacity(n_trials);
    let mut seen = vec![false; n_c];
    for (j, start) in (0..n_trials).step_by(TRIAL_CHUNK).enumerate() {
        let mut r = rng::derive(base, j as u64);
        for _ in start..(start + TRIAL_CHUNK).min(n_trials) {
            seen.iter_mut().for_each(|s| *s = false);
            let (mut distinct, mut t) = (0, 0u64);
            while distinct < n_c {
                t += 1;
                let c = r.random_range(0..n_c);
                if !seen[c] {
                    seen[c] = true;
                    distinct += 1;
                }
            }
            times.push(t as f64);
        }
    }
    let mean = LossEstimate::from_samples(&times);
    let expected_mean = n_c as f64 * harmonic(n_c);
    let tails = betas
        .iter()
        .map(|&beta| {
            let hits = times
                .iter()
                .filter(|&&t| (t - expected_mean).abs() >= beta * n_c as f64)
                .count();
            let frequency = hits as f64 / n_trials as f64;
            let bound = std::f64::consts::PI.powi(2) / (6.0 * beta * beta);
            let p = bound.min(1.0);
            let slack = 3.0 * (p * (1.0 - p) / n_trials as f64).sqrt();
            TailRow {
                beta,
                frequency,
                bound,
                slack,
                holds: frequency <= bound + slack,
            }
        })
        .collect();
    Ok(CollectorStats {
        n_classes: n_c,
        n_trials,
        variance: mean.sample_std().powi(2),
        mean,
        expected_mean,
        variance_bound: (n_c as f64 * std::f64::consts::PI).powi(2) / 6.0,
        tails,
    })
}

/// The constants consumed by the bounds for a prior and a negative count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub p_min: f64,
    pub p_cc: f64,
    pub tau_plus: f64,
    pub n_draws: usize,
    pub n_classes: usize,
}

impl BoundConstants {
    pub fn compute(rho: &[f64], n_draws: usize) -> Result<Self> {
        validate_rho(rho)?;
        Ok(Self {
            p_min: rho.iter().copied().fold(f64::INFINITY, f64::min),
            p_cc: coupon_coverage_exact(rho, n_draws)?,
            tau_plus: collision_prob(rho, n_draws)?,
            n_draws,
            n_classes: rho.len(),
        })
    }

    pub fn is_large_n(&self) -> bool {
        self.n_draws >= large_n_threshold(self.n_classes)
    }
}
