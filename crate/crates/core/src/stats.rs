//! Monte Carlo accumulators and compensated summation.

use serde::{Deserialize, Serialize};

/// z-quantile of the two-sided 95% normal interval.
pub const Z95: f64 = 1.96;

/// Monte Carlo estimate of an expectation with a 95% normal-approximation
/// half-width. `sum_sq_dev` is the Welford second moment, so the half-width
/// can always be recomputed as `1.96 * sqrt(sum_sq_dev / (n - 1)) / sqrt(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossEstimate {
    pub value: f64,
    pub n_samples: u64,
    pub ci_half_width: f64,
    pub sum_sq_dev: f64,
}

impl LossEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let mut acc = MeanAccumulator::default();
        for &s in samples {
            acc.push(s);
        }
        acc.finish()
    }

    /// An exact quantity, carried with zero uncertainty.
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            n_samples: 1,
            ci_half_width: 0.0,
            sum_sq_dev: 0.0,
        }
    }

    pub fn sample_std(&self) -> f64 {
        if self.n_samples < 2 {
            0.0
        } else {
            (self.sum_sq_dev / (self.n_samples - 1) as f64).sqrt()
        }
    }

    pub fn recomputed_half_width(&self) -> f64 {
        Z95 * self.sample_std() / (self.n_samples as f64).sqrt()
    }

    /// `a * X + b`; the half-width scales by `|a|`.
    pub fn affine(&self, a: f64, b: f64) -> Self {
        Self {
            value: a * self.value + b,
            n_samples: self.n_samples,
            ci_half_width: a.abs() * self.ci_half_width,
            sum_sq_dev: a * a * self.sum_sq_dev,
        }
    }
}

/// Welford running mean / second moment, mergeable with Chan's rule.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanAccumulator {
    n: u64,
    mean: f64,
    m2: f64,
}

impl MeanAccumulator {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &MeanAccumulator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * (other.n as f64 / n as f64);
        let m2 = self.m2 + other.m2 + delta * delta * (self.n as f64 * other.n as f64 / n as f64);
        self.n = n;
        self.mean = mean;
        self.m2 = m2;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn finish(&self) -> LossEstimate {
        let mut est = LossEstimate {
            value: self.mean,
            n_samples: self.n,
            ci_half_width: 0.0,
            sum_sq_dev: self.m2.max(0.0),
        };
        est.ci_half_width = est.recomputed_half_width();
        est
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_samples_have_zero_width() {
        let est = LossEstimate::from_samples(&[0.75; 1000]);
        assert_eq!(est.value, 0.75);
        assert_eq!(est.ci_half_width, 0.0);
    }

    #[test]
    fn half_width_matches_formula() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        let est = LossEstimate::from_samples(&xs);
        let mean = xs.iter().sum::<f64>() / 100.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 99.0;
        assert!((est.value - mean).abs() < 1e-14);
        assert!((est.ci_half_width - 1.96 * var.sqrt() / 10.0).abs() < 1e-14);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = CompensatedSum::default();
        s.add(1.0);
        for _ in 0..10 {
            s.add(1e-17);
        }
        s.add(-1.0);
        assert!((s.value() - 1e-16).abs() < 1e-30);
    }

    proptest! {
        #[test]
        fn merge_matches_sequential(xs in prop::collection::vec(-10.0f64..10.0, 2..200), split in 0usize..200) {
            let split = split.min(xs.len());
            let mut a = MeanAccumulator::default();
            let mut b = MeanAccumulator::default();
            for &x in &xs[..split] { a.push(x); }
            for &x in &xs[split..] { b.push(x); }
            a.merge(&b);
            let whole = LossEstimate::from_samples(&xs);
            let merged = a.finish();
            prop_assert!((whole.value - merged.value).abs() < 1e-10);
            prop_assert!((whole.sum_sq_dev - merged.sum_sq_dev).abs() < 1e-8 * (1.0 + whole.sum_sq_dev));
        }
    }
}
