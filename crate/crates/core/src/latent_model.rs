//! Latent-class generative model.
//!
//! Data come from a finite set of latent classes with prior `rho`; each class
//! `c` has an input distribution `D_c` on the unit sphere of `R^{d_x}`.
//! Positive pairs share a class, negatives are drawn from the class mixture.

use ndarray::Array2;
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};

const UNIT_TOL: f64 = 1e-12;
const PRIOR_TOL: f64 = 1e-12;
const MAX_MEAN_COSINE: f64 = 0.95;
const MEAN_RETRIES: usize = 10_000;

/// How inputs are drawn within one class.
#[derive(Debug, Clone)]
pub enum ClassConditional {
    /// `mean + spread * N(0, I)`, projected back onto the unit sphere.
    SphericalGaussian {
        means: Vec<Vec<f64>>,
        spread: f64,
    },
    /// Uniform draw from a fixed pool of unit vectors (one pool per class).
    Empirical { pools: Vec<Array2<f64>> },
}

#[derive(Debug, Clone)]
pub struct LatentClassModel {
    rho: Vec<f64>,
    cumulative: Vec<f64>,
    input_dim: usize,
    components: ClassConditional,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositivePair {
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledInput {
    pub x: Vec<f64>,
    pub class: usize,
}

/// A `(k+1)`-way classification task: distinct class indices in increasing order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Task {
    class_ids: Vec<usize>,
}

impl Task {
    pub fn new(mut class_ids: Vec<usize>, n_classes: usize) -> Result<Self> {
        class_ids.sort_unstable();
        if class_ids.len() < 2 || class_ids.len() > n_classes {
            return Err(invalid(format!(
                "task size {} outside [2, {n_classes}]",
                class_ids.len()
            )));
        }
        if class_ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("task class indices must be distinct"));
        }
        if class_ids.iter().any(|&c| c >= n_classes) {
            return Err(invalid("task class index out of range"));
        }
        Ok(Self { class_ids })
    }

    /// The task made of every class.
    pub fn full(n_classes: usize) -> Self {
        Self {
            class_ids: (0..n_classes).collect(),
        }
    }

    pub fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    pub fn len(&self) -> usize {
        self.class_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_ids.is_empty()
    }

    /// `k` in the `(k+1)`-way naming.
    pub fn k(&self) -> usize {
        self.class_ids.len() - 1
    }

    pub fn position(&self, class: usize) -> Option<usize> {
        self.class_ids.binary_search(&class).ok()
    }
}

fn validate_rho(rho: &[f64]) -> Result<()> {
    if rho.len() < 2 {
        return Err(Error::InvalidModel(format!(
            "need at least 2 classes, got {}",
            rho.len()
        )));
    }
    if rho.iter().any(|p| !p.is_finite() || *p <= 0.0) {
        return Err(Error::InvalidModel(
            "class prior entries must be strictly positive".into(),
        ));
    }
    let total: f64 = rho.iter().sum();
    if (total - 1.0).abs() > PRIOR_TOL {
        return Err(Error::InvalidModel(format!(
            "class prior sums to {total}, expected 1"
        )));
    }
    Ok(())
}

fn cumulative(rho: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    rho.iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect()
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A uniformly random direction on the unit sphere.
pub fn random_unit_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-12 && n.is_finite() {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

impl LatentClassModel {
    pub fn new(rho: Vec<f64>, class_means: Vec<Vec<f64>>, spread: f64) -> Result<Self> {
        validate_rho(&rho)?;
        if class_means.len() != rho.len() {
            return Err(Error::InvalidModel(format!(
                "{} class means for {} classes",
                class_means.len(),
                rho.len()
            )));
        }
        let input_dim = class_means[0].len();
        if input_dim == 0 {
            return Err(Error::InvalidModel("input dimension must be positive".into()));
        }
        for (c, m) in class_means.iter().enumerate() {
            if m.len() != input_dim {
                return Err(Error::InvalidModel(format!(
                    "class mean {c} has dimension {}, expected {input_dim}",
                    m.len()
                )));
            }
            if (norm(m) - 1.0).abs() > UNIT_TOL {
                return Err(Error::InvalidModel(format!(
                    "class mean {c} has norm {}, expected 1",
                    norm(m)
                )));
            }
        }
        if !(spread.is_finite() && spread >= 0.0) {
            return Err(Error::InvalidModel(format!("spread {spread} must be >= 0")));
        }
        Ok(Self {
            cumulative: cumulative(&rho),
            rho,
            input_dim,
            components: ClassConditional::SphericalGaussian {
                means: class_means,
                spread,
            },
        })
    }

    pub fn uniform(class_means: Vec<Vec<f64>>, spread: f64) -> Result<Self> {
        let n = class_means.len().max(1);
        Self::new(vec![1.0 / n as f64; n], class_means, spread)
    }

    /// Class means drawn uniformly on the sphere; any new mean whose cosine
    /// with an earlier one exceeds 0.95 is redrawn. `rho = None` means uniform.
    pub fn random<R: Rng + ?Sized>(
        n_classes: usize,
        input_dim: usize,
        spread: f64,
        rho: Option<Vec<f64>>,
        rng: &mut R,
    ) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::InvalidModel(format!(
                "need at least 2 classes, got {n_classes}"
            )));
        }
        if input_dim == 0 {
            return Err(Error::InvalidModel("input dimension must be positive".into()));
        }
        let mut means: Vec<Vec<f64>> = Vec::with_capacity(n_classes);
        for c in 0..n_classes {
            let mut placed = false;
            for _ in 0..MEAN_RETRIES {
                let candidate = random_unit_vector(input_dim, rng);
                if means.iter().all(|m| dot(m, &candidate) <= MAX_MEAN_COSINE) {
                    means.push(candidate);
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(Error::InvalidModel(format!(
                    "could not place class mean {c} in dimension {input_dim}"
                )));
            }
        }
        let rho = rho.unwrap_or_else(|| vec![1.0 / n_classes as f64; n_classes]);
        Self::new(rho, means, spread)
    }

    /// Classes backed by pools of observed unit vectors (e.g. images).
    pub fn empirical(rho: Vec<f64>, pools: Vec<Array2<f64>>) -> Result<Self> {
        validate_rho(&rho)?;
        if pools.len() != rho.len() {
            return Err(Error::InvalidModel(format!(
                "{} pools for {} classes",
                pools.len(),
                rho.len()
            )));
        }
        let input_dim = pools[0].ncols();
        for (c, pool) in pools.iter().enumerate() {
            if pool.nrows() == 0 || pool.ncols() != input_dim || input_dim == 0 {
                return Err(Error::InvalidModel(format!(
                    "pool for class {c} is empty or has the wrong width"
                )));
            }
            for row in pool.rows() {
                let n = row.dot(&row).sqrt();
                if (n - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidModel(format!(
                        "pool for class {c} holds a vector of norm {n}"
                    )));
                }
            }
        }
        Ok(Self {
            cumulative: cumulative(&rho),
            rho,
            input_dim,
            components: ClassConditional::Empirical { pools },
        })
    }

    pub fn n_classes(&self) -> usize {
        self.rho.len()
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn components(&self) -> &ClassConditional {
        &self.components
    }

    pub fn class_means(&self) -> Option<&[Vec<f64>]> {
        match &self.components {
            ClassConditional::SphericalGaussian { means, .. } => Some(means),
            ClassConditional::Empirical { .. } => None,
        }
    }

    pub fn spread(&self) -> Option<f64> {
        match &self.components {
            ClassConditional::SphericalGaussian { spread, .. } => Some(*spread),
            ClassConditional::Empirical { .. } => None,
        }
    }

    pub fn p_min(&self) -> f64 {
        self.rho.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn uniform_deviation(&self) -> f64 {
        let u = 1.0 / self.n_classes() as f64;
        self.rho.iter().map(|p| (p - u).abs()).fold(0.0, f64::max)
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform_deviation() <= PRIOR_TOL
    }

    pub fn require_uniform(&self) -> Result<()> {
        if self.is_uniform() {
            Ok(())
        } else {
            Err(Error::NonUniformPrior {
                n_classes: self.n_classes(),
                deviation: self.uniform_deviation(),
            })
        }
    }

    pub fn sample_class<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let i = self.cumulative.partition_point(|&c| c <= u);
        i.min(self.rho.len() - 1)
    }

    /// Class drawn from `rho` conditioned on membership in `task`.
    pub fn sample_class_in<R: Rng + ?Sized>(&self, task: &Task, rng: &mut R) -> usize {
        let ids = task.class_ids();
        let total: f64 = ids.iter().map(|&c| self.rho[c]).sum();
        let u: f64 = rng.random::<f64>() * total;
        let mut acc = 0.0;
        for &c in ids {
            acc += self.rho[c];
            if u < acc {
                return c;
            }
        }
        ids[ids.len() - 1]
    }

    /// Writes one draw of `D_class` into `out`.
    pub fn sample_input_into<R: Rng + ?Sized>(&self, class: usize, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.input_dim);
        match &self.components {
            ClassConditional::SphericalGaussian { means, spread } => {
                let mean = &means[class];
                if *spread == 0.0 {
                    out.copy_from_slice(mean);
                    return;
                }
                loop {
                    for (o, m) in out.iter_mut().zip(mean) {
                        let e: f64 = rng.sample(StandardNormal);
                        *o = m + spread * e;
                    }
                    let n = norm(out);
                    if n > 1e-12 && n.is_finite() {
                        out.iter_mut().for_each(|o| *o /= n);
                        return;
                    }
                }
            }
            ClassConditional::Empirical { pools } => {
                let pool = &pools[class];
                let i = rng.random_range(0..pool.nrows());
                for (o, v) in out.iter_mut().zip(pool.row(i)) {
                    *o = *v;
                }
            }
        }
    }

    pub fn sample_input<R: Rng + ?Sized>(&self, class: usize, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.input_dim];
        self.sample_input_into(class, rng, &mut out);
        out
    }

    /// `c ~ rho`, then `x, x+` drawn independently from `D_c`.
    pub fn sample_positive_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> PositivePair {
        let class = self.sample_class(rng);
        let anchor = self.sample_input(class, rng);
        let positive = self.sample_input(class, rng);
        PositivePair {
            anchor,
            positive,
            class,
        }
    }

    /// `count` independent draws from the class mixture.
    pub fn sample_negatives<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<LabeledInput> {
        (0..count)
            .map(|_| {
                let class = self.sample_class(rng);
                LabeledInput {
                    x: self.sample_input(class, rng),
                    class,
                }
            })
            .collect()
    }

    /// Uniformly random `(k+1)`-subset of classes. Requires a uniform prior.
    pub fn sample_task<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Task> {
        let n = self.n_classes();
        if k == 0 || k + 1 > n {
            return Err(invalid(format!("k = {k} outside [1, {}]", n - 1)));
        }
        self.require_uniform()?;
        let ids = index::sample(rng, n, k + 1).into_vec();
        Task::new(ids, n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn basis(dim: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    fn five_class() -> LatentClassModel {
        let mut r = rng::stream(3);
        LatentClassModel::random(5, 8, 0.2, None, &mut r).unwrap()
    }

    #[test]
    fn rejects_bad_priors() {
        let means = vec![basis(2, 0), basis(2, 1)];
        assert!(LatentClassModel::new(vec![1.0, 0.0], means.clone(), 0.1).is_err());
        assert!(LatentClassModel::new(vec![0.6, 0.6], means.clone(), 0.1).is_err());
        assert!(LatentClassModel::new(vec![1.0], vec![basis(2, 0)], 0.1).is_err());
        assert!(LatentClassModel::new(vec![0.5, 0.5], vec![basis(2, 0), vec![2.0, 0.0]], 0.1).is_err());
    }

    #[test]
    fn zero_spread_collapses_to_mean() {
        let means = vec![vec![0.6, 0.8], basis(2, 1)];
        let model = LatentClassModel::uniform(means.clone(), 0.0).unwrap();
        let mut r = rng::stream(1);
        for _ in 0..50 {
            let pair = model.sample_positive_pair(&mut r);
            assert_eq!(pair.anchor, means[pair.class]);
            assert_eq!(pair.positive, means[pair.class]);
        }
        let negs = model.sample_negatives(1, &mut r);
        assert!(means.contains(&negs[0].x));
    }

    #[test]
    fn samples_are_unit_norm() {
        let model = five_class();
        let mut r = rng::stream(2);
        for _ in 0..200 {
            let p = model.sample_positive_pair(&mut r);
            assert!((norm(&p.anchor) - 1.0).abs() < 1e-12);
            assert!((norm(&p.positive) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn class_means_are_repelled() {
        let mut r = rng::stream(9);
        let model = LatentClassModel::random(10, 3, 0.1, None, &mut r).unwrap();
        let means = model.class_means().unwrap();
        for i in 0..10 {
            for j in 0..i {
                assert!(dot(&means[i], &means[j]) <= MAX_MEAN_COSINE);
            }
        }
    }

    #[test]
    fn uniform_class_frequencies() {
        let model = five_class();
        let mut r = rng::stream(11);
        let n = 100_000;
        let mut counts = [0usize; 5];
        for _ in 0..n {
            counts[model.sample_positive_pair(&mut r).class] += 1;
        }
        let tol = 3.0 * (0.2f64 * 0.8 / n as f64).sqrt();
        for c in counts {
            assert!((c as f64 / n as f64 - 0.2).abs() <= tol, "{counts:?}");
        }
    }

    #[test]
    fn negative_frequencies_two_classes() {
        let model = LatentClassModel::uniform(vec![basis(3, 0), basis(3, 1)], 0.3).unwrap();
        let mut r = rng::stream(12);
        let n = 100_000;
        let zeros = (0..n)
            .filter(|_| model.sample_negatives(1, &mut r)[0].class == 0)
            .count();
        let tol = 3.0 * (0.25f64 / n as f64).sqrt();
        assert!((zeros as f64 / n as f64 - 0.5).abs() <= tol);
    }

    #[test]
    fn negatives_are_deterministic() {
        let model = five_class();
        let a = model.sample_negatives(3, &mut rng::stream(5));
        let b = model.sample_negatives(3, &mut rng::stream(5));
        assert_eq!(a, b);
    }

    #[test]
    fn positive_and_negative_marginals_agree() {
        let model = five_class();
        let mut r = rng::stream(13);
        let n = 100_000;
        let d = model.input_dim();
        let (mut s1, mut q1, mut s2, mut q2) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        for _ in 0..n {
            let p = model.sample_positive_pair(&mut r);
            let neg = model.sample_negatives(1, &mut r).remove(0);
            for j in 0..d {
                s1[j] += p.anchor[j];
                q1[j] += p.anchor[j] * p.anchor[j];
                s2[j] += neg.x[j];
                q2[j] += neg.x[j] * neg.x[j];
            }
        }
        let nf = n as f64;
        for j in 0..d {
            let (m1, m2) = (s1[j] / nf, s2[j] / nf);
            let v1 = q1[j] / nf - m1 * m1;
            let v2 = q2[j] / nf - m2 * m2;
            let se = (v1 / nf + v2 / nf).sqrt();
            assert!((m1 - m2).abs() <= 4.0 * se, "coordinate {j}: {m1} vs {m2}");
        }
    }

    #[test]
    fn full_task_when_k_is_maximal() {
        let model = five_class();
        let mut r = rng::stream(4);
        for _ in 0..20 {
            assert_eq!(model.sample_task(4, &mut r).unwrap(), Task::full(5));
        }
        assert!(model.sample_task(5, &mut r).is_err());
        assert!(model.sample_task(0, &mut r).is_err());
    }

    #[test]
    fn pair_tasks_are_uniform() {
        let model =
            LatentClassModel::uniform(vec![basis(3, 0), basis(3, 1), basis(3, 2)], 0.1).unwrap();
        let mut r = rng::stream(21);
        let n = 100_000;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..n {
            *counts.entry(model.sample_task(1, &mut r).unwrap()).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 3);
        let p = 1.0 / 3.0;
        let tol = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
        for (_, c) in counts {
            assert!((c as f64 / n as f64 - p).abs() <= tol);
        }
    }

    #[test]
    fn non_uniform_prior_rejects_tasks() {
        let model = LatentClassModel::new(
            vec![0.5, 0.3, 0.2],
            vec![basis(3, 0), basis(3, 1), basis(3, 2)],
            0.1,
        )
        .unwrap();
        let err = model.sample_task(1, &mut rng::stream(0)).unwrap_err();
        assert!(matches!(err, Error::NonUniformPrior { .. }));
    }
}
