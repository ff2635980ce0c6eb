//! Contrastive and supervised losses.
//!
//! Population losses are Monte Carlo estimates: draws are generated in chunks of
//! [`DRAW_CHUNK`], chunk `j` using the stream `derive(base, j)` where `base` is
//! taken from the caller's stream. The result therefore does not depend on how
//! chunks would be scheduled across workers. Every loss is evaluated through a
//! max-shifted log-sum-exp of score differences, so identical scores give
//! exactly `log(count)`.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::embedding::Embedding;
use crate::error::{invalid, Error, Result};
use crate::latent_model::{LatentClassModel, Task};
use crate::rng;
use crate::stats::LossEstimate;
use crate::dataset::TripletDataset;

pub const DRAW_CHUNK: usize = 128;

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log sum exp(values)`, shifted by the maximum.
pub fn lse(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(invalid("log-sum-exp of an empty list"));
    }
    Ok(lse_nonempty(values.iter().copied()))
}

fn lse_nonempty<I: Iterator<Item = f64> + Clone>(values: I) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = values.map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Cross-entropy `-log softmax(scores)[target]`, computed as
/// `lse(scores - scores[target])`.
pub fn cross_entropy(scores: ArrayView1<'_, f64>, target: usize) -> f64 {
    let s = scores[target];
    lse_nonempty(scores.iter().map(move |v| v - s))
}

/// Per-draw contrastive loss with one positive and any number of negatives:
/// `-log(e^{a.p} / (e^{a.p} + sum_j e^{a.n_j}))`.
pub fn contrastive_draw_loss(
    anchor: ArrayView1<'_, f64>,
    positive: ArrayView1<'_, f64>,
    negatives: ArrayView2<'_, f64>,
) -> f64 {
    let sp = anchor.dot(&positive);
    let diffs = negatives.rows().into_iter().map(|n| anchor.dot(&n) - sp);
    lse_nonempty(std::iter::once(0.0).chain(diffs.collect::<Vec<_>>()))
}

/// Embeddings `(z_1, z_2, z_3) = (f(x), f(x+), f(x-))`.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletEmbedding {
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

/// `dl/dz` split into the three `d`-blocks (the per-member loss vectors).
#[derive(Debug, Clone, PartialEq)]
pub struct TripletGradient {
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl TripletEmbedding {
    pub fn new(anchor: Vec<f64>, positive: Vec<f64>, negative: Vec<f64>) -> Self {
        assert!(anchor.len() == positive.len() && anchor.len() == negative.len());
        Self {
            anchor,
            positive,
            negative,
        }
    }

    /// Splits a `3d` vector into thirds.
    pub fn from_flat(z: &[f64]) -> Self {
        assert_eq!(z.len() % 3, 0, "length must be a multiple of 3");
        let d = z.len() / 3;
        Self::new(z[..d].to_vec(), z[d..2 * d].to_vec(), z[2 * d..].to_vec())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        [&self.anchor[..], &self.positive, &self.negative].concat()
    }

    pub fn dim(&self) -> usize {
        self.anchor.len()
    }

    pub fn block_norms(&self) -> [f64; 3] {
        [norm(&self.anchor), norm(&self.positive), norm(&self.negative)]
    }

    /// `s = z_1 . z_3 - z_1 . z_2`, the softplus argument.
    pub fn margin(&self) -> f64 {
        dot(&self.anchor, &self.negative) - dot(&self.anchor, &self.positive)
    }

    /// `v = softmax(z_1.z_2, z_1.z_3)`.
    pub fn softmax_weights(&self) -> (f64, f64) {
        let s = self.margin();
        (sigmoid(-s), sigmoid(s))
    }
}

impl TripletGradient {
    pub fn to_flat(&self) -> Vec<f64> {
        [&self.anchor[..], &self.positive, &self.negative].concat()
    }

    pub fn block_norms(&self) -> [f64; 3] {
        [norm(&self.anchor), norm(&self.positive), norm(&self.negative)]
    }

    pub fn max_block_norm(&self) -> f64 {
        self.block_norms().into_iter().fold(0.0, f64::max)
    }
}

/// `l(z) = softplus(z_1 . (z_3 - z_2))`.
pub fn triplet_loss(z: &TripletEmbedding) -> f64 {
    softplus(z.margin())
}

/// Writes the three gradient blocks of `l` into `g1, g2, g3` and returns `l`.
///
/// With `v = softmax(z1.z2, z1.z3)`: `g1 = (v1 - 1) z2 + v2 z3`,
/// `g2 = (v1 - 1) z1`, `g3 = v2 z1`. `v1 - 1` is evaluated as `-v2`.
pub fn triplet_loss_and_grad_into(
    z1: ArrayView1<'_, f64>,
    z2: ArrayView1<'_, f64>,
    z3: ArrayView1<'_, f64>,
    g1: &mut [f64],
    g2: &mut [f64],
    g3: &mut [f64],
) -> f64 {
    let s = z1.dot(&z3) - z1.dot(&z2);
    let v2 = sigmoid(s);
    let v1m1 = -v2;
    for i in 0..z1.len() {
        g1[i] = v1m1 * z2[i] + v2 * z3[i];
        g2[i] = v1m1 * z1[i];
        g3[i] = v2 * z1[i];
    }
    softplus(s)
}

pub fn triplet_loss_grad(z: &TripletEmbedding) -> TripletGradient {
    let d = z.dim();
    let mut g = TripletGradient {
        anchor: vec![0.0; d],
        positive: vec![0.0; d],
        negative: vec![0.0; d],
    };
    triplet_loss_and_grad_into(
        ArrayView1::from(&z.anchor[..]),
        ArrayView1::from(&z.positive[..]),
        ArrayView1::from(&z.negative[..]),
        &mut g.anchor,
        &mut g.positive,
        &mut g.negative,
    );
    g
}

fn check_dims<E: Embedding>(f: &E, model: &LatentClassModel) -> Result<()> {
    if f.input_dim() != model.input_dim() {
        return Err(Error::Dimension(format!(
            "encoder expects inputs of dimension {}, model produces {}",
            f.input_dim(),
            model.input_dim()
        )));
    }
    Ok(())
}

/// Runs `n_draws` draws in chunks; `fill` writes the inputs of one chunk and
/// `score` turns the embedded chunk into per-draw losses.
fn chunked_draws<R, Fill, Score>(
    n_draws: usize,
    rows_per_draw: usize,
    input_dim: usize,
    rng: &mut R,
    mut fill: Fill,
    mut score: Score,
) -> Vec<f64>
where
    R: Rng + ?Sized,
    Fill: FnMut(&mut rng::Stream, &mut Array2<f64>, &mut Vec<usize>),
    Score: FnMut(&Array2<f64>, &[usize], &mut Vec<f64>),
{
    let base: u64 = rng.random();
    let mut out = Vec::with_capacity(n_draws);
    let mut labels = Vec::new();
    for (j, start) in (0..n_draws).step_by(DRAW_CHUNK).enumerate() {
        let count = DRAW_CHUNK.min(n_draws - start);
        let mut stream = rng::derive(base, j as u64);
        let mut inputs = Array2::zeros((count * rows_per_draw, input_dim));
        labels.clear();
        fill(&mut stream, &mut inputs, &mut labels);
        score(&inputs, &labels, &mut out);
    }
    out
}

/// Per-draw contrastive losses with `n_negatives` fresh negatives per draw.
pub fn unsupervised_loss_samples<E: Embedding, R: Rng + ?Sized>(
    f: &E,
    model: &LatentClassModel,
    n_negatives: usize,
    n_mc: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if n_negatives == 0 {
        return Err(invalid("need at least one negative"));
    }
    check_dims(f, model)?;
    let rows = n_negatives + 2;
    let d_x = model.input_dim();
    Ok(chunked_draws(
        n_mc,
        rows,
        d_x,
        rng,
        |r, inputs, _| {
            for draw in 0..inputs.nrows() / rows {
                let base = draw * rows;
                let class = model.sample_class(r);
                for k in 0..2 {
                    let mut row = inputs.row_mut(base + k);
                    model.sample_input_into(class, r, row.as_slice_mut().unwrap());
                }
                for k in 0..n_negatives {
                    let c = model.sample_class(r);
                    let mut row = inputs.row_mut(base + 2 + k);
                    model.sample_input_into(c, r, row.as_slice_mut().unwrap());
                }
            }
        },
        |inputs, _, out| {
            let emb = f.embed_batch(inputs.view());
            for draw in 0..inputs.nrows() / rows {
                let base = draw * rows;
                out.push(contrastive_draw_loss(
                    emb.row(base),
                    emb.row(base + 1),
                    emb.slice(ndarray::s![base + 2..base + rows, ..]),
                ));
            }
        },
    ))
}

/// Monte Carlo estimate of the contrastive loss with `n_negatives` negatives.
pub fn unsupervised_loss<E: Embedding, R: Rng + ?Sized>(
    f: &E,
    model: &LatentClassModel,
    n_negatives: usize,
    n_mc: usize,
    rng: &mut R,
) -> Result<LossEstimate> {
    if n_mc < 2 {
        return Err(invalid("n_mc must be >= 2"));
    }
    let samples = unsupervised_loss_samples(f, model, n_negatives, n_mc, rng)?;
    Ok(LossEstimate::from_samples(&samples))
}

/// Linear classifier whose row for class `c` is the mean embedding of `D_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanClassifier {
    pub weights: Array2<f64>,
    pub class_ids: Vec<usize>,
    pub per_class_counts: Vec<usize>,
}

impl MeanClassifier {
    /// The sub-classifier for the classes of `task`.
    pub fn restrict(&self, task: &Task) -> Result<MeanClassifier> {
        let rows: Vec<usize> = task
            .class_ids()
            .iter()
            .map(|c| {
                self.class_ids
                    .iter()
                    .position(|x| x == c)
                    .ok_or_else(|| invalid(format!("class {c} not in classifier")))
            })
            .collect::<Result<_>>()?;
        Ok(MeanClassifier {
            weights: self.weights.select(Axis(0), &rows),
            class_ids: task.class_ids().to_vec(),
            per_class_counts: rows.iter().map(|&r| self.per_class_counts[r]).collect(),
        })
    }
}

/// Row `c` = running mean of `f(x)` over `n_per_class` fresh draws of `D_c`.
pub fn mean_classifier<E: Embedding, R: Rng + ?Sized>(
    f: &E,
    model: &LatentClassModel,
    task: &Task,
    n_per_class: usize,
    rng: &mut R,
) -> Result<MeanClassifier> {
    if n_per_class == 0 {
        return Err(invalid("n_per_class must be >= 1"));
    }
    check_dims(f, model)?;
    let d = f.output_dim();
    let mut weights = Array2::zeros((task.len(), d));
    for (row, &class) in task.class_ids().iter().enumerate() {
        let mut mean = vec![0.0; d];
        let mut seen = 0usize;
        chunked_draws(
            n_per_class,
            1,
            model.input_dim(),
            rng,
            |r, inputs, _| {
                for mut x in inputs.rows_mut() {
                    model.sample_input_into(class, r, x.as_slice_mut().unwrap());
                }
            },
            |inputs, _, _| {
                let emb = f.embed_batch(inputs.view());
                for e in emb.rows() {
                    seen += 1;
                    let inv = 1.0 / seen as f64;
                    for (m, v) in mean.iter_mut().zip(e.iter()) {
                        *m += (v - *m) * inv;
                    }
                }
            },
        );
        weights.row_mut(row).iter_mut().zip(&mean).for_each(|(w, m)| *w = *m);
    }
    Ok(MeanClassifier {
        weights,
        class_ids: task.class_ids().to_vec(),
        per_class_counts: vec![n_per_class; task.len()],
    })
}

/// Labeled embedded draws `(f(x), position of c in task)` with `c ~ D_T`.
fn labeled_task_samples<E: Embedding, R: Rng + ?Sized>(
    f: &E,
    model: &LatentClassModel,
    task: &Task,
    n: usize,
    rng: &mut R,
) -> (Array2<f64>, Vec<usize>) {
    let mut features = Array2::zeros((0, f.output_dim()));
    let mut targets = Vec::with_capacity(n);
    chunked_draws(
        n,
        1,
        model.input_dim(),
        rng,
        |r, inputs, labels| {
            for mut x in inputs.rows_mut() {
                let c = model.sample_class_in(task, r);
                labels.push(task.position(c).expect("class in task"));
                model.sample_input_into(c, r, x.as_slice_mut().unwrap());
            }
        },
        |inputs, labels, _| {
            let emb = f.embed_batch(inputs.view());
            features.append(Axis(0), emb.view()).expect("same width");
            targets.extend_from_slice(labels);
        },
    );
    (features, targets)
}

/// Cross-entropy of the mean classifier on `D_T`.
pub fn supervised_loss_mu<E: Embedding, R: Rng + ?Sized>(
    f: &E,
    model: &LatentClassModel,
    task: &Task,
    classifier: &MeanClassifier,
    n_mc: usize,
    rng: &mut R,
) -> Result<LossEstimate> {
    if classifier.class_ids != task.class_ids() {
        return Err(invalid("classifier rows are not aligned with the task"));
    }
    if n_mc < 2 {
        return Err(invalid("n_mc must be >= 2"));
    }
    check_dims(f, model)?;
    let (features, targets) = labeled_task_samples(f, model, task, n_mc, rng);
    let scores = features.dot(&classifier.weights.t());
    let losses: Vec<f64> = scores
        .rows()
        .into_iter()
        .zip(&targets)
        .map(|(s, &t)| cross_entropy(s, t))
        .collect();
    Ok(LossEstimate::from_samples(&losses))
}

/// Budget for the best-linear-classifier loss.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OptBudget {
    pub n_train: usize,
    pub n_mc: usize,
    pub max_steps: usize,
}

/// Mean cross-entropy of `weights` on `(features, targets)` and its gradient.
fn softmax_regression_loss(
    weights: &Array2<f64>,
    features: &Array2<f64>,
    targets: &[usize],
) -> (f64, Array2<f64>) {
    let n = features.nrows() as f64;
    let scores = features.dot(&weights.t());
    let mut resid = Array2::zeros(scores.dim());
    let mut total = 0.0;
    for (i, s) in scores.rows().into_iter().enumerate() {
        total += cross_entropy(s, targets[i]);
        let max = s.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let z: f64 = s.iter().map(|v| (v - max).exp()).sum();
        for (k, v) in s.iter().enumerate() {
            resid[[i, k]] = (v - max).exp() / z;
        }
        resid[[i, targets[i]]] -= 1.0;
    }
    let grad = resid.t().dot(features) / n;
    (total / n, grad)
}

/// Full-batch gradient descent on multinomial cross-entropy, starting from
/// `init`, with step `1 / max ||f||^2` (at most the inverse curvature bound).
/// Fails if the training loss rises for 10 consecutive steps.
pub fn fit_softmax_regression(
    features: &Array2<f64>,
    targets: &[usize],
    init: Array2<f64>,
    max_steps: usize,
) -> Result<Array2<f64>> {
    let max_sq = features
        .rows()
        .into_iter()
        .map(|r| r.dot(&r))
        .fold(0.0, f64::max);
    let mut weights = init;
    if max_sq == 0.0 {
        return Ok(weights);
    }
    let lr = 1.0 / max_sq;
    let mut previous = f64::INFINITY;
    let mut rising = 0usize;
    for _ in 0..max_steps {
        let (loss, grad) = softmax_regression_loss(&weights, features, targets);
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("training loss became {loss}")));
        }
        if loss > previous {
            rising += 1;
            if rising >= 10 {
                return Err(Error::Diverged(format!(
                    "training loss rose for {rising} consecutive steps (now {loss})"
                )));
            }
        } else {
            rising = 0;
        }
        previous = loss;
        weights.scaled_add(-lr, &grad);
    }
    Ok(weights)
}

/// Budgeted upper bound on the best-linear-classifier cross-entropy: fit on
/// `n_train` labeled draws (initialized at the empirical class means), then
/// evaluate on `n_mc` fresh draws.
pub fn supervised_loss_opt<E: Embedding, R: Rng + ?Sized>(
    f: &E,
    model: &LatentClassModel,
    task: &Task,
    budget: OptBudget,
    rng: &mut R,
) -> Result<LossEstimate> {
    if budget.n_train == 0 || budget.n_mc < 2 || budget.max_steps == 0 {
        return Err(invalid("optimizer budgets must be >= 1 (n_mc >= 2)"));
    }
    check_dims(f, model)?;
    let (features, targets) = labeled_task_samples(f, model, task, budget.n_train, rng);
    let mut init = Array2::zeros((task.len(), f.output_dim()));
    let mut counts = vec![0usize; task.len()];
    for (row, &t) in features.rows().into_iter().zip(&targets) {
        counts[t] += 1;
        let inv = 1.0 / counts[t] as f64;
        let mut w = init.row_mut(t);
        w.zip_mut_with(&row, |m, &v| *m += (v - *m) * inv);
    }
    let weights = fit_softmax_regression(&features, &targets, init, budget.max_steps)?;
    let (test_f, test_t) = labeled_task_samples(f, model, task, budget.n_mc, rng);
    let scores = test_f.dot(&weights.t());
    let losses: Vec<f64> = scores
        .rows()
        .into_iter()
        .zip(&test_t)
        .map(|(s, &t)| cross_entropy(s, t))
        .collect();
    Ok(LossEstimate::from_samples(&losses))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AveragedBudget {
    pub n_tasks: usize,
    pub n_per_class: usize,
    pub n_mc: usize,
    /// When `None` only the mean-classifier average is computed.
    pub opt: Option<OptBudget>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragedLosses {
    pub sup: Option<LossEstimate>,
    pub sup_mu: LossEstimate,
}

fn outer_estimate(per_task: &[LossEstimate]) -> LossEstimate {
    if per_task.len() == 1 {
        per_task[0]
    } else {
        let values: Vec<f64> = per_task.iter().map(|e| e.value).collect();
        LossEstimate::from_samples(&values)
    }
}

/// Task-averaged supervised losses over uniformly drawn `(k+1)`-way tasks.
/// The class means are estimated once for all classes and restricted per
/// task; the half-width comes from the spread of the per-task estimates.
pub fn averaged_supervised_losses<E: Embedding, R: Rng + ?Sized>(
    f: &E,
    model: &LatentClassModel,
    k: usize,
    budget: AveragedBudget,
    rng: &mut R,
) -> Result<AveragedLosses> {
    model.require_uniform()?;
    if k == 0 || k >= model.n_classes() {
        return Err(invalid(format!("k = {k} outside [1, {}]", model.n_classes() - 1)));
    }
    if budget.n_tasks == 0 {
        return Err(invalid("n_tasks must be >= 1"));
    }
    let all = mean_classifier(f, model, &Task::full(model.n_classes()), budget.n_per_class, rng)?;
    let mut mu = Vec::with_capacity(budget.n_tasks);
    let mut opt = Vec::new();
    for _ in 0..budget.n_tasks {
        let task = model.sample_task(k, rng)?;
        let w = all.restrict(&task)?;
        mu.push(supervised_loss_mu(f, model, &task, &w, budget.n_mc, rng)?);
        if let Some(ob) = budget.opt {
            opt.push(supervised_loss_opt(f, model, &task, ob, rng)?);
        }
    }
    Ok(AveragedLosses {
        sup: budget.opt.map(|_| outer_estimate(&opt)),
        sup_mu: outer_estimate(&mu),
    })
}

/// The training objective over a fixed dataset.
#[derive(Debug, Clone)]
pub struct EmpiricalObjective {
    pub total: f64,
    pub per_triplet: Vec<f64>,
    /// `3n x d`: row `3i + j` is the loss vector of member `j` of triplet `i`.
    pub loss_vectors: Array2<f64>,
    /// `3n x d` embeddings in member order.
    pub embeddings: Array2<f64>,
}

impl EmpiricalObjective {
    pub fn n(&self) -> usize {
        self.per_triplet.len()
    }

    pub fn mean(&self) -> f64 {
        self.total / self.n() as f64
    }

    pub fn loss_vector(&self, i: usize, j: usize) -> ArrayView1<'_, f64> {
        self.loss_vectors.row(3 * i + j)
    }

    pub fn triplet_embedding(&self, i: usize) -> TripletEmbedding {
        TripletEmbedding::new(
            self.embeddings.row(3 * i).to_vec(),
            self.embeddings.row(3 * i + 1).to_vec(),
            self.embeddings.row(3 * i + 2).to_vec(),
        )
    }

    pub fn triplet_embeddings(&self) -> Vec<TripletEmbedding> {
        (0..self.n()).map(|i| self.triplet_embedding(i)).collect()
    }

    /// `max_{i,j} ||loss_{i,j}||`.
    pub fn max_loss_vector_norm(&self) -> f64 {
        self.loss_vectors
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt())
            .fold(0.0, f64::max)
    }

    /// Norm of the gradient of the objective with respect to all outputs.
    pub fn output_gradient_norm(&self) -> f64 {
        self.loss_vectors.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub fn objective_from_embeddings(embeddings: Array2<f64>) -> EmpiricalObjective {
    let n = embeddings.nrows() / 3;
    let d = embeddings.ncols();
    let mut loss_vectors = Array2::zeros((3 * n, d));
    let mut per_triplet = Vec::with_capacity(n);
    let mut g = [vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    for i in 0..n {
        let [g1, g2, g3] = &mut g;
        let l = triplet_loss_and_grad_into(
            embeddings.row(3 * i),
            embeddings.row(3 * i + 1),
            embeddings.row(3 * i + 2),
            g1,
            g2,
            g3,
        );
        per_triplet.push(l);
        for (j, gj) in g.iter().enumerate() {
            loss_vectors
                .row_mut(3 * i + j)
                .iter_mut()
                .zip(gj)
                .for_each(|(o, v)| *o = *v);
        }
    }
    EmpiricalObjective {
        total: per_triplet.iter().sum(),
        per_triplet,
        loss_vectors,
        embeddings,
    }
}

/// `sum_i softplus(f(x_i) . (f(x_i-) - f(x_i+)))` with its loss vectors.
pub fn empirical_objective<E: Embedding>(f: &E, data: &TripletDataset) -> EmpiricalObjective {
    objective_from_embeddings(f.embed_batch(data.members().view()))
}
