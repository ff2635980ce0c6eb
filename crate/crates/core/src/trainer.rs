//! Full-batch gradient descent on the empirical triplet objective, with
//! per-step monitoring of the embedding norms, the loss-vector bound and the
//! gradient norm.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::TripletDataset;
use crate::encoder::{Encoder, ParameterGradients};
use crate::error::{invalid, Error, Result};
use crate::losses::{objective_from_embeddings, EmpiricalObjective};
use crate::stats::LossEstimate;
use crate::verifier::{check_lemma42, InequalityReport};

/// Abort when the objective exceeds this multiple of its initial value.
pub const DIVERGENCE_FACTOR: f64 = 10.0;
/// Per-step increase tolerated by the monotonicity check.
pub const MONOTONE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_steps: usize,
    /// Stop once the total objective is at or below this value.
    pub target_loss: f64,
    /// Lower norm threshold monitored along training.
    pub eta_monitor: f64,
    /// Upper norm threshold monitored along training.
    pub norm_upper_monitor: f64,
    pub eval_every: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(invalid("learning_rate must be finite and >= 0"));
        }
        if self.max_steps == 0 {
            return Err(invalid("max_steps must be >= 1"));
        }
        if !(self.target_loss >= 0.0) {
            return Err(invalid("target_loss must be >= 0"));
        }
        if !(self.eta_monitor > 0.0 && self.norm_upper_monitor > self.eta_monitor) {
            return Err(invalid("need 0 < eta_monitor < norm_upper_monitor"));
        }
        if self.eval_every == 0 {
            return Err(invalid("eval_every must be >= 1"));
        }
        Ok(())
    }
}

/// Cheap per-step record. Step 0 is the initial encoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub objective: f64,
    pub objective_mean: f64,
    /// `max_{i,j} ||loss_{i,j}||`.
    pub epsilon: f64,
    pub min_norm: f64,
    pub max_norm: f64,
    pub grad_norm: f64,
    pub max_triplet_loss: f64,
    pub lemma42_precondition: bool,
    pub lemma42_holds: bool,
    /// `eta_monitor <= min_norm` and `max_norm <= norm_upper_monitor`.
    pub within_corridor: bool,
}

/// Output of an evaluation hook at an eval stride.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub estimates: BTreeMap<String, LossEstimate>,
    pub reports: Vec<InequalityReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub rows: Vec<TraceRow>,
    pub evals: Vec<EvalRecord>,
    pub stopped_early: bool,
    pub learning_rate: f64,
}

impl TrainingTrace {
    pub fn objectives(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.objective).collect()
    }

    pub fn initial_objective(&self) -> f64 {
        self.rows[0].objective
    }

    pub fn final_objective(&self) -> f64 {
        self.rows.last().expect("at least the initial row").objective
    }

    /// Smallest output norm seen along the trajectory.
    pub fn trajectory_min_norm(&self) -> f64 {
        self.rows.iter().map(|r| r.min_norm).fold(f64::INFINITY, f64::min)
    }

    /// First step at which the objective rose by more than [`MONOTONE_TOL`].
    pub fn first_increase(&self) -> Option<usize> {
        self.rows
            .windows(2)
            .find(|w| w[1].objective > w[0].objective + MONOTONE_TOL)
            .map(|w| w[1].step)
    }
}

pub type EvalHook<'a> = dyn FnMut(usize, &Encoder) -> Result<EvalRecord> + 'a;

/// Objective over the dataset and its gradient with respect to every
/// parameter: the loss vectors are routed into backpropagation as the
/// output-gradient rows of the corresponding members.
pub fn objective_gradient(enc: &Encoder, data: &TripletDataset) -> (EmpiricalObjective, ParameterGradients) {
    let tape = enc.forward_batch(data.members().view());
    let obj = objective_from_embeddings(tape.output.clone());
    let grads = enc.backward(&tape, obj.loss_vectors.view());
    (obj, grads)
}

/// Exact min and max of `||f(x)||` over every dataset member.
pub fn track_norms(enc: &Encoder, data: &TripletDataset) -> (f64, f64) {
    let out = enc.forward_batch(data.members().view()).output;
    norms_of(&out)
}

fn norms_of(rows: &ndarray::Array2<f64>) -> (f64, f64) {
    rows.rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt())
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), n| (lo.min(n), hi.max(n)))
}

enum Outcome {
    Finished(Encoder, TrainingTrace),
    Increased,
}

fn run(
    mut enc: Encoder,
    data: &TripletDataset,
    cfg: &TrainConfig,
    mut hook: Option<&mut EvalHook<'_>>,
    stop_on_increase: bool,
) -> Result<Outcome> {
    cfg.validate()?;
    if data.input_dim() != enc.input_dim() {
        return Err(Error::Dimension(format!(
            "encoder expects inputs of dimension {}, dataset has {}",
            enc.input_dim(),
            data.input_dim()
        )));
    }
    if !(data.delta() > 0.0) {
        return Err(invalid("dataset is not separated"));
    }
    let mut rows = Vec::with_capacity(cfg.max_steps + 1);
    let mut evals = Vec::new();
    let mut stopped_early = false;
    let mut initial = f64::NAN;
    for step in 0..=cfg.max_steps {
        let (obj, grads) = objective_gradient(&enc, data);
        if !obj.total.is_finite() {
            return Err(Error::Diverged(format!("objective became {} at step {step}", obj.total)));
        }
        if step == 0 {
            initial = obj.total;
        } else if obj.total > DIVERGENCE_FACTOR * initial {
            return Err(Error::Diverged(format!(
                "objective {} at step {step} exceeds {DIVERGENCE_FACTOR} x initial {initial}",
                obj.total
            )));
        }
        if stop_on_increase {
            if let Some(prev) = rows.last().map(|r: &TraceRow| r.objective) {
                if obj.total > prev + MONOTONE_TOL {
                    return Ok(Outcome::Increased);
                }
            }
        }
        let (min_norm, max_norm) = norms_of(&obj.embeddings);
        let lemma42 = check_lemma42(&obj, cfg.eta_monitor)?;
        rows.push(TraceRow {
            step,
            objective: obj.total,
            objective_mean: obj.mean(),
            epsilon: obj.max_loss_vector_norm(),
            min_norm,
            max_norm,
            grad_norm: grads.norm(),
            max_triplet_loss: obj.per_triplet.iter().copied().fold(0.0, f64::max),
            lemma42_precondition: lemma42.is_asserted(),
            lemma42_holds: lemma42.holds,
            within_corridor: cfg.eta_monitor <= min_norm && max_norm <= cfg.norm_upper_monitor,
        });
        if step % cfg.eval_every == 0 {
            if let Some(h) = hook.as_mut() {
                let mut record = h(step, &enc)?;
                record.step = step;
                evals.push(record);
            }
        }
        if obj.total <= cfg.target_loss {
            stopped_early = step < cfg.max_steps;
            break;
        }
        if step < cfg.max_steps {
            enc.sgd_step(&grads, cfg.learning_rate);
        }
    }
    Ok(Outcome::Finished(
        enc,
        TrainingTrace {
            rows,
            evals,
            stopped_early,
            learning_rate: cfg.learning_rate,
        },
    ))
}

/// Runs up to `max_steps` gradient steps, logging a row per step (step 0 is
/// the initial encoder) and calling `hook` every `eval_every` steps.
pub fn train(
    enc: Encoder,
    data: &TripletDataset,
    cfg: &TrainConfig,
    hook: Option<&mut EvalHook<'_>>,
) -> Result<(Encoder, TrainingTrace)> {
    match run(enc, data, cfg, hook, false)? {
        Outcome::Finished(e, t) => Ok((e, t)),
        Outcome::Increased => unreachable!("monotonicity not checked"),
    }
}

/// Restarts training from `enc` with the learning rate halved until a run
/// completes with a nonincreasing objective and no divergence. Gives up
/// after `max_halvings` halvings.
pub fn train_with_halving(
    enc: &Encoder,
    data: &TripletDataset,
    cfg: &TrainConfig,
    max_halvings: usize,
) -> Result<(Encoder, TrainingTrace)> {
    let mut cfg = *cfg;
    for _ in 0..=max_halvings {
        match run(enc.clone(), data, &cfg, None, true) {
            Ok(Outcome::Finished(e, t)) => return Ok((e, t)),
            Ok(Outcome::Increased) | Err(Error::Diverged(_)) => cfg.learning_rate *= 0.5,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Diverged(format!(
        "no monotone run after {max_halvings} halvings (last rate {})",
        cfg.learning_rate
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent_model::LatentClassModel;
    use crate::losses::empirical_objective;
    use crate::rng;
    use rand::Rng;

    fn setup(n: usize, d_x: usize, m: usize, depth: usize, d: usize, seed: u64) -> (Encoder, TripletDataset) {
        let model = LatentClassModel::random(3, d_x, 0.3, None, &mut rng::stream(seed)).unwrap();
        let data = TripletDataset::build(&model, n, 0.0, 1e-3, &mut rng::stream(seed + 1)).unwrap();
        let enc = Encoder::init(d_x, m, depth, d, &mut rng::stream(seed + 2)).unwrap();
        (enc, data)
    }

    fn cfg(lr: f64, steps: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            max_steps: steps,
            target_loss: 0.0,
            eta_monitor: 0.1,
            norm_upper_monitor: 100.0,
            eval_every: 5,
            seed: 0,
        }
    }

    #[test]
    fn assembled_gradient_matches_finite_differences() {
        let (enc, data) = setup(6, 8, 32, 3, 4, 11);
        let (_, grads) = objective_gradient(&enc, &data);
        let h = 1e-6;
        let mut r = rng::stream(12);
        let mut worst = 0.0f64;
        for (which, g) in grads.matrices().into_iter().enumerate() {
            let (rows, cols) = g.dim();
            for _ in 0..10 {
                let (i, j) = (r.random_range(0..rows), r.random_range(0..cols));
                let eval = |delta: f64| {
                    let mut e = enc.clone();
                    e.parameters_mut()[which][[i, j]] += delta;
                    empirical_objective(&e, &data).total
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let scale = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                worst = worst.max((fd - g[[i, j]]).abs() / g[[i, j]].abs().max(1e-3 * scale));
            }
        }
        assert!(worst <= 1e-5, "worst relative error {worst}");
    }

    #[test]
    fn zero_rate_keeps_objective_constant() {
        let (enc, data) = setup(4, 5, 16, 1, 3, 1);
        let (after, trace) = train(enc.clone(), &data, &cfg(0.0, 20), None).unwrap();
        assert_eq!(after, enc);
        assert!(trace.rows.iter().all(|r| r.objective == trace.rows[0].objective));
        assert_eq!(trace.rows.len(), 21);
    }

    #[test]
    fn single_triplet_descends() {
        let (enc, data) = setup(1, 4, 16, 1, 2, 2);
        let (_, trace) = train(enc, &data, &cfg(1e-2, 50), None).unwrap();
        let obj = trace.objectives();
        assert!(obj.windows(2).all(|w| w[1] < w[0]), "{obj:?}");
    }

    #[test]
    fn descent_direction_confirmed_by_line_search() {
        // Halving the step along the negative gradient eventually decreases
        // the objective; the trainer's step must agree in sign.
        let (enc, data) = setup(3, 4, 16, 2, 2, 3);
        let (obj, grads) = objective_gradient(&enc, &data);
        let mut lr = 1.0;
        let mut found = false;
        for _ in 0..40 {
            let mut e = enc.clone();
            e.sgd_step(&grads, lr);
            if empirical_objective(&e, &data).total < obj.total {
                found = true;
                break;
            }
            lr *= 0.5;
        }
        assert!(found);
    }

    #[test]
    fn training_is_deterministic() {
        let (enc, data) = setup(5, 6, 16, 2, 3, 4);
        let mut calls = 0;
        let mut hook = |step: usize, _: &Encoder| -> Result<EvalRecord> {
            calls += 1;
            Ok(EvalRecord {
                step,
                ..Default::default()
            })
        };
        let a = train(enc.clone(), &data, &cfg(0.05, 30), Some(&mut hook)).unwrap();
        let b = train(enc, &data, &cfg(0.05, 30), None).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.rows, b.1.rows);
        assert_eq!(calls, 7);
        assert_eq!(a.1.evals.iter().map(|e| e.step).collect::<Vec<_>>(), vec![0, 5, 10, 15, 20, 25, 30]);
    }

    #[test]
    fn early_stop_and_divergence() {
        let (enc, data) = setup(2, 4, 16, 1, 2, 5);
        let mut c = cfg(0.01, 100);
        c.target_loss = 1e6;
        let (_, trace) = train(enc.clone(), &data, &c, None).unwrap();
        assert_eq!(trace.rows.len(), 1);
        assert!(trace.stopped_early);
        assert!(matches!(train(enc, &data, &cfg(1e6, 50), None), Err(Error::Diverged(_))));
    }

    #[test]
    fn halving_yields_monotone_run() {
        let (enc, data) = setup(8, 6, 32, 2, 4, 6);
        let (_, trace) = train_with_halving(&enc, &data, &cfg(50.0, 100), 30).unwrap();
        assert!(trace.first_increase().is_none());
        assert!(trace.learning_rate < 50.0);
    }

    #[test]
    fn norms_match_brute_force() {
        let (enc, data) = setup(5, 6, 16, 2, 3, 7);
        let (lo, hi) = track_norms(&enc, &data);
        let norms: Vec<f64> = (0..data.members().nrows())
            .map(|i| {
                let y = enc.forward(data.members().row(i).as_slice().unwrap()).output;
                y.iter().map(|v| v * v).sum::<f64>().sqrt()
            })
            .collect();
        let blo = norms.iter().copied().fold(f64::INFINITY, f64::min);
        let bhi = norms.iter().copied().fold(0.0, f64::max);
        assert!((lo - blo).abs() <= 1e-12 && (hi - bhi).abs() <= 1e-12);

        let mut zero = enc.clone();
        zero.output_weights_mut().fill(0.0);
        assert_eq!(track_norms(&zero, &data), (0.0, 0.0));
        let (_, trace) = train(zero, &data, &cfg(0.0, 2), None).unwrap();
        assert!(trace.rows.iter().all(|r| !r.within_corridor));
    }

    #[test]
    fn single_member_norms_coincide() {
        let enc = Encoder::init(3, 8, 1, 2, &mut rng::stream(8)).unwrap();
        let x = ndarray::Array2::from_shape_vec((1, 3), vec![0.0, 1.0, 0.0]).unwrap();
        let (lo, hi) = norms_of(&enc.forward_batch(x.view()).output);
        assert_eq!(lo, hi);
    }

    #[test]
    fn invalid_configs_rejected() {
        let (enc, data) = setup(2, 4, 8, 1, 2, 9);
        for bad in [
            TrainConfig { max_steps: 0, ..cfg(0.1, 1) },
            TrainConfig { eval_every: 0, ..cfg(0.1, 1) },
            TrainConfig { eta_monitor: 0.0, ..cfg(0.1, 1) },
            cfg(-1.0, 1),
        ] {
            assert!(train(enc.clone(), &data, &bad, None).is_err());
        }
    }
}
