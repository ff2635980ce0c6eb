//! Experiment pipelines: seeded runs, evaluation at strides, and artifacts.
//!
//! Seeds: the latent model uses `derive(seed, 0)`. Run `r` takes its own seed
//! `s_r` as the first draw of `derive(seed, 1 + r)`; its dataset comes from
//! `derive(s_r, 0)`, its initial encoder from `derive(s_r, 1)` and the
//! evaluation at step `t` from `derive(s_r, 2 + t)`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::svg::{emit_svg, Series, SvgStyle, PALETTE};
use super::table::{
    figure_csv, mean_csv, mean_rows, norm_csv, norm_mean_csv, norm_means, FigureRow, NormRow, CSV_SCHEMA_VERSION,
};
use crate::combinatorics::{collision_prob, coupon_coverage_exact};
use crate::dataset::TripletDataset;
use crate::encoder::Encoder;
use crate::error::{invalid, Error, Result};
use crate::idx;
use crate::latent_model::LatentClassModel;
use crate::losses::{averaged_supervised_losses, empirical_objective, unsupervised_loss, AveragedBudget};
use crate::rng;
use crate::stats::LossEstimate;
use crate::trainer::{train, EvalRecord, TrainingTrace};
use crate::verifier::{
    check_lemma31, check_lemma32, check_lemma42, check_prop33, check_quadratic_bound, full_task_sup_mu,
    hessian_norm_check, report_lemma31, report_lemma32, report_prop33, sample_triplet_ball, HessianCheck,
    InequalityReport, VerifyBudgets,
};

/// Which bounds to evaluate at every eval stride.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvalPlan {
    pub lemma31: bool,
    pub lemma32: Vec<usize>,
    /// `(k, N)` pairs.
    pub prop33: Vec<(usize, usize)>,
}

impl EvalPlan {
    pub fn is_empty(&self) -> bool {
        !self.lemma31 && self.lemma32.is_empty() && self.prop33.is_empty()
    }

    /// The single-negative bound, the coverage bound over `verify.negatives`, and the averaged bound
    /// over `verify.k x verify.prop33_negatives` when the prior is uniform.
    pub fn from_config(cfg: &ExperimentConfig, model: &LatentClassModel) -> Self {
        let prop33 = if model.is_uniform() {
            cfg.verify
                .k
                .iter()
                .flat_map(|&k| cfg.verify.prop33_negatives.iter().map(move |&n| (k, n)))
                .collect()
        } else {
            Vec::new()
        };
        Self {
            lemma31: true,
            lemma32: cfg.verify.negatives.clone(),
            prop33,
        }
    }
}

pub fn l_un_key(n: usize) -> String {
    format!("l_un_{n}")
}

pub fn sup_mu_k_key(k: usize) -> String {
    format!("sup_mu_k{k}")
}

pub const SUP_MU_KEY: &str = "sup_mu";

/// The latent model of a configuration: synthetic, or image pools read from
/// IDX files (one class per listed label, the first `per_class` images each).
pub fn build_model(cfg: &ExperimentConfig) -> Result<LatentClassModel> {
    let rho = cfg.model.rho.clone();
    match &cfg.model.idx {
        None => LatentClassModel::random(
            cfg.model.n_classes,
            cfg.model.input_dim,
            cfg.model.spread,
            rho,
            &mut rng::derive(cfg.seed, 0),
        ),
        Some(src) => {
            let images = idx::load_images(&src.images)?;
            let labels = idx::load_labels(&src.labels)?;
            if images.dims[0] != labels.dims[0] {
                return Err(Error::Format("image and label counts differ".into()));
            }
            let vectors = images.to_unit_vectors()?;
            if vectors.ncols() != cfg.model.input_dim {
                return Err(Error::Dimension(format!(
                    "images have {} pixels, model.input_dim is {}",
                    vectors.ncols(),
                    cfg.model.input_dim
                )));
            }
            let mut pools = Vec::with_capacity(src.classes.len());
            for &label in &src.classes {
                let rows: Vec<usize> = labels
                    .data
                    .iter()
                    .enumerate()
                    .filter(|(_, &l)| l == label)
                    .map(|(i, _)| i)
                    .take(src.per_class)
                    .collect();
                if rows.len() < src.per_class {
                    return Err(invalid(format!("label {label} has only {} images", rows.len())));
                }
                pools.push(vectors.select(Axis(0), &rows));
            }
            let n = pools.len();
            LatentClassModel::empirical(rho.unwrap_or_else(|| vec![1.0 / n as f64; n]), pools)
        }
    }
}

pub fn run_seed(seed: u64, run: usize) -> u64 {
    rng::derive(seed, 1 + run as u64).random()
}

/// Dataset and initial encoder of run `run`.
pub fn prepare_run(cfg: &ExperimentConfig, model: &LatentClassModel, run: usize) -> Result<(TripletDataset, Encoder)> {
    let s = run_seed(cfg.seed, run);
    let data = TripletDataset::build(
        model,
        cfg.dataset.n,
        cfg.dataset.augment_noise,
        cfg.dataset.min_delta,
        &mut rng::derive(s, 0),
    )?;
    let mut enc = Encoder::init(
        model.input_dim(),
        cfg.encoder.width,
        cfg.encoder.depth,
        cfg.encoder.output_dim,
        &mut rng::derive(s, 1),
    )?;
    if cfg.encoder.zero_output_init {
        enc.output_weights_mut().fill(0.0);
    }
    Ok((data, enc))
}

/// Every estimate and report of `plan` for one encoder. Estimates shared by
/// several reports (the supervised loss, `L_un^N` for a given `N`) are
/// computed once.
pub fn evaluate_plan<R: Rng + ?Sized>(
    enc: &Encoder,
    model: &LatentClassModel,
    plan: &EvalPlan,
    budgets: VerifyBudgets,
    rng: &mut R,
) -> Result<EvalRecord> {
    let mut est: BTreeMap<String, LossEstimate> = BTreeMap::new();
    let mut reports = Vec::new();
    if plan.is_empty() {
        return Ok(EvalRecord::default());
    }
    let l_un = |n: usize, est: &mut BTreeMap<String, LossEstimate>, rng: &mut R| -> Result<LossEstimate> {
        if let Some(e) = est.get(&l_un_key(n)) {
            return Ok(*e);
        }
        let e = unsupervised_loss(enc, model, n, budgets.n_mc, rng)?;
        est.insert(l_un_key(n), e);
        Ok(e)
    };
    if plan.lemma31 || !plan.lemma32.is_empty() {
        let sup = full_task_sup_mu(enc, model, budgets, rng)?;
        est.insert(SUP_MU_KEY.into(), sup);
        if plan.lemma31 {
            let l = l_un(1, &mut est, rng)?;
            reports.push(report_lemma31(sup, l, model.p_min(), model.n_classes()));
        }
        for &n in &plan.lemma32 {
            let l = l_un(n, &mut est, rng)?;
            let p_cc = coupon_coverage_exact(model.rho(), n)?;
            reports.push(report_lemma32(sup, l, p_cc, n, model.n_classes())?);
        }
    }
    for &(k, n) in &plan.prop33 {
        let key = sup_mu_k_key(k);
        let sup_k = match est.get(&key) {
            Some(e) => *e,
            None => {
                let avg = averaged_supervised_losses(
                    enc,
                    model,
                    k,
                    AveragedBudget {
                        n_tasks: budgets.n_tasks,
                        n_per_class: budgets.n_per_class,
                        n_mc: budgets.n_mc,
                        opt: None,
                    },
                    rng,
                )?;
                est.insert(key, avg.sup_mu);
                avg.sup_mu
            }
        };
        let l = l_un(n, &mut est, rng)?;
        let tau = collision_prob(model.rho(), n)?;
        reports.push(report_prop33(sup_k, l, tau, k, n, model.n_classes()));
    }
    Ok(EvalRecord {
        step: 0,
        estimates: est,
        reports,
    })
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub run_id: usize,
    pub data: TripletDataset,
    pub initial: Encoder,
    pub encoder: Encoder,
    pub trace: TrainingTrace,
}

/// `verify.runs` seeded training runs, evaluating `plan` every
/// `train.eval_every` steps.
pub fn run_training(cfg: &ExperimentConfig, model: &LatentClassModel, plan: &EvalPlan) -> Result<Vec<RunOutput>> {
    let tcfg = cfg.train_config();
    let budgets = cfg.budgets();
    (0..cfg.verify.runs)
        .map(|run| {
            let (data, initial) = prepare_run(cfg, model, run)?;
            let s = run_seed(cfg.seed, run);
            let mut hook = |step: usize, enc: &Encoder| evaluate_plan(enc, model, plan, budgets, &mut rng::derive(s, 2 + step as u64));
            let hook_ref: Option<&mut crate::trainer::EvalHook<'_>> = if plan.is_empty() { None } else { Some(&mut hook) };
            let (encoder, trace) = train(initial.clone(), &data, &tcfg, hook_ref)?;
            Ok(RunOutput {
                run_id: run,
                data,
                initial,
                encoder,
                trace,
            })
        })
        .collect()
}

/// Which report a figure CSV is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigureKind {
    SingleNegative,
    Coverage { n: usize },
    Averaged { k: usize, n: usize },
}

impl FigureKind {
    fn matches(&self, r: &InequalityReport) -> bool {
        match *self {
            FigureKind::SingleNegative => r.name == "lemma31",
            FigureKind::Coverage { n } => r.name == "lemma32" && r.context.n_negatives == Some(n),
            FigureKind::Averaged { k, n } => {
                r.name.starts_with("prop33") && r.context.k == Some(k) && r.context.n_negatives == Some(n)
            }
        }
    }

    fn negatives(&self) -> usize {
        match *self {
            FigureKind::SingleNegative => 1,
            FigureKind::Coverage { n } | FigureKind::Averaged { n, .. } => n,
        }
    }

    pub fn stem(&self) -> String {
        match *self {
            FigureKind::SingleNegative => "figure1".into(),
            FigureKind::Coverage { n } => format!("figure2_N{n}"),
            FigureKind::Averaged { k, n } => format!("prop33_k{k}_N{n}"),
        }
    }
}

/// One CSV row per (run, eval stride). The `l_un` columns carry `L_un^N` in
/// the report's logarithm base; `rhs_stripped` is the right-hand side with
/// the correction dropped (`L_un / p_min` for the single-class-mass bound,
/// `L_un^N` otherwise).
pub fn figure_rows(runs: &[RunOutput], kind: FigureKind) -> Result<Vec<FigureRow>> {
    let mut rows = Vec::new();
    for run in runs {
        for rec in &run.trace.evals {
            let report = rec
                .reports
                .iter()
                .find(|r| kind.matches(r))
                .ok_or_else(|| invalid(format!("no {} report at step {}", kind.stem(), rec.step)))?;
            let l_un = rec.estimates[&l_un_key(kind.negatives())];
            let l_un = match report.context.log_base {
                Some(b) if b == 2.0 => l_un.affine(1.0 / std::f64::consts::LN_2, 0.0),
                _ => l_un,
            };
            let stripped = match kind {
                FigureKind::SingleNegative => report.context.stripped_rhs.map(|e| e.value).unwrap_or(f64::NAN),
                _ => l_un.value,
            };
            rows.push(FigureRow {
                step: rec.step,
                run_id: run.run_id,
                l_un: l_un.value,
                l_un_ci: l_un.ci_half_width,
                l_sup_mu: report.lhs.value(),
                l_sup_mu_ci: report.lhs.half_width(),
                rhs_full: report.rhs.value(),
                rhs_stripped: stripped,
                holds: report.holds,
            });
        }
    }
    Ok(rows)
}

pub fn norm_rows(runs: &[RunOutput]) -> Vec<NormRow> {
    runs.iter()
        .flat_map(|run| {
            run.trace.rows.iter().map(move |r| NormRow {
                step: r.step,
                run_id: run.run_id,
                min_norm: r.min_norm,
                max_norm: r.max_norm,
            })
        })
        .collect()
}

fn write(dir: &Path, name: &str, contents: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    files.push(path);
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct Meta<'a, T: Serialize> {
    csv_schema_version: u32,
    pipeline: &'a str,
    generator: String,
    seed: u64,
    config: &'a ExperimentConfig,
    summary: &'a T,
}

/// `meta.json` next to the artifacts: schema version, configuration and a
/// pipeline-specific summary.
pub fn write_meta<T: Serialize>(
    dir: &Path,
    name: &str,
    pipeline: &str,
    cfg: &ExperimentConfig,
    summary: &T,
    files: &mut Vec<PathBuf>,
) -> Result<()> {
    let meta = Meta {
        csv_schema_version: CSV_SCHEMA_VERSION,
        pipeline,
        generator: format!("contrastlab {}", env!("CARGO_PKG_VERSION")),
        seed: cfg.seed,
        config: cfg,
        summary,
    };
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Format(e.to_string()))?;
    write(dir, name, &(json + "\n"), files)
}

fn mean_points(rows: &[FigureRow], f: fn(&super::table::MeanRow) -> f64) -> Vec<(f64, f64)> {
    mean_rows(rows).iter().map(|m| (m.step as f64, f(m))).collect()
}

/// SVG of a bound figure: per-run supervised losses (thin), and the run
/// averages of both losses and both right-hand sides (bold).
pub fn bound_figure_svg(rows: &[FigureRow], title: &str) -> Result<String> {
    let mut run_ids: Vec<usize> = rows.iter().map(|r| r.run_id).collect();
    run_ids.sort_unstable();
    run_ids.dedup();
    let mut series: Vec<Series> = run_ids
        .iter()
        .map(|&id| Series {
            label: "supervised loss (runs)".into(),
            points: rows
                .iter()
                .filter(|r| r.run_id == id)
                .map(|r| (r.step as f64, r.l_sup_mu))
                .collect(),
            color: PALETTE[0].into(),
            bold: false,
        })
        .collect();
    for (label, color, f) in [
        ("supervised loss (mean)", PALETTE[0], (|m: &super::table::MeanRow| m.l_sup_mu) as fn(&_) -> f64),
        ("contrastive loss (mean)", PALETTE[1], |m| m.l_un),
        ("bound (mean)", PALETTE[3], |m| m.rhs_full),
        ("bound without correction (mean)", PALETTE[2], |m| m.rhs_stripped),
    ] {
        series.push(Series {
            label: label.into(),
            points: mean_points(rows, f),
            color: color.into(),
            bold: true,
        });
    }
    emit_svg(
        &series,
        &SvgStyle {
            title: title.into(),
            x_label: "iteration".into(),
            y_label: "loss".into(),
            reference: None,
        },
    )
}

pub fn write_bound_figure(
    dir: &Path,
    stem: &str,
    rows: &[FigureRow],
    svg: bool,
    title: &str,
    files: &mut Vec<PathBuf>,
) -> Result<()> {
    write(dir, &format!("{stem}.csv"), &figure_csv(rows), files)?;
    write(dir, &format!("{stem}_mean.csv"), &mean_csv(&mean_rows(rows)), files)?;
    if svg {
        write(dir, &format!("{stem}.svg"), &bound_figure_svg(rows, title)?, files)?;
    }
    Ok(())
}

pub fn norm_figure_svg(rows: &[NormRow]) -> Result<String> {
    let mut run_ids: Vec<usize> = rows.iter().map(|r| r.run_id).collect();
    run_ids.sort_unstable();
    run_ids.dedup();
    let mut series = Vec::new();
    for &id in &run_ids {
        let mine: Vec<&NormRow> = rows.iter().filter(|r| r.run_id == id).collect();
        series.push(Series {
            label: "min norm (runs)".into(),
            points: mine.iter().map(|r| (r.step as f64, r.min_norm)).collect(),
            color: PALETTE[0].into(),
            bold: false,
        });
        series.push(Series {
            label: "max norm (runs)".into(),
            points: mine.iter().map(|r| (r.step as f64, r.max_norm)).collect(),
            color: PALETTE[3].into(),
            bold: false,
        });
    }
    let means = norm_means(rows);
    series.push(Series {
        label: "min norm (mean)".into(),
        points: means.iter().map(|m| (m.0 as f64, m.2)).collect(),
        color: PALETTE[0].into(),
        bold: true,
    });
    series.push(Series {
        label: "max norm (mean)".into(),
        points: means.iter().map(|m| (m.0 as f64, m.3)).collect(),
        color: PALETTE[3].into(),
        bold: true,
    });
    emit_svg(
        &series,
        &SvgStyle {
            title: "Output norms over the training set".into(),
            x_label: "iteration".into(),
            y_label: "Euclidean norm".into(),
            reference: Some((0.0, "zero".into())),
        },
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundSummary {
    pub stem: String,
    pub n_rows: usize,
    pub all_hold: bool,
    /// Fraction of rows where the uncorrected right-hand side also held.
    pub stripped_hold_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_cc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multiplier: Option<f64>,
}

pub fn summarize(runs: &[RunOutput], kind: FigureKind, rows: &[FigureRow]) -> BoundSummary {
    let reports: Vec<&InequalityReport> = runs
        .iter()
        .flat_map(|r| r.trace.evals.iter().flat_map(|e| e.reports.iter()))
        .filter(|r| kind.matches(r))
        .collect();
    let stripped = reports.iter().filter(|r| r.context.stripped_holds == Some(true)).count();
    BoundSummary {
        stem: kind.stem(),
        n_rows: rows.len(),
        all_hold: rows.iter().all(|r| r.holds),
        stripped_hold_fraction: if reports.is_empty() { 0.0 } else { stripped as f64 / reports.len() as f64 },
        p_cc: reports.first().and_then(|r| r.context.p_cc),
        multiplier: reports.first().and_then(|r| r.context.multiplier),
    }
}

#[derive(Debug, Clone)]
pub struct FigureOutput {
    pub runs: Vec<RunOutput>,
    pub rows: BTreeMap<String, Vec<FigureRow>>,
    pub summaries: Vec<BoundSummary>,
    pub files: Vec<PathBuf>,
}

impl FigureOutput {
    pub fn all_hold(&self) -> bool {
        self.summaries.iter().all(|s| s.all_hold)
    }
}

fn run_bound_figures(
    cfg: &ExperimentConfig,
    pipeline: &str,
    plan: EvalPlan,
    kinds: Vec<(FigureKind, String)>,
    out: Option<&Path>,
) -> Result<FigureOutput> {
    let model = build_model(cfg)?;
    let runs = run_training(cfg, &model, &plan)?;
    let mut rows = BTreeMap::new();
    let mut summaries = Vec::new();
    let mut files = Vec::new();
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    for (kind, title) in kinds {
        let r = figure_rows(&runs, kind)?;
        summaries.push(summarize(&runs, kind, &r));
        if let Some(dir) = out {
            write_bound_figure(dir, &kind.stem(), &r, cfg.output.svg, &title, &mut files)?;
        }
        rows.insert(kind.stem(), r);
    }
    if let Some(dir) = out {
        write_meta(dir, &format!("{pipeline}_meta.json"), pipeline, cfg, &summaries, &mut files)?;
    }
    Ok(FigureOutput {
        runs,
        rows,
        summaries,
        files,
    })
}

/// Supervised loss of the mean classifier against `L_un / p_min + ln N_C`
/// along training, over `verify.runs` runs.
pub fn run_figure1(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<FigureOutput> {
    run_bound_figures(
        cfg,
        "figure1",
        EvalPlan {
            lemma31: true,
            ..Default::default()
        },
        vec![(FigureKind::SingleNegative, "Supervised loss vs. single-negative bound".into())],
        out,
    )
}

/// The coverage bound for every `N` in `negatives` (one panel each), sharing
/// the training runs.
pub fn run_figure2(cfg: &ExperimentConfig, negatives: &[usize], out: Option<&Path>) -> Result<FigureOutput> {
    if negatives.is_empty() {
        return Err(invalid("figure 2 needs at least one N"));
    }
    if let Some(&n) = negatives.iter().find(|&&n| n < cfg.model.n_classes) {
        return Err(Error::VacuousBound(format!("N = {n} < N_C = {}", cfg.model.n_classes)));
    }
    run_bound_figures(
        cfg,
        "figure2",
        EvalPlan {
            lemma32: negatives.to_vec(),
            ..Default::default()
        },
        negatives
            .iter()
            .map(|&n| (FigureKind::Coverage { n }, format!("Supervised loss vs. coverage bound, N = {n}")))
            .collect(),
        out,
    )
}

/// The task-averaged bound over the `(k, N)` grid.
pub fn run_prop33(cfg: &ExperimentConfig, grid: &[(usize, usize)], out: Option<&Path>) -> Result<FigureOutput> {
    run_bound_figures(
        cfg,
        "prop33",
        EvalPlan {
            prop33: grid.to_vec(),
            ..Default::default()
        },
        grid.iter()
            .map(|&(k, n)| (FigureKind::Averaged { k, n }, format!("Averaged supervised loss, k = {k}, N = {n}")))
            .collect(),
        out,
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct NormSummary {
    /// Smallest min-norm over every step of every run.
    pub empirical_eta: f64,
    pub largest_norm: f64,
    pub all_positive: bool,
    /// The zero-output-weights control run stayed at or below `eta_monitor`.
    pub control_flagged: bool,
    pub control_min_norm: f64,
}

#[derive(Debug, Clone)]
pub struct NormOutput {
    pub runs: Vec<RunOutput>,
    pub rows: Vec<NormRow>,
    pub summary: NormSummary,
    pub files: Vec<PathBuf>,
}

/// Min and max output norms along training over `verify.runs` runs, plus a
/// control run started from `B = 0`.
pub fn run_figure3(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<NormOutput> {
    let model = build_model(cfg)?;
    let runs = run_training(cfg, &model, &EvalPlan::default())?;
    let mut control_cfg = cfg.clone();
    control_cfg.encoder.zero_output_init = true;
    control_cfg.verify.runs = 1;
    let control = run_training(&control_cfg, &model, &EvalPlan::default())?;
    finish_figure3(cfg, runs, &control[0], out)
}

/// Artifacts of the norm figure from already trained runs.
pub fn finish_figure3(
    cfg: &ExperimentConfig,
    runs: Vec<RunOutput>,
    control: &RunOutput,
    out: Option<&Path>,
) -> Result<NormOutput> {
    let rows = norm_rows(&runs);
    let empirical_eta = rows.iter().map(|r| r.min_norm).fold(f64::INFINITY, f64::min);
    let control_min_norm = control.trace.trajectory_min_norm();
    let summary = NormSummary {
        empirical_eta,
        largest_norm: rows.iter().map(|r| r.max_norm).fold(0.0, f64::max),
        all_positive: empirical_eta > 0.0,
        control_flagged: control_min_norm <= cfg.train.eta_monitor,
        control_min_norm,
    };
    let mut files = Vec::new();
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        write(dir, "figure3.csv", &norm_csv(&rows), &mut files)?;
        write(dir, "figure3_mean.csv", &norm_mean_csv(&rows), &mut files)?;
        if cfg.output.svg {
            write(dir, "figure3.svg", &norm_figure_svg(&rows)?, &mut files)?;
        }
        write_meta(dir, "figure3_meta.json", "figure3", cfg, &summary, &mut files)?;
    }
    Ok(NormOutput {
        runs,
        rows,
        summary,
        files,
    })
}

/// Near-stationarity loss bound for one encoder on its training set.
pub fn lemma42_at(enc: &Encoder, data: &TripletDataset, eta: f64) -> Result<InequalityReport> {
    check_lemma42(&empirical_objective(enc, data), eta)
}

#[derive(Debug, Clone, Serialize)]
pub struct SmoothnessOutput {
    pub reports: Vec<InequalityReport>,
    /// `(C, check)` for every numeric Hessian.
    pub hessians: Vec<(f64, HessianCheck)>,
}

impl SmoothnessOutput {
    pub fn all_hold(&self) -> bool {
        self.reports.iter().all(|r| r.holds) && self.hessians.iter().all(|(_, h)| h.holds)
    }

    pub fn max_hessian_asymmetry(&self) -> f64 {
        self.hessians.iter().map(|(_, h)| h.asymmetry).fold(0.0, f64::max)
    }
}

/// Quadratic-bound probes and numeric Hessians for every radius in `radii`.
pub fn smoothness_suite<R: Rng + ?Sized>(
    n_probes: usize,
    n_hessians: usize,
    radii: &[f64],
    dim: usize,
    rng: &mut R,
) -> Result<SmoothnessOutput> {
    let mut reports = Vec::new();
    let mut hessians = Vec::new();
    for &c in radii {
        reports.push(check_quadratic_bound(n_probes, c, dim, rng)?);
        for _ in 0..n_hessians {
            let z = sample_triplet_ball(dim, c, rng);
            hessians.push((c, hessian_norm_check(&z)?));
        }
    }
    Ok(SmoothnessOutput { reports, hessians })
}

/// The population bounds of the configuration for one encoder, plus the
/// near-stationarity bound on `data` when given.
pub fn verify_encoder(
    cfg: &ExperimentConfig,
    model: &LatentClassModel,
    enc: &Encoder,
    data: Option<&TripletDataset>,
) -> Result<Vec<InequalityReport>> {
    let budgets = cfg.budgets();
    let mut r = rng::derive(cfg.seed, u64::MAX);
    let mut reports = vec![check_lemma31(enc, model, budgets, &mut r)?];
    for &n in &cfg.verify.negatives {
        reports.push(check_lemma32(enc, model, n, budgets, &mut r)?);
    }
    if model.is_uniform() {
        for &k in &cfg.verify.k {
            for &n in &cfg.verify.prop33_negatives {
                reports.push(check_prop33(enc, model, k, n, budgets, &mut r)?);
            }
        }
    }
    if let Some(d) = data {
        reports.push(lemma42_at(enc, d, cfg.train.eta_monitor)?);
    }
    Ok(reports)
}

/// Stacked embeddings of every member, for inspection.
pub fn embed_dataset(enc: &Encoder, data: &TripletDataset) -> Array2<f64> {
    enc.forward_batch(data.members().view()).output
}

#[cfg(test)]
mod tests {
    use super::super::config::EXAMPLE;
    use super::super::table::parse_figure_csv;
    use super::*;

    fn cfg() -> ExperimentConfig {
        ExperimentConfig::from_toml_str(EXAMPLE).unwrap()
    }

    #[test]
    fn figure1_rows_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let a = run_figure1(&cfg(), Some(dir.path())).unwrap();
        let rows = &a.rows["figure1"];
        // 2 runs x steps {0, 5, 10}
        assert_eq!(rows.len(), 2 * 3);
        assert!(a.all_hold());
        let csv = std::fs::read_to_string(dir.path().join("figure1.csv")).unwrap();
        assert_eq!(&parse_figure_csv(&csv).unwrap(), rows);
        let dir2 = tempfile::tempdir().unwrap();
        run_figure1(&cfg(), Some(dir2.path())).unwrap();
        for f in ["figure1.csv", "figure1_mean.csv", "figure1.svg"] {
            assert_eq!(
                std::fs::read(dir.path().join(f)).unwrap(),
                std::fs::read(dir2.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn figure2_multiplier_decreases_with_n() {
        let out = run_figure2(&cfg(), &[3, 6, 9], None).unwrap();
        let m: Vec<f64> = out.summaries.iter().map(|s| s.multiplier.unwrap()).collect();
        assert!(m.windows(2).all(|w| w[1] < w[0]), "{m:?}");
        assert!(run_figure2(&cfg(), &[2], None).is_err());
    }

    #[test]
    fn prop33_pipeline_rows() {
        let out = run_prop33(&cfg(), &[(1, 1), (2, 4)], None).unwrap();
        assert_eq!(out.rows.len(), 2);
        assert!(out.all_hold());
    }

    #[test]
    fn figure3_control_is_flagged() {
        let out = run_figure3(&cfg(), None).unwrap();
        assert!(out.summary.control_flagged);
        assert_eq!(out.summary.control_min_norm, 0.0);
        assert!(out.rows.iter().all(|r| r.max_norm >= r.min_norm));
        assert_eq!(out.rows.len(), 2 * 11);
    }

    #[test]
    fn evaluation_shares_estimates() {
        let c = cfg();
        let model = build_model(&c).unwrap();
        let (_, enc) = prepare_run(&c, &model, 0).unwrap();
        let plan = EvalPlan::from_config(&c, &model);
        let rec = evaluate_plan(&enc, &model, &plan, c.budgets(), &mut rng::stream(1)).unwrap();
        // lemma31 + 2 x lemma32 + 2 x 2 averaged
        assert_eq!(rec.reports.len(), 7);
        let keys: Vec<&String> = rec.estimates.keys().collect();
        assert_eq!(keys, vec!["l_un_1", "l_un_3", "l_un_4", "l_un_6", "sup_mu", "sup_mu_k1", "sup_mu_k2"]);
    }
}
