//! `contrastlab`: command-line front end for the experiment harness.
//!
//! Exit status is 0 when every asserted check holds, 1 when one fails and 2
//! on errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use contrastlab_core::combinatorics::{collector_stopping_stats, coupon_coverage_exact, coupon_coverage_mc};
use contrastlab_core::harness::pipeline::{
    build_model, prepare_run, run_figure1, run_figure2, run_figure3, run_prop33, smoothness_suite, verify_encoder,
};
use contrastlab_core::harness::table::trace_csv;
use contrastlab_core::idx::load_any;
use contrastlab_core::trainer::{train, EvalHook, EvalRecord};
use contrastlab_core::verifier::REPORT_CSV_HEADER;
use contrastlab_core::{rng, Encoder, ExperimentConfig, InequalityReport, TripletDataset};

#[derive(Parser, Debug)]
#[command(name = "contrastlab", version, about = "Contrastive learning bound checks on synthetic latent-class data")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample the triplet dataset of one run and save it.
    GenData {
        #[arg(long, default_value_t = 0)]
        run: usize,
    },
    /// Train one run, writing the trace, the final encoder and periodic checkpoints.
    Train(TrainArgs),
    /// Single-negative bound along training.
    Figure1,
    /// Coverage bound along training for several negative counts.
    Figure2 {
        /// Negative counts; defaults to `verify.negatives`.
        #[arg(long, value_delimiter = ',')]
        negatives: Vec<usize>,
    },
    /// Task-averaged bound over the `verify.k` x `verify.prop33_negatives` grid.
    Prop33,
    /// Output norm envelopes along training plus the zero-output control.
    Figure3,
    /// Exact and sampled coverage probability, and collector statistics for uniform rho.
    Coupon(CouponArgs),
    /// Quadratic-bound probes and numeric Hessians of the triplet loss.
    Smoothness(SmoothnessArgs),
    /// Run every configured check on a saved encoder.
    Verify {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Training set for the near-stationarity check.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Print the header of an IDX file.
    IdxInfo { path: PathBuf },
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, default_value_t = 0)]
    run: usize,
    /// Train on a saved dataset instead of sampling one.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Save the encoder every this many steps (0 disables).
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
}

#[derive(Args, Debug)]
struct CouponArgs {
    /// Number of classes, uniform rho.
    #[arg(long, conflicts_with = "rho")]
    classes: Option<usize>,
    /// Explicit class probabilities.
    #[arg(long, value_delimiter = ',')]
    rho: Vec<f64>,
    /// Number of draws.
    #[arg(long)]
    draws: usize,
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    /// Tail thresholds for the collector statistics.
    #[arg(long, value_delimiter = ',', default_value = "1,1.5,2,3,5,10")]
    betas: Vec<f64>,
}

#[derive(Args, Debug)]
struct SmoothnessArgs {
    #[arg(long, default_value_t = 100_000)]
    probes: usize,
    #[arg(long, default_value_t = 200)]
    hessians: usize,
    #[arg(long, default_value_t = 4)]
    dim: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,2")]
    radii: Vec<f64>,
}

struct Session {
    config: Option<ExperimentConfig>,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

impl Session {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = self.config.clone().context("this command needs --config")?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output.dir = o.clone();
        }
        Ok(cfg)
    }

    fn seed(&self) -> u64 {
        self.seed.or(self.config.as_ref().map(|c| c.seed)).unwrap_or(0)
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn print_files(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn print_reports(reports: &[InequalityReport]) -> bool {
    println!("{REPORT_CSV_HEADER}");
    for r in reports {
        println!("{}", r.csv_row());
    }
    reports.iter().all(InequalityReport::passes)
}

fn gen_data(ctx: &Session, run: usize) -> Result<bool> {
    let cfg = ctx.config()?;
    let model = build_model(&cfg)?;
    let (data, _) = prepare_run(&cfg, &model, run)?;
    ensure_dir(&cfg.output.dir)?;
    let path = cfg.output.dir.join(format!("dataset_run{run}.bin"));
    data.save(&path)?;
    println!("n = {}, d_x = {}, delta = {:.6}", data.len(), data.input_dim(), data.delta());
    print_files(&[path]);
    Ok(true)
}

fn train_cmd(ctx: &Session, args: &TrainArgs) -> Result<bool> {
    let cfg = ctx.config()?;
    let model = build_model(&cfg)?;
    let (mut data, enc) = prepare_run(&cfg, &model, args.run)?;
    if let Some(p) = &args.data {
        data = TripletDataset::load(p)?;
    }
    let dir = cfg.output.dir.clone();
    ensure_dir(&dir)?;
    let mut tcfg = cfg.train_config();
    let mut saved = Vec::new();
    if args.checkpoint_every > 0 {
        tcfg.eval_every = args.checkpoint_every;
    }
    let stride = args.checkpoint_every;
    let mut hook = |step: usize, e: &Encoder| -> contrastlab_core::Result<EvalRecord> {
        if stride > 0 {
            let path = dir.join(format!("checkpoint_run{}_step{step}.bin", args.run));
            e.save(&path)?;
            saved.push(path);
        }
        Ok(EvalRecord { step, ..Default::default() })
    };
    let hook_ref: Option<&mut EvalHook<'_>> = if stride > 0 { Some(&mut hook) } else { None };
    let (trained, trace) = train(enc, &data, &tcfg, hook_ref)?;
    let enc_path = dir.join(format!("encoder_run{}.bin", args.run));
    trained.save(&enc_path)?;
    let trace_path = dir.join(format!("trace_run{}.csv", args.run));
    std::fs::write(&trace_path, trace_csv(&trace.rows))?;
    saved.push(enc_path);
    saved.push(trace_path);
    print_files(&saved);
    let met = trace.rows.iter().filter(|r| r.lemma42_precondition).count();
    let broken = trace.rows.iter().filter(|r| r.lemma42_precondition && !r.lemma42_holds).count();
    println!(
        "objective {:.6} -> {:.6e} in {} steps; near-stationarity preconditions met at {met} steps, {broken} violations",
        trace.initial_objective(),
        trace.final_objective(),
        trace.rows.last().map_or(0, |r| r.step)
    );
    Ok(broken == 0)
}

fn figure_summaries(out: &contrastlab_core::harness::pipeline::FigureOutput) -> bool {
    print_files(&out.files);
    for s in &out.summaries {
        println!(
            "{}: {} rows, all hold {}, uncorrected variant held at {:.1}%",
            s.stem,
            s.n_rows,
            s.all_hold,
            100.0 * s.stripped_hold_fraction
        );
    }
    out.all_hold()
}

fn coupon(args: &CouponArgs, seed: u64) -> Result<bool> {
    let rho = match (args.classes, args.rho.is_empty()) {
        (Some(k), true) => vec![1.0 / k as f64; k],
        (None, false) => args.rho.clone(),
        _ => bail!("give either --classes or --rho"),
    };
    let exact = coupon_coverage_exact(&rho, args.draws)?;
    let mc = coupon_coverage_mc(&rho, args.draws, args.trials, &mut rng::derive(seed, 0))?;
    println!("p_cc exact = {exact:.12}");
    println!("p_cc sampled = {:.6} +/- {:.6} ({} trials)", mc.value, mc.ci_half_width, mc.n_samples);
    let uniform = rho.iter().all(|&p| (p - rho[0]).abs() <= 1e-12);
    if !uniform {
        return Ok(true);
    }
    let stats = collector_stopping_stats(&rho, args.trials, &args.betas, &mut rng::derive(seed, 1))?;
    println!(
        "collector: mean {:.4} +/- {:.4} (expected {:.4}), variance {:.3} (bound {:.3})",
        stats.mean.value, stats.mean.ci_half_width, stats.expected_mean, stats.variance, stats.variance_bound
    );
    println!("beta,frequency,bound,slack,holds");
    for t in &stats.tails {
        println!("{},{},{},{},{}", t.beta, t.frequency, t.bound, t.slack, t.holds);
    }
    Ok(stats.tails.iter().all(|t| t.holds))
}

fn smoothness(args: &SmoothnessArgs, seed: u64) -> Result<bool> {
    let out = smoothness_suite(args.probes, args.hessians, &args.radii, args.dim, &mut rng::derive(seed, 0))?;
    let ok = print_reports(&out.reports);
    let above = out.hessians.iter().filter(|(_, h)| !h.holds).count();
    println!(
        "hessians: {above}/{} above bound, max asymmetry {:.2e}",
        out.hessians.len(),
        out.max_hessian_asymmetry()
    );
    Ok(ok && above == 0)
}

fn verify(ctx: &Session, checkpoint: &Path, data: Option<&Path>) -> Result<bool> {
    let cfg = ctx.config()?;
    let model = build_model(&cfg)?;
    let enc = Encoder::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let data = data.map(TripletDataset::load).transpose()?;
    let reports = verify_encoder(&cfg, &model, &enc, data.as_ref())?;
    if let Some(dir) = &ctx.out {
        ensure_dir(dir)?;
        let mut csv = format!("{REPORT_CSV_HEADER}\n");
        for r in &reports {
            csv.push_str(&r.csv_row());
            csv.push('\n');
        }
        let path = dir.join("verify.csv");
        std::fs::write(&path, csv)?;
        print_files(&[path]);
    }
    Ok(print_reports(&reports))
}

fn execute(cli: Cli) -> Result<bool> {
    let config = cli
        .config
        .as_deref()
        .map(|p| ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display())))
        .transpose()?;
    let ctx = Session {
        config,
        seed: cli.seed,
        out: cli.out,
    };
    match &cli.command {
        Command::GenData { run } => gen_data(&ctx, *run),
        Command::Train(args) => train_cmd(&ctx, args),
        Command::Figure1 => {
            let cfg = ctx.config()?;
            Ok(figure_summaries(&run_figure1(&cfg, Some(&cfg.output.dir))?))
        }
        Command::Figure2 { negatives } => {
            let cfg = ctx.config()?;
            let ns = if negatives.is_empty() { cfg.verify.negatives.clone() } else { negatives.clone() };
            Ok(figure_summaries(&run_figure2(&cfg, &ns, Some(&cfg.output.dir))?))
        }
        Command::Prop33 => {
            let cfg = ctx.config()?;
            let grid: Vec<(usize, usize)> = cfg
                .verify
                .k
                .iter()
                .flat_map(|&k| cfg.verify.prop33_negatives.iter().map(move |&n| (k, n)))
                .collect();
            if grid.is_empty() {
                bail!("verify.k and verify.prop33_negatives must both be nonempty");
            }
            Ok(figure_summaries(&run_prop33(&cfg, &grid, Some(&cfg.output.dir))?))
        }
        Command::Figure3 => {
            let cfg = ctx.config()?;
            let out = run_figure3(&cfg, Some(&cfg.output.dir))?;
            print_files(&out.files);
            let s = &out.summary;
            println!(
                "empirical eta {:.6}, largest norm {:.4}, control min norm {} (flagged {})",
                s.empirical_eta, s.largest_norm, s.control_min_norm, s.control_flagged
            );
            Ok(s.all_positive && s.control_flagged)
        }
        Command::Coupon(args) => coupon(args, ctx.seed()),
        Command::Smoothness(args) => smoothness(args, ctx.seed()),
        Command::Verify { checkpoint, data } => verify(&ctx, checkpoint, data.as_deref()),
        Command::IdxInfo { path } => {
            let t = load_any(path).with_context(|| format!("reading {}", path.display()))?;
            println!("{}", serde_json::to_string_pretty(&t.info())?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more asserted checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
