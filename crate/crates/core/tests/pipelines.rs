use contrastlab_core::harness::config::{
    DatasetBlock, EncoderBlock, ExperimentConfig, ModelBlock, OutputBlock, TrainBlock, VerifyBlock,
};
use contrastlab_core::harness::pipeline::{run_figure1, run_figure2, run_figure3};
use contrastlab_core::harness::table::{parse_figure_csv, parse_norm_csv};

fn config(runs: usize) -> ExperimentConfig {
    ExperimentConfig {
        seed: 11,
        model: ModelBlock {
            n_classes: 3,
            input_dim: 6,
            spread: 0.2,
            rho: None,
            idx: None,
        },
        dataset: DatasetBlock {
            n: 8,
            augment_noise: 0.0,
            min_delta: 0.001,
        },
        encoder: EncoderBlock {
            width: 16,
            depth: 1,
            output_dim: 4,
            zero_output_init: false,
        },
        train: TrainBlock {
            learning_rate: 0.01,
            max_steps: 20,
            target_loss: 0.0,
            eta_monitor: 0.05,
            norm_upper_monitor: 100.0,
            eval_every: 5,
        },
        verify: VerifyBlock {
            runs,
            n_mc: 64,
            n_per_class: 16,
            n_tasks: 3,
            negatives: vec![],
            k: vec![],
            prop33_negatives: vec![],
        },
        output: OutputBlock {
            dir: "out".into(),
            svg: true,
        },
    }
}

#[test]
fn figure1_rows_cover_every_run_and_stride() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_figure1(&config(5), Some(dir.path())).unwrap();
    let text = std::fs::read_to_string(dir.path().join("figure1.csv")).unwrap();
    let rows = parse_figure_csv(&text).unwrap();
    assert_eq!(rows.len(), 5 * 5);
    assert_eq!(rows, out.rows["figure1"]);
    let svg = std::fs::read_to_string(dir.path().join("figure1.svg")).unwrap();
    // five runs, then the means of both losses and both right-hand sides
    assert_eq!(svg.matches("<polyline").count(), 5 + 4);
}

#[test]
fn figure_csv_header_is_enforced() {
    let dir = tempfile::tempdir().unwrap();
    run_figure1(&config(1), Some(dir.path())).unwrap();
    let text = std::fs::read_to_string(dir.path().join("figure1.csv")).unwrap();
    let renamed = text.replacen("l_sup_mu,", "l_sup,", 1);
    assert!(parse_figure_csv(&renamed).is_err());
}

#[test]
fn coverage_multiplier_shrinks_with_more_negatives() {
    let out = run_figure2(&config(1), &[3, 6, 12], None).unwrap();
    let m: Vec<f64> = out.summaries.iter().map(|s| s.multiplier.unwrap()).collect();
    assert!(m.windows(2).all(|w| w[1] < w[0]), "{m:?}");
    let p: Vec<f64> = out.summaries.iter().map(|s| s.p_cc.unwrap()).collect();
    assert!((p[0] - 6.0 / 27.0).abs() < 1e-12);
}

#[test]
fn figure2_rejects_too_few_negatives() {
    assert!(run_figure2(&config(1), &[2], None).is_err());
}

#[test]
fn norm_envelopes_are_ordered() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_figure3(&config(2), Some(dir.path())).unwrap();
    let rows = parse_norm_csv(&std::fs::read_to_string(dir.path().join("figure3.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 2 * 21);
    assert!(rows.iter().all(|r| r.max_norm >= r.min_norm));
    assert!(out.summary.all_positive);
    assert!(out.summary.control_flagged);
    let svg = std::fs::read_to_string(dir.path().join("figure3.svg")).unwrap();
    assert!(svg.contains("stroke-dasharray"));
}
