//! End-to-end command-line behaviour: the toy worked example through the
//! file interfaces, determinism of simulate, and the documented error
//! paths.

use kpool::cli::run_from;
use std::fs;
use std::path::{Path, PathBuf};

fn write_toy_panel(dir: &Path) -> (PathBuf, PathBuf) {
    let fpath = dir.join("train_forecasts.csv");
    let opath = dir.join("train_observations.csv");
    fs::write(
        &fpath,
        "case_id,model_id,member_id,dim_index,value\n\
         c1,m1,0,0,0\nc1,m2,0,0,2\n",
    )
    .unwrap();
    fs::write(&opath, "case_id,dim_index,value\nc1,0,1\n").unwrap();
    (fpath, opath)
}

#[test]
fn preset_files_exist_and_match_embedded() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("presets");
    for (name, embedded) in kpool::cli::presets() {
        let on_disk = fs::read_to_string(dir.join(format!("{name}.ini")))
            .unwrap_or_else(|_| panic!("preset file {name}.ini missing"));
        assert_eq!(
            &on_disk, embedded,
            "preset {name} drifted from the shipped file"
        );
        kpool::cli::preset_scenario(name, 1).unwrap();
    }
}

#[test]
fn simulate_same_seed_is_byte_identical() {
    let root = tempfile::tempdir().unwrap();
    for run in ["a", "b"] {
        let out = root.path().join(run);
        run_from([
            "kpool",
            "--seed",
            "123",
            "simulate",
            "--preset",
            "postprocessed",
            "--out-dir",
            out.to_str().unwrap(),
        ])
        .unwrap();
    }
    for name in [
        "train_forecasts.csv",
        "train_observations.csv",
        "test_forecasts.csv",
        "test_observations.csv",
    ] {
        let a = fs::read(root.path().join("a").join(name)).unwrap();
        let b = fs::read(root.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn invalid_strategy_name_is_a_usage_error() {
    let root = tempfile::tempdir().unwrap();
    let (f, o) = write_toy_panel(root.path());
    let err = run_from([
        "kpool",
        "--strategy",
        "lp-quantile",
        "fit",
        "--train-forecasts",
        f.to_str().unwrap(),
        "--train-obs",
        o.to_str().unwrap(),
        "--model-out",
        root.path().join("m.txt").to_str().unwrap(),
    ])
    .unwrap_err();
    assert!(err.to_string().contains("lp-quantile"), "{err}");
}

#[test]
fn fit_toy_panel_writes_half_half_weights() {
    let root = tempfile::tempdir().unwrap();
    let (f, o) = write_toy_panel(root.path());
    let model_path = root.path().join("model.txt");
    let weights_path = root.path().join("weights.csv");
    run_from([
        "kpool",
        "--strategy",
        "lp-discrete",
        "fit",
        "--train-forecasts",
        f.to_str().unwrap(),
        "--train-obs",
        o.to_str().unwrap(),
        "--model-out",
        model_path.to_str().unwrap(),
        "--weights-report",
        weights_path.to_str().unwrap(),
    ])
    .unwrap();
    let model = kpool::data::load_model(&model_path).unwrap();
    let w = model.groups[0].solution.weights.weights();
    assert!(
        (w[0] - 0.5).abs() < 1e-6 && (w[1] - 0.5).abs() < 1e-6,
        "{w:?}"
    );
    let report = fs::read_to_string(&weights_path).unwrap();
    assert!(report.starts_with("group,scope,model,index,weight,seed\n"));
    assert!(report.contains("all,model,m1,0,0.5"), "{report}");

    // Evaluating the fitted model on its own training case: CRPS 0.5.
    let eval_dir = root.path().join("eval");
    run_from([
        "kpool",
        "evaluate",
        "--model",
        model_path.to_str().unwrap(),
        "--test-forecasts",
        f.to_str().unwrap(),
        "--test-obs",
        o.to_str().unwrap(),
        "--out-dir",
        eval_dir.to_str().unwrap(),
    ])
    .unwrap();
    let scores = fs::read_to_string(eval_dir.join("scores.csv")).unwrap();
    let line = scores
        .lines()
        .find(|l| l.starts_with("lp-discrete,"))
        .unwrap();
    let value: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
    assert!((value - 0.5).abs() < 1e-10, "training CRPS {value}");
    // The equal reference scores itself with zero skill.
    let skill = fs::read_to_string(eval_dir.join("skill.csv")).unwrap();
    assert!(skill.lines().count() >= 2);
}

#[test]
fn equal_strategy_needs_no_solver() {
    let root = tempfile::tempdir().unwrap();
    let (f, o) = write_toy_panel(root.path());
    let model_path = root.path().join("model.txt");
    run_from([
        "kpool",
        "--strategy",
        "equal",
        "fit",
        "--train-forecasts",
        f.to_str().unwrap(),
        "--train-obs",
        o.to_str().unwrap(),
        "--model-out",
        model_path.to_str().unwrap(),
    ])
    .unwrap();
    let model = kpool::data::load_model(&model_path).unwrap();
    let sol = &model.groups[0].solution;
    assert_eq!(sol.iterations, 0);
    assert_eq!(sol.weights.weights(), &[0.5, 0.5]);
    // Equal-weight objective is the training empirical score.
    assert!((sol.objective - 0.5).abs() < 1e-12);
}

#[test]
fn ordered_strategy_rejects_multivariate_panels() {
    let root = tempfile::tempdir().unwrap();
    let f = root.path().join("f.csv");
    let o = root.path().join("o.csv");
    fs::write(
        &f,
        "case_id,model_id,member_id,dim_index,value\n\
         c1,m1,0,0,0\nc1,m1,0,1,1\n",
    )
    .unwrap();
    fs::write(&o, "case_id,dim_index,value\nc1,0,1\nc1,1,0\n").unwrap();
    let err = run_from([
        "kpool",
        "--strategy",
        "lp-ordered",
        "fit",
        "--train-forecasts",
        f.to_str().unwrap(),
        "--train-obs",
        o.to_str().unwrap(),
        "--model-out",
        root.path().join("m.txt").to_str().unwrap(),
    ])
    .unwrap_err();
    assert!(err.to_string().contains("univariate"), "{err}");
}

#[test]
fn evaluate_missing_model_file_errors() {
    let root = tempfile::tempdir().unwrap();
    let (f, o) = write_toy_panel(root.path());
    let err = run_from([
        "kpool",
        "evaluate",
        "--model",
        root.path().join("nope.txt").to_str().unwrap(),
        "--test-forecasts",
        f.to_str().unwrap(),
        "--test-obs",
        o.to_str().unwrap(),
        "--out-dir",
        root.path().join("eval").to_str().unwrap(),
    ])
    .unwrap_err();
    assert!(matches!(err, kpool::Error::Io(_)), "{err}");
}

#[test]
fn evaluate_rejects_structural_mismatch() {
    let root = tempfile::tempdir().unwrap();
    let (f, o) = write_toy_panel(root.path());
    let model_path = root.path().join("model.txt");
    run_from([
        "kpool",
        "fit",
        "--train-forecasts",
        f.to_str().unwrap(),
        "--train-obs",
        o.to_str().unwrap(),
        "--model-out",
        model_path.to_str().unwrap(),
    ])
    .unwrap();
    // A panel with an extra member in model m1.
    let f2 = root.path().join("f2.csv");
    fs::write(
        &f2,
        "case_id,model_id,member_id,dim_index,value\n\
         c1,m1,0,0,0\nc1,m1,1,0,1\nc1,m2,0,0,2\n",
    )
    .unwrap();
    let err = run_from([
        "kpool",
        "evaluate",
        "--model",
        model_path.to_str().unwrap(),
        "--test-forecasts",
        f2.to_str().unwrap(),
        "--test-obs",
        o.to_str().unwrap(),
        "--out-dir",
        root.path().join("eval").to_str().unwrap(),
    ])
    .unwrap_err();
    assert!(err.to_string().contains("structure mismatch"), "{err}");
}

#[test]
fn recalibrate_round_trips_through_files() {
    let root = tempfile::tempdir().unwrap();
    let config = root.path().join("sq.ini");
    fs::write(
        &config,
        "n_train = 40\nn_test = 8\ndim = 1\nsquared_transform = true\n\
         model.a.members = 5\nmodel.a.bias = 0.5\nmodel.a.dispersion = 0.4\n\
         model.b.members = 4\nmodel.b.bias = -0.1\nmodel.b.dispersion = 0.6\n",
    )
    .unwrap();
    let data = root.path().join("data");
    run_from([
        "kpool",
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "5",
        "simulate",
        "--out-dir",
        data.to_str().unwrap(),
    ])
    .unwrap();
    let out = root.path().join("recal");
    run_from([
        "kpool",
        "recalibrate",
        "--forecasts",
        data.join("train_forecasts.csv").to_str().unwrap(),
        "--obs",
        data.join("train_observations.csv").to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ])
    .unwrap();
    let params = fs::read_to_string(out.join("mbm_params.csv")).unwrap();
    assert!(params.starts_with("group,model,a,b,c,d,seed\n"));
    assert_eq!(params.lines().count(), 3);
    // The recalibrated panel still loads.
    let panel = kpool::data::load_panel(
        &out.join("recalibrated_forecasts.csv"),
        &out.join("recalibrated_observations.csv"),
    )
    .unwrap();
    assert_eq!(panel.len(), 40);
}

#[test]
fn combine_writes_pooled_distributions() {
    let root = tempfile::tempdir().unwrap();
    let (f, o) = write_toy_panel(root.path());
    let model_path = root.path().join("model.txt");
    run_from([
        "kpool",
        "fit",
        "--train-forecasts",
        f.to_str().unwrap(),
        "--train-obs",
        o.to_str().unwrap(),
        "--model-out",
        model_path.to_str().unwrap(),
    ])
    .unwrap();
    let out = root.path().join("combined.csv");
    run_from([
        "kpool",
        "combine",
        "--model",
        model_path.to_str().unwrap(),
        "--forecasts",
        f.to_str().unwrap(),
        "--obs",
        o.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
    .unwrap();
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "case_id,atom_index,dim_index,value,weight"
    );
    let weights: Vec<f64> = lines
        .map(|l| l.split(',').nth(4).unwrap().parse().unwrap())
        .collect();
    assert_eq!(weights.len(), 2);
    assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
}
