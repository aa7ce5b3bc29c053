//! End-to-end checks of the `xcov` binary: exit codes, determinism, and
//! agreement with the library API.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use xcov_core::estimators::bbp_clean;
use xcov_core::harness::ReturnsPanel;
use xcov_core::neural::{save_model, NeuralModel};
use xcov_core::sample_cross_correlation;
use xcov_core::DenseMatrix;

fn xcov() -> Command {
    Command::new(env!("CARGO_BIN_EXE_xcov"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = xcov().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "expected success for {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn work_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("xcov_cli_{name}"));
    std::fs::create_dir_all(&dir).expect("temp dir");
    dir
}

fn write_matrix_csv(path: &Path, m: &DenseMatrix) {
    let mut text = String::new();
    for i in 0..m.rows() {
        let cells: Vec<String> = m.row(i).iter().map(|v| format!("{v:.16e}")).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    std::fs::write(path, text).unwrap();
}

fn read_matrix_csv(path: &Path) -> DenseMatrix {
    let text = std::fs::read_to_string(path).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|c| c.trim().parse().unwrap()).collect())
        .collect();
    DenseMatrix::from_rows(&rows)
}

fn toy_panel(t: usize, n: usize, seed: u64, prefix: &str) -> ReturnsPanel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = chrono::NaiveDate::from_ymd_opt(2018, 1, 1).unwrap();
    let dates = (0..t).map(|i| start + chrono::Duration::days(i as i64)).collect();
    let assets = (0..n).map(|j| format!("{prefix}{j:02}")).collect();
    let returns = DenseMatrix::from_fn(t, n, |_, _| rng.random_range(-0.05..0.05));
    ReturnsPanel::new(dates, assets, returns).unwrap()
}

/// Strips the wall-time column, the only non-deterministic output field.
fn without_seconds(csv: &str) -> String {
    csv.lines()
        .map(|line| {
            let cells: Vec<&str> = line.split(',').collect();
            cells[..cells.len() - 1].join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn help_exits_zero_on_every_subcommand() {
    for sub in ["synth-bench", "clean", "train", "eval", "feasibility"] {
        let out = xcov().args([sub, "--help"]).output().unwrap();
        assert_eq!(exit_code(&out), 0, "{sub} --help failed");
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains("--"), "{sub} help should document flags");
    }
    let out = xcov().arg("--help").output().unwrap();
    assert_eq!(exit_code(&out), 0);
}

#[test]
fn synth_bench_is_deterministic_and_validates_nsim() {
    let dir = work_dir("synth");
    let out1 = dir.join("run1.csv");
    let out2 = dir.join("run2.csv");
    let base = [
        "synth-bench",
        "--benchmark",
        "mode",
        "--param",
        "0.5",
        "--nx",
        "6",
        "--ny",
        "9",
        "--dt",
        "60",
        "--nsim",
        "3",
        "--seed",
        "7",
        "--estimators",
        "mle,bbp,cv",
    ];
    let mut args1: Vec<&str> = base.to_vec();
    args1.extend(["--out", out1.to_str().unwrap()]);
    run_ok(&args1);
    let mut args2: Vec<&str> = base.to_vec();
    args2.extend(["--out", out2.to_str().unwrap()]);
    run_ok(&args2);
    let csv1 = std::fs::read_to_string(&out1).unwrap();
    let csv2 = std::fs::read_to_string(&out2).unwrap();
    assert_eq!(without_seconds(&csv1), without_seconds(&csv2));
    assert!(csv1.starts_with("estimator,condition,param,mean_mse"));

    // zero simulations is a usage error
    let out = xcov()
        .args([
            "synth-bench",
            "--benchmark",
            "mode",
            "--param",
            "0.5",
            "--nx",
            "4",
            "--ny",
            "4",
            "--dt",
            "30",
            "--nsim",
            "0",
            "--out",
            dir.join("zero.csv").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 2);

    // invalid benchmark/param combination
    let out = xcov()
        .args([
            "synth-bench",
            "--benchmark",
            "mode",
            "--param",
            "1.5",
            "--nx",
            "4",
            "--ny",
            "4",
            "--dt",
            "30",
            "--nsim",
            "1",
            "--out",
            dir.join("bad.csv").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn clean_bbp_matches_the_library_bit_for_bit() {
    let dir = work_dir("clean_bbp");
    let x_panel = toy_panel(50, 3, 1, "X");
    let y_panel = toy_panel(50, 4, 2, "Y");
    let x_path = dir.join("x.csv");
    let y_path = dir.join("y.csv");
    std::fs::write(&x_path, x_panel.to_csv_string()).unwrap();
    std::fs::write(&y_path, y_panel.to_csv_string()).unwrap();
    let out_path = dir.join("cleaned.csv");
    run_ok(&[
        "clean",
        "--x",
        x_path.to_str().unwrap(),
        "--y",
        y_path.to_str().unwrap(),
        "--method",
        "bbp",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    let got = read_matrix_csv(&out_path);
    let trip = sample_cross_correlation(&x_panel.returns, &y_panel.returns).unwrap();
    let expected = bbp_clean(&trip, false).unwrap();
    assert_eq!(got.data(), expected.cleaned.data(), "17-digit round trip must be exact");
    // sidecar spectrum
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_path.with_extension("json")).unwrap())
            .unwrap();
    assert_eq!(sidecar["method"], "bbp");
    assert_eq!(sidecar["s_clean"].as_array().unwrap().len(), 3);
}

#[test]
fn clean_with_zero_model_reproduces_the_empirical_block() {
    let dir = work_dir("clean_nn");
    let x_panel = toy_panel(40, 3, 3, "X");
    let y_panel = toy_panel(40, 3, 4, "Y");
    let x_path = dir.join("x.csv");
    let y_path = dir.join("y.csv");
    std::fs::write(&x_path, x_panel.to_csv_string()).unwrap();
    std::fs::write(&y_path, y_panel.to_csv_string()).unwrap();
    // freshly initialized model has a zero head
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = NeuralModel::init(Default::default(), &mut rng);
    let model_path = dir.join("model.xcnn");
    save_model(&model, &model_path).unwrap();
    let out_path = dir.join("cleaned.csv");
    run_ok(&[
        "clean",
        "--x",
        x_path.to_str().unwrap(),
        "--y",
        y_path.to_str().unwrap(),
        "--method",
        "nn",
        "--model",
        model_path.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    let got = read_matrix_csv(&out_path);
    let trip = sample_cross_correlation(&x_panel.returns, &y_panel.returns).unwrap();
    assert!(got.max_abs_diff(&trip.cxy) < 1e-9, "zero head must reproduce the empirical block");

    // method nn without --model is a usage error
    let out = xcov()
        .args([
            "clean",
            "--x",
            x_path.to_str().unwrap(),
            "--y",
            y_path.to_str().unwrap(),
            "--method",
            "nn",
            "--out",
            dir.join("x2.csv").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn clean_covariance_on_unit_std_data_matches_correlation() {
    let dir = work_dir("clean_cov");
    // +-1 alternating columns have exact unit sample standard deviation
    let t = 16usize;
    let make = |phase: usize, n: usize, prefix: &str| {
        let start = chrono::NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
        let dates = (0..t).map(|i| start + chrono::Duration::days(i as i64)).collect();
        let assets = (0..n).map(|j| format!("{prefix}{j}")).collect();
        let returns = DenseMatrix::from_fn(t, n, |i, j| {
            if (i + j + phase) % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        });
        ReturnsPanel::new(dates, assets, returns).unwrap()
    };
    let x_panel = make(0, 2, "X");
    let y_panel = make(1, 2, "Y");
    let x_path = dir.join("x.csv");
    let y_path = dir.join("y.csv");
    std::fs::write(&x_path, x_panel.to_csv_string()).unwrap();
    std::fs::write(&y_path, y_panel.to_csv_string()).unwrap();
    let corr_path = dir.join("corr.csv");
    let cov_path = dir.join("cov.csv");
    for (flag, path) in [("off", &corr_path), ("on", &cov_path)] {
        run_ok(&[
            "clean",
            "--x",
            x_path.to_str().unwrap(),
            "--y",
            y_path.to_str().unwrap(),
            "--method",
            "bbp",
            "--covariance",
            flag,
            "--out",
            path.to_str().unwrap(),
        ]);
    }
    let corr = read_matrix_csv(&corr_path);
    let cov = read_matrix_csv(&cov_path);
    assert!(corr.max_abs_diff(&cov) < 1e-12);
}

#[test]
fn clean_rejects_misaligned_dates() {
    let dir = work_dir("clean_dates");
    let x_panel = toy_panel(20, 2, 6, "X");
    let mut y_panel = toy_panel(20, 2, 7, "Y");
    // push the final date out by one day; still strictly increasing
    y_panel.dates[19] += chrono::Duration::days(1);
    let x_path = dir.join("x.csv");
    let y_path = dir.join("y.csv");
    std::fs::write(&x_path, x_panel.to_csv_string()).unwrap();
    std::fs::write(&y_path, y_panel.to_csv_string()).unwrap();
    let out = xcov()
        .args([
            "clean",
            "--x",
            x_path.to_str().unwrap(),
            "--y",
            y_path.to_str().unwrap(),
            "--method",
            "bbp",
            "--out",
            dir.join("o.csv").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("mismatch"), "{stderr}");
}

#[test]
fn train_writes_a_loadable_model_with_the_paper_parameter_count() {
    let dir = work_dir("train");
    let panel = toy_panel(120, 60, 8, "A");
    let panel_path = dir.join("panel.csv");
    std::fs::write(&panel_path, panel.to_csv_string()).unwrap();
    let config = serde_json::json!({
        "epochs": 2,
        "steps_per_epoch": 1,
        "batch_size": 2,
        "accumulation_steps": 1,
        "n_range": [8, 12],
        "nu_range": [0.4, 0.6],
        "dt_in_range": [30, 40],
        "dt_out": 10,
        "master_seed": 3,
    });
    let config_path = dir.join("train.json");
    std::fs::write(&config_path, config.to_string()).unwrap();
    let model_path = dir.join("model.xcnn");
    run_ok(&[
        "train",
        "--panel",
        panel_path.to_str().unwrap(),
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        model_path.to_str().unwrap(),
    ]);
    let model = xcov_core::neural::load_model(&model_path).unwrap();
    assert_eq!(xcov_core::count_parameters(&model.params), 331_355);

    // eval with a mismatching dt_out is a usage error
    let eval_config = serde_json::json!({
        "estimators": ["mle", "nn"],
        "n_sim": 2,
        "n_x": 4,
        "n_y": 4,
        "dt_in": 30,
        "dt_out": 20,
        "bootstrap_copies": 50,
        "master_seed": 5,
    });
    let eval_config_path = dir.join("eval.json");
    std::fs::write(&eval_config_path, eval_config.to_string()).unwrap();
    let out = xcov()
        .args([
            "eval",
            "--panel",
            panel_path.to_str().unwrap(),
            "--model",
            model_path.to_str().unwrap(),
            "--config",
            eval_config_path.to_str().unwrap(),
            "--out",
            dir.join("eval.csv").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));

    // matching dt_out runs end to end
    let eval_config = serde_json::json!({
        "estimators": ["mle", "nn"],
        "n_sim": 2,
        "n_x": 4,
        "n_y": 4,
        "dt_in": 30,
        "dt_out": 10,
        "bootstrap_copies": 50,
        "master_seed": 5,
    });
    std::fs::write(&eval_config_path, eval_config.to_string()).unwrap();
    let eval_out = dir.join("eval.csv");
    run_ok(&[
        "eval",
        "--panel",
        panel_path.to_str().unwrap(),
        "--model",
        model_path.to_str().unwrap(),
        "--config",
        eval_config_path.to_str().unwrap(),
        "--out",
        eval_out.to_str().unwrap(),
    ]);
    let csv = std::fs::read_to_string(&eval_out).unwrap();
    assert!(csv.lines().count() >= 3, "{csv}");
}

#[test]
fn feasibility_diagnoses_an_infeasible_block_and_exits_zero() {
    let dir = work_dir("feas");
    let eye = DenseMatrix::identity(2);
    let mut cxy = DenseMatrix::zeros(2, 2);
    cxy[(0, 0)] = 1.5;
    let cxx_path = dir.join("cxx.csv");
    let cyy_path = dir.join("cyy.csv");
    let cxy_path = dir.join("cxy.csv");
    write_matrix_csv(&cxx_path, &eye);
    write_matrix_csv(&cyy_path, &eye);
    write_matrix_csv(&cxy_path, &cxy);
    let out = run_ok(&[
        "feasibility",
        "--cxx",
        cxx_path.to_str().unwrap(),
        "--cyy",
        cyy_path.to_str().unwrap(),
        "--cxy",
        cxy_path.to_str().unwrap(),
    ]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("feasible_psd: false"), "{text}");
    assert!(text.contains("max_canonical: 1.5"), "{text}");
}
