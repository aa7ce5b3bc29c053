//! `xcov` — cross-correlation cleaning from the command line.
//!
//! Exit codes: 0 success, 1 runtime failure with partial output written,
//! 2 usage or validation errors. The `XCOV_THREADS` environment variable
//! bounds the worker pool (default: machine parallelism).

mod mat_csv;

use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use xcov_core::estimators::{bbp_clean, cv_clean, Method, SplitMode};
use xcov_core::feasibility::feasibility_report;
use xcov_core::harness::{
    results_to_csv, run_real_eval, run_synthetic_benchmark, ExperimentConfig, PanelSampler,
    PeriodModel, ReturnsPanel,
};
use xcov_core::neural::{load_model, save_model, train, TrainConfig};
use xcov_core::synthgen::{BenchmarkSpec, RngStream, TailLaw};
use xcov_core::{rescale_to_covariance, sample_cross_correlation, ShrinkageResult};

#[derive(Parser)]
#[command(
    name = "xcov",
    version,
    about = "Rotationally invariant cleaning of cross-correlation matrices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo sweep of one synthetic benchmark condition
    SynthBench {
        /// benchmark family
        #[arg(long, value_parser = ["finite-rank", "heavy-bulk", "white-heavy", "mode"])]
        benchmark: String,
        /// varied parameter: spike fraction, tail exponent or "gaussian", or mode strength
        #[arg(long)]
        param: String,
        #[arg(long)]
        nx: usize,
        #[arg(long)]
        ny: usize,
        /// in-sample window length
        #[arg(long)]
        dt: usize,
        /// number of simulations
        #[arg(long)]
        nsim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// comma-separated subset of mle,bbp,cv,nn,oracle
        #[arg(long, default_value = "mle,bbp,cv")]
        estimators: String,
        /// neural model file, required when estimators include nn
        #[arg(long)]
        model: Option<PathBuf>,
        /// output CSV path
        #[arg(long)]
        out: PathBuf,
    },
    /// Clean the cross-correlation block of two aligned return panels
    Clean {
        /// X-side returns panel CSV
        #[arg(long)]
        x: PathBuf,
        /// Y-side returns panel CSV
        #[arg(long)]
        y: PathBuf,
        #[arg(long, value_parser = ["bbp", "cv", "nn"])]
        method: String,
        /// neural model file (required for method=nn)
        #[arg(long)]
        model: Option<PathBuf>,
        /// CV fold count
        #[arg(long, default_value_t = 10)]
        folds: usize,
        /// isotonic post-processing; defaults: off for bbp, on for cv
        #[arg(long, value_parser = ["on", "off"])]
        isotonic: Option<String>,
        /// rescale the cleaned correlation to a covariance
        #[arg(long, default_value = "off", value_parser = ["on", "off"])]
        covariance: String,
        /// output matrix CSV; a sidecar .json carries the cleaned spectrum
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the neural cleaner on a returns panel
    Train {
        #[arg(long)]
        panel: PathBuf,
        /// training configuration JSON
        #[arg(long)]
        config: PathBuf,
        /// last date training data may touch (default: panel end)
        #[arg(long)]
        train_end: Option<String>,
        /// output model file
        #[arg(long)]
        out: PathBuf,
    },
    /// Walk-forward evaluation of estimators on a returns panel
    Eval {
        #[arg(long)]
        panel: PathBuf,
        /// neural model file
        #[arg(long)]
        model: PathBuf,
        /// experiment configuration JSON
        #[arg(long)]
        config: PathBuf,
        /// last date the model's training data may touch (default: before panel start)
        #[arg(long)]
        train_end: Option<String>,
        /// output CSV path
        #[arg(long)]
        out: PathBuf,
    },
    /// Diagnose whether a cross block is compatible with fixed marginals
    Feasibility {
        /// X marginal correlation matrix CSV (headerless)
        #[arg(long)]
        cxx: PathBuf,
        /// Y marginal correlation matrix CSV (headerless)
        #[arg(long)]
        cyy: PathBuf,
        /// candidate cross block CSV (headerless)
        #[arg(long)]
        cxy: PathBuf,
        /// tolerance on the unit-interval bound
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("XCOV_THREADS") {
        if let Ok(n) = threads.trim().parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::SynthBench {
            benchmark,
            param,
            nx,
            ny,
            dt,
            nsim,
            seed,
            estimators,
            model,
            out,
        } => cmd_synth_bench(&benchmark, &param, nx, ny, dt, nsim, seed, &estimators, model, &out),
        Command::Clean { x, y, method, model, folds, isotonic, covariance, out } => {
            cmd_clean(&x, &y, &method, model, folds, isotonic.as_deref(), &covariance, &out)
        }
        Command::Train { panel, config, train_end, out } => {
            cmd_train(&panel, &config, train_end.as_deref(), &out)
        }
        Command::Eval { panel, model, config, train_end, out } => {
            cmd_eval(&panel, &model, &config, train_end.as_deref(), &out)
        }
        Command::Feasibility { cxx, cyy, cxy, tol } => cmd_feasibility(&cxx, &cyy, &cxy, tol),
    }
}

fn parse_tail(param: &str) -> Result<TailLaw, CliError> {
    if param.eq_ignore_ascii_case("gaussian") {
        return Ok(TailLaw::Gaussian);
    }
    let alpha: f64 = param
        .parse()
        .map_err(|_| CliError::usage(format!("tail exponent '{param}' is not a number")))?;
    if alpha <= 1.0 {
        return Err(CliError::usage(format!("tail exponent must exceed 1, got {alpha}")));
    }
    Ok(TailLaw::StudentT(alpha))
}

fn parse_benchmark(benchmark: &str, param: &str) -> Result<BenchmarkSpec, CliError> {
    match benchmark {
        "finite-rank" => {
            let xi: f64 = param
                .parse()
                .map_err(|_| CliError::usage(format!("spike fraction '{param}' is not a number")))?;
            if !(0.0..=1.0).contains(&xi) {
                return Err(CliError::usage(format!("spike fraction must lie in [0,1], got {xi}")));
            }
            Ok(BenchmarkSpec::FiniteRank { xi, sigma2: 0.5 })
        }
        "heavy-bulk" => Ok(BenchmarkSpec::HeavyBulk { tail: parse_tail(param)? }),
        "white-heavy" => Ok(BenchmarkSpec::WhiteHeavy { tail: parse_tail(param)? }),
        "mode" => {
            let m: f64 = param
                .parse()
                .map_err(|_| CliError::usage(format!("mode strength '{param}' is not a number")))?;
            if !(0.0..1.0).contains(&m) {
                return Err(CliError::usage(format!("mode strength must lie in [0,1), got {m}")));
            }
            Ok(BenchmarkSpec::Mode { m })
        }
        other => Err(CliError::usage(format!("unknown benchmark '{other}'"))),
    }
}

fn parse_estimators(list: &str) -> Result<Vec<Method>, CliError> {
    let methods: Result<Vec<Method>, String> = list.split(',').map(|s| s.parse()).collect();
    let methods = methods.map_err(CliError::Usage)?;
    if methods.is_empty() {
        return Err(CliError::usage("estimator list is empty"));
    }
    Ok(methods)
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth_bench(
    benchmark: &str,
    param: &str,
    nx: usize,
    ny: usize,
    dt: usize,
    nsim: usize,
    seed: u64,
    estimators: &str,
    model_path: Option<PathBuf>,
    out: &Path,
) -> Result<(), CliError> {
    if nsim == 0 {
        return Err(CliError::usage("--nsim must be at least 1"));
    }
    let spec = parse_benchmark(benchmark, param)?;
    let estimators = parse_estimators(estimators)?;
    let model = match (&model_path, estimators.contains(&Method::Neural)) {
        (Some(path), _) => {
            Some(load_model(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?)
        }
        (None, true) => {
            return Err(CliError::usage("estimator list includes nn but --model is missing"))
        }
        (None, false) => None,
    };
    let config = ExperimentConfig {
        benchmark: Some(spec),
        estimators,
        n_sim: nsim,
        n_x: nx,
        n_y: ny,
        dt_in: dt,
        master_seed: seed,
        ..ExperimentConfig::default()
    };
    let rows = run_synthetic_benchmark(&config, model.as_ref())
        .map_err(|e| CliError::usage(format!("{e}")))?;
    std::fs::write(out, results_to_csv(&rows))
        .map_err(|e| CliError::runtime(format!("writing {}: {e}", out.display())))?;
    if rows.iter().any(|r| r.n_sim < nsim) {
        return Err(CliError::runtime(
            "some estimator draws failed; partial results written".to_string(),
        ));
    }
    Ok(())
}

fn load_panel(path: &Path) -> Result<ReturnsPanel, CliError> {
    ReturnsPanel::from_csv_path(path)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

#[allow(clippy::too_many_arguments)]
fn cmd_clean(
    x_path: &Path,
    y_path: &Path,
    method: &str,
    model_path: Option<PathBuf>,
    folds: usize,
    isotonic: Option<&str>,
    covariance: &str,
    out: &Path,
) -> Result<(), CliError> {
    let x_panel = load_panel(x_path)?;
    let y_panel = load_panel(y_path)?;
    if x_panel.dates != y_panel.dates {
        let first = x_panel
            .dates
            .iter()
            .zip(&y_panel.dates)
            .find(|(a, b)| a != b)
            .map(|(a, b)| format!("{a} vs {b}"))
            .unwrap_or_else(|| {
                format!("{} vs {} rows", x_panel.dates.len(), y_panel.dates.len())
            });
        return Err(CliError::usage(format!("panels disagree on dates: first mismatch {first}")));
    }
    let trip = sample_cross_correlation(&x_panel.returns, &y_panel.returns)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    let iso_flag = |default: bool| match isotonic {
        Some("on") => true,
        Some("off") => false,
        _ => default,
    };
    let result: ShrinkageResult = match method {
        "bbp" => bbp_clean(&trip, iso_flag(false)).map_err(|e| CliError::runtime(e.to_string()))?,
        "cv" => cv_clean(
            &x_panel.returns,
            &y_panel.returns,
            folds,
            SplitMode::KFold,
            iso_flag(true),
        )
        .map_err(|e| CliError::runtime(e.to_string()))?,
        "nn" => {
            let path = model_path
                .ok_or_else(|| CliError::usage("method nn requires --model"))?;
            let model =
                load_model(&path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
            model.clean(&trip).map_err(|e| CliError::runtime(e.to_string()))?
        }
        other => return Err(CliError::usage(format!("unknown method '{other}'"))),
    };
    let matrix = if covariance == "on" {
        rescale_to_covariance(&result.cleaned, &trip.std_x, &trip.std_y)
            .map_err(|e| CliError::runtime(e.to_string()))?
    } else {
        result.cleaned.clone()
    };
    std::fs::write(out, mat_csv::write_matrix(&matrix))
        .map_err(|e| CliError::runtime(format!("writing {}: {e}", out.display())))?;
    let sidecar = serde_json::json!({
        "method": result.method.as_str(),
        "s_clean": result.s_clean,
        "covariance": covariance == "on",
    });
    let sidecar_path = out.with_extension("json");
    std::fs::write(&sidecar_path, serde_json::to_string_pretty(&sidecar).expect("serializable"))
        .map_err(|e| CliError::runtime(format!("writing {}: {e}", sidecar_path.display())))?;
    Ok(())
}

fn parse_date(text: &str) -> Result<NaiveDate, CliError> {
    NaiveDate::parse_from_str(text, "%Y-%m-%d")
        .map_err(|e| CliError::usage(format!("bad date '{text}': {e}")))
}

fn cmd_train(
    panel_path: &Path,
    config_path: &Path,
    train_end: Option<&str>,
    out: &Path,
) -> Result<(), CliError> {
    let panel = load_panel(panel_path)?;
    let config_text = std::fs::read_to_string(config_path)
        .map_err(|e| CliError::usage(format!("{}: {e}", config_path.display())))?;
    let config: TrainConfig = serde_json::from_str(&config_text)
        .map_err(|e| CliError::usage(format!("{}: {e}", config_path.display())))?;
    let train_end = match train_end {
        Some(s) => parse_date(s)?,
        None => *panel.dates.last().expect("validated non-empty"),
    };
    let mut sampler = PanelSampler::new(
        panel,
        config.clone(),
        train_end,
        RngStream::new(config.master_seed, PANEL_SAMPLER_STREAM),
    )
    .map_err(|e| CliError::usage(e.to_string()))?;
    let (model, _) = train(&config, &mut sampler).map_err(|e| CliError::runtime(e.to_string()))?;
    save_model(&model, out).map_err(|e| CliError::runtime(e.to_string()))?;
    Ok(())
}

const PANEL_SAMPLER_STREAM: u64 = 1 << 61;

fn cmd_eval(
    panel_path: &Path,
    model_path: &Path,
    config_path: &Path,
    train_end: Option<&str>,
    out: &Path,
) -> Result<(), CliError> {
    let panel = load_panel(panel_path)?;
    let model = load_model(model_path)
        .map_err(|e| CliError::usage(format!("{}: {e}", model_path.display())))?;
    let config_text = std::fs::read_to_string(config_path)
        .map_err(|e| CliError::usage(format!("{}: {e}", config_path.display())))?;
    let config = ExperimentConfig::from_json(&config_text)
        .map_err(|e| CliError::usage(format!("{}: {e}", config_path.display())))?;
    if let Some(train_cfg) = &model.train_config {
        if train_cfg.dt_out != config.dt_out {
            return Err(CliError::usage(format!(
                "model was trained for dt_out = {}, config asks for {}",
                train_cfg.dt_out, config.dt_out
            )));
        }
    }
    let train_end = match train_end {
        Some(s) => parse_date(s)?,
        None => panel.dates[0] - chrono::Duration::days(1),
    };
    let models = [PeriodModel { train_end, model }];
    let rows =
        run_real_eval(&config, &panel, &models).map_err(|e| CliError::usage(e.to_string()))?;
    std::fs::write(out, results_to_csv(&rows))
        .map_err(|e| CliError::runtime(format!("writing {}: {e}", out.display())))?;
    if rows.iter().any(|r| r.n_sim < config.n_sim) {
        return Err(CliError::runtime(
            "some estimator draws failed; partial results written".to_string(),
        ));
    }
    Ok(())
}

fn cmd_feasibility(cxx: &Path, cyy: &Path, cxy: &Path, tol: f64) -> Result<(), CliError> {
    let read = |path: &Path| -> Result<xcov_core::DenseMatrix, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        mat_csv::read_matrix(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    };
    let cxx = read(cxx)?;
    let cyy = read(cyy)?;
    let cxy = read(cxy)?;
    let report =
        feasibility_report(&cxx, &cyy, &cxy, tol).map_err(|e| CliError::runtime(e.to_string()))?;
    println!("max_canonical: {:.6e}", report.max_canonical);
    println!("fraction_in_unit_interval: {:.6}", report.fraction_in_unit_interval);
    println!("feasible_psd: {}", report.feasible_psd);
    println!("feasible_pd: {}", report.feasible_pd);
    Ok(())
}
