//! Command-line interface: simulate, fit, predict, evaluate, benchmark.
//!
//! All subcommands are driven by one JSON config (`--config`); individual
//! flags override config keys one-to-one. Every run is reproducible from the
//! config plus flags: all randomness flows from named seeds.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::DMatrix;

use pobounds::bp::{fit, predict_bounds, FitConfig, LossP};
use pobounds::config::{read_json, write_json, DataSource, FitArtifact, RunConfig};
use pobounds::datagen::{save_csv, Dataset};
use pobounds::error::{Error, Result};
use pobounds::evaluation::{config_hash, evaluate_on_test, EvalReport, IntervalModel};
use pobounds::kernels::{median_heuristic, KernelKind, KernelSpec};
use pobounds::model_selection::{grid_search, make_splits, selection_to_csv, Grid};
use pobounds::propensity::{fit_logistic, importance_weights, LogisticModel};
use pobounds::qp::SolverSettings;

#[derive(Parser)]
#[command(
    name = "pobounds",
    version,
    about = "Learn high-probability lower/upper bounds on potential outcomes \
             from confounded observational data"
)]
struct Cli {
    /// JSON run configuration; omitted keys take documented defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the run seed (and the replicate list, for simulate/benchmark).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the required miscoverage rate (and the benchmark level grid).
    #[arg(long = "required-fcr", global = true)]
    required_fcr: Option<f64>,
    /// Override the width loss: l1, l2, or linf.
    #[arg(long, global = true)]
    loss: Option<String>,
    /// Fit both arms jointly with shared anchors and cross-arm constraints.
    #[arg(long, global = true)]
    coupled: bool,
    /// Worker count accepted for interface compatibility; execution is
    /// sequential (results are identical for any value).
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write per-seed train/test CSVs plus a metadata file.
    Simulate,
    /// Run the full pipeline and write the model artifact.
    Fit,
    /// Bound predictions for a CSV of query points.
    Predict {
        /// Model artifact produced by `fit`.
        #[arg(long)]
        model: PathBuf,
        /// CSV of query points with the model's covariate columns.
        #[arg(long)]
        input: PathBuf,
    },
    /// Evaluate a model artifact on fresh test data from the config source.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
    },
    /// Replicated method comparison across required-miscoverage levels.
    Benchmark,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    if let Some(rf) = cli.required_fcr {
        config.required_fcr = rf;
        config.levels = vec![rf];
    }
    if let Some(loss) = &cli.loss {
        config.loss = loss.parse::<LossP>()?;
    }
    if cli.coupled {
        config.coupled = true;
    }
    config.validate()?;
    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| Error::io(config.out_dir.display().to_string(), e))?;

    match cli.command {
        Command::Simulate => cmd_simulate(&config),
        Command::Fit => cmd_fit(&config),
        Command::Predict { model, input } => cmd_predict(&config, &model, &input),
        Command::Evaluate { model } => cmd_evaluate(&config, &model),
        Command::Benchmark => cmd_benchmark(&config),
    }
}

/// Hash of the statistical configuration: the output location is excluded so
/// the same run written to two directories produces identical artifacts.
fn run_hash(config: &RunConfig) -> String {
    let mut normalized = config.clone();
    normalized.out_dir = std::path::PathBuf::new();
    config_hash(&normalized)
}

fn synthetic_parts(config: &RunConfig) -> Result<&DataSource> {
    match &config.data {
        s @ DataSource::Synthetic { .. } => Ok(s),
        DataSource::Csv { .. } => Err(Error::InvalidArgument(
            "this command needs a synthetic data source".into(),
        )),
    }
}

fn cmd_simulate(config: &RunConfig) -> Result<()> {
    let DataSource::Synthetic { dgp, .. } = synthetic_parts(config)? else {
        unreachable!()
    };
    let mut meta = serde_json::Map::new();
    meta.insert("config_hash".into(), run_hash(config).into());
    meta.insert("dgp".into(), serde_json::to_value(dgp)?);
    let mut per_seed = serde_json::Map::new();
    for &seed in &config.seeds {
        // train: confounded observational draw; test: clean draw at a
        // derived seed so the sets are disjoint in distributional source
        let train = config.load_dataset(seed)?;
        let test = dgp.with_seed(seed ^ 0x7E57).generate()?;
        let train_path = config.out_dir.join(format!("train_seed{seed}.csv"));
        let test_path = config.out_dir.join(format!("test_seed{seed}.csv"));
        save_csv(&train, &train_path)?;
        save_csv(&test, &test_path)?;
        per_seed.insert(
            seed.to_string(),
            serde_json::json!({
                "train_rows": train.n(),
                "test_rows": test.n(),
                "train_file": train_path.file_name().unwrap().to_string_lossy(),
                "test_file": test_path.file_name().unwrap().to_string_lossy(),
            }),
        );
        println!(
            "seed {seed}: wrote {} train rows, {} test rows",
            train.n(),
            test.n()
        );
    }
    meta.insert("seeds".into(), serde_json::Value::Object(per_seed));
    write_json(
        &config.out_dir.join("simulate_metadata.json"),
        &serde_json::Value::Object(meta),
    )
}

fn solver_settings(config: &RunConfig) -> SolverSettings {
    SolverSettings {
        max_iter: config.solver_max_iter,
        ..SolverSettings::default().with_tolerance(config.solver_tolerance)
    }
}

/// Build the hyperparameter grid from the config lists, scaled to the
/// training split (margins by outcome sd, bandwidths by median heuristic).
fn build_grid(config: &RunConfig, train: &Dataset) -> Grid {
    if let Some(grid) = &config.grid {
        return Grid {
            loss_p: config.loss,
            coupled: config.coupled,
            required_fcr: config.required_fcr,
            ..grid.clone()
        };
    }
    let n = train.n() as f64;
    let mean = train.y.sum() / n;
    let sd = (train.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n)
        .sqrt()
        .max(1e-12);
    let kernels = match config.kernel_kind {
        KernelKind::Rbf => {
            let med = median_heuristic(&train.x, 400);
            config
                .bandwidth_factors
                .iter()
                .map(|f| KernelSpec::rbf((f * med).max(1e-6)))
                .collect()
        }
        KernelKind::Linear => vec![KernelSpec::linear()],
        KernelKind::Polynomial => vec![KernelSpec::polynomial(2, 1.0, 1.0)],
    };
    Grid {
        alphas: config.alphas.clone(),
        beta_us: config.betas.clone(),
        beta_ls: config.betas.clone(),
        gammas: config.gamma_multipliers.iter().map(|g| g * sd).collect(),
        kernels,
        loss_p: config.loss,
        coupled: config.coupled,
        required_fcr: config.required_fcr,
        anchor_cap: config.anchor_cap,
    }
}

struct Pipeline {
    dataset: Dataset,
    train_idx: Vec<usize>,
    validate_idx: Vec<usize>,
    propensity: LogisticModel,
}

/// Standardize, split, and fit the treatment-assignment model.
fn prepare_pipeline(config: &RunConfig, seed: u64) -> Result<Pipeline> {
    let dataset = config.load_dataset(seed)?;
    let dataset = if dataset.standardization.is_some() {
        dataset // CSV loads arrive standardized
    } else {
        dataset.standardized()
    };
    let plan = pobounds::model_selection::SplitPlan { seed, ..config.split.clone() };
    let (nuisance_idx, train_idx, validate_idx) = make_splits(&dataset, &plan)?;
    let nuisance = dataset.subset(&nuisance_idx);
    let propensity = fit_logistic(
        &nuisance.x,
        &nuisance.t,
        &config.propensity.reg_grid,
        config.propensity.folds,
        seed,
    )?;
    Ok(Pipeline {
        dataset,
        train_idx,
        validate_idx,
        propensity,
    })
}

fn cmd_fit(config: &RunConfig) -> Result<()> {
    let seed = config.seed;
    let p = prepare_pipeline(config, seed)?;
    let train = p.dataset.subset(&p.train_idx);
    let validate = p.dataset.subset(&p.validate_idx);
    let w_train =
        importance_weights(&p.propensity, &train.x, &train.t, config.propensity.clip_cap)?;
    let w_validate = importance_weights(
        &p.propensity,
        &validate.x,
        &validate.t,
        config.propensity.clip_cap,
    )?;
    let grid = build_grid(config, &train);
    let base = FitConfig {
        anchor_seed: seed,
        solver: solver_settings(config),
        ..FitConfig::default()
    };
    let selection = grid_search(&train, &validate, &w_train, &w_validate, &grid, &base)?;
    if selection.fallback_used {
        println!(
            "warning: no hyperparameter cell met the target rate {}; \
             selected the smallest-miscoverage cell instead",
            config.required_fcr
        );
    }

    // final refit on train + validate with the chosen configuration
    let mut refit_idx: Vec<usize> = p
        .train_idx
        .iter()
        .chain(p.validate_idx.iter())
        .copied()
        .collect();
    refit_idx.sort_unstable();
    let refit_data = p.dataset.subset(&refit_idx);
    let w_refit = importance_weights(
        &p.propensity,
        &refit_data.x,
        &refit_data.t,
        config.propensity.clip_cap,
    )?;
    let model = fit(&refit_data, &w_refit, &selection.chosen)?;

    let artifact = FitArtifact {
        model,
        selection,
        config_hash: run_hash(config),
        seed,
        feature_names: p.dataset.feature_names.clone(),
        standardization: p.dataset.standardization.clone(),
    };
    let model_path = config.out_dir.join("model.json");
    write_json(&model_path, &artifact)?;
    selection_to_csv(&artifact.selection, &config.out_dir.join("selection.csv"))?;
    println!(
        "fit: loss={} coupled={} alpha={} beta_u={} beta_l={} gamma={:.4}",
        artifact.selection.chosen.loss_p,
        artifact.selection.chosen.coupled,
        artifact.selection.chosen.alpha,
        artifact.selection.chosen.beta_u,
        artifact.selection.chosen.beta_l,
        artifact.selection.chosen.gamma,
    );
    println!("wrote {}", model_path.display());
    Ok(())
}

/// Read the model's covariate columns from a CSV of query points.
fn read_query_csv(path: &Path, feature_names: &[String]) -> Result<DMatrix<f64>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))?;
    let headers = reader.headers()?.clone();
    let idx: Vec<usize> = feature_names
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.clone()))
        })
        .collect::<Result<_>>()?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(idx.len());
        for (&c, name) in idx.iter().zip(feature_names) {
            let cell = record.get(c).unwrap_or("");
            row.push(cell.trim().parse::<f64>().map_err(|_| Error::CsvCell {
                row: r + 2,
                column: name.clone(),
                message: format!("non-numeric cell '{}'", cell.trim()),
            })?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput(format!("no rows in {}", path.display())));
    }
    Ok(DMatrix::from_fn(rows.len(), idx.len(), |i, j| rows[i][j]))
}

fn standardize_queries(
    x: &DMatrix<f64>,
    stats: &Option<Vec<(f64, f64)>>,
) -> Result<DMatrix<f64>> {
    match stats {
        None => Ok(x.clone()),
        Some(stats) => {
            if stats.len() != x.ncols() {
                return Err(Error::DimensionMismatch("standardization stats".into()));
            }
            Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
                (x[(i, j)] - stats[j].0) / stats[j].1
            }))
        }
    }
}

fn cmd_predict(config: &RunConfig, model_path: &Path, input: &Path) -> Result<()> {
    let artifact: FitArtifact = read_json(model_path)?;
    let raw = read_query_csv(input, &artifact.feature_names)?;
    let x = standardize_queries(&raw, &artifact.standardization)?;
    let p0 = predict_bounds(&artifact.model, &x, 0)?;
    let p1 = predict_bounds(&artifact.model, &x, 1)?;
    let out_path = config.out_dir.join("predictions.csv");
    let mut w = csv::Writer::from_path(&out_path)
        .map_err(|e| Error::io(out_path.display().to_string(), std::io::Error::other(e)))?;
    let mut header: Vec<String> = artifact.feature_names.clone();
    header.extend(
        ["lower_0", "upper_0", "lower_1", "upper_1"]
            .iter()
            .map(|s| s.to_string()),
    );
    w.write_record(&header)?;
    for i in 0..raw.nrows() {
        let mut row: Vec<String> = (0..raw.ncols()).map(|j| format!("{}", raw[(i, j)])).collect();
        for v in [p0.lower[i], p0.upper[i], p1.lower[i], p1.upper[i]] {
            row.push(format!("{v}"));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(out_path.display().to_string(), e))?;
    println!("wrote {} ({} rows)", out_path.display(), raw.nrows());
    Ok(())
}

/// Undo a dataset's recorded standardization, then re-apply the model's.
fn restandardize(dataset: &Dataset, stats: &Option<Vec<(f64, f64)>>) -> Result<Dataset> {
    let raw = match &dataset.standardization {
        None => dataset.clone(),
        Some(own) => {
            let mut d = dataset.clone();
            d.x = DMatrix::from_fn(d.x.nrows(), d.x.ncols(), |i, j| {
                d.x[(i, j)] * own[j].1 + own[j].0
            });
            d.standardization = None;
            d
        }
    };
    match stats {
        None => Ok(raw),
        Some(stats) => raw.standardized_with(stats),
    }
}

fn cmd_evaluate(config: &RunConfig, model_path: &Path) -> Result<()> {
    let artifact: FitArtifact = read_json(model_path)?;
    let test = match &config.data {
        DataSource::Synthetic { dgp, .. } => {
            // clean draw at a derived seed, on the model's covariate scale
            let raw = dgp.with_seed(config.seed ^ 0x7E57).generate()?;
            restandardize(&raw, &artifact.standardization)?
        }
        DataSource::Csv { path, schema } => {
            let loaded = pobounds::datagen::load_csv(path, schema)?;
            restandardize(&loaded, &artifact.standardization)?
        }
    };
    let model = IntervalModel::Bounds(artifact.model.clone());
    let arms = evaluate_on_test(&model, &test, None, config.required_fcr)?;
    for a in &arms {
        println!(
            "arm {}: fcr={:.4} (target {:.4}) mean_iw={:.4} max_iw={:.4} crossing={:.4}",
            a.arm, a.achieved_fcr, a.required_fcr, a.mean_iw, a.max_iw, a.crossing_rate
        );
    }
    let report = EvalReport {
        arms,
        seed: config.seed,
        method: format!(
            "bp-{}-{}",
            if artifact.model.config.coupled { "c" } else { "d" },
            artifact.model.config.loss_p
        ),
        config_hash: run_hash(config),
        fallback: artifact.selection.fallback_used,
    };
    let out_path = config.out_dir.join("eval.json");
    write_json(&out_path, &report)?;
    println!("wrote {}", out_path.display());
    Ok(())
}

fn cmd_benchmark(config: &RunConfig) -> Result<()> {
    let bench = config.to_benchmark()?;
    let report = pobounds::evaluation::benchmark(&bench)?;
    let csv_path = config.out_dir.join("benchmark.csv");
    report.write_csv(&csv_path)?;
    let json_path = config.out_dir.join("benchmark_summary.json");
    report.write_summary_json(&json_path)?;
    let fallbacks = report.rows.iter().filter(|r| r.fallback).count();
    if fallbacks > 0 {
        println!("warning: {fallbacks} result cells used a fallback selection");
    }
    println!(
        "wrote {} ({} rows) and {}",
        csv_path.display(),
        report.rows.len(),
        json_path.display()
    );
    Ok(())
}
