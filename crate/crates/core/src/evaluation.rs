//! Coverage/width metrics and the replicated benchmark harness.
//!
//! Metrics: the false coverage rate (fraction of outcomes falling outside
//! their interval, endpoints inclusive) and interval-width statistics.
//! The benchmark generates confounded training data and clean test data per
//! seed, runs the full pipeline (splits, propensity weights, grid selection)
//! for each method, re-selects at every required-miscoverage level without
//! re-solving, and reports per-(method, level, seed, arm) results.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baselines::{
    cci_rule, conformal_rule, fit_kernel_ridge, fit_quantile_pair, gamma_rule,
    select_kernel_ridge, IntervalRule, KernelRidgeModel, QuantilePair, RuleKind,
};
use crate::bp::{apply_gamma_shift, predict_bounds, BoundModel, FitConfig, LossP};
use crate::datagen::{ConfoundRule, Dataset, DgpSpec};
use crate::error::{Error, Result};
use crate::kernels::{median_heuristic, KernelKind, KernelSpec};
use crate::model_selection::{evaluate_grid, select_from_table, Grid, SplitPlan};
use crate::propensity::{fit_logistic, importance_weights, WeightSet};
use crate::qp::SolverSettings;

/// Weighted fraction of outcomes strictly outside [lower, upper]
/// (endpoints count as covered). `None` weights means uniform.
pub fn fcr(
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    outcomes: &DVector<f64>,
    weights: Option<&DVector<f64>>,
) -> Result<f64> {
    let n = outcomes.len();
    if n == 0 {
        return Err(Error::EmptyInput("fcr".into()));
    }
    if lower.len() != n || upper.len() != n || weights.is_some_and(|w| w.len() != n) {
        return Err(Error::DimensionMismatch("fcr inputs".into()));
    }
    let total: f64 = weights.map_or(n as f64, |w| w.sum());
    let mut outside = 0.0;
    for i in 0..n {
        if outcomes[i] < lower[i] || outcomes[i] > upper[i] {
            outside += weights.map_or(1.0, |w| w[i]);
        }
    }
    Ok(outside / total)
}

/// (weighted mean width, max width, crossing rate). Crossed intervals
/// (upper < lower) contribute their negative width to the mean.
pub fn iw_stats(
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    weights: Option<&DVector<f64>>,
) -> Result<(f64, f64, f64)> {
    let n = lower.len();
    if n == 0 {
        return Err(Error::EmptyInput("iw_stats".into()));
    }
    if upper.len() != n || weights.is_some_and(|w| w.len() != n) {
        return Err(Error::DimensionMismatch("iw_stats inputs".into()));
    }
    let total: f64 = weights.map_or(n as f64, |w| w.sum());
    let mut mean = 0.0;
    let mut max = f64::NEG_INFINITY;
    let mut crossed = 0usize;
    for i in 0..n {
        let w = upper[i] - lower[i];
        mean += weights.map_or(1.0, |ws| ws[i]) * w;
        max = max.max(w);
        if w < 0.0 {
            crossed += 1;
        }
    }
    Ok((mean / total, max, crossed as f64 / n as f64))
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..a.len() {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma).powi(2);
        vb += (rb[i] - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va.sqrt() * vb.sqrt())
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap());
    let mut ranks = vec![0.0; v.len()];
    let mut pos = 0;
    while pos < idx.len() {
        let mut end = pos;
        while end + 1 < idx.len() && v[idx[end + 1]] == v[idx[pos]] {
            end += 1;
        }
        let avg = (pos + end) as f64 / 2.0 + 1.0;
        for &i in &idx[pos..=end] {
            ranks[i] = avg;
        }
        pos = end + 1;
    }
    ranks
}

/// Per-arm evaluation of one model at one required rate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmEval {
    pub arm: u8,
    pub achieved_fcr: f64,
    pub mean_iw: f64,
    pub max_iw: f64,
    pub crossing_rate: f64,
    pub required_fcr: f64,
    pub fcr_violation: f64,
}

/// Full evaluation record for one fitted model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub arms: Vec<ArmEval>,
    pub seed: u64,
    pub method: String,
    pub config_hash: String,
    pub fallback: bool,
}

/// FNV-1a over a serialized value; used to tag reports with a config identity.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).unwrap_or_default();
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

/// Anything producing per-arm intervals over query points.
#[derive(Debug, Clone)]
pub enum IntervalModel {
    /// Asymmetric learned bounds.
    Bounds(BoundModel),
    /// Symmetric rule around a per-arm base regression.
    Symmetric {
        bases: Vec<KernelRidgeModel>,
        rules: Vec<IntervalRule>,
    },
    /// Per-arm non-crossing quantile regression pair.
    Quantile { pairs: Vec<QuantilePair> },
}

impl IntervalModel {
    pub fn intervals(&self, x: &DMatrix<f64>, arm: u8) -> Result<(DVector<f64>, DVector<f64>)> {
        if arm > 1 {
            return Err(Error::InvalidArgument(format!("unknown arm {arm}")));
        }
        match self {
            IntervalModel::Bounds(model) => {
                let pred = predict_bounds(model, x, arm)?;
                Ok((pred.lower, pred.upper))
            }
            IntervalModel::Symmetric { bases, rules } => {
                let pred = bases[arm as usize].predict(x)?;
                Ok(rules[arm as usize].apply(&pred))
            }
            IntervalModel::Quantile { pairs } => pairs[arm as usize].predict(x),
        }
    }
}

/// Evaluate a model on a test set. With potential outcomes present
/// (simulation mode), each arm is scored against its true outcome at every
/// test point, unweighted. Otherwise (observational mode) each arm is scored
/// on its factual samples with the provided normalized weights.
pub fn evaluate_on_test(
    model: &IntervalModel,
    test: &Dataset,
    weights: Option<&WeightSet>,
    required_fcr: f64,
) -> Result<Vec<ArmEval>> {
    let simulation = test.y0.is_some() && test.y1.is_some();
    let mut out = Vec::with_capacity(2);
    for arm in [0u8, 1u8] {
        let (x, y, w) = if simulation {
            let truth = if arm == 1 { test.y1.as_ref() } else { test.y0.as_ref() };
            (test.x.clone(), truth.unwrap().clone(), None)
        } else {
            let idx = test.arm_indices(arm);
            if idx.is_empty() {
                return Err(Error::EmptyArm(arm));
            }
            let x = DMatrix::from_fn(idx.len(), test.x.ncols(), |i, j| test.x[(idx[i], j)]);
            let y = DVector::from_fn(idx.len(), |i, _| test.y[idx[i]]);
            let w = match weights {
                Some(ws) => Some(ws.arm_normalized(&test.t, arm)),
                None => None,
            };
            (x, y, w)
        };
        let (lower, upper) = model.intervals(&x, arm)?;
        let achieved = fcr(&lower, &upper, &y, w.as_ref())?;
        let (mean_iw, max_iw, crossing_rate) = iw_stats(&lower, &upper, w.as_ref())?;
        out.push(ArmEval {
            arm,
            achieved_fcr: achieved,
            mean_iw,
            max_iw,
            crossing_rate,
            required_fcr,
            fcr_violation: achieved - required_fcr,
        });
    }
    Ok(out)
}

/// A method entered into the benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MethodSpec {
    /// Learned bound program (decoupled or coupled, any loss).
    Bp { loss_p: LossP, coupled: bool },
    /// Kernel ridge with split-conformal intervals.
    KrConformal,
    /// Kernel ridge shifted by the smallest margin whose estimated miss rate
    /// meets the target, where the estimate models held-out residuals as
    /// zero-mean Gaussian (weighted rms scale).
    KrGamma,
    /// Kernel ridge with classical Gaussian confidence intervals.
    KrCci,
    /// Per-arm non-crossing quantile pair at (level/2, 1 - level/2).
    Qr,
}

impl std::fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MethodSpec::Bp { loss_p, coupled } => {
                write!(f, "bp-{}-{}", if *coupled { "c" } else { "d" }, loss_p)
            }
            MethodSpec::KrConformal => f.write_str("kr-conformal"),
            MethodSpec::KrGamma => f.write_str("kr-gamma"),
            MethodSpec::KrCci => f.write_str("kr-cci"),
            MethodSpec::Qr => f.write_str("qr"),
        }
    }
}

/// Benchmark configuration: data generation, pipeline settings, methods,
/// required-miscoverage levels, and replicate seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub dgp: DgpSpec,
    pub confound: Option<ConfoundRule>,
    pub n_test: usize,
    pub seeds: Vec<u64>,
    pub levels: Vec<f64>,
    pub methods: Vec<MethodSpec>,
    pub split: SplitPlan,
    pub kernel_kind: KernelKind,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// Margin candidates as multiples of the train outcome sd.
    pub gamma_multipliers: Vec<f64>,
    /// Bandwidth candidates as multiples of the median heuristic (RBF only).
    pub bandwidth_factors: Vec<f64>,
    pub anchor_cap: usize,
    pub solver_tolerance: f64,
    pub solver_max_iter: usize,
    pub ridge_lambdas: Vec<f64>,
    pub propensity_reg_grid: Vec<f64>,
    pub propensity_folds: usize,
    pub clip_cap: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            dgp: DgpSpec::IstLike { n: 3000, seed: 0 },
            confound: Some(ConfoundRule::ist_default()),
            n_test: 3000,
            seeds: (0..20).collect(),
            levels: vec![0.001, 0.005, 0.01, 0.02, 0.03, 0.04, 0.05, 0.1, 0.15, 0.2],
            methods: vec![
                MethodSpec::Bp { loss_p: LossP::L2, coupled: false },
                MethodSpec::KrConformal,
                MethodSpec::KrGamma,
                MethodSpec::KrCci,
            ],
            split: SplitPlan::default(),
            kernel_kind: KernelKind::Rbf,
            alphas: vec![1e-3, 1e-2],
            betas: vec![0.01, 0.05],
            gamma_multipliers: vec![0.0, 0.05, 0.1, 0.2, 0.4, 0.8],
            bandwidth_factors: vec![1.0],
            anchor_cap: 300,
            solver_tolerance: 1e-4,
            solver_max_iter: 20_000,
            ridge_lambdas: vec![1e-3, 1e-2, 1e-1, 1.0],
            propensity_reg_grid: vec![1e-2, 1e-1, 1.0],
            propensity_folds: 3,
            clip_cap: 100.0,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() || self.levels.is_empty() || self.methods.is_empty() {
            return Err(Error::InvalidArgument(
                "benchmark needs seeds, levels, and methods".into(),
            ));
        }
        if self.levels.iter().any(|&v| !(0.0 < v && v < 1.0)) {
            return Err(Error::InvalidArgument("levels must be in (0, 1)".into()));
        }
        if self.n_test == 0 {
            return Err(Error::InvalidArgument("n_test must be >= 1".into()));
        }
        self.split.validate()
    }

    fn kernels_for(&self, x: &DMatrix<f64>) -> Vec<KernelSpec> {
        match self.kernel_kind {
            KernelKind::Rbf => {
                let med = median_heuristic(x, 400);
                self.bandwidth_factors
                    .iter()
                    .map(|f| KernelSpec::rbf((f * med).max(1e-6)))
                    .collect()
            }
            KernelKind::Linear => vec![KernelSpec::linear()],
            KernelKind::Polynomial => vec![KernelSpec::polynomial(2, 1.0, 1.0)],
        }
    }
}

/// One benchmark result cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub method: String,
    pub level: f64,
    pub seed: u64,
    pub arm: u8,
    pub achieved_fcr: f64,
    pub mean_iw: f64,
    pub max_iw: f64,
    pub crossing_rate: f64,
    pub fallback: bool,
}

/// Benchmark output: rows ordered by (method, level, seed, arm).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
}

impl BenchmarkReport {
    /// Long-format CSV: method, level, seed, arm, metric, value.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))?;
        w.write_record(["method", "level", "seed", "arm", "metric", "value"])?;
        for r in &self.rows {
            for (metric, value) in [
                ("achieved_fcr", r.achieved_fcr),
                ("mean_iw", r.mean_iw),
                ("max_iw", r.max_iw),
                ("crossing_rate", r.crossing_rate),
                ("fallback", if r.fallback { 1.0 } else { 0.0 }),
            ] {
                w.write_record([
                    r.method.clone(),
                    r.level.to_string(),
                    r.seed.to_string(),
                    r.arm.to_string(),
                    metric.to_string(),
                    value.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(())
    }

    /// Mean and sd over seeds per (method, level, arm, metric).
    pub fn summary(&self) -> BTreeMap<String, SummaryCell> {
        let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            for (metric, value) in [
                ("achieved_fcr", r.achieved_fcr),
                ("mean_iw", r.mean_iw),
                ("max_iw", r.max_iw),
                ("crossing_rate", r.crossing_rate),
            ] {
                let key = format!("{}|{}|{}|{}", r.method, r.level, r.arm, metric);
                groups.entry(key).or_default().push(value);
            }
        }
        groups
            .into_iter()
            .map(|(k, v)| {
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let sd = if v.len() > 1 {
                    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                } else {
                    0.0
                };
                (k, SummaryCell { mean, sd, n: v.len() })
            })
            .collect()
    }

    pub fn write_summary_json(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.summary())?;
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryCell {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

/// Prepared per-seed pipeline state shared by all methods.
pub struct SeedData {
    pub train: Dataset,
    pub validate: Dataset,
    pub test: Dataset,
    pub w_train: WeightSet,
    pub w_validate: WeightSet,
    pub gammas: Vec<f64>,
    pub kernels: Vec<KernelSpec>,
}

/// Generate, confound, standardize, split, and weight one replicate.
pub fn prepare_seed(config: &BenchmarkConfig, seed: u64) -> Result<SeedData> {
    let raw = config.dgp.with_seed(seed).generate()?;
    let raw = match &config.confound {
        Some(rule) => crate::datagen::confound(&raw, rule, seed ^ 0xC0F0)?,
        None => raw,
    };
    let train_full = raw.standardized();
    let stats = train_full.standardization.clone().unwrap();
    let test_spec = match config.dgp {
        DgpSpec::IstLike { .. } => DgpSpec::IstLike { n: config.n_test, seed: seed ^ 0x7E57 },
        DgpSpec::Heteroskedastic { .. } => {
            DgpSpec::Heteroskedastic { n: config.n_test, seed: seed ^ 0x7E57 }
        }
    };
    let test = test_spec.generate()?.standardized_with(&stats)?;

    let (nuisance_idx, train_idx, validate_idx) =
        crate::model_selection::make_splits(&train_full, &SplitPlan { seed, ..config.split.clone() })?;
    let nuisance = train_full.subset(&nuisance_idx);
    let train = train_full.subset(&train_idx);
    let validate = train_full.subset(&validate_idx);

    let prop = fit_logistic(
        &nuisance.x,
        &nuisance.t,
        &config.propensity_reg_grid,
        config.propensity_folds,
        seed,
    )?;
    let w_train = importance_weights(&prop, &train.x, &train.t, config.clip_cap)?;
    let w_validate = importance_weights(&prop, &validate.x, &validate.t, config.clip_cap)?;

    let n = train.n() as f64;
    let mean = train.y.sum() / n;
    let sd = (train.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n)
        .sqrt()
        .max(1e-12);
    let gammas: Vec<f64> = config.gamma_multipliers.iter().map(|g| g * sd).collect();
    let kernels = config.kernels_for(&train.x);
    Ok(SeedData {
        train,
        validate,
        test,
        w_train,
        w_validate,
        gammas,
        kernels,
    })
}

/// Conformal shift, clamped to the largest calibration residual (flagged)
/// when the calibration set is too small for the requested level.
fn conformal_or_max(
    base: &KernelRidgeModel,
    x_cal: &DMatrix<f64>,
    y_cal: &DVector<f64>,
    level: f64,
) -> Result<IntervalRule> {
    match conformal_rule(base, x_cal, y_cal, level) {
        Ok(rule) => Ok(rule),
        Err(Error::InvalidArgument(_)) => {
            let pred = base.predict(x_cal)?;
            let max_abs = (0..y_cal.len())
                .map(|i| (y_cal[i] - pred[i]).abs())
                .fold(0.0f64, f64::max);
            Ok(IntervalRule {
                kind: RuleKind::Conformal,
                half_width: max_abs,
                level,
                warning: true,
            })
        }
        Err(e) => Err(e),
    }
}

/// Per-arm base regressions plus per-level symmetric rules for one baseline.
fn baseline_models(
    spec: &MethodSpec,
    data: &SeedData,
    config: &BenchmarkConfig,
) -> Result<Vec<(f64, IntervalModel, bool)>> {
    let mut bases = Vec::with_capacity(2);
    let mut cals: Vec<(DMatrix<f64>, DVector<f64>, DVector<f64>)> = Vec::with_capacity(2);
    for arm in [0u8, 1u8] {
        let idx = data.train.arm_indices(arm);
        let x = DMatrix::from_fn(idx.len(), data.train.x.ncols(), |i, j| {
            data.train.x[(idx[i], j)]
        });
        let y = DVector::from_fn(idx.len(), |i, _| data.train.y[idx[i]]);
        let w = data.w_train.arm_normalized(&data.train.t, arm);
        let (kernel, lambda) =
            select_kernel_ridge(&x, &y, Some(&w), &data.kernels, &config.ridge_lambdas, 3)?;
        bases.push(fit_kernel_ridge(&x, &y, Some(&w), &kernel, lambda)?);
        let vidx = data.validate.arm_indices(arm);
        let xv = DMatrix::from_fn(vidx.len(), data.validate.x.ncols(), |i, j| {
            data.validate.x[(vidx[i], j)]
        });
        let yv = DVector::from_fn(vidx.len(), |i, _| data.validate.y[vidx[i]]);
        let wv = data.w_validate.arm_normalized(&data.validate.t, arm);
        cals.push((xv, yv, wv));
    }
    let mut out = Vec::with_capacity(config.levels.len());
    for &level in &config.levels {
        let mut rules = Vec::with_capacity(2);
        for arm in 0..2usize {
            let (xv, yv, wv) = &cals[arm];
            let rule = match spec {
                MethodSpec::KrConformal => conformal_or_max(&bases[arm], xv, yv, level)?,
                MethodSpec::KrGamma => gamma_rule(&bases[arm], xv, yv, Some(wv), level)?,
                MethodSpec::KrCci => cci_rule(&bases[arm], xv, yv, level)?,
                MethodSpec::Bp { .. } | MethodSpec::Qr => {
                    unreachable!("baseline_models handles symmetric rules only")
                }
            };
            rules.push(rule);
        }
        let warn = rules.iter().any(|r| r.warning);
        out.push((
            level,
            IntervalModel::Symmetric { bases: bases.clone(), rules },
            warn,
        ));
    }
    Ok(out)
}

/// Per-level quantile-pair models: each arm fit at (level/2, 1 - level/2)
/// on its weighted training samples, using the first kernel and
/// regularization candidates.
fn quantile_models(
    data: &SeedData,
    config: &BenchmarkConfig,
) -> Result<Vec<(f64, IntervalModel, bool)>> {
    let kernel = data.kernels[0].clone();
    let alpha = config.alphas[0];
    let solver = SolverSettings {
        max_iter: config.solver_max_iter,
        ..SolverSettings::default().with_tolerance(config.solver_tolerance)
    };
    let mut out = Vec::with_capacity(config.levels.len());
    for &level in &config.levels {
        let q = 1.0 - level / 2.0;
        let mut pairs = Vec::with_capacity(2);
        for arm in [0u8, 1u8] {
            let idx = data.train.arm_indices(arm);
            let x = DMatrix::from_fn(idx.len(), data.train.x.ncols(), |i, j| {
                data.train.x[(idx[i], j)]
            });
            let y = DVector::from_fn(idx.len(), |i, _| data.train.y[idx[i]]);
            let w = data.w_train.arm_normalized(&data.train.t, arm);
            pairs.push(fit_quantile_pair(
                &x,
                &y,
                &w,
                q,
                &kernel,
                alpha,
                config.anchor_cap,
                &solver,
            )?);
        }
        out.push((level, IntervalModel::Quantile { pairs }, false));
    }
    Ok(out)
}

/// Run the full benchmark. Rows are ordered by (method, level, seed, arm)
/// and are deterministic given the configuration.
pub fn benchmark(config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    config.validate()?;
    let mut by_cell: BTreeMap<(usize, usize, usize), Vec<BenchmarkRow>> = BTreeMap::new();
    for (si, &seed) in config.seeds.iter().enumerate() {
        let data = prepare_seed(config, seed)?;
        for (mi, method) in config.methods.iter().enumerate() {
            let per_level: Vec<(f64, IntervalModel, bool)> = match method {
                MethodSpec::Bp { loss_p, coupled } => {
                    let grid = Grid {
                        alphas: config.alphas.clone(),
                        beta_us: config.betas.clone(),
                        beta_ls: config.betas.clone(),
                        gammas: data.gammas.clone(),
                        kernels: data.kernels.clone(),
                        loss_p: *loss_p,
                        coupled: *coupled,
                        required_fcr: config.levels[0],
                        anchor_cap: config.anchor_cap,
                    };
                    let base = FitConfig {
                        solver: SolverSettings {
                            max_iter: config.solver_max_iter,
                            ..SolverSettings::default().with_tolerance(config.solver_tolerance)
                        },
                        anchor_seed: seed,
                        ..FitConfig::default()
                    };
                    let eval = evaluate_grid(
                        &data.train,
                        &data.validate,
                        &data.w_train,
                        &data.w_validate,
                        &grid,
                        &base,
                    )?;
                    let mut v = Vec::with_capacity(config.levels.len());
                    for &level in &config.levels {
                        let (idx, fallback) = select_from_table(&eval.table, level);
                        let cell = &eval.table[idx];
                        let model =
                            apply_gamma_shift(&eval.fits[cell.fit_index], cell.config.gamma)?;
                        v.push((level, IntervalModel::Bounds(model), fallback));
                    }
                    v
                }
                MethodSpec::Qr => quantile_models(&data, config)?,
                _ => baseline_models(method, &data, config)?,
            };
            for (li, (level, model, fallback)) in per_level.iter().enumerate() {
                let arms = evaluate_on_test(model, &data.test, None, *level)?;
                let rows: Vec<BenchmarkRow> = arms
                    .into_iter()
                    .map(|a| BenchmarkRow {
                        method: method.to_string(),
                        level: *level,
                        seed,
                        arm: a.arm,
                        achieved_fcr: a.achieved_fcr,
                        mean_iw: a.mean_iw,
                        max_iw: a.max_iw,
                        crossing_rate: a.crossing_rate,
                        fallback: *fallback,
                    })
                    .collect();
                by_cell.insert((mi, li, si), rows);
            }
        }
    }
    let rows = by_cell.into_values().flatten().collect();
    Ok(BenchmarkReport { rows })
}
