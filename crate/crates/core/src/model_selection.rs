//! Data splitting and target-miscoverage grid search.
//!
//! The split plan carves a dataset into a nuisance part (propensity
//! estimation), a train part (bound fitting), and a validate part
//! (hyperparameter scoring). The grid search fits one bound model per
//! (kernel, alpha, beta) cell, then scores every margin shift `gamma` on the
//! validate split — the shift is post-fit, so it never requires a re-solve.
//! Cells whose validate miscoverage exceeds the required rate are discarded;
//! the survivor with the smallest interval-width statistic wins.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bp::{apply_gamma_shift, fit, predict_bounds, BoundModel, FitConfig, LossP};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{median_heuristic, KernelKind, KernelSpec};
use crate::propensity::WeightSet;
use crate::qp::SolveStatus;

/// Minimum validate-arm size required to certify very small target rates.
pub const MIN_VALIDATE_ARM: usize = 30;
pub const STRICT_FCR_THRESHOLD: f64 = 0.01;

/// Three-way split: nuisance / train / validate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub nuisance_fraction: f64,
    pub train_fraction: f64,
    pub validate_fraction: f64,
    pub stratify_by_arm: bool,
}

impl Default for SplitPlan {
    fn default() -> Self {
        SplitPlan {
            seed: 0,
            nuisance_fraction: 0.5,
            train_fraction: 0.25,
            validate_fraction: 0.25,
            stratify_by_arm: true,
        }
    }
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        let f = [
            self.nuisance_fraction,
            self.train_fraction,
            self.validate_fraction,
        ];
        if f.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("split fractions must be positive".into()));
        }
        if f.iter().sum::<f64>() > 1.0 + 1e-9 {
            return Err(Error::InvalidArgument("split fractions must sum to <= 1".into()));
        }
        Ok(())
    }
}

fn allocate(n: usize, plan: &SplitPlan) -> (usize, usize, usize) {
    let c_nu = (plan.nuisance_fraction * n as f64).round() as usize;
    let c_tr = (plan.train_fraction * n as f64).round() as usize;
    let total = plan.nuisance_fraction + plan.train_fraction + plan.validate_fraction;
    let c_va = if (total - 1.0).abs() < 1e-9 {
        n.saturating_sub(c_nu + c_tr)
    } else {
        (plan.validate_fraction * n as f64).round() as usize
    };
    (c_nu.min(n), c_tr.min(n.saturating_sub(c_nu)), c_va)
}

/// Disjoint (nuisance, train, validate) index sets, reproducible from the
/// plan seed; per-arm allocation when stratified.
pub fn make_splits(
    dataset: &Dataset,
    plan: &SplitPlan,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    plan.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut nuisance = Vec::new();
    let mut train = Vec::new();
    let mut validate = Vec::new();
    let groups: Vec<Vec<usize>> = if plan.stratify_by_arm {
        vec![dataset.arm_indices(0), dataset.arm_indices(1)]
    } else {
        vec![(0..dataset.n()).collect()]
    };
    for mut idx in groups {
        idx.shuffle(&mut rng);
        let (c_nu, c_tr, c_va) = allocate(idx.len(), plan);
        if c_nu + c_tr + c_va > idx.len() {
            return Err(Error::InvalidArgument(
                "split fractions exceed available samples".into(),
            ));
        }
        nuisance.extend_from_slice(&idx[..c_nu]);
        train.extend_from_slice(&idx[c_nu..c_nu + c_tr]);
        validate.extend_from_slice(&idx[c_nu + c_tr..c_nu + c_tr + c_va]);
    }
    nuisance.sort_unstable();
    train.sort_unstable();
    validate.sort_unstable();
    for (name, part) in [("nuisance", &nuisance), ("train", &train), ("validate", &validate)] {
        for arm in [0u8, 1u8] {
            if !part.iter().any(|&i| dataset.t[i] == arm) {
                return Err(Error::Selection(format!(
                    "split part '{name}' has no samples in arm {arm}"
                )));
            }
        }
    }
    Ok((nuisance, train, validate))
}

/// Hyperparameter grid. `gammas` are absolute margin shifts; use
/// [`Grid::default_for`] for data-scaled defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub alphas: Vec<f64>,
    pub beta_us: Vec<f64>,
    pub beta_ls: Vec<f64>,
    pub gammas: Vec<f64>,
    pub kernels: Vec<KernelSpec>,
    pub loss_p: LossP,
    pub coupled: bool,
    pub required_fcr: f64,
    #[serde(default = "default_anchor_cap")]
    pub anchor_cap: usize,
}

fn default_anchor_cap() -> usize {
    crate::bp::DEFAULT_ANCHOR_CAP
}

impl Grid {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty()
            || self.beta_us.is_empty()
            || self.beta_ls.is_empty()
            || self.gammas.is_empty()
            || self.kernels.is_empty()
        {
            return Err(Error::InvalidArgument("grid lists must be non-empty".into()));
        }
        if !(0.0 < self.required_fcr && self.required_fcr < 1.0) {
            return Err(Error::InvalidArgument("required_fcr must be in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.alphas.len()
            * self.beta_us.len()
            * self.beta_ls.len()
            * self.gammas.len()
            * self.kernels.len()
    }

    /// Default grid scaled to a training set: margins as multiples of the
    /// outcome standard deviation, RBF bandwidths around the median
    /// heuristic of the covariates.
    pub fn default_for(
        train: &Dataset,
        kind: KernelKind,
        loss_p: LossP,
        coupled: bool,
        required_fcr: f64,
    ) -> Grid {
        let n = train.n() as f64;
        let mean = train.y.sum() / n;
        let sd = (train.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let sd = if sd > 1e-12 { sd } else { 1.0 };
        let kernels = match kind {
            KernelKind::Rbf => {
                let med = median_heuristic(&train.x, 400);
                [0.5, 1.0, 2.0]
                    .iter()
                    .map(|f| KernelSpec::rbf(f * med))
                    .collect()
            }
            KernelKind::Linear => vec![KernelSpec::linear()],
            KernelKind::Polynomial => vec![KernelSpec::polynomial(2, 1.0, 1.0)],
        };
        Grid {
            alphas: vec![1e-4, 1e-3, 1e-2, 1e-1],
            beta_us: vec![0.0, 0.01, 0.05, 0.1],
            beta_ls: vec![0.0, 0.01, 0.05, 0.1],
            gammas: [0.0, 0.05, 0.1, 0.2, 0.4, 0.8].iter().map(|g| g * sd).collect(),
            kernels,
            loss_p,
            coupled,
            required_fcr,
            anchor_cap: crate::bp::DEFAULT_ANCHOR_CAP,
        }
    }
}

/// One evaluated grid cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellOutcome {
    pub config: FitConfig,
    /// Weighted factual miscoverage on the validate split (max over arms).
    pub fcr_hat: f64,
    /// Matching interval-width statistic on the validate split.
    pub loss_hat: f64,
    pub status: SolveStatus,
    pub clean: bool,
    /// Index of the underlying (margin-free) fit in a [`GridEvaluation`];
    /// several gamma cells share one fit.
    pub fit_index: usize,
}

/// All grid cells scored on the validate split, with the underlying fits
/// kept so different target rates can re-select without re-solving.
#[derive(Debug, Clone)]
pub struct GridEvaluation {
    pub table: Vec<CellOutcome>,
    pub fits: Vec<BoundModel>,
}

/// Grid-search outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionResult {
    pub chosen: FitConfig,
    pub table: Vec<CellOutcome>,
    pub fallback_used: bool,
    pub required_fcr: f64,
}

/// Weighted factual miscoverage (max over arms) and the interval-width
/// statistic matching the loss (weighted mean width for L1/L2, max width
/// for Linf) of a model on an evaluation split.
pub fn validate_metrics(
    model: &BoundModel,
    data: &Dataset,
    weights: &WeightSet,
    loss_p: LossP,
) -> Result<(f64, f64)> {
    let mut fcr_max = 0.0f64;
    let mut mean_iw_sum = 0.0;
    let mut max_iw = f64::NEG_INFINITY;
    for arm in [0u8, 1u8] {
        let idx = data.arm_indices(arm);
        if idx.is_empty() {
            return Err(Error::EmptyArm(arm));
        }
        let x = nalgebra::DMatrix::from_fn(idx.len(), data.x.ncols(), |i, j| {
            data.x[(idx[i], j)]
        });
        let w = weights.arm_normalized(&data.t, arm);
        let pred = predict_bounds(model, &x, arm)?;
        let mut fcr = 0.0;
        let mut mean_iw = 0.0;
        for (r, &i) in idx.iter().enumerate() {
            let y = data.y[i];
            if y < pred.lower[r] || y > pred.upper[r] {
                fcr += w[r];
            }
            let iw = pred.upper[r] - pred.lower[r];
            mean_iw += w[r] * iw;
            max_iw = max_iw.max(iw);
        }
        fcr_max = fcr_max.max(fcr);
        mean_iw_sum += mean_iw;
    }
    let loss_hat = match loss_p {
        LossP::L1 | LossP::L2 => mean_iw_sum / 2.0,
        LossP::Linf => max_iw,
    };
    Ok((fcr_max, loss_hat))
}

/// Preference order among cells: smaller loss, then smaller miscoverage,
/// then clean solves, then larger alpha, then smaller gamma.
fn better_survivor(a: &CellOutcome, b: &CellOutcome) -> bool {
    let eps = 1e-12;
    if a.loss_hat < b.loss_hat - eps {
        return true;
    }
    if a.loss_hat > b.loss_hat + eps {
        return false;
    }
    if a.fcr_hat < b.fcr_hat - eps {
        return true;
    }
    if a.fcr_hat > b.fcr_hat + eps {
        return false;
    }
    if a.clean != b.clean {
        return a.clean;
    }
    if a.config.alpha != b.config.alpha {
        return a.config.alpha > b.config.alpha;
    }
    a.config.gamma < b.config.gamma
}

fn better_fallback(a: &CellOutcome, b: &CellOutcome) -> bool {
    let eps = 1e-12;
    if a.fcr_hat < b.fcr_hat - eps {
        return true;
    }
    if a.fcr_hat > b.fcr_hat + eps {
        return false;
    }
    better_survivor(a, b)
}

/// Fit and score every grid cell: one solve per (kernel, alpha, beta) cell,
/// with every margin value scored by shifting that fit.
pub fn evaluate_grid(
    train: &Dataset,
    validate: &Dataset,
    w_train: &WeightSet,
    w_validate: &WeightSet,
    grid: &Grid,
    base: &FitConfig,
) -> Result<GridEvaluation> {
    grid.validate()?;
    let mut table = Vec::with_capacity(grid.n_cells());
    let mut fits = Vec::new();
    let mut first_error: Option<Error> = None;
    for kernel in &grid.kernels {
        for &alpha in &grid.alphas {
            for &beta_u in &grid.beta_us {
                for &beta_l in &grid.beta_ls {
                    let config = FitConfig {
                        loss_p: grid.loss_p,
                        coupled: grid.coupled,
                        alpha,
                        beta_u,
                        beta_l,
                        kernel: kernel.clone(),
                        gamma: 0.0,
                        anchor_cap: grid.anchor_cap,
                        ..base.clone()
                    };
                    let model = match fit(train, w_train, &config) {
                        Ok(m) => m,
                        Err(e) => {
                            if first_error.is_none() {
                                first_error = Some(e);
                            }
                            continue;
                        }
                    };
                    let fit_index = fits.len();
                    for &gamma in &grid.gammas {
                        let shifted = apply_gamma_shift(&model, gamma)?;
                        let (fcr_hat, loss_hat) =
                            validate_metrics(&shifted, validate, w_validate, grid.loss_p)?;
                        let status = if model.is_clean() {
                            SolveStatus::Solved
                        } else {
                            SolveStatus::MaxIter
                        };
                        table.push(CellOutcome {
                            config: FitConfig { gamma, ..config.clone() },
                            fcr_hat,
                            loss_hat,
                            status,
                            clean: model.is_clean(),
                            fit_index,
                        });
                    }
                    fits.push(model);
                }
            }
        }
    }
    if table.is_empty() {
        return Err(Error::Selection(format!(
            "all grid cells failed to solve: {}",
            first_error.map_or_else(|| "no cells".to_string(), |e| e.to_string())
        )));
    }
    Ok(GridEvaluation { table, fits })
}

/// Pick the winning cell index for a target rate: the
/// smallest-width survivor, or the smallest-miscoverage cell (flagged as a
/// fallback) when nothing meets the target.
pub fn select_from_table(table: &[CellOutcome], required_fcr: f64) -> (usize, bool) {
    let survivor = table
        .iter()
        .enumerate()
        .filter(|(_, c)| c.fcr_hat <= required_fcr)
        .fold(None::<(usize, &CellOutcome)>, |best, (i, c)| match best {
            Some((bi, b)) if !better_survivor(c, b) => Some((bi, b)),
            _ => Some((i, c)),
        });
    match survivor {
        Some((i, _)) => (i, false),
        None => {
            let (i, _) = table
                .iter()
                .enumerate()
                .fold(None::<(usize, &CellOutcome)>, |best, (i, c)| match best {
                    Some((bi, b)) if !better_fallback(c, b) => Some((bi, b)),
                    _ => Some((i, c)),
                })
                .expect("non-empty table");
            (i, true)
        }
    }
}

/// Fit every grid cell on the train split, score it on the validate split,
/// discard cells whose miscoverage exceeds the required rate, and return the
/// survivor with the smallest width statistic. Falls back to the smallest
/// miscoverage (flagged) when no cell survives.
pub fn grid_search(
    train: &Dataset,
    validate: &Dataset,
    w_train: &WeightSet,
    w_validate: &WeightSet,
    grid: &Grid,
    base: &FitConfig,
) -> Result<SelectionResult> {
    grid.validate()?;
    if grid.required_fcr <= STRICT_FCR_THRESHOLD {
        for arm in [0u8, 1u8] {
            let m = validate.arm_indices(arm).len();
            if m < MIN_VALIDATE_ARM {
                return Err(Error::Selection(format!(
                    "validate arm {arm} has {m} samples; at least {MIN_VALIDATE_ARM} \
                     are needed to certify a target rate <= {STRICT_FCR_THRESHOLD}"
                )));
            }
        }
    }
    let evaluation = evaluate_grid(train, validate, w_train, w_validate, grid, base)?;
    let (chosen_idx, fallback_used) = select_from_table(&evaluation.table, grid.required_fcr);
    Ok(SelectionResult {
        chosen: evaluation.table[chosen_idx].config.clone(),
        table: evaluation.table,
        fallback_used,
        required_fcr: grid.required_fcr,
    })
}

/// Export the per-cell table as CSV.
pub fn selection_to_csv(result: &SelectionResult, path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))?;
    w.write_record([
        "loss", "coupled", "alpha", "beta_u", "beta_l", "kernel", "bandwidth", "gamma",
        "fcr_hat", "loss_hat", "status",
    ])?;
    for c in &result.table {
        w.write_record([
            c.config.loss_p.to_string(),
            c.config.coupled.to_string(),
            c.config.alpha.to_string(),
            c.config.beta_u.to_string(),
            c.config.beta_l.to_string(),
            format!("{:?}", c.config.kernel.kind).to_lowercase(),
            c.config.kernel.bandwidth.to_string(),
            c.config.gamma.to_string(),
            c.fcr_hat.to_string(),
            c.loss_hat.to_string(),
            c.status.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::gen_ist_like;
    use nalgebra::{DMatrix, DVector};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn toy_dataset(n: usize, seed: u64, noise: f64) -> (Dataset, WeightSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, 1, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let t: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let y = DVector::from_fn(n, |_, _| noise * (rng.random::<f64>() - 0.5));
        let ws = WeightSet::uniform(&t).unwrap();
        (
            Dataset {
                x,
                feature_names: vec!["x".into()],
                t,
                y,
                y0: None,
                y1: None,
                weights: None,
                standardization: None,
                metadata: BTreeMap::new(),
            },
            ws,
        )
    }

    fn toy_grid(gammas: Vec<f64>, required_fcr: f64) -> Grid {
        Grid {
            alphas: vec![1e-4],
            beta_us: vec![0.0],
            beta_ls: vec![0.0],
            gammas,
            kernels: vec![KernelSpec::linear()],
            loss_p: LossP::L1,
            coupled: false,
            required_fcr,
            anchor_cap: 50,
        }
    }

    #[test]
    fn splits_deterministic_and_sized() {
        let ds = gen_ist_like(100, 0).unwrap();
        let plan = SplitPlan::default();
        let (a1, b1, c1) = make_splits(&ds, &plan).unwrap();
        let (a2, b2, c2) = make_splits(&ds, &plan).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
        assert_eq!(c1, c2);
        assert_eq!(a1.len() + b1.len() + c1.len(), 100);
        // fractions (0.5, 0.25, 0.25): sizes 50/25/25 up to per-arm rounding
        assert!((a1.len() as i64 - 50).abs() <= 1);
        assert!((b1.len() as i64 - 25).abs() <= 1);
        assert!((c1.len() as i64 - 25).abs() <= 1);
        // disjoint
        let mut all: Vec<usize> = a1.iter().chain(&b1).chain(&c1).copied().collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 100);
    }

    #[test]
    fn stratification_preserves_arm_proportions() {
        let ds = gen_ist_like(400, 3).unwrap();
        let plan = SplitPlan::default();
        let (nu, tr, va) = make_splits(&ds, &plan).unwrap();
        let global = ds.arm_indices(1).len() as f64 / ds.n() as f64;
        for part in [&nu, &tr, &va] {
            let n1 = part.iter().filter(|&&i| ds.t[i] == 1).count() as f64;
            let expected = global * part.len() as f64;
            assert!(
                (n1 - expected).abs() <= 1.0 + 1e-9,
                "arm-1 count {n1} vs expected {expected}"
            );
        }
    }

    #[test]
    fn split_rejects_bad_plans() {
        let ds = gen_ist_like(50, 0).unwrap();
        let bad = SplitPlan { nuisance_fraction: 0.7, train_fraction: 0.2, validate_fraction: 0.2, ..SplitPlan::default() };
        assert!(make_splits(&ds, &bad).is_err());
        let zero = SplitPlan { nuisance_fraction: 0.0, ..SplitPlan::default() };
        assert!(make_splits(&ds, &zero).is_err());
    }

    #[test]
    fn selects_covering_gamma() {
        // constant-zero train; noisy validate forces a positive margin
        let (train, wt) = toy_dataset(40, 1, 0.0);
        let (validate, wv) = toy_dataset(40, 2, 1.0);
        let grid = toy_grid(vec![0.0, 1.0], 0.05);
        let base = FitConfig::default();
        let result = grid_search(&train, &validate, &wt, &wv, &grid, &base).unwrap();
        assert!(!result.fallback_used);
        assert_eq!(result.chosen.gamma, 1.0);
        // the zero-margin cells must have been filtered for violating the target
        let zero_cells: Vec<_> = result.table.iter().filter(|c| c.config.gamma == 0.0).collect();
        assert!(zero_cells.iter().all(|c| c.fcr_hat > 0.05));
    }

    #[test]
    fn fallback_when_no_cell_meets_target() {
        let (train, wt) = toy_dataset(40, 1, 0.0);
        let (mut validate, wv) = toy_dataset(40, 2, 1.0);
        validate.y[0] = 100.0; // unreachable by any grid margin
        validate.y[1] = -100.0;
        let grid = toy_grid(vec![0.0, 0.2], 0.02);
        let result =
            grid_search(&train, &validate, &wt, &wv, &grid, &FitConfig::default()).unwrap();
        assert!(result.fallback_used);
        // fallback picks the smallest miscoverage, which is the widest margin
        assert_eq!(result.chosen.gamma, 0.2);
    }

    #[test]
    fn survivor_minimizes_loss_over_table() {
        let (train, wt) = toy_dataset(60, 4, 0.2);
        let (validate, wv) = toy_dataset(60, 5, 0.2);
        let grid = toy_grid(vec![0.2, 0.5, 1.0, 2.0], 0.1);
        let result =
            grid_search(&train, &validate, &wt, &wv, &grid, &FitConfig::default()).unwrap();
        let chosen_cell = result
            .table
            .iter()
            .find(|c| c.config == result.chosen)
            .unwrap();
        for c in &result.table {
            if c.fcr_hat <= 0.1 {
                assert!(chosen_cell.loss_hat <= c.loss_hat + 1e-9);
            }
        }
    }

    #[test]
    fn dominated_cell_does_not_change_selection() {
        let (train, wt) = toy_dataset(60, 7, 0.3);
        let (validate, wv) = toy_dataset(60, 8, 0.3);
        let base = FitConfig::default();
        let g1 = toy_grid(vec![0.5, 1.0], 0.2);
        let r1 = grid_search(&train, &validate, &wt, &wv, &g1, &base).unwrap();
        let g2 = toy_grid(vec![0.5, 1.0, 5.0], 0.2); // 5.0 is wider and dominated
        let r2 = grid_search(&train, &validate, &wt, &wv, &g2, &base).unwrap();
        assert_eq!(r1.chosen, r2.chosen);
        // expanding the gamma grid never pushes the chosen cell past the target
        let chosen_cell = r2.table.iter().find(|c| c.config == r2.chosen).unwrap();
        assert!(chosen_cell.fcr_hat <= 0.2);
    }

    #[test]
    fn deterministic_selection() {
        let (train, wt) = toy_dataset(50, 11, 0.4);
        let (validate, wv) = toy_dataset(50, 12, 0.4);
        let grid = toy_grid(vec![0.0, 0.3, 0.6], 0.1);
        let base = FitConfig::default();
        let r1 = grid_search(&train, &validate, &wt, &wv, &grid, &base).unwrap();
        let r2 = grid_search(&train, &validate, &wt, &wv, &grid, &base).unwrap();
        assert_eq!(
            serde_json::to_string(&r1).unwrap(),
            serde_json::to_string(&r2).unwrap()
        );
    }

    #[test]
    fn small_validate_refused_for_strict_targets() {
        let (train, wt) = toy_dataset(40, 1, 0.0);
        let (validate, wv) = toy_dataset(20, 2, 1.0);
        let grid = toy_grid(vec![0.0, 1.0], 0.01);
        let err = grid_search(&train, &validate, &wt, &wv, &grid, &FitConfig::default());
        assert!(matches!(err, Err(Error::Selection(_))));
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let (train, wt) = toy_dataset(40, 1, 0.1);
        let (validate, wv) = toy_dataset(40, 2, 0.1);
        let grid = toy_grid(vec![0.0, 0.5], 0.2);
        let result =
            grid_search(&train, &validate, &wt, &wv, &grid, &FitConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cells.csv");
        selection_to_csv(&result, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("loss,coupled,alpha"));
        assert_eq!(text.lines().count(), 1 + result.table.len());
    }
}
