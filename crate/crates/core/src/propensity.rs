//! Propensity-score estimation and importance weights.
//!
//! Propensity scores e(x, t) = p(T = t | X = x) come from an L2-penalized
//! logistic regression fit by Newton/IRLS; the penalty is chosen by k-fold
//! cross-validation on held-out log-likelihood. Importance weights
//! w_t(x) = p(T = t) / e(x, t) re-weight each factual arm to represent the
//! full population; they are clipped for solver conditioning and normalized
//! within arm.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CLIP_CAP: f64 = 100.0;
pub const DEFAULT_REG_GRID: [f64; 5] = [1e-3, 1e-2, 1e-1, 1.0, 10.0];

/// Fitted L2-penalized logistic regression for p(T = 1 | X).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogisticModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub regularization: f64,
    /// Per-feature mean/scale applied at fit time.
    pub feature_means: Vec<f64>,
    pub feature_scales: Vec<f64>,
    /// Set when fitted probabilities ran into the numerical boundary,
    /// which indicates (near-)perfect separation held off by the penalty.
    pub separation_warning: bool,
}

/// Clipped, normalized importance weights for both arms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightSet {
    /// Raw weights p(T=t_i) / e(x_i, t_i), after clipping.
    pub raw: Vec<f64>,
    /// Within-arm normalized weights, summing to 1 per arm.
    pub normalized: Vec<f64>,
    pub clip_cap: f64,
    /// Pre-clip maximum raw weight per arm; empirical overlap diagnostic.
    pub max_raw_weight: [f64; 2],
    /// Empirical p(T = 1).
    pub marginal_treated: f64,
}

impl WeightSet {
    /// Uniform weights (randomized-trial case): raw 1, normalized 1/n_t.
    pub fn uniform(treatment: &[u8]) -> Result<Self> {
        let n1 = treatment.iter().filter(|&&t| t == 1).count();
        let n0 = treatment.len() - n1;
        if n0 == 0 || n1 == 0 {
            return Err(Error::EmptyArm(if n0 == 0 { 0 } else { 1 }));
        }
        let normalized = treatment
            .iter()
            .map(|&t| if t == 1 { 1.0 / n1 as f64 } else { 1.0 / n0 as f64 })
            .collect();
        Ok(WeightSet {
            raw: vec![1.0; treatment.len()],
            normalized,
            clip_cap: DEFAULT_CLIP_CAP,
            max_raw_weight: [1.0, 1.0],
            marginal_treated: n1 as f64 / treatment.len() as f64,
        })
    }

    /// Normalized weights of the samples in one arm, in sample order.
    pub fn arm_normalized(&self, treatment: &[u8], arm: u8) -> DVector<f64> {
        let vals: Vec<f64> = treatment
            .iter()
            .zip(&self.normalized)
            .filter(|(&t, _)| t == arm)
            .map(|(_, &w)| w)
            .collect();
        DVector::from_vec(vals)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn standardize(x: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    let mut means = Vec::with_capacity(x.ncols());
    let mut scales = Vec::with_capacity(x.ncols());
    let mut xs = x.clone();
    for j in 0..x.ncols() {
        let mean = x.column(j).sum() / n;
        let var = x.column(j).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let scale = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        for i in 0..x.nrows() {
            xs[(i, j)] = (x[(i, j)] - mean) / scale;
        }
        means.push(mean);
        scales.push(scale);
    }
    (xs, means, scales)
}

/// IRLS on standardized features; intercept unpenalized.
/// Returns (intercept, coefficients) in the standardized space.
fn irls(xs: &DMatrix<f64>, t: &[u8], lambda: f64) -> Result<(f64, DVector<f64>)> {
    let n = xs.nrows();
    let d = xs.ncols();
    let mut theta = DVector::zeros(d + 1); // [intercept, coefs]
    for _ in 0..100 {
        let mut grad = DVector::zeros(d + 1);
        let mut hess = DMatrix::zeros(d + 1, d + 1);
        for i in 0..n {
            let mut z = theta[0];
            for j in 0..d {
                z += theta[j + 1] * xs[(i, j)];
            }
            let p = sigmoid(z);
            let r = t[i] as f64 - p;
            let s = (p * (1.0 - p)).max(1e-10);
            grad[0] += r;
            hess[(0, 0)] += s;
            for j in 0..d {
                grad[j + 1] += r * xs[(i, j)];
                hess[(0, j + 1)] += s * xs[(i, j)];
                for k in j..d {
                    hess[(j + 1, k + 1)] += s * xs[(i, j)] * xs[(i, k)];
                }
            }
        }
        for j in 0..d {
            grad[j + 1] -= lambda * theta[j + 1];
            hess[(j + 1, j + 1)] += lambda;
            hess[(0, j + 1)] = hess[(0, j + 1)];
        }
        // mirror the upper triangle
        for a in 0..d + 1 {
            for b in (a + 1)..d + 1 {
                hess[(b, a)] = hess[(a, b)];
            }
        }
        if grad.amax() <= 1e-8 {
            break;
        }
        let step = hess
            .cholesky()
            .ok_or_else(|| Error::LinearSolve("IRLS Hessian not SPD".into()))?
            .solve(&grad);
        theta += step;
    }
    Ok((theta[0], theta.rows(1, d).into_owned()))
}

fn mean_holdout_loglik(
    xs: &DMatrix<f64>,
    t: &[u8],
    train_idx: &[usize],
    test_idx: &[usize],
    lambda: f64,
) -> Result<f64> {
    let xt = DMatrix::from_fn(train_idx.len(), xs.ncols(), |i, j| xs[(train_idx[i], j)]);
    let tt: Vec<u8> = train_idx.iter().map(|&i| t[i]).collect();
    let (b0, b) = irls(&xt, &tt, lambda)?;
    let mut ll = 0.0;
    for &i in test_idx {
        let mut z = b0;
        for j in 0..xs.ncols() {
            z += b[j] * xs[(i, j)];
        }
        let p = sigmoid(z).clamp(1e-12, 1.0 - 1e-12);
        ll += if t[i] == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(ll / test_idx.len() as f64)
}

/// Fit a propensity model, choosing the L2 penalty from `regularization_grid`
/// by `folds`-fold cross-validated held-out log-likelihood, then refitting
/// on all data.
pub fn fit_logistic(
    x: &DMatrix<f64>,
    treatment: &[u8],
    regularization_grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<LogisticModel> {
    if x.nrows() != treatment.len() {
        return Err(Error::DimensionMismatch("fit_logistic: X rows vs T".into()));
    }
    if treatment.iter().any(|&t| t > 1) {
        return Err(Error::InvalidArgument("treatment must be binary".into()));
    }
    let n1 = treatment.iter().filter(|&&t| t == 1).count();
    if n1 == 0 || n1 == treatment.len() {
        return Err(Error::EmptyArm(if n1 == 0 { 1 } else { 0 }));
    }
    if folds < 2 {
        return Err(Error::InvalidArgument("folds must be >= 2".into()));
    }
    if regularization_grid.is_empty() || regularization_grid.iter().any(|&l| l < 0.0) {
        return Err(Error::InvalidArgument(
            "regularization grid must be non-empty and non-negative".into(),
        ));
    }

    let (xs, means, scales) = standardize(x);

    let best_lambda = if regularization_grid.len() == 1 {
        regularization_grid[0]
    } else {
        let mut idx: Vec<usize> = (0..x.nrows()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        let fold_of: Vec<usize> = (0..idx.len()).map(|r| r % folds).collect();
        let mut best = (f64::NEG_INFINITY, regularization_grid[0]);
        for &lambda in regularization_grid {
            let mut total = 0.0;
            for f in 0..folds {
                let train: Vec<usize> = idx
                    .iter()
                    .enumerate()
                    .filter(|(r, _)| fold_of[*r] != f)
                    .map(|(_, &i)| i)
                    .collect();
                let test: Vec<usize> = idx
                    .iter()
                    .enumerate()
                    .filter(|(r, _)| fold_of[*r] == f)
                    .map(|(_, &i)| i)
                    .collect();
                total += mean_holdout_loglik(&xs, treatment, &train, &test, lambda)?;
            }
            let mean = total / folds as f64;
            // ties broken toward the stronger penalty
            if mean > best.0 + 1e-12 || (mean >= best.0 - 1e-12 && lambda > best.1) {
                best = (mean, lambda);
            }
        }
        best.1
    };

    let (intercept, coefs) = irls(&xs, treatment, best_lambda)?;
    let model = LogisticModel {
        coefficients: coefs.iter().copied().collect(),
        intercept,
        regularization: best_lambda,
        feature_means: means,
        feature_scales: scales,
        separation_warning: false,
    };
    let probs = predict_propensity(&model, x)?;
    let sep = probs.iter().any(|&p| !(1e-8..=1.0 - 1e-8).contains(&p));
    Ok(LogisticModel {
        separation_warning: sep,
        ..model
    })
}

/// Predicted e(x, 1) in (0, 1); e(x, 0) = 1 - e(x, 1).
pub fn predict_propensity(model: &LogisticModel, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    if x.ncols() != model.coefficients.len() {
        return Err(Error::DimensionMismatch(
            "predict_propensity: feature dimension".into(),
        ));
    }
    let mut out = DVector::zeros(x.nrows());
    for i in 0..x.nrows() {
        let mut z = model.intercept;
        for j in 0..x.ncols() {
            let xs = (x[(i, j)] - model.feature_means[j]) / model.feature_scales[j];
            z += model.coefficients[j] * xs;
        }
        out[i] = sigmoid(z).clamp(1e-15, 1.0 - 1e-15);
    }
    Ok(out)
}

/// Importance weights w_{t_i} = p(T = t_i) / e(x_i, t_i), clipped at
/// `clip_cap` and normalized to sum to 1 within each arm.
pub fn importance_weights(
    model: &LogisticModel,
    x: &DMatrix<f64>,
    treatment: &[u8],
    clip_cap: f64,
) -> Result<WeightSet> {
    if clip_cap <= 0.0 {
        return Err(Error::InvalidArgument("clip_cap must be > 0".into()));
    }
    if x.nrows() != treatment.len() {
        return Err(Error::DimensionMismatch("importance_weights: X rows vs T".into()));
    }
    let n1 = treatment.iter().filter(|&&t| t == 1).count();
    let n0 = treatment.len() - n1;
    if n0 == 0 || n1 == 0 {
        return Err(Error::EmptyArm(if n0 == 0 { 0 } else { 1 }));
    }
    let p1 = n1 as f64 / treatment.len() as f64;
    let e1 = predict_propensity(model, x)?;

    let mut raw = vec![0.0; treatment.len()];
    let mut max_raw = [0.0f64; 2];
    for i in 0..treatment.len() {
        let (marginal, e) = if treatment[i] == 1 {
            (p1, e1[i])
        } else {
            (1.0 - p1, 1.0 - e1[i])
        };
        let w = marginal / e;
        max_raw[treatment[i] as usize] = max_raw[treatment[i] as usize].max(w);
        raw[i] = w.min(clip_cap);
    }
    let mut sums = [0.0f64; 2];
    for i in 0..treatment.len() {
        sums[treatment[i] as usize] += raw[i];
    }
    let normalized: Vec<f64> = raw
        .iter()
        .zip(treatment)
        .map(|(&w, &t)| w / sums[t as usize])
        .collect();
    Ok(WeightSet {
        raw,
        normalized,
        clip_cap,
        max_raw_weight: max_raw,
        marginal_treated: p1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn balanced_coinflips_give_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10_000;
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random::<f64>());
        let t: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let model = fit_logistic(&x, &t, &[100.0], 3, 0).unwrap();
        let p = predict_propensity(&model, &x).unwrap();
        assert_relative_eq!(model.intercept, 0.0, epsilon = 0.05);
        for i in 0..20 {
            assert_relative_eq!(p[i], 0.5, epsilon = 0.05);
        }
    }

    #[test]
    fn separation_handled_by_penalty() {
        let n = 200;
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64 / n as f64 - 0.5);
        let t: Vec<u8> = (0..n).map(|i| u8::from(x[(i, 0)] > 0.0)).collect();
        let model = fit_logistic(&x, &t, &[1.0], 3, 0).unwrap();
        assert!(model.coefficients[0].is_finite());
        assert!(model.coefficients[0] > 0.0);
        // monotone predicted propensity in x
        let p = predict_propensity(&model, &x).unwrap();
        for i in 1..n {
            assert!(p[i] >= p[i - 1] - 1e-12);
        }
    }

    #[test]
    fn recovers_generating_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 50_000;
        let x = DMatrix::from_fn(n, 1, |_, _| rng.random::<f64>() * 4.0 - 2.0);
        let t: Vec<u8> = (0..n)
            .map(|i| {
                let p = sigmoid(0.8 * x[(i, 0)] - 0.3);
                u8::from(rng.random::<f64>() < p)
            })
            .collect();
        let model = fit_logistic(&x, &t, &[1e-6], 3, 0).unwrap();
        // coefficients reported in standardized space; undo the scaling
        let slope = model.coefficients[0] / model.feature_scales[0];
        let intercept = model.intercept - slope * model.feature_means[0];
        assert_relative_eq!(slope, 0.8, epsilon = 0.05);
        assert_relative_eq!(intercept, -0.3, epsilon = 0.05);
    }

    #[test]
    fn sigmoid_reference_values() {
        let model = LogisticModel {
            coefficients: vec![0.0],
            intercept: 0.0,
            regularization: 1.0,
            feature_means: vec![0.0],
            feature_scales: vec![1.0],
            separation_warning: false,
        };
        let x = DMatrix::from_element(1, 1, 3.7);
        assert_relative_eq!(predict_propensity(&model, &x).unwrap()[0], 0.5);
        let model2 = LogisticModel {
            intercept: 3.0f64.ln(),
            ..model
        };
        assert_relative_eq!(
            predict_propensity(&model2, &x).unwrap()[0],
            0.75,
            epsilon = 1e-12
        );
    }

    #[test]
    fn rct_weights_are_uniform() {
        let model = LogisticModel {
            coefficients: vec![0.0],
            intercept: 0.0,
            regularization: 1.0,
            feature_means: vec![0.0],
            feature_scales: vec![1.0],
            separation_warning: false,
        };
        let n = 10;
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64);
        let t: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let ws = importance_weights(&model, &x, &t, 100.0).unwrap();
        for &w in &ws.raw {
            assert_relative_eq!(w, 1.0);
        }
        for (&w, &ti) in ws.normalized.iter().zip(&t) {
            let nt = if ti == 1 { 5.0 } else { 5.0 };
            assert_relative_eq!(w, 1.0 / nt);
        }
    }

    #[test]
    fn extreme_propensity_weight_by_hand() {
        // p(T=1)=0.5, e = 0.05 => raw weight 10
        let model = LogisticModel {
            coefficients: vec![1.0],
            intercept: 0.0,
            regularization: 1.0,
            feature_means: vec![0.0],
            feature_scales: vec![1.0],
            separation_warning: false,
        };
        // choose x so that sigmoid(x) = 0.05 -> x = ln(0.05/0.95)
        let z = (0.05f64 / 0.95).ln();
        let x = DMatrix::from_row_slice(2, 1, &[z, -z]);
        let t = vec![1u8, 0u8];
        let ws = importance_weights(&model, &x, &t, 100.0).unwrap();
        assert_relative_eq!(ws.raw[0], 10.0, epsilon = 1e-9);
    }

    #[test]
    fn normalized_weights_sum_to_one_per_arm() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 500;
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let t: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.4)).collect();
        let model = fit_logistic(&x, &t, &[0.1], 3, 0).unwrap();
        let ws = importance_weights(&model, &x, &t, 100.0).unwrap();
        for arm in [0u8, 1u8] {
            let s: f64 = ws
                .normalized
                .iter()
                .zip(&t)
                .filter(|(_, &ti)| ti == arm)
                .map(|(&w, _)| w)
                .sum();
            assert_relative_eq!(s, 1.0, epsilon = 1e-10);
        }
        assert!(ws.raw.iter().all(|&w| w <= ws.clip_cap));
    }

    #[test]
    fn importance_weighting_identity() {
        // weighted mean of a covariate in arm t approaches the marginal mean
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let n = 50_000;
        let x = DMatrix::from_fn(n, 1, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let t: Vec<u8> = (0..n)
            .map(|i| u8::from(rng.random::<f64>() < sigmoid(1.5 * x[(i, 0)])))
            .collect();
        let model = fit_logistic(&x, &t, &[1e-4], 3, 0).unwrap();
        let ws = importance_weights(&model, &x, &t, 1e6).unwrap();
        let marginal_mean = x.column(0).sum() / n as f64;
        for arm in [0u8, 1u8] {
            let wmean: f64 = (0..n)
                .filter(|&i| t[i] == arm)
                .map(|i| ws.normalized[i] * x[(i, 0)])
                .sum();
            // sd of the weighted mean is ~ 1/sqrt(n_t); 3 standard errors
            let n_arm = t.iter().filter(|&&ti| ti == arm).count() as f64;
            let tol = 3.0 * (1.0 / 3.0f64).sqrt() / n_arm.sqrt() * 3.0;
            assert!(
                (wmean - marginal_mean).abs() < tol,
                "arm {arm}: {wmean} vs {marginal_mean} (tol {tol})"
            );
        }
    }

    #[test]
    fn degenerate_arm_rejected() {
        let x = DMatrix::from_element(4, 1, 1.0);
        assert!(matches!(
            fit_logistic(&x, &[1, 1, 1, 1], &[1.0], 2, 0),
            Err(Error::EmptyArm(0))
        ));
    }
}
