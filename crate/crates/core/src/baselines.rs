//! Baseline interval estimators.
//!
//! A weighted kernel ridge regression serves as the base point estimator.
//! Three symmetric interval constructions sit on top of it: a classical
//! Gaussian confidence interval (CCI), a split-conformal interval, and a
//! gamma-shift interval that picks the smallest shift achieving a required
//! false coverage rate on a calibration split. A non-crossing kernel
//! quantile regression provides the asymmetric counterpart that the
//! mean-absolute-width bound program is equivalent to.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{gram, KernelSpec};
use crate::qp::{solve, QpProblem, SolveStatus, SolverSettings, VariableLayout};

/// Weighted kernel ridge regression in dual form. The Gram matrix gets a
/// constant +1 offset, which acts as a (weakly regularized) intercept so
/// constant targets are representable by every kernel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelRidgeModel {
    pub coefficients: DVector<f64>,
    pub kernel: KernelSpec,
    pub lambda: f64,
    pub anchors: DMatrix<f64>,
}

fn offset_gram(kernel: &KernelSpec, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut g = gram(kernel, a, b)?;
    g.apply(|v| *v += 1.0);
    Ok(g)
}

/// Fit `(G + lambda W^{-1}) a = y` with weights rescaled to mean 1
/// (`None` means uniform weights, recovering `(G + lambda I) a = y`).
pub fn fit_kernel_ridge(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    weights: Option<&DVector<f64>>,
    kernel: &KernelSpec,
    lambda: f64,
) -> Result<KernelRidgeModel> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::EmptyInput("kernel ridge".into()));
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch("kernel ridge: X rows vs y".into()));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument("lambda must be > 0".into()));
    }
    let mut system = offset_gram(kernel, x, x)?;
    match weights {
        None => {
            for i in 0..n {
                system[(i, i)] += lambda;
            }
        }
        Some(w) => {
            if w.len() != n {
                return Err(Error::DimensionMismatch("kernel ridge: weights".into()));
            }
            if w.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::InvalidArgument(
                    "kernel ridge weights must be positive".into(),
                ));
            }
            let mean = w.sum() / n as f64;
            for i in 0..n {
                system[(i, i)] += lambda * mean / w[i];
            }
        }
    }
    let coefficients = system
        .cholesky()
        .ok_or_else(|| Error::LinearSolve("kernel ridge system not SPD".into()))?
        .solve(y);
    Ok(KernelRidgeModel {
        coefficients,
        kernel: kernel.clone(),
        lambda,
        anchors: x.clone(),
    })
}

impl KernelRidgeModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        let g = offset_gram(&self.kernel.clone().with_jitter(0.0), x, &self.anchors)?;
        Ok(&g * &self.coefficients)
    }
}

/// Pick (kernel, lambda) by k-fold cross-validation on weighted squared
/// error; ties go to the larger lambda (stronger smoothing).
pub fn select_kernel_ridge(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    weights: Option<&DVector<f64>>,
    kernels: &[KernelSpec],
    lambdas: &[f64],
    folds: usize,
) -> Result<(KernelSpec, f64)> {
    if kernels.is_empty() || lambdas.is_empty() {
        return Err(Error::InvalidArgument("empty candidate grid".into()));
    }
    if folds < 2 || x.nrows() < folds {
        return Err(Error::InvalidArgument("need >= 2 folds and n >= folds".into()));
    }
    let n = x.nrows();
    let fold_of: Vec<usize> = (0..n).map(|i| i % folds).collect();
    let mut best: Option<(f64, KernelSpec, f64)> = None;
    for kernel in kernels {
        for &lambda in lambdas {
            let mut err = 0.0;
            let mut wsum = 0.0;
            for f in 0..folds {
                let tr: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
                let te: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
                let xt = DMatrix::from_fn(tr.len(), x.ncols(), |i, j| x[(tr[i], j)]);
                let yt = DVector::from_fn(tr.len(), |i, _| y[tr[i]]);
                let wt = weights.map(|w| DVector::from_fn(tr.len(), |i, _| w[tr[i]]));
                let model = fit_kernel_ridge(&xt, &yt, wt.as_ref(), kernel, lambda)?;
                let xe = DMatrix::from_fn(te.len(), x.ncols(), |i, j| x[(te[i], j)]);
                let pred = model.predict(&xe)?;
                for (r, &i) in te.iter().enumerate() {
                    let w = weights.map_or(1.0, |w| w[i]);
                    err += w * (pred[r] - y[i]).powi(2);
                    wsum += w;
                }
            }
            let score = err / wsum;
            let better = match &best {
                None => true,
                Some((b, _, bl)) => {
                    score < b - 1e-12 || (score <= b + 1e-12 && lambda > *bl)
                }
            };
            if better {
                best = Some((score, kernel.clone(), lambda));
            }
        }
    }
    let (_, kernel, lambda) = best.unwrap();
    Ok((kernel, lambda))
}

/// How a symmetric interval half-width was derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Cci,
    Conformal,
    GammaShift,
}

/// A symmetric interval rule: prediction +/- half_width.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntervalRule {
    pub kind: RuleKind,
    pub half_width: f64,
    /// Target miscoverage level the rule was built for.
    pub level: f64,
    /// Set when the rule could not meet its target on the calibration data.
    pub warning: bool,
}

impl IntervalRule {
    /// Interval bounds around base predictions.
    pub fn apply(&self, predictions: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let lo = predictions.map(|v| v - self.half_width);
        let hi = predictions.map(|v| v + self.half_width);
        (lo, hi)
    }
}

fn calibration_residuals(
    base: &KernelRidgeModel,
    x_cal: &DMatrix<f64>,
    y_cal: &DVector<f64>,
) -> Result<Vec<f64>> {
    if x_cal.nrows() != y_cal.len() {
        return Err(Error::DimensionMismatch("calibration split".into()));
    }
    let pred = base.predict(x_cal)?;
    Ok((0..y_cal.len()).map(|i| y_cal[i] - pred[i]).collect())
}

/// Split-conformal rule: the shift is the ceil((m+1)(1-level))-th smallest
/// absolute calibration residual.
pub fn conformal_rule(
    base: &KernelRidgeModel,
    x_cal: &DMatrix<f64>,
    y_cal: &DVector<f64>,
    level: f64,
) -> Result<IntervalRule> {
    if !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidArgument("level must be in (0, 1)".into()));
    }
    let mut abs: Vec<f64> = calibration_residuals(base, x_cal, y_cal)?
        .iter()
        .map(|r| r.abs())
        .collect();
    let m = abs.len();
    let rank = ((m as f64 + 1.0) * (1.0 - level)).ceil() as usize;
    if rank == 0 || rank > m {
        return Err(Error::InvalidArgument(format!(
            "calibration set of {m} too small for level {level}"
        )));
    }
    abs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(IntervalRule {
        kind: RuleKind::Conformal,
        half_width: abs[rank - 1],
        level,
        warning: false,
    })
}

/// Smallest symmetric shift whose *estimated* miscoverage meets the target,
/// where the estimate models the held-out residuals as zero-mean Gaussian
/// with (weighted) standard deviation sigma: the estimated miss rate of a
/// shift g is 2*Phi(-g/sigma), so the rule returns
/// `half_width = z_{1 - required_fcr/2} * sigma`. The Gaussian model is the
/// point of this baseline — it is well calibrated when residuals are
/// homoskedastic and light-tailed, and undercovers when they are not.
/// Weights, when given, are the calibration importance weights; `None`
/// means uniform.
pub fn gamma_rule(
    base: &KernelRidgeModel,
    x_cal: &DMatrix<f64>,
    y_cal: &DVector<f64>,
    w_cal: Option<&DVector<f64>>,
    required_fcr: f64,
) -> Result<IntervalRule> {
    if !(0.0 < required_fcr && required_fcr < 1.0) {
        return Err(Error::InvalidArgument("required_fcr must be in (0, 1)".into()));
    }
    if w_cal.is_some_and(|w| w.len() != y_cal.len()) {
        return Err(Error::DimensionMismatch("gamma rule weights".into()));
    }
    if w_cal.is_some_and(|w| w.iter().any(|&v| v < 0.0) || w.sum() <= 0.0) {
        return Err(Error::InvalidArgument(
            "gamma rule weights must be non-negative with positive sum".into(),
        ));
    }
    let resid = calibration_residuals(base, x_cal, y_cal)?;
    if resid.len() < 2 {
        return Err(Error::InvalidArgument(
            "gamma rule needs at least 2 calibration points".into(),
        ));
    }
    let mass = w_cal.map_or(resid.len() as f64, |w| w.sum());
    let var = resid
        .iter()
        .enumerate()
        .map(|(i, r)| w_cal.map_or(1.0, |w| w[i]) * r * r)
        .sum::<f64>()
        / mass;
    let z = normal_quantile(1.0 - required_fcr / 2.0)?;
    Ok(IntervalRule {
        kind: RuleKind::GammaShift,
        half_width: z * var.sqrt(),
        level: required_fcr,
        warning: false,
    })
}

/// Classical Gaussian interval: half_width = z_{1 - level/2} * residual sd.
pub fn cci_rule(
    base: &KernelRidgeModel,
    x_cal: &DMatrix<f64>,
    y_cal: &DVector<f64>,
    level: f64,
) -> Result<IntervalRule> {
    if !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidArgument("level must be in (0, 1)".into()));
    }
    let resid = calibration_residuals(base, x_cal, y_cal)?;
    if resid.len() < 2 {
        return Err(Error::InvalidArgument(
            "cci needs at least 2 calibration points".into(),
        ));
    }
    let n = resid.len() as f64;
    let mean = resid.iter().sum::<f64>() / n;
    let var = resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let z = normal_quantile(1.0 - level / 2.0)?;
    Ok(IntervalRule {
        kind: RuleKind::Cci,
        half_width: z * var.sqrt(),
        level,
        warning: false,
    })
}

/// Standard normal quantile function (inverse CDF), Wichura's AS 241
/// double-precision rational approximation (absolute error ~1e-16).
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(0.0 < p && p < 1.0) {
        return Err(Error::InvalidArgument("quantile argument must be in (0, 1)".into()));
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = (((((((2.509080928730122e3 * r + 3.3430575583588128e4) * r
            + 6.7265770927008700e4)
            * r
            + 4.5921953931549871e4)
            * r
            + 1.3731693765509461e4)
            * r
            + 1.9715909503065514e3)
            * r
            + 1.3314166789178437e2)
            * r
            + 3.3871328727963666e0)
            * q;
        let den = ((((((5.2264952788528545e3 * r + 2.8729085735721942e4) * r
            + 3.9307895800092710e4)
            * r
            + 2.1213794301586595e4)
            * r
            + 5.3941960214247511e3)
            * r
            + 6.8718700749205790e2)
            * r
            + 4.2313330701600911e1)
            * r
            + 1.0;
        return Ok(num / den);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        let num = ((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r
            + 2.41780725177450611770e-1)
            * r
            + 1.27045825245236838258e0)
            * r
            + 3.64784832476320460504e0)
            * r
            + 5.76949722146069140550e0)
            * r
            + 4.63033784615654529590e0)
            * r
            + 1.42343711074968357734e0;
        let den = ((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r
            + 1.51986665636164571966e-2)
            * r
            + 1.48103976427480074590e-1)
            * r
            + 6.89767334985100004550e-1)
            * r
            + 1.67638483018380384940e0)
            * r
            + 2.05319162663775882187e0)
            * r
            + 1.0;
        num / den
    } else {
        let r = r - 5.0;
        let num = ((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
            + 1.24266094738807843860e-3)
            * r
            + 2.65321895265761230930e-2)
            * r
            + 2.96560571828504891230e-1)
            * r
            + 1.78482653991729133580e0)
            * r
            + 5.46378491116411436990e0)
            * r
            + 6.65790464350110377720e0;
        let den = ((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r
            + 1.84631831751005468180e-5)
            * r
            + 7.86869131145613259100e-4)
            * r
            + 1.48753612908506148525e-2)
            * r
            + 1.36929880922735805310e-1)
            * r
            + 5.99832206555887937690e-1)
            * r
            + 1.0;
        num / den
    };
    Ok(if q < 0.0 { -val } else { val })
}

/// Non-crossing kernel quantile regression pair: f_u at quantile q,
/// f_l at quantile 1 - q.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantilePair {
    pub a_u: DVector<f64>,
    pub a_l: DVector<f64>,
    pub rho_u: f64,
    pub rho_l: f64,
    pub anchors: DMatrix<f64>,
    pub kernel: KernelSpec,
    pub q: f64,
    pub status: SolveStatus,
}

impl QuantilePair {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let g = gram(&self.kernel.clone().with_jitter(0.0), x, &self.anchors)?;
        let lower = &g * &self.a_l + DVector::from_element(x.nrows(), self.rho_l);
        let upper = &g * &self.a_u + DVector::from_element(x.nrows(), self.rho_u);
        Ok((lower, upper))
    }
}

/// Fit the pair by minimizing the weighted pinball losses
/// `sum_i w_i [pinball_q(y_i - f_u(x_i)) + pinball_{1-q}(y_i - f_l(x_i))]
/// + alpha (a_u' K a_u + a_l' K a_l)` subject to non-crossing at all
/// training points, with each pinball split into positive/negative slacks.
#[allow(clippy::too_many_arguments)]
pub fn fit_quantile_pair(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
    q: f64,
    kernel: &KernelSpec,
    alpha: f64,
    anchor_cap: usize,
    solver: &SolverSettings,
) -> Result<QuantilePair> {
    if !(0.5 < q && q < 1.0) {
        return Err(Error::InvalidArgument("q must be in (0.5, 1)".into()));
    }
    if !(alpha >= 0.0) {
        return Err(Error::InvalidArgument("alpha must be >= 0".into()));
    }
    let n = x.nrows();
    if n == 0 || y.len() != n || w.len() != n {
        return Err(Error::DimensionMismatch("quantile pair inputs".into()));
    }
    let anchors = crate::bp::select_anchors(x, anchor_cap, 0);
    let k = anchors.nrows();
    let k_na = gram(&kernel.clone().with_jitter(0.0), x, &anchors)?;
    let k_aa = gram(kernel, &anchors, &anchors)?;

    let mut lb = VariableLayout::builder();
    let r_au = lb.push("a_u", k);
    let r_al = lb.push("a_l", k);
    let r_ru = lb.push("rho_u", 1);
    let r_rl = lb.push("rho_l", 1);
    let r_up = lb.push("xi_u_pos", n); // (y - f_u)_+
    let r_un = lb.push("xi_u_neg", n); // (f_u - y)_+
    let r_lp = lb.push("xi_l_pos", n); // (y - f_l)_+
    let r_ln = lb.push("xi_l_neg", n); // (f_l - y)_+
    let layout = lb.build();
    let nv = layout.len();

    let mut p = DMatrix::zeros(nv, nv);
    for b in [r_au.start, r_al.start] {
        for i in 0..k {
            for j in 0..k {
                p[(b + i, b + j)] += 2.0 * alpha * k_aa[(i, j)];
            }
        }
    }
    let mut qv = DVector::zeros(nv);
    for i in 0..n {
        qv[r_up.start + i] = w[i] * q;
        qv[r_un.start + i] = w[i] * (1.0 - q);
        qv[r_lp.start + i] = w[i] * (1.0 - q);
        qv[r_ln.start + i] = w[i] * q;
    }

    let m = 4 * n /* hinges */ + 4 * n /* slack >= 0 */ + n /* non-crossing */;
    let mut a = DMatrix::zeros(m, nv);
    let mut l = DVector::from_element(m, f64::NEG_INFINITY);
    let u = DVector::from_element(m, f64::INFINITY);
    let mut row = 0;
    // f_u(x_i) + xi_u_pos >= y_i ; -f_u(x_i) + xi_u_neg >= -y_i; same for f_l
    for (coef_off, rho_off, pos, neg) in [
        (r_au.start, r_ru.start, r_up.start, r_un.start),
        (r_al.start, r_rl.start, r_lp.start, r_ln.start),
    ] {
        for i in 0..n {
            for j in 0..k {
                a[(row, coef_off + j)] = k_na[(i, j)];
            }
            a[(row, rho_off)] = 1.0;
            a[(row, pos + i)] = 1.0;
            l[row] = y[i];
            row += 1;
            for j in 0..k {
                a[(row, coef_off + j)] = -k_na[(i, j)];
            }
            a[(row, rho_off)] = -1.0;
            a[(row, neg + i)] = 1.0;
            l[row] = -y[i];
            row += 1;
        }
    }
    for b in [r_up.start, r_un.start, r_lp.start, r_ln.start] {
        for i in 0..n {
            a[(row, b + i)] = 1.0;
            l[row] = 0.0;
            row += 1;
        }
    }
    for i in 0..n {
        for j in 0..k {
            a[(row, r_au.start + j)] = k_na[(i, j)];
            a[(row, r_al.start + j)] = -k_na[(i, j)];
        }
        a[(row, r_ru.start)] = 1.0;
        a[(row, r_rl.start)] = -1.0;
        l[row] = 0.0;
        row += 1;
    }
    debug_assert_eq!(row, m);

    let problem = QpProblem::new(p, qv, a, l, u, layout)?;
    let sol = solve(&problem, solver)?;
    let get = |name: &str| problem.layout.range(name).unwrap();
    Ok(QuantilePair {
        a_u: sol.x.rows(get("a_u").start, k).into_owned(),
        a_l: sol.x.rows(get("a_l").start, k).into_owned(),
        rho_u: sol.x[get("rho_u").start],
        rho_l: sol.x[get("rho_l").start],
        anchors,
        kernel: kernel.clone(),
        q,
        status: sol.status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn ridge_1d(n: usize, f: impl Fn(f64) -> f64) -> (DMatrix<f64>, DVector<f64>) {
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64 / n as f64);
        let y = DVector::from_fn(n, |i, _| f(x[(i, 0)]));
        (x, y)
    }

    #[test]
    fn ridge_constant_target() {
        let (x, y) = ridge_1d(12, |_| 4.2);
        let model = fit_kernel_ridge(&x, &y, None, &KernelSpec::linear(), 1e-8).unwrap();
        let pred = model.predict(&x).unwrap();
        for i in 0..12 {
            assert_relative_eq!(pred[i], 4.2, epsilon = 1e-4);
        }
    }

    #[test]
    fn ridge_two_point_hand_inverse() {
        // x = (1, 2) linear kernel with +1 offset: G = [[2, 3], [3, 5]];
        // lambda = 1 -> (G + I) a = y with y = (1, 2):
        // [[3, 3], [3, 6]] a = (1, 2) => a = (0, 1/3)
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let y = DVector::from_row_slice(&[1.0, 2.0]);
        let kernel = KernelSpec::linear().with_jitter(0.0);
        let model = fit_kernel_ridge(&x, &y, None, &kernel, 1.0).unwrap();
        assert_relative_eq!(model.coefficients[0], 0.0, epsilon = 1e-10);
        assert_relative_eq!(model.coefficients[1], 1.0 / 3.0, epsilon = 1e-10);
        // prediction at x = 3: a . (k + 1) = (1/3)(3*2 + 1) = 7/3
        let pred = model.predict(&DMatrix::from_row_slice(1, 1, &[3.0])).unwrap();
        assert_relative_eq!(pred[0], 7.0 / 3.0, epsilon = 1e-10);
    }

    #[test]
    fn ridge_system_residual_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DMatrix::from_fn(25, 2, |_, _| rng.random::<f64>());
        let y = DVector::from_fn(25, |_, _| rng.random::<f64>() * 3.0);
        let w = DVector::from_fn(25, |_, _| rng.random::<f64>() + 0.2);
        let kernel = KernelSpec::rbf(0.6);
        let model = fit_kernel_ridge(&x, &y, Some(&w), &kernel, 0.3).unwrap();
        // rebuild the system and check the residual
        let mut system = offset_gram(&kernel, &x, &x).unwrap();
        let mean = w.sum() / 25.0;
        for i in 0..25 {
            system[(i, i)] += 0.3 * mean / w[i];
        }
        let resid = (&system * &model.coefficients - &y).amax();
        assert!(resid <= 1e-8, "residual {resid}");
    }

    #[test]
    fn ridge_cv_prefers_sensible_bandwidth() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 60;
        let x = DMatrix::from_fn(n, 1, |_, _| rng.random::<f64>() * 4.0 - 2.0);
        let y = DVector::from_fn(n, |i, _| (2.0 * x[(i, 0)]).sin());
        let kernels = [KernelSpec::rbf(0.02), KernelSpec::rbf(0.5), KernelSpec::rbf(50.0)];
        let (kernel, _) =
            select_kernel_ridge(&x, &y, None, &kernels, &[1e-4, 1e-2], 3).unwrap();
        assert_relative_eq!(kernel.bandwidth, 0.5);
    }

    #[test]
    fn conformal_rank_by_hand() {
        // residuals 1..=99 at level 0.05: rank = ceil(100 * 0.95) = 95
        let x = DMatrix::from_fn(99, 1, |i, _| i as f64);
        let y = DVector::from_fn(99, |i, _| (i + 1) as f64);
        // zero predictor: residuals are y themselves
        let base = KernelRidgeModel {
            coefficients: DVector::zeros(1),
            kernel: KernelSpec::linear(),
            lambda: 1.0,
            anchors: DMatrix::zeros(1, 1),
        };
        let rule = conformal_rule(&base, &x, &y, 0.05).unwrap();
        assert_relative_eq!(rule.half_width, 95.0);
        // perfect fit -> zero shift
        let zero = conformal_rule(&base, &x, &DVector::zeros(99), 0.05).unwrap();
        assert_relative_eq!(zero.half_width, 0.0);
        // too small a calibration set
        let x2 = DMatrix::zeros(5, 1);
        let y2 = DVector::zeros(5);
        assert!(conformal_rule(&base, &x2, &y2, 0.05).is_err());
    }

    #[test]
    fn conformal_calibration_coverage() {
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = 80;
            let x = DMatrix::from_fn(m, 1, |_, _| rng.random::<f64>());
            let y = DVector::from_fn(m, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let base = KernelRidgeModel {
                coefficients: DVector::zeros(1),
                kernel: KernelSpec::linear(),
                lambda: 1.0,
                anchors: DMatrix::zeros(1, 1),
            };
            let level = 0.1;
            let rule = conformal_rule(&base, &x, &y, level).unwrap();
            let covered = y.iter().filter(|&&v| v.abs() <= rule.half_width).count();
            assert!(
                covered as f64 / m as f64 >= 1.0 - level,
                "seed {seed}: coverage {}",
                covered as f64 / m as f64
            );
        }
    }

    #[test]
    fn gamma_rule_by_hand() {
        let base = KernelRidgeModel {
            coefficients: DVector::zeros(1),
            kernel: KernelSpec::linear(),
            lambda: 1.0,
            anchors: DMatrix::zeros(1, 1),
        };
        // residuals {-1, 1}: rms 1, so half_width = z_{1 - fcr/2}
        let x = DMatrix::zeros(2, 1);
        let y = DVector::from_row_slice(&[-1.0, 1.0]);
        let rule = gamma_rule(&base, &x, &y, None, 0.05).unwrap();
        assert_relative_eq!(rule.half_width, 1.959963985, epsilon = 1e-8);
        assert!(!rule.warning);
        // scaling the residuals scales the shift linearly
        let y2 = DVector::from_row_slice(&[-3.0, 3.0]);
        let scaled = gamma_rule(&base, &x, &y2, None, 0.05).unwrap();
        assert_relative_eq!(scaled.half_width, 3.0 * rule.half_width, epsilon = 1e-8);
        assert!(gamma_rule(&base, &x, &y, None, 0.0).is_err());
        assert!(gamma_rule(&base, &x, &y, None, 1.0).is_err());
    }

    #[test]
    fn gamma_rule_weighted_by_hand() {
        let base = KernelRidgeModel {
            coefficients: DVector::zeros(1),
            kernel: KernelSpec::linear(),
            lambda: 1.0,
            anchors: DMatrix::zeros(1, 1),
        };
        let x = DMatrix::zeros(3, 1);
        let y = DVector::from_row_slice(&[1.0, 1.0, 3.0]);
        // weighted rms: sqrt(0.4*1 + 0.4*1 + 0.2*9) = sqrt(2.6)
        let w = DVector::from_row_slice(&[0.4, 0.4, 0.2]);
        let rule = gamma_rule(&base, &x, &y, Some(&w), 0.1).unwrap();
        let z = normal_quantile(0.95).unwrap();
        assert_relative_eq!(rule.half_width, z * 2.6f64.sqrt(), epsilon = 1e-10);
        // unweighted rms: sqrt(11/3)
        let unweighted = gamma_rule(&base, &x, &y, None, 0.1).unwrap();
        assert_relative_eq!(
            unweighted.half_width,
            z * (11.0f64 / 3.0).sqrt(),
            epsilon = 1e-10
        );
        let bad = DVector::from_row_slice(&[0.5, 0.5]);
        assert!(gamma_rule(&base, &x, &y, Some(&bad), 0.1).is_err());
        let neg = DVector::from_row_slice(&[0.5, 0.5, -0.1]);
        assert!(gamma_rule(&base, &x, &y, Some(&neg), 0.1).is_err());
    }

    #[test]
    fn gamma_shift_monotone_in_required_fcr() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = KernelRidgeModel {
            coefficients: DVector::zeros(1),
            kernel: KernelSpec::linear(),
            lambda: 1.0,
            anchors: DMatrix::zeros(1, 1),
        };
        let x = DMatrix::zeros(50, 1);
        let y = DVector::from_fn(50, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let mut last = f64::INFINITY;
        for fcr in [0.01, 0.05, 0.1, 0.2, 0.5] {
            let rule = gamma_rule(&base, &x, &y, None, fcr).unwrap();
            assert!(rule.half_width <= last + 1e-12);
            last = rule.half_width;
        }
    }

    #[test]
    fn normal_quantile_reference_values() {
        assert_relative_eq!(normal_quantile(0.975).unwrap(), 1.959963985, epsilon = 1e-8);
        assert_relative_eq!(normal_quantile(0.5).unwrap(), 0.0, epsilon = 1e-15);
        assert_relative_eq!(normal_quantile(0.9).unwrap(), 1.2815515655, epsilon = 1e-8);
        assert_relative_eq!(
            normal_quantile(0.025).unwrap(),
            -1.959963985,
            epsilon = 1e-8
        );
        assert_relative_eq!(normal_quantile(1e-10).unwrap(), -6.3613409024, epsilon = 1e-6);
        assert!(normal_quantile(0.0).is_err());
        assert!(normal_quantile(1.0).is_err());
    }

    #[test]
    fn cci_by_hand_and_scaling() {
        let base = KernelRidgeModel {
            coefficients: DVector::zeros(1),
            kernel: KernelSpec::linear(),
            lambda: 1.0,
            anchors: DMatrix::zeros(1, 1),
        };
        // residuals {-1, 1} -> mean 0, sample sd sqrt(2)
        let x = DMatrix::zeros(2, 1);
        let y = DVector::from_row_slice(&[-1.0, 1.0]);
        let rule = cci_rule(&base, &x, &y, 0.05).unwrap();
        assert_relative_eq!(rule.half_width, 1.959963985 * 2f64.sqrt(), epsilon = 1e-6);
        // zero residuals -> zero width
        let z = cci_rule(&base, &x, &DVector::zeros(2), 0.05).unwrap();
        assert_relative_eq!(z.half_width, 0.0);
        // linear scaling in sigma
        let y3 = DVector::from_row_slice(&[-3.0, 3.0]);
        let r3 = cci_rule(&base, &x, &y3, 0.05).unwrap();
        assert_relative_eq!(r3.half_width, 3.0 * rule.half_width, epsilon = 1e-9);
        // too few points
        let one = DMatrix::zeros(1, 1);
        assert!(cci_rule(&base, &one, &DVector::zeros(1), 0.05).is_err());
    }

    #[test]
    fn interval_rules_symmetric() {
        let rule = IntervalRule {
            kind: RuleKind::Conformal,
            half_width: 0.7,
            level: 0.05,
            warning: false,
        };
        let pred = DVector::from_row_slice(&[1.0, -2.0]);
        let (lo, hi) = rule.apply(&pred);
        for i in 0..2 {
            assert_relative_eq!(hi[i] - pred[i], pred[i] - lo[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn quantile_pair_constant_data() {
        let n = 10;
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64);
        let y = DVector::from_element(n, 2.5);
        let w = DVector::from_element(n, 1.0 / n as f64);
        let pair = fit_quantile_pair(
            &x,
            &y,
            &w,
            0.9,
            &KernelSpec::linear(),
            1e-6,
            100,
            &SolverSettings::default().with_tolerance(1e-7),
        )
        .unwrap();
        let (lo, hi) = pair.predict(&x).unwrap();
        for i in 0..n {
            assert_relative_eq!(lo[i], 2.5, epsilon = 1e-2);
            assert_relative_eq!(hi[i], 2.5, epsilon = 1e-2);
        }
    }

    #[test]
    fn quantile_pair_normal_sample() {
        // constant-only model on iid standard normals: f_u ~ q-quantile.
        // checked tightly against the weighted empirical quantile (what the
        // pinball minimizer equals) and loosely against the N(0,1) value.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 600;
        let normal = Normal::new(0.0, 1.0).unwrap();
        let x = DMatrix::zeros(n, 1);
        let mut ys: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let y = DVector::from_vec(ys.clone());
        let w = DVector::from_element(n, 1.0 / n as f64);
        let pair = fit_quantile_pair(
            &x,
            &y,
            &w,
            0.9,
            &KernelSpec::linear(),
            1e-8,
            10,
            &SolverSettings::default().with_tolerance(1e-6),
        )
        .unwrap();
        assert_eq!(pair.status, SolveStatus::Solved);
        let (lo, hi) = pair.predict(&DMatrix::zeros(1, 1)).unwrap();
        ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let emp_hi = ys[(0.9 * n as f64) as usize - 1..=(0.9 * n as f64) as usize]
            .iter()
            .sum::<f64>()
            / 2.0;
        let emp_lo = ys[(0.1 * n as f64) as usize - 1..=(0.1 * n as f64) as usize]
            .iter()
            .sum::<f64>()
            / 2.0;
        assert!((hi[0] - emp_hi).abs() < 0.03, "f_u {} vs empirical {}", hi[0], emp_hi);
        assert!((lo[0] - emp_lo).abs() < 0.03, "f_l {} vs empirical {}", lo[0], emp_lo);
        // loose statistical check against the N(0,1) quantiles
        assert!((hi[0] - 1.2816).abs() < 0.25);
        assert!((lo[0] + 1.2816).abs() < 0.25);
    }

    #[test]
    fn quantile_pair_exceedance_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 400;
        let x = DMatrix::zeros(n, 1);
        let y = DVector::from_fn(n, |_, _| rng.random::<f64>());
        let w = DVector::from_element(n, 1.0 / n as f64);
        let pair = fit_quantile_pair(
            &x,
            &y,
            &w,
            0.8,
            &KernelSpec::linear(),
            1e-8,
            10,
            &SolverSettings::default().with_tolerance(1e-6),
        )
        .unwrap();
        let (_, hi) = pair.predict(&x).unwrap();
        let above = (0..n).filter(|&i| y[i] > hi[i] + 1e-6).count() as f64 / n as f64;
        assert!(above <= 0.2 + 0.02, "exceedance {above}");
    }

    #[test]
    fn quantile_pair_rejects_bad_args() {
        let x = DMatrix::zeros(3, 1);
        let y = DVector::zeros(3);
        let w = DVector::from_element(3, 1.0 / 3.0);
        let s = SolverSettings::default();
        assert!(fit_quantile_pair(&x, &y, &w, 0.4, &KernelSpec::linear(), 1e-6, 10, &s).is_err());
        assert!(fit_quantile_pair(&x, &y, &w, 0.9, &KernelSpec::linear(), -1.0, 10, &s).is_err());
    }
}
