//! Dense operator-splitting (ADMM) solver for convex quadratic programs
//! with two-sided linear constraints:
//!
//! ```text
//!     minimize    1/2 x' P x + q' x
//!     subject to  l <= A x <= u
//! ```
//!
//! The splitting introduces z = A x and alternates a regularized equality
//! step with a projection onto the constraint box, in the style of OSQP.
//! The x-step is solved through the normal equations
//! `(P + sigma I + A' R A) x = rhs` with a cached Cholesky factorization;
//! the factorization is rebuilt only when the penalty `rho` adapts.

use std::fmt;
use std::io::Write;
use std::ops::Range;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Named variable blocks mapping onto index ranges of the primal vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableLayout {
    blocks: Vec<(String, usize, usize)>, // (name, start, len)
}

impl VariableLayout {
    pub fn builder() -> LayoutBuilder {
        LayoutBuilder { blocks: Vec::new(), cursor: 0 }
    }

    pub fn single(name: &str, n: usize) -> Self {
        let mut b = Self::builder();
        b.push(name, n);
        b.build()
    }

    pub fn range(&self, name: &str) -> Option<Range<usize>> {
        self.blocks
            .iter()
            .find(|(b, _, _)| b == name)
            .map(|&(_, s, l)| s..s + l)
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(|&(_, _, l)| l).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Slices must be disjoint and cover exactly [0, n).
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for (name, start, len) in &self.blocks {
            for i in *start..*start + *len {
                if i >= n || seen[i] {
                    return Err(Error::InvalidArgument(format!(
                        "layout block '{name}' overlaps or exceeds [0, {n})"
                    )));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidArgument(format!(
                "layout does not cover [0, {n})"
            )));
        }
        Ok(())
    }
}

pub struct LayoutBuilder {
    blocks: Vec<(String, usize, usize)>,
    cursor: usize,
}

impl LayoutBuilder {
    pub fn push(&mut self, name: &str, len: usize) -> Range<usize> {
        let start = self.cursor;
        self.blocks.push((name.to_string(), start, len));
        self.cursor += len;
        start..start + len
    }

    pub fn build(self) -> VariableLayout {
        VariableLayout { blocks: self.blocks }
    }
}

/// Canonical QP: 1/2 x'Px + q'x subject to l <= Ax <= u.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
    pub layout: VariableLayout,
}

impl QpProblem {
    pub fn new(
        p: DMatrix<f64>,
        q: DVector<f64>,
        a: DMatrix<f64>,
        l: DVector<f64>,
        u: DVector<f64>,
        layout: VariableLayout,
    ) -> Result<Self> {
        let prob = QpProblem { p, q, a, l, u, layout };
        prob.validate()?;
        Ok(prob)
    }

    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.l.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.q.len();
        let m = self.l.len();
        if self.p.nrows() != n || self.p.ncols() != n {
            return Err(Error::DimensionMismatch("P must be n x n".into()));
        }
        if self.a.nrows() != m || (m > 0 && self.a.ncols() != n) {
            return Err(Error::DimensionMismatch("A must be m x n".into()));
        }
        if self.u.len() != m {
            return Err(Error::DimensionMismatch("l, u must have length m".into()));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if (self.p[(i, j)] - self.p[(j, i)]).abs() > 1e-10 {
                    return Err(Error::InvalidArgument(
                        "P must be symmetric within 1e-10".into(),
                    ));
                }
            }
        }
        for i in 0..m {
            if self.l[i] > self.u[i] {
                return Err(Error::InvalidArgument(format!(
                    "constraint {i}: l > u"
                )));
            }
        }
        self.layout.validate(n)?;
        Ok(())
    }

    /// Objective value 1/2 x'Px + q'x.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * (x.transpose() * &self.p * x)[(0, 0)] + self.q.dot(x)
    }

    /// Plain-text dump of (P, q, A, l, u) for external verification.
    pub fn dump_text(&self, path: &str) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let write_mat = |f: &mut std::fs::File, name: &str, m: &DMatrix<f64>| -> std::io::Result<()> {
            writeln!(f, "{} {} {}", name, m.nrows(), m.ncols())?;
            for i in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.17e}", m[(i, j)])).collect();
                writeln!(f, "{}", row.join(" "))?;
            }
            Ok(())
        };
        let write_vec = |f: &mut std::fs::File, name: &str, v: &DVector<f64>| -> std::io::Result<()> {
            writeln!(f, "{} {}", name, v.len())?;
            for i in 0..v.len() {
                writeln!(f, "{:.17e}", v[i])?;
            }
            Ok(())
        };
        (|| -> std::io::Result<()> {
            write_mat(&mut f, "P", &self.p)?;
            write_vec(&mut f, "q", &self.q)?;
            write_mat(&mut f, "A", &self.a)?;
            write_vec(&mut f, "l", &self.l)?;
            write_vec(&mut f, "u", &self.u)
        })()
        .map_err(|e| Error::io(path, e))
    }
}

/// Termination status of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Solved,
    MaxIter,
    PrimalInfeasible,
    DualInfeasible,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SolveStatus::Solved => "solved",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::PrimalInfeasible => "primal_infeasible",
            SolveStatus::DualInfeasible => "dual_infeasible",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
}

/// Solver settings. Defaults follow standard operator-splitting practice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub rho_init: f64,
    pub sigma: f64,
    pub alpha_relax: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    pub adaptive_rho: bool,
    pub adaptive_rho_interval: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            rho_init: 0.1,
            sigma: 1e-6,
            alpha_relax: 1.6,
            eps_abs: 1e-5,
            eps_rel: 1e-5,
            max_iter: 20_000,
            adaptive_rho: true,
            adaptive_rho_interval: 50,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_abs > 0.0 && self.eps_rel > 0.0) {
            return Err(Error::InvalidArgument("eps_abs, eps_rel must be > 0".into()));
        }
        if self.max_iter < 1 {
            return Err(Error::InvalidArgument("max_iter must be >= 1".into()));
        }
        if !(self.rho_init > 0.0 && self.sigma > 0.0 && self.alpha_relax > 0.0) {
            return Err(Error::InvalidArgument(
                "rho_init, sigma, alpha_relax must be > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn with_tolerance(mut self, eps: f64) -> Self {
        self.eps_abs = eps;
        self.eps_rel = eps;
        self
    }
}

const RHO_EQ_SCALE: f64 = 1e3;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const CHECK_INTERVAL: usize = 25;
/// Last iteration at which the penalty parameter may still be rescaled.
const ADAPTIVE_RHO_FREEZE: usize = 10_000;
const EPS_INF: f64 = 1e-6;

/// Max-norm treating an empty vector as zero.
fn amax_or_zero(v: &DVector<f64>) -> f64 {
    if v.is_empty() { 0.0 } else { v.amax() }
}

/// KKT residuals at (x, y): primal = ||Ax - clamp(Ax, l, u)||_inf,
/// dual = ||Px + q + A'y||_inf.
pub fn kkt_residuals(problem: &QpProblem, x: &DVector<f64>, y: &DVector<f64>) -> Result<(f64, f64)> {
    if x.len() != problem.num_vars() || y.len() != problem.num_constraints() {
        return Err(Error::DimensionMismatch("kkt_residuals: x or y length".into()));
    }
    let ax = &problem.a * x;
    let mut primal = 0.0f64;
    for i in 0..ax.len() {
        let clamped = ax[i].clamp(problem.l[i], problem.u[i]);
        primal = primal.max((ax[i] - clamped).abs());
    }
    let dual_vec = &problem.p * x + &problem.q + problem.a.transpose() * y;
    Ok((primal, amax_or_zero(&dual_vec)))
}

struct Workspace {
    rho: f64,
    rho_vec: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    ata_unit: DMatrix<f64>,   // A' diag(eq_scale) A at rho = 1
    p_sigma: DMatrix<f64>,    // P + sigma I
}

fn factorize(p_sigma: &DMatrix<f64>, ata_unit: &DMatrix<f64>, rho: f64) -> Result<Cholesky<f64, Dyn>> {
    let m = p_sigma + ata_unit * rho;
    m.cholesky()
        .ok_or_else(|| Error::LinearSolve("ADMM normal-equations factorization failed".into()))
}

/// Solve a QP by ADMM. Deterministic: identical inputs give identical iterates.
pub fn solve(problem: &QpProblem, settings: &SolverSettings) -> Result<QpSolution> {
    solve_with_start(problem, settings, None)
}

/// Solve with an optional initial-x hint.
pub fn solve_with_start(
    problem: &QpProblem,
    settings: &SolverSettings,
    x0: Option<&DVector<f64>>,
) -> Result<QpSolution> {
    problem.validate()?;
    settings.validate()?;
    let n = problem.num_vars();
    let m = problem.num_constraints();

    // Reject non-PSD objectives up front.
    {
        let scale = 1.0 + problem.p.diagonal().amax().max(0.0);
        let mut shifted = problem.p.clone();
        for i in 0..n {
            shifted[(i, i)] += 1e-8 * scale;
        }
        if shifted.cholesky().is_none() {
            return Err(Error::NotPsd);
        }
    }

    if m == 0 {
        // Unconstrained: minimize with a tiny ridge for singular P.
        let scale = 1.0 + problem.p.diagonal().amax().max(0.0);
        let mut reg = problem.p.clone();
        for i in 0..n {
            reg[(i, i)] += 1e-12 * scale;
        }
        let chol = reg
            .cholesky()
            .ok_or_else(|| Error::LinearSolve("unconstrained solve failed".into()))?;
        let x = chol.solve(&(-&problem.q));
        let y = DVector::zeros(0);
        let (pr, dr) = kkt_residuals(problem, &x, &y)?;
        let objective = problem.objective(&x);
        return Ok(QpSolution {
            x,
            y,
            status: SolveStatus::Solved,
            iterations: 0,
            primal_residual: pr,
            dual_residual: dr,
            objective,
        });
    }

    let eq_mask: Vec<bool> = (0..m).map(|i| problem.l[i] == problem.u[i]).collect();
    let make_rho_vec = |rho: f64| {
        DVector::from_fn(m, |i, _| {
            if eq_mask[i] { (rho * RHO_EQ_SCALE).clamp(RHO_MIN, RHO_MAX) } else { rho }
        })
    };

    let mut p_sigma = problem.p.clone();
    for i in 0..n {
        p_sigma[(i, i)] += settings.sigma;
    }
    // A' diag(scale) A where scale carries the per-constraint equality boost.
    let ata_unit = {
        let mut a_scaled = problem.a.clone();
        for i in 0..m {
            let s = if eq_mask[i] { RHO_EQ_SCALE } else { 1.0 };
            a_scaled.row_mut(i).scale_mut(s.sqrt());
        }
        a_scaled.tr_mul(&a_scaled)
    };

    let rho0 = settings.rho_init.clamp(RHO_MIN, RHO_MAX);
    let mut ws = Workspace {
        rho: rho0,
        rho_vec: make_rho_vec(rho0),
        chol: factorize(&p_sigma, &ata_unit, rho0)?,
        ata_unit,
        p_sigma,
    };

    let mut x = x0.cloned().unwrap_or_else(|| DVector::zeros(n));
    if x.len() != n {
        return Err(Error::DimensionMismatch("x0 length".into()));
    }
    let mut z = {
        let mut z = &problem.a * &x;
        for i in 0..m {
            z[i] = z[i].clamp(problem.l[i].max(-1e30), problem.u[i].min(1e30));
        }
        z
    };
    let mut y = DVector::<f64>::zeros(m);

    let alpha = settings.alpha_relax;
    let mut status = SolveStatus::MaxIter;
    let mut iterations = settings.max_iter;
    let mut primal_residual = f64::INFINITY;
    let mut dual_residual = f64::INFINITY;

    for iter in 1..=settings.max_iter {
        let x_prev = x.clone();
        let y_prev = y.clone();

        // x-step through the normal equations
        let rz_minus_y = DVector::from_fn(m, |i, _| ws.rho_vec[i] * z[i] - y[i]);
        let rhs = &x * settings.sigma - &problem.q + problem.a.tr_mul(&rz_minus_y);
        let x_tilde: DVector<f64> = ws.chol.solve(&rhs);
        let z_tilde = &problem.a * &x_tilde;

        // relaxation, projection, dual update
        x = &x_tilde * alpha + &x_prev * (1.0 - alpha);
        let z_relax: DVector<f64> = &z_tilde * alpha + &z * (1.0 - alpha);
        let mut z_next = DVector::<f64>::zeros(m);
        for i in 0..m {
            z_next[i] = (z_relax[i] + y[i] / ws.rho_vec[i]).clamp(problem.l[i], problem.u[i]);
        }
        for i in 0..m {
            y[i] += ws.rho_vec[i] * (z_relax[i] - z_next[i]);
        }
        z = z_next;

        if iter % CHECK_INTERVAL == 0 || iter == settings.max_iter {
            let ax = &problem.a * &x;
            let r_prim = amax_or_zero(&(&ax - &z));
            let px = &problem.p * &x;
            let aty = problem.a.tr_mul(&y);
            let r_dual = amax_or_zero(&(&px + &problem.q + &aty));
            primal_residual = r_prim;
            dual_residual = r_dual;

            let eps_prim = settings.eps_abs
                + settings.eps_rel * amax_or_zero(&ax).max(amax_or_zero(&z));
            let eps_dual = settings.eps_abs
                + settings.eps_rel
                    * amax_or_zero(&px)
                        .max(amax_or_zero(&aty))
                        .max(amax_or_zero(&problem.q));
            if r_prim <= eps_prim && r_dual <= eps_dual {
                status = SolveStatus::Solved;
                iterations = iter;
                break;
            }

            // infeasibility certificates from one-step deltas
            let dy = &y - &y_prev;
            let dy_norm = amax_or_zero(&dy);
            if dy_norm > settings.eps_abs {
                let atdy = problem.a.tr_mul(&dy);
                if amax_or_zero(&atdy) <= EPS_INF * dy_norm {
                    let mut support = 0.0;
                    let mut certifiable = true;
                    for i in 0..m {
                        let pos = dy[i].max(0.0);
                        let neg = dy[i].min(0.0);
                        if pos > EPS_INF * dy_norm && !problem.u[i].is_finite() {
                            certifiable = false;
                            break;
                        }
                        if neg < -EPS_INF * dy_norm && !problem.l[i].is_finite() {
                            certifiable = false;
                            break;
                        }
                        if problem.u[i].is_finite() {
                            support += problem.u[i] * pos;
                        }
                        if problem.l[i].is_finite() {
                            support += problem.l[i] * neg;
                        }
                    }
                    if certifiable && support <= -EPS_INF * dy_norm {
                        status = SolveStatus::PrimalInfeasible;
                        iterations = iter;
                        break;
                    }
                }
            }
            let dx = &x - &x_prev;
            let dx_norm = amax_or_zero(&dx);
            if dx_norm > settings.eps_abs {
                let pdx = &problem.p * &dx;
                if amax_or_zero(&pdx) <= EPS_INF * dx_norm
                    && problem.q.dot(&dx) <= -EPS_INF * dx_norm
                {
                    let adx = &problem.a * &dx;
                    let mut certifiable = true;
                    for i in 0..m {
                        if problem.u[i].is_finite() && adx[i] > EPS_INF * dx_norm {
                            certifiable = false;
                            break;
                        }
                        if problem.l[i].is_finite() && adx[i] < -EPS_INF * dx_norm {
                            certifiable = false;
                            break;
                        }
                    }
                    if certifiable {
                        status = SolveStatus::DualInfeasible;
                        iterations = iter;
                        break;
                    }
                }
            }

            // adaptive rho, frozen after an initial phase: rescaling late in
            // the run can trap degenerate near-linear programs in a limit
            // cycle, while a fixed penalty always converges
            if settings.adaptive_rho
                && iter <= ADAPTIVE_RHO_FREEZE.min(settings.max_iter / 2)
                && iter % settings.adaptive_rho_interval == 0
            {
                let prim_scale = amax_or_zero(&ax).max(amax_or_zero(&z)).max(1e-10);
                let dual_scale = amax_or_zero(&px)
                    .max(amax_or_zero(&aty))
                    .max(amax_or_zero(&problem.q))
                    .max(1e-10);
                let ratio = ((r_prim / prim_scale) / (r_dual / dual_scale).max(1e-16)).sqrt();
                if ratio.is_finite() && (ratio > 5.0 || ratio < 0.2) {
                    // bounded step so a vanishing residual cannot slam rho
                    // between its extremes and stall in a limit cycle
                    let new_rho = (ws.rho * ratio.clamp(0.1, 10.0)).clamp(RHO_MIN, RHO_MAX);
                    if new_rho != ws.rho {
                        ws.rho = new_rho;
                        ws.rho_vec = make_rho_vec(new_rho);
                        ws.chol = factorize(&ws.p_sigma, &ws.ata_unit, new_rho)?;
                    }
                }
            }
        }
    }

    // Degenerate near-LP programs can leave ADMM oscillating just above the
    // tolerance. Try an exact solve on the active set read off the dual signs
    // and keep it only when it strictly improves both KKT residuals.
    if status == SolveStatus::MaxIter && n <= POLISH_MAX_VARS {
        if let Some((x_p, y_p)) = polish(problem, &y, &z, primal_residual, settings.eps_abs) {
            if let Ok((pr_p, dr_p)) = kkt_residuals(problem, &x_p, &y_p) {
                if pr_p.max(dr_p) < primal_residual.max(dual_residual)
                    && pr_p.is_finite()
                    && dr_p.is_finite()
                {
                    x = x_p;
                    y = y_p;
                    primal_residual = pr_p;
                    dual_residual = dr_p;
                    let ax = &problem.a * &x;
                    let px = &problem.p * &x;
                    let aty = problem.a.tr_mul(&y);
                    let eps_prim =
                        settings.eps_abs + settings.eps_rel * amax_or_zero(&ax);
                    let eps_dual = settings.eps_abs
                        + settings.eps_rel
                            * amax_or_zero(&px)
                                .max(amax_or_zero(&aty))
                                .max(amax_or_zero(&problem.q));
                    if primal_residual <= eps_prim && dual_residual <= eps_dual {
                        status = SolveStatus::Solved;
                    }
                }
            }
        }
    }

    let objective = problem.objective(&x);
    Ok(QpSolution {
        x,
        y,
        status,
        iterations,
        primal_residual,
        dual_residual,
        objective,
    })
}

/// How many active-set adjustments the polish step may make before giving up.
const POLISH_MAX_PASSES: usize = 60;
/// Polishing solves dense reduced KKT systems repeatedly, so it is only
/// attempted on problems small enough for that to be cheap.
const POLISH_MAX_VARS: usize = 600;

/// Exact solve of the QP restricted to a guessed active set, refined by a
/// short active-set loop: start from the sign pattern of the final dual
/// iterate, then alternately pin the most violated unpinned row and unpin the
/// row whose multiplier sign contradicts its bound. Degenerate near-linear
/// programs leave ADMM oscillating with a slightly wrong active-set guess, and
/// a few exact adjustments recover the solution. Returns the candidate
/// primal/dual pair; the caller only accepts it when it improves the KKT
/// residuals, so a failed refinement is harmless.
fn polish(
    problem: &QpProblem,
    y: &DVector<f64>,
    z: &DVector<f64>,
    primal_residual: f64,
    eps_abs: f64,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = problem.num_vars();
    let m = problem.num_constraints();
    // pinned[i]: Some(true) = at upper bound, Some(false) = at lower bound.
    // Guess activity from the dual sign and from primal proximity of the
    // projected iterate to a bound (within the scale of the current residual).
    let act_tol = 10.0 * (primal_residual + eps_abs);
    let mut pinned: Vec<Option<bool>> = vec![None; m];
    for i in 0..m {
        if problem.l[i] == problem.u[i] {
            pinned[i] = Some(false);
        } else if y[i] > 0.0 && problem.u[i].is_finite() {
            pinned[i] = Some(true);
        } else if y[i] < 0.0 && problem.l[i].is_finite() {
            pinned[i] = Some(false);
        } else if problem.u[i].is_finite() && problem.u[i] - z[i] <= act_tol {
            pinned[i] = Some(true);
        } else if problem.l[i].is_finite() && z[i] - problem.l[i] <= act_tol {
            pinned[i] = Some(false);
        }
    }
    let delta = 1e-9 * (1.0 + problem.p.diagonal().amax());
    let bound_scale = problem
        .l
        .iter()
        .chain(problem.u.iter())
        .filter(|v| v.is_finite())
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    let feas_tol = 1e-9 * (1.0 + bound_scale);

    for _pass in 0..POLISH_MAX_PASSES {
        let mut candidates: Vec<(usize, f64)> = (0..m)
            .filter_map(|i| {
                pinned[i].map(|at_upper| (i, if at_upper { problem.u[i] } else { problem.l[i] }))
            })
            .collect();
        // equality rows first so they always make it into the independent set
        candidates.sort_by_key(|&(i, _)| (problem.l[i] != problem.u[i], i));
        // keep only linearly independent constraint rows: dependent rows make
        // the reduced KKT system singular and their multipliers are redundant
        let mut basis: Vec<DVector<f64>> = Vec::new();
        let mut rows: Vec<(usize, f64)> = Vec::new();
        for &(i, b) in &candidates {
            if basis.len() == n {
                break;
            }
            let a_i = problem.a.row(i).transpose();
            let norm = a_i.norm();
            if norm == 0.0 {
                continue;
            }
            let mut v = a_i.clone();
            for _ in 0..2 {
                for u in &basis {
                    let c = v.dot(u);
                    v -= u * c;
                }
            }
            if v.norm() > 1e-8 * norm {
                basis.push(&v / v.norm());
                rows.push((i, b));
            }
        }
        rows.sort_by_key(|&(i, _)| i);
        let k = rows.len();
        let mut kkt = DMatrix::<f64>::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&problem.p);
        for i in 0..n {
            kkt[(i, i)] += delta;
        }
        for (r, &(i, _)) in rows.iter().enumerate() {
            for j in 0..n {
                let a_ij = problem.a[(i, j)];
                kkt[(n + r, j)] = a_ij;
                kkt[(j, n + r)] = a_ij;
            }
            // opposite-sign regularization keeps the KKT matrix quasi-definite
            kkt[(n + r, n + r)] = -delta;
        }
        let mut rhs = DVector::<f64>::zeros(n + k);
        for j in 0..n {
            rhs[j] = -problem.q[j];
        }
        for (r, &(_, b)) in rows.iter().enumerate() {
            rhs[n + r] = b;
        }
        let sol = kkt.lu().solve(&rhs)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let x_p = DVector::from_fn(n, |j, _| sol[j]);

        // violated constraints outside the reduced system (this includes
        // pinned rows that were dropped as linearly dependent)
        let mut in_reduced = vec![false; m];
        for &(i, _) in &rows {
            in_reduced[i] = true;
        }
        let ax = &problem.a * &x_p;
        let mut changed = false;
        for i in 0..m {
            if in_reduced[i] {
                continue;
            }
            let at_upper = if ax[i] - problem.u[i] > feas_tol {
                true
            } else if problem.l[i] - ax[i] > feas_tol {
                false
            } else {
                continue;
            };
            if problem.l[i] == problem.u[i] {
                // a dependent equality row disagrees with the rest: the guess
                // cannot be repaired by pinning
                return None;
            }
            if pinned[i] == Some(at_upper) {
                // already pinned at this bound but dropped as dependent, and
                // its bound contradicts the reduced system; release it
                pinned[i] = None;
            } else {
                pinned[i] = Some(at_upper);
            }
            changed = true;
        }
        if changed {
            continue;
        }

        // wrong-sign multipliers among pinned inequality rows
        let mut y_scale = 0.0f64;
        for r in 0..k {
            y_scale = y_scale.max(sol[n + r].abs());
        }
        let sign_tol = 1e-7 * (1.0 + y_scale);
        for (r, &(i, _)) in rows.iter().enumerate() {
            if problem.l[i] == problem.u[i] {
                continue;
            }
            let lam = sol[n + r];
            let at_upper = pinned[i] == Some(true);
            let wrong = if at_upper { -lam } else { lam };
            if wrong > sign_tol {
                pinned[i] = None;
                changed = true;
            }
        }
        if changed {
            continue;
        }

        // feasible with consistent multiplier signs: done
        let mut y_p = DVector::<f64>::zeros(m);
        for (r, &(i, _)) in rows.iter().enumerate() {
            y_p[i] = sol[n + r];
        }
        return Some((x_p, y_p));
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unconstrained_1d() -> QpProblem {
        QpProblem::new(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, -1.0),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
            DVector::zeros(0),
            VariableLayout::single("x", 1),
        )
        .unwrap()
    }

    #[test]
    fn unconstrained_minimum() {
        let sol = solve(&unconstrained_1d(), &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Solved);
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-6);
        assert_relative_eq!(sol.objective, -0.5, epsilon = 1e-6);
    }

    #[test]
    fn box_constrained_projection() {
        let prob = QpProblem::new(
            DMatrix::from_element(1, 1, 1.0),
            DVector::zeros(1),
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 2.0),
            DVector::from_element(1, 3.0),
            VariableLayout::single("x", 1),
        )
        .unwrap();
        let sol = solve(&prob, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Solved);
        // hand KKT: x = 2, y = -2 satisfies Px + A'y = 0 at the lower bound
        assert_relative_eq!(sol.x[0], 2.0, epsilon = 1e-4);
        assert_relative_eq!(sol.objective, 2.0, epsilon = 1e-3);
        let (pr, dr) = kkt_residuals(&prob, &sol.x, &sol.y).unwrap();
        assert!(pr <= 1e-4 && dr <= 1e-4, "pr={pr} dr={dr}");
    }

    #[test]
    fn kkt_residuals_at_origin() {
        let prob = unconstrained_1d();
        let (pr, dr) =
            kkt_residuals(&prob, &DVector::zeros(1), &DVector::zeros(0)).unwrap();
        assert_eq!(pr, 0.0);
        assert_relative_eq!(dr, 1.0);
    }

    #[test]
    fn kkt_dual_residual_linear_in_perturbation() {
        let prob = QpProblem::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            DVector::from_row_slice(&[1.0, -1.0]),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DVector::zeros(0),
            VariableLayout::single("x", 2),
        )
        .unwrap();
        let sol = solve(&prob, &SolverSettings::default()).unwrap();
        let mut x = sol.x.clone();
        x[0] += 1e-2;
        let (_, dr) = kkt_residuals(&prob, &x, &sol.y).unwrap();
        // |P row 0| * 1e-2 = 2e-2 dominates
        assert_relative_eq!(dr, 2e-2, max_relative = 1e-2);
    }

    #[test]
    fn primal_infeasible_detected() {
        // x <= 0 and x >= 1 cannot hold
        let prob = QpProblem::new(
            DMatrix::from_element(1, 1, 1.0),
            DVector::zeros(1),
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DVector::from_row_slice(&[f64::NEG_INFINITY, 1.0]),
            DVector::from_row_slice(&[0.0, f64::INFINITY]),
            VariableLayout::single("x", 1),
        )
        .unwrap();
        let sol = solve(&prob, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::PrimalInfeasible);
    }

    #[test]
    fn non_psd_rejected() {
        let prob = QpProblem::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
            DVector::zeros(2),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DVector::zeros(0),
            VariableLayout::single("x", 2),
        )
        .unwrap();
        assert!(matches!(
            solve(&prob, &SolverSettings::default()),
            Err(Error::NotPsd)
        ));
    }

    #[test]
    fn deterministic_iterates() {
        let prob = QpProblem::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.5]),
            DVector::from_row_slice(&[0.4, -0.9]),
            DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, -1.0, 0.0, 1.0]),
            DVector::from_row_slice(&[-1.0, -2.0, -0.5]),
            DVector::from_row_slice(&[1.0, 2.0, 0.5]),
            VariableLayout::single("x", 2),
        )
        .unwrap();
        let s1 = solve(&prob, &SolverSettings::default()).unwrap();
        let s2 = solve(&prob, &SolverSettings::default()).unwrap();
        assert_eq!(s1.x.as_slice(), s2.x.as_slice());
        assert_eq!(s1.y.as_slice(), s2.y.as_slice());
        assert_eq!(s1.iterations, s2.iterations);
    }

    #[test]
    fn scaling_leaves_argmin_unchanged() {
        let base = QpProblem::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.5]),
            DVector::from_row_slice(&[0.4, -0.9]),
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, -1.0]),
            DVector::from_row_slice(&[-1.0, -2.0]),
            DVector::from_row_slice(&[1.0, 2.0]),
            VariableLayout::single("x", 2),
        )
        .unwrap();
        let mut scaled = base.clone();
        scaled.p *= 37.0;
        scaled.q *= 37.0;
        let s1 = solve(&base, &SolverSettings::default()).unwrap();
        let s2 = solve(&scaled, &SolverSettings::default()).unwrap();
        assert!((s1.x - s2.x).amax() < 1e-3);
    }

    #[test]
    fn layout_validation() {
        let mut b = VariableLayout::builder();
        b.push("a", 2);
        b.push("b", 3);
        let layout = b.build();
        assert!(layout.validate(5).is_ok());
        assert!(layout.validate(6).is_err());
        assert_eq!(layout.range("b"), Some(2..5));
    }

    #[test]
    fn dump_text_roundtrip_exists() {
        let prob = unconstrained_1d();
        let dir = std::env::temp_dir().join("pobounds_qp_dump_test.txt");
        let path = dir.to_str().unwrap();
        prob.dump_text(path).unwrap();
        let contents = std::fs::read_to_string(path).unwrap();
        assert!(contents.starts_with("P 1 1"));
        std::fs::remove_file(path).ok();
    }
}
