//! Shared test helpers: a brute-force reference solver for small convex
//! quadratic programs and a random problem generator.

use nalgebra::{DMatrix, DVector};
use pobounds::qp::{QpProblem, VariableLayout};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub const FEAS_TOL: f64 = 1e-7;

/// Reference optimum by active-set enumeration.
///
/// Every subset of constraints is forced to equality (at a chosen side for
/// two-sided rows) and the equality-restricted minimizer is computed from
/// the KKT system. Any such minimizer that is feasible for the full problem
/// can only have objective >= the true optimum, and the optimum's own active
/// set reproduces it exactly (the objective is strictly convex), so the best
/// feasible candidate IS the optimum. Exponential in the constraint count —
/// test-only.
pub fn oracle_solve(problem: &QpProblem) -> Option<(DVector<f64>, f64)> {
    let m = problem.num_constraints();
    let mut best: Option<(DVector<f64>, f64)> = None;
    let mut subset = vec![false; m];
    enumerate(problem, &mut subset, 0, &mut best);
    best
}

fn enumerate(
    problem: &QpProblem,
    subset: &mut Vec<bool>,
    next: usize,
    best: &mut Option<(DVector<f64>, f64)>,
) {
    if next == subset.len() {
        let active: Vec<usize> = (0..subset.len()).filter(|&i| subset[i]).collect();
        try_active_sides(problem, &active, &mut vec![0.0; 0], 0, best);
        return;
    }
    subset[next] = false;
    enumerate(problem, subset, next + 1, best);
    subset[next] = true;
    enumerate(problem, subset, next + 1, best);
    subset[next] = false;
}

/// For each active constraint choose the side it is pinned at, then solve.
fn try_active_sides(
    problem: &QpProblem,
    active: &[usize],
    bounds: &mut Vec<f64>,
    depth: usize,
    best: &mut Option<(DVector<f64>, f64)>,
) {
    if depth == active.len() {
        evaluate_candidate(problem, active, bounds, best);
        return;
    }
    let i = active[depth];
    let (l, u) = (problem.l[i], problem.u[i]);
    let mut sides = Vec::with_capacity(2);
    if l.is_finite() {
        sides.push(l);
    }
    if u.is_finite() && u != l {
        sides.push(u);
    }
    for side in sides {
        bounds.push(side);
        try_active_sides(problem, active, bounds, depth + 1, best);
        bounds.pop();
    }
}

fn evaluate_candidate(
    problem: &QpProblem,
    active: &[usize],
    bounds: &[f64],
    best: &mut Option<(DVector<f64>, f64)>,
) {
    let n = problem.num_vars();
    let k = active.len();
    // KKT system [P A_S'; A_S 0] [x; lambda] = [-q; b]
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&problem.p);
    for (r, &i) in active.iter().enumerate() {
        for j in 0..n {
            kkt[(n + r, j)] = problem.a[(i, j)];
            kkt[(j, n + r)] = problem.a[(i, j)];
        }
    }
    let mut rhs = DVector::zeros(n + k);
    for j in 0..n {
        rhs[j] = -problem.q[j];
    }
    for (r, &b) in bounds.iter().enumerate() {
        rhs[n + r] = b;
    }
    let Some(sol) = kkt.full_piv_lu().solve(&rhs) else {
        return;
    };
    let x = DVector::from_fn(n, |i, _| sol[i]);
    if !x.iter().all(|v| v.is_finite()) {
        return;
    }
    // feasibility for the full problem
    let ax = &problem.a * &x;
    let scale = 1.0 + x.amax();
    for i in 0..problem.num_constraints() {
        if ax[i] < problem.l[i] - FEAS_TOL * scale || ax[i] > problem.u[i] + FEAS_TOL * scale {
            return;
        }
    }
    let obj = problem.objective(&x);
    match best {
        Some((_, b)) if *b <= obj => {}
        _ => *best = Some((x, obj)),
    }
}

/// Random strictly convex QP, feasible by construction (all constraints are
/// satisfiable at a sampled interior point). At most `max_vars` variables
/// and `max_constraints` constraints; rows are equalities or one-sided
/// inequalities so the reference enumeration stays tractable.
pub fn random_qp(rng: &mut ChaCha8Rng, max_vars: usize, max_constraints: usize) -> QpProblem {
    let n = rng.random_range(1..=max_vars);
    let m = rng.random_range(0..=max_constraints);
    let mut mmat = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            mmat[(i, j)] = rng.random::<f64>() * 2.0 - 1.0;
        }
    }
    let mut p = mmat.transpose() * &mmat;
    let ridge = 0.1 + rng.random::<f64>();
    for i in 0..n {
        p[(i, i)] += ridge;
    }
    let q = DVector::from_fn(n, |_, _| rng.random::<f64>() * 4.0 - 2.0);
    let x0 = DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let mut a = DMatrix::zeros(m, n);
    let mut l = DVector::from_element(m, f64::NEG_INFINITY);
    let mut u = DVector::from_element(m, f64::INFINITY);
    for i in 0..m {
        for j in 0..n {
            a[(i, j)] = rng.random::<f64>() * 2.0 - 1.0;
        }
        let r = a.row(i).transpose().dot(&x0);
        let slack = rng.random::<f64>();
        match rng.random_range(0..5) {
            0 => {
                // equality through the interior point
                l[i] = r;
                u[i] = r;
            }
            1 | 2 => l[i] = r - slack,
            _ => u[i] = r + slack,
        }
    }
    QpProblem::new(p, q, a, l, u, VariableLayout::single("x", n)).expect("valid by construction")
}
