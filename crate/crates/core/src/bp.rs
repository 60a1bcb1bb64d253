//! Bound-fitting convex programs.
//!
//! Fits per-arm lower/upper bound functions in dual kernel form,
//! `f_b^t(x) = sum_j a_{b,j}^t k(anchor_j, x) + rho_b^t`, by minimizing an
//! interval-width loss subject to a budget on the weighted magnitude of
//! training-set violations and a non-crossing constraint. The decoupled
//! variant solves one program per treatment arm; the coupled variant solves
//! a single program whose loss spans both arms at every sample, letting the
//! counterfactual arm inform each bound pair. A post-fit margin shift widens
//! both bounds by `gamma`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{gram, KernelSpec};
use crate::propensity::WeightSet;
use crate::qp::{
    solve, QpProblem, QpSolution, SolveStatus, SolverSettings, VariableLayout,
};

pub const DEFAULT_ANCHOR_CAP: usize = 1000;

/// Interval-width loss norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossP {
    L1,
    L2,
    Linf,
}

impl std::fmt::Display for LossP {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossP::L1 => "l1",
            LossP::L2 => "l2",
            LossP::Linf => "linf",
        })
    }
}

impl std::str::FromStr for LossP {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" | "1" => Ok(LossP::L1),
            "l2" | "2" => Ok(LossP::L2),
            "linf" | "inf" => Ok(LossP::Linf),
            other => Err(Error::InvalidArgument(format!("unknown loss '{other}'"))),
        }
    }
}

/// Configuration of a single bound fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub loss_p: LossP,
    pub coupled: bool,
    /// Regularization weight on the dual-norm complexity of each bound.
    pub alpha: f64,
    /// Budget on the weighted magnitude of upper-bound violations.
    pub beta_u: f64,
    /// Budget on the weighted magnitude of lower-bound violations.
    pub beta_l: f64,
    pub kernel: KernelSpec,
    /// Post-fit margin: the upper bias is raised and the lower bias lowered
    /// by this amount after solving.
    pub gamma: f64,
    /// Anchors default to all training points of the fitted problem, capped
    /// at this count by seeded uniform subsampling.
    pub anchor_cap: usize,
    pub anchor_seed: u64,
    /// Coupled fits enforce non-crossing at all training points by default;
    /// set to restrict it to each arm's factual samples.
    pub noncross_factual_only: bool,
    pub solver: SolverSettings,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            loss_p: LossP::L2,
            coupled: false,
            alpha: 1e-3,
            beta_u: 0.05,
            beta_l: 0.05,
            kernel: KernelSpec::linear(),
            gamma: 0.0,
            anchor_cap: DEFAULT_ANCHOR_CAP,
            anchor_seed: 0,
            noncross_factual_only: false,
            solver: SolverSettings::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidArgument("alpha must be >= 0".into()));
        }
        if !(self.beta_u >= 0.0 && self.beta_l >= 0.0)
            || !self.beta_u.is_finite()
            || !self.beta_l.is_finite()
        {
            return Err(Error::InvalidArgument("beta_u, beta_l must be >= 0".into()));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidArgument("gamma must be >= 0".into()));
        }
        if self.anchor_cap == 0 {
            return Err(Error::InvalidArgument("anchor_cap must be >= 1".into()));
        }
        self.kernel.validate()?;
        self.solver.validate()
    }
}

/// One treatment arm's samples with normalized importance weights.
#[derive(Debug, Clone)]
pub struct ArmData {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Normalized weights, summing to 1 within the arm.
    pub w: DVector<f64>,
}

impl ArmData {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, w: DVector<f64>) -> Result<Self> {
        let n = x.nrows();
        if y.len() != n || w.len() != n {
            return Err(Error::DimensionMismatch("arm data lengths".into()));
        }
        if n == 0 {
            return Err(Error::EmptyInput("arm data".into()));
        }
        if w.iter().any(|&v| v < 0.0) || (w.sum() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(
                "arm weights must be non-negative and sum to 1".into(),
            ));
        }
        Ok(ArmData { x, y, w })
    }

    pub fn from_dataset(dataset: &Dataset, weights: &WeightSet, arm: u8) -> Result<Self> {
        let idx = dataset.arm_indices(arm);
        if idx.is_empty() {
            return Err(Error::EmptyArm(arm));
        }
        let x = DMatrix::from_fn(idx.len(), dataset.x.ncols(), |i, j| dataset.x[(idx[i], j)]);
        let y = DVector::from_fn(idx.len(), |i, _| dataset.y[idx[i]]);
        let w = weights.arm_normalized(&dataset.t, arm);
        ArmData::new(x, y, w)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
}

/// Seeded uniform subsample of rows, capped at `cap`; indices kept sorted so
/// anchor order is stable.
pub fn select_anchors(x: &DMatrix<f64>, cap: usize, seed: u64) -> DMatrix<f64> {
    if x.nrows() <= cap {
        return x.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = rand::seq::index::sample(&mut rng, x.nrows(), cap).into_vec();
    idx.sort_unstable();
    DMatrix::from_fn(cap, x.ncols(), |i, j| x[(idx[i], j)])
}

/// A problem plus the anchor rows its coefficient blocks refer to.
pub struct AssembledProblem {
    pub problem: QpProblem,
    pub anchors: DMatrix<f64>,
}

/// Cross Gram matrix without the square-case jitter.
fn cross_gram(kernel: &KernelSpec, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    gram(&kernel.clone().with_jitter(0.0), a, b)
}

/// Add the quadratic loss contribution 2 B' W B to `p`, where the rows of B
/// are the interval widths [K | -K | 1 | -1] over (a_u, a_l, rho_u, rho_l)
/// starting at column `offset`, and W = diag(w).
fn add_squared_width_block(
    p: &mut DMatrix<f64>,
    k_na: &DMatrix<f64>,
    w: &DVector<f64>,
    offset: usize,
) {
    let k = k_na.ncols();
    let mut kw = k_na.clone();
    for i in 0..kw.nrows() {
        kw.row_mut(i).scale_mut(w[i]);
    }
    let c = k_na.tr_mul(&kw); // K' W K
    let kv = kw.row_sum().transpose(); // K' w
    let sw = w.sum();
    let (au, al, ru, rl) = (offset, offset + k, offset + 2 * k, offset + 2 * k + 1);
    for i in 0..k {
        for j in 0..k {
            p[(au + i, au + j)] += 2.0 * c[(i, j)];
            p[(al + i, al + j)] += 2.0 * c[(i, j)];
            p[(au + i, al + j)] -= 2.0 * c[(i, j)];
            p[(al + i, au + j)] -= 2.0 * c[(i, j)];
        }
        p[(au + i, ru)] += 2.0 * kv[i];
        p[(ru, au + i)] += 2.0 * kv[i];
        p[(au + i, rl)] -= 2.0 * kv[i];
        p[(rl, au + i)] -= 2.0 * kv[i];
        p[(al + i, ru)] -= 2.0 * kv[i];
        p[(ru, al + i)] -= 2.0 * kv[i];
        p[(al + i, rl)] += 2.0 * kv[i];
        p[(rl, al + i)] += 2.0 * kv[i];
    }
    p[(ru, ru)] += 2.0 * sw;
    p[(rl, rl)] += 2.0 * sw;
    p[(ru, rl)] -= 2.0 * sw;
    p[(rl, ru)] -= 2.0 * sw;
}

/// Add the regularizer 2 alpha K_aa on a coefficient block.
fn add_reg_block(p: &mut DMatrix<f64>, k_aa: &DMatrix<f64>, alpha: f64, offset: usize) {
    for i in 0..k_aa.nrows() {
        for j in 0..k_aa.ncols() {
            p[(offset + i, offset + j)] += 2.0 * alpha * k_aa[(i, j)];
        }
    }
}

/// Assemble the single-arm program.
///
/// Variables: coefficient vectors a_u, a_l over the anchors; biases rho_u,
/// rho_l; violation slacks xi_u, xi_l per sample; plus a scalar s for the
/// max-width loss. Constraints: linearized hinge rows per sample, slack
/// non-negativity, one weighted budget row per side, and non-crossing at
/// every training point.
pub fn assemble_decoupled(data: &ArmData, config: &FitConfig) -> Result<AssembledProblem> {
    config.validate()?;
    if data.n() < 2 {
        return Err(Error::InvalidArgument(
            "decoupled fit needs at least 2 samples in the arm".into(),
        ));
    }
    let anchors = select_anchors(&data.x, config.anchor_cap, config.anchor_seed);
    let n = data.n();
    let k = anchors.nrows();
    let k_na = cross_gram(&config.kernel, &data.x, &anchors)?;
    let k_aa = gram(&config.kernel, &anchors, &anchors)?;

    let linf = config.loss_p == LossP::Linf;
    let mut lb = VariableLayout::builder();
    let r_au = lb.push("a_u", k);
    let r_al = lb.push("a_l", k);
    let r_ru = lb.push("rho_u", 1);
    let r_rl = lb.push("rho_l", 1);
    let r_xu = lb.push("xi_u", n);
    let r_xl = lb.push("xi_l", n);
    let r_s = if linf { Some(lb.push("s", 1)) } else { None };
    let layout = lb.build();
    let nv = layout.len();

    let mut p = DMatrix::zeros(nv, nv);
    let mut q = DVector::zeros(nv);
    add_reg_block(&mut p, &k_aa, config.alpha, r_au.start);
    add_reg_block(&mut p, &k_aa, config.alpha, r_al.start);
    match config.loss_p {
        LossP::L1 => {
            let kw = k_na.tr_mul(&data.w);
            for j in 0..k {
                q[r_au.start + j] += kw[j];
                q[r_al.start + j] -= kw[j];
            }
            q[r_ru.start] += data.w.sum();
            q[r_rl.start] -= data.w.sum();
        }
        LossP::L2 => add_squared_width_block(&mut p, &k_na, &data.w, r_au.start),
        LossP::Linf => q[r_s.as_ref().unwrap().start] = 1.0,
    }

    let m = 4 * n + 2 + n + if linf { n } else { 0 };
    let mut a = DMatrix::zeros(m, nv);
    let mut l = DVector::from_element(m, f64::NEG_INFINITY);
    let mut u = DVector::from_element(m, f64::INFINITY);
    let mut row = 0;
    // upper hinge: f_u(x_i) + xi_u_i >= y_i
    for i in 0..n {
        for j in 0..k {
            a[(row, r_au.start + j)] = k_na[(i, j)];
        }
        a[(row, r_ru.start)] = 1.0;
        a[(row, r_xu.start + i)] = 1.0;
        l[row] = data.y[i];
        row += 1;
    }
    // lower hinge: -f_l(x_i) + xi_l_i >= -y_i
    for i in 0..n {
        for j in 0..k {
            a[(row, r_al.start + j)] = -k_na[(i, j)];
        }
        a[(row, r_rl.start)] = -1.0;
        a[(row, r_xl.start + i)] = 1.0;
        l[row] = -data.y[i];
        row += 1;
    }
    // slack non-negativity
    for i in 0..n {
        a[(row, r_xu.start + i)] = 1.0;
        l[row] = 0.0;
        row += 1;
    }
    for i in 0..n {
        a[(row, r_xl.start + i)] = 1.0;
        l[row] = 0.0;
        row += 1;
    }
    // weighted violation budgets, scaled by n so the row's coefficients are
    // O(1) like every other row (the normalized weights are O(1/n), and a
    // tightly active row at that scale stalls the solver)
    let budget_scale = n as f64;
    for i in 0..n {
        a[(row, r_xu.start + i)] = budget_scale * data.w[i];
        a[(row + 1, r_xl.start + i)] = budget_scale * data.w[i];
    }
    l[row] = 0.0;
    u[row] = budget_scale * config.beta_u;
    l[row + 1] = 0.0;
    u[row + 1] = budget_scale * config.beta_l;
    row += 2;
    // non-crossing: f_u(x_i) - f_l(x_i) >= 0
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
    // max-width epigraph: IW(x_i) - s <= 0
    if let Some(rs) = &r_s {
        for i in 0..n {
            for j in 0..k {
                a[(row, r_au.start + j)] = k_na[(i, j)];
                a[(row, r_al.start + j)] = -k_na[(i, j)];
            }
            a[(row, r_ru.start)] = 1.0;
            a[(row, r_rl.start)] = -1.0;
            a[(row, rs.start)] = -1.0;
            u[row] = 0.0;
            row += 1;
        }
    }
    debug_assert_eq!(row, m);
    let problem = QpProblem::new(p, q, a, l, u, layout)?;
    Ok(AssembledProblem { problem, anchors })
}

/// Assemble the joint two-arm program over shared anchors drawn from all
/// training points. Hinge budgets use each arm's factual samples only; the
/// loss sums both arms' interval widths at every sample, weighted by the
/// sample's factual-arm weight; non-crossing covers both arms at all points
/// unless restricted to factual samples.
pub fn assemble_coupled(
    dataset: &Dataset,
    weights: &WeightSet,
    config: &FitConfig,
) -> Result<AssembledProblem> {
    config.validate()?;
    let arm0 = ArmData::from_dataset(dataset, weights, 0)?;
    let arm1 = ArmData::from_dataset(dataset, weights, 1)?;
    let n = dataset.n();
    let anchors = select_anchors(&dataset.x, config.anchor_cap, config.anchor_seed);
    let k = anchors.nrows();
    let k_all = cross_gram(&config.kernel, &dataset.x, &anchors)?;
    let k_aa = gram(&config.kernel, &anchors, &anchors)?;
    // full-sample weight: each sample carries its factual-arm normalized weight
    let w_full = DVector::from_fn(n, |i, _| weights.normalized[i]);

    let linf = config.loss_p == LossP::Linf;
    let mut lb = VariableLayout::builder();
    let mut arm_offsets = [0usize; 2];
    let mut blocks = Vec::new();
    for t in 0..2 {
        arm_offsets[t] = lb.push(&format!("a_u{t}"), k).start;
        lb.push(&format!("a_l{t}"), k);
        lb.push(&format!("rho_u{t}"), 1);
        lb.push(&format!("rho_l{t}"), 1);
        blocks.push(arm_offsets[t]);
    }
    let r_xu0 = lb.push("xi_u0", arm0.n());
    let r_xl0 = lb.push("xi_l0", arm0.n());
    let r_xu1 = lb.push("xi_u1", arm1.n());
    let r_xl1 = lb.push("xi_l1", arm1.n());
    let r_s = if linf { Some(lb.push("s", 1)) } else { None };
    let layout = lb.build();
    let nv = layout.len();

    let mut p = DMatrix::zeros(nv, nv);
    let mut q = DVector::zeros(nv);
    for &off in &arm_offsets {
        add_reg_block(&mut p, &k_aa, config.alpha, off); // a_u block
        add_reg_block(&mut p, &k_aa, config.alpha, off + k); // a_l block
    }
    match config.loss_p {
        LossP::L1 => {
            let kw = k_all.tr_mul(&w_full);
            for &off in &arm_offsets {
                for j in 0..k {
                    q[off + j] += kw[j];
                    q[off + k + j] -= kw[j];
                }
                q[off + 2 * k] += w_full.sum();
                q[off + 2 * k + 1] -= w_full.sum();
            }
        }
        LossP::L2 => {
            for &off in &arm_offsets {
                add_squared_width_block(&mut p, &k_all, &w_full, off);
            }
        }
        LossP::Linf => q[r_s.as_ref().unwrap().start] = 1.0,
    }

    let noncross_rows = if config.noncross_factual_only { n } else { 2 * n };
    let m = 2 * n /* hinges */ + 2 * n /* slack >= 0 */ + 4 /* budgets */
        + noncross_rows
        + if linf { n } else { 0 };
    let mut a = DMatrix::zeros(m, nv);
    let mut l = DVector::from_element(m, f64::NEG_INFINITY);
    let mut u = DVector::from_element(m, f64::INFINITY);
    let mut row = 0;

    // per-arm hinge + slack + budget rows on factual samples
    let arm_slack = [(r_xu0.start, r_xl0.start), (r_xu1.start, r_xl1.start)];
    for t in 0..2u8 {
        let idx = dataset.arm_indices(t);
        let arm = if t == 0 { &arm0 } else { &arm1 };
        let off = arm_offsets[t as usize];
        let (xu, xl) = arm_slack[t as usize];
        for (a_i, &i) in idx.iter().enumerate() {
            // f_u^t(x_i) + xi >= y_i
            for j in 0..k {
                a[(row, off + j)] = k_all[(i, j)];
            }
            a[(row, off + 2 * k)] = 1.0;
            a[(row, xu + a_i)] = 1.0;
            l[row] = dataset.y[i];
            row += 1;
            // -f_l^t(x_i) + xi >= -y_i
            for j in 0..k {
                a[(row, off + k + j)] = -k_all[(i, j)];
            }
            a[(row, off + 2 * k + 1)] = -1.0;
            a[(row, xl + a_i)] = 1.0;
            l[row] = -dataset.y[i];
            row += 1;
        }
        for a_i in 0..idx.len() {
            a[(row, xu + a_i)] = 1.0;
            l[row] = 0.0;
            row += 1;
            a[(row, xl + a_i)] = 1.0;
            l[row] = 0.0;
            row += 1;
        }
        // budget rows scaled by the arm size so their coefficients are O(1)
        let budget_scale = idx.len() as f64;
        for a_i in 0..idx.len() {
            a[(row, xu + a_i)] = budget_scale * arm.w[a_i];
            a[(row + 1, xl + a_i)] = budget_scale * arm.w[a_i];
        }
        l[row] = 0.0;
        u[row] = budget_scale * config.beta_u;
        l[row + 1] = 0.0;
        u[row + 1] = budget_scale * config.beta_l;
        row += 2;
    }

    // non-crossing rows
    for t in 0..2u8 {
        let off = arm_offsets[t as usize];
        for i in 0..n {
            if config.noncross_factual_only && dataset.t[i] != t {
                continue;
            }
            for j in 0..k {
                a[(row, off + j)] = k_all[(i, j)];
                a[(row, off + k + j)] = -k_all[(i, j)];
            }
            a[(row, off + 2 * k)] = 1.0;
            a[(row, off + 2 * k + 1)] = -1.0;
            l[row] = 0.0;
            row += 1;
        }
    }

    // max-width epigraph on the summed width: IW^0(x_i) + IW^1(x_i) <= s
    if let Some(rs) = &r_s {
        for i in 0..n {
            for &off in &arm_offsets {
                for j in 0..k {
                    a[(row, off + j)] += k_all[(i, j)];
                    a[(row, off + k + j)] -= k_all[(i, j)];
                }
                a[(row, off + 2 * k)] += 1.0;
                a[(row, off + 2 * k + 1)] -= 1.0;
            }
            a[(row, rs.start)] = -1.0;
            u[row] = 0.0;
            row += 1;
        }
    }
    debug_assert_eq!(row, m);
    let problem = QpProblem::new(p, q, a, l, u, layout)?;
    Ok(AssembledProblem { problem, anchors })
}

/// Fit diagnostics for one arm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmDiagnostics {
    /// Dual norm of the lower bound, (a_l' K a_l)^(1/2).
    pub norm_l: f64,
    /// Dual norm of the bound gap, ((a_u - a_l)' K (a_u - a_l))^(1/2).
    pub norm_gap: f64,
    /// Weighted magnitude of upper-bound violations on training data, pre-shift.
    pub d_u: f64,
    /// Weighted magnitude of lower-bound violations on training data, pre-shift.
    pub d_l: f64,
}

/// One arm's fitted bound pair in dual form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmFit {
    pub a_u: DVector<f64>,
    pub a_l: DVector<f64>,
    pub rho_u: f64,
    pub rho_l: f64,
    pub anchors: DMatrix<f64>,
    pub diagnostics: ArmDiagnostics,
    pub status: SolveStatus,
    pub iterations: usize,
    pub objective: f64,
}

/// Fitted bound model for both arms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundModel {
    pub arms: [ArmFit; 2],
    pub kernel: KernelSpec,
    /// Total margin shift applied to the biases.
    pub gamma: f64,
    pub config: FitConfig,
}

/// Predicted bounds over query points for one arm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundPrediction {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub arm: u8,
}

impl BoundModel {
    /// True when both arm solves converged.
    pub fn is_clean(&self) -> bool {
        self.arms.iter().all(|a| a.status == SolveStatus::Solved)
    }
}

fn extract_pair(
    sol: &QpSolution,
    layout: &VariableLayout,
    au: &str,
    al: &str,
    ru: &str,
    rl: &str,
) -> (DVector<f64>, DVector<f64>, f64, f64) {
    let get = |name: &str| layout.range(name).expect("block exists");
    let a_u = DVector::from_fn(get(au).len(), |i, _| sol.x[get(au).start + i]);
    let a_l = DVector::from_fn(get(al).len(), |i, _| sol.x[get(al).start + i]);
    (a_u, a_l, sol.x[get(ru).start], sol.x[get(rl).start])
}

fn arm_diagnostics(
    kernel: &KernelSpec,
    anchors: &DMatrix<f64>,
    a_u: &DVector<f64>,
    a_l: &DVector<f64>,
    rho_u: f64,
    rho_l: f64,
    data: &ArmData,
) -> Result<ArmDiagnostics> {
    let k_aa = gram(kernel, anchors, anchors)?;
    let norm_l = (a_l.dot(&(&k_aa * a_l))).max(0.0).sqrt();
    let gap = a_u - a_l;
    let norm_gap = (gap.dot(&(&k_aa * &gap))).max(0.0).sqrt();
    let k_na = cross_gram(kernel, &data.x, anchors)?;
    let f_u = &k_na * a_u + DVector::from_element(data.n(), rho_u);
    let f_l = &k_na * a_l + DVector::from_element(data.n(), rho_l);
    let mut d_u = 0.0;
    let mut d_l = 0.0;
    for i in 0..data.n() {
        d_u += data.w[i] * (data.y[i] - f_u[i]).max(0.0);
        d_l += data.w[i] * (f_l[i] - data.y[i]).max(0.0);
    }
    Ok(ArmDiagnostics { norm_l, norm_gap, d_u, d_l })
}

/// Fit bounds for both arms: per-arm programs when decoupled, a single joint
/// program when coupled. The configured margin shift is applied afterwards.
/// Non-converged solves are recorded in the per-arm status, not errors.
pub fn fit(dataset: &Dataset, weights: &WeightSet, config: &FitConfig) -> Result<BoundModel> {
    config.validate()?;
    dataset.validate()?;
    let arm0 = ArmData::from_dataset(dataset, weights, 0)?;
    let arm1 = ArmData::from_dataset(dataset, weights, 1)?;

    let arms: [ArmFit; 2] = if config.coupled {
        let assembled = assemble_coupled(dataset, weights, config)?;
        let sol = solve(&assembled.problem, &config.solver)?;
        let mut fits = Vec::with_capacity(2);
        for (t, data) in [(0usize, &arm0), (1usize, &arm1)] {
            let (a_u, a_l, rho_u, rho_l) = extract_pair(
                &sol,
                &assembled.problem.layout,
                &format!("a_u{t}"),
                &format!("a_l{t}"),
                &format!("rho_u{t}"),
                &format!("rho_l{t}"),
            );
            let diagnostics = arm_diagnostics(
                &config.kernel,
                &assembled.anchors,
                &a_u,
                &a_l,
                rho_u,
                rho_l,
                data,
            )?;
            fits.push(ArmFit {
                a_u,
                a_l,
                rho_u,
                rho_l,
                anchors: assembled.anchors.clone(),
                diagnostics,
                status: sol.status,
                iterations: sol.iterations,
                objective: sol.objective,
            });
        }
        [fits.remove(0), fits.remove(0)]
    } else {
        let mut fits = Vec::with_capacity(2);
        for data in [&arm0, &arm1] {
            let assembled = assemble_decoupled(data, config)?;
            let sol = solve(&assembled.problem, &config.solver)?;
            let (a_u, a_l, rho_u, rho_l) =
                extract_pair(&sol, &assembled.problem.layout, "a_u", "a_l", "rho_u", "rho_l");
            let diagnostics = arm_diagnostics(
                &config.kernel,
                &assembled.anchors,
                &a_u,
                &a_l,
                rho_u,
                rho_l,
                data,
            )?;
            fits.push(ArmFit {
                a_u,
                a_l,
                rho_u,
                rho_l,
                anchors: assembled.anchors,
                diagnostics,
                status: sol.status,
                iterations: sol.iterations,
                objective: sol.objective,
            });
        }
        [fits.remove(0), fits.remove(0)]
    };

    let model = BoundModel {
        arms,
        kernel: config.kernel.clone(),
        gamma: 0.0,
        config: config.clone(),
    };
    apply_gamma_shift(&model, config.gamma)
}

/// Widen both bounds: raise each upper bias and lower each lower bias by
/// `gamma`. Coefficients are untouched; shifts compose additively.
pub fn apply_gamma_shift(model: &BoundModel, gamma: f64) -> Result<BoundModel> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidArgument("gamma must be >= 0".into()));
    }
    let mut out = model.clone();
    for arm in &mut out.arms {
        arm.rho_u += gamma;
        arm.rho_l -= gamma;
    }
    out.gamma += gamma;
    Ok(out)
}

/// Evaluate the fitted bounds at query points for one arm.
pub fn predict_bounds(model: &BoundModel, x: &DMatrix<f64>, arm: u8) -> Result<BoundPrediction> {
    if arm > 1 {
        return Err(Error::InvalidArgument(format!("unknown arm {arm}")));
    }
    let fit = &model.arms[arm as usize];
    if x.ncols() != fit.anchors.ncols() {
        return Err(Error::DimensionMismatch(
            "query dimension does not match anchors".into(),
        ));
    }
    let k = cross_gram(&model.kernel, x, &fit.anchors)?;
    let lower = &k * &fit.a_l + DVector::from_element(x.nrows(), fit.rho_l);
    let upper = &k * &fit.a_u + DVector::from_element(x.nrows(), fit.rho_u);
    Ok(BoundPrediction { lower, upper, arm })
}

/// Which bound a violation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundSide {
    Lower,
    Upper,
}

/// Weighted magnitude of violations of the (current, possibly shifted) model
/// on single-arm data: sum_i w_i max(0, y_i - f_u(x_i)) for the upper side,
/// sum_i w_i max(0, f_l(x_i) - y_i) for the lower.
pub fn violation_magnitude(
    model: &BoundModel,
    data: &ArmData,
    arm: u8,
    side: BoundSide,
) -> Result<f64> {
    if data.n() == 0 {
        return Err(Error::EmptyInput("violation_magnitude".into()));
    }
    let pred = predict_bounds(model, &data.x, arm)?;
    let mut d = 0.0;
    for i in 0..data.n() {
        let v = match side {
            BoundSide::Upper => data.y[i] - pred.upper[i],
            BoundSide::Lower => pred.lower[i] - data.y[i],
        };
        d += data.w[i] * v.max(0.0);
    }
    Ok(d)
}
