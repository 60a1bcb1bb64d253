//! Kernel functions and Gram-matrix construction.
//!
//! Every estimator in this crate works in the dual (representer) form
//! `f(x) = sum_i a_i k(x_i, x) + rho`, so Gram matrices are the shared
//! numerical primitive.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_JITTER: f64 = 1e-8;

/// Kernel family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Linear,
    Rbf,
    Polynomial,
}

/// Kernel specification.
///
/// The RBF convention is `exp(-||a - b||^2 / (2 sigma^2))` with `bandwidth`
/// playing the role of the length scale `sigma`. The polynomial kernel is
/// `(scale * <a, b> + offset)^degree`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
    #[serde(default = "default_degree")]
    pub degree: u32,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default = "default_offset")]
    pub offset: f64,
    /// Added to the diagonal of square Gram matrices to keep downstream
    /// factorizations stable.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

fn default_bandwidth() -> f64 {
    1.0
}
fn default_degree() -> u32 {
    2
}
fn default_scale() -> f64 {
    1.0
}
fn default_offset() -> f64 {
    1.0
}
fn default_jitter() -> f64 {
    DEFAULT_JITTER
}

impl KernelSpec {
    pub fn linear() -> Self {
        KernelSpec {
            kind: KernelKind::Linear,
            bandwidth: 1.0,
            degree: 1,
            scale: 1.0,
            offset: 0.0,
            jitter: DEFAULT_JITTER,
        }
    }

    pub fn rbf(bandwidth: f64) -> Self {
        KernelSpec {
            kind: KernelKind::Rbf,
            bandwidth,
            degree: 1,
            scale: 1.0,
            offset: 0.0,
            jitter: DEFAULT_JITTER,
        }
    }

    pub fn polynomial(degree: u32, scale: f64, offset: f64) -> Self {
        KernelSpec {
            kind: KernelKind::Polynomial,
            bandwidth: 1.0,
            degree,
            scale,
            offset,
            jitter: DEFAULT_JITTER,
        }
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.jitter < 0.0 || !self.jitter.is_finite() {
            return Err(Error::InvalidArgument("jitter must be >= 0".into()));
        }
        match self.kind {
            KernelKind::Rbf => {
                if !(self.bandwidth > 0.0) || !self.bandwidth.is_finite() {
                    return Err(Error::InvalidArgument(
                        "rbf bandwidth must be a positive finite real".into(),
                    ));
                }
            }
            KernelKind::Polynomial => {
                if self.degree < 1 {
                    return Err(Error::InvalidArgument(
                        "polynomial degree must be >= 1".into(),
                    ));
                }
                if !self.scale.is_finite() || !self.offset.is_finite() {
                    return Err(Error::InvalidArgument(
                        "polynomial scale/offset must be finite".into(),
                    ));
                }
            }
            KernelKind::Linear => {}
        }
        Ok(())
    }

    /// Scalar kernel value k(a, b).
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        match self.kind {
            KernelKind::Linear => dot(a, b),
            KernelKind::Rbf => {
                let mut sq = 0.0;
                for (ai, bi) in a.iter().zip(b) {
                    let d = ai - bi;
                    sq += d * d;
                }
                (-sq / (2.0 * self.bandwidth * self.bandwidth)).exp()
            }
            KernelKind::Polynomial => {
                (self.scale * dot(a, b) + self.offset).powi(self.degree as i32)
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gram matrix with entry (i, j) = k(a_i, b_j) for rows of `a` and `b`.
///
/// When `a` and `b` are the same matrix (detected by value), the jitter is
/// added to the diagonal.
pub fn gram(spec: &KernelSpec, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spec.validate()?;
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "gram: a has {} columns, b has {}",
            a.ncols(),
            b.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) || b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gram input matrix".into()));
    }
    let square = a.nrows() == b.nrows() && a == b;
    let mut g = match spec.kind {
        KernelKind::Linear => a * b.transpose(),
        KernelKind::Polynomial => {
            let mut g = a * b.transpose();
            g.apply(|v| *v = (spec.scale * *v + spec.offset).powi(spec.degree as i32));
            g
        }
        KernelKind::Rbf => {
            // ||a_i - b_j||^2 = ||a_i||^2 + ||b_j||^2 - 2 <a_i, b_j>
            let mut g = a * b.transpose();
            let an: Vec<f64> = (0..a.nrows()).map(|i| a.row(i).norm_squared()).collect();
            let bn: Vec<f64> = (0..b.nrows()).map(|j| b.row(j).norm_squared()).collect();
            let inv = 1.0 / (2.0 * spec.bandwidth * spec.bandwidth);
            for j in 0..g.ncols() {
                for i in 0..g.nrows() {
                    let sq = (an[i] + bn[j] - 2.0 * g[(i, j)]).max(0.0);
                    g[(i, j)] = (-sq * inv).exp();
                }
            }
            g
        }
    };
    if square {
        // Symmetrize exactly and stabilize the diagonal.
        let gt = g.transpose();
        g = (&g + gt) * 0.5;
        for i in 0..g.nrows() {
            g[(i, i)] += spec.jitter;
        }
    }
    Ok(g)
}

/// Diagnostic check that `g` is symmetric (within 1e-10) and positive
/// semidefinite (Cholesky of `g + tol*I` succeeds with tol = 1e-8 scaled).
pub fn symmetric_psd_check(g: &DMatrix<f64>) -> bool {
    if g.nrows() != g.ncols() {
        return false;
    }
    let n = g.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (g[(i, j)] - g[(j, i)]).abs() > 1e-10 {
                return false;
            }
        }
    }
    let scale = 1.0 + g.diagonal().amax();
    let mut shifted = g.clone();
    for i in 0..n {
        shifted[(i, i)] += 1e-8 * scale;
    }
    shifted.cholesky().is_some()
}

/// Median-heuristic bandwidth: median pairwise distance between rows,
/// computed over at most `cap` rows for tractability.
pub fn median_heuristic(x: &DMatrix<f64>, cap: usize) -> f64 {
    let n = x.nrows().min(cap);
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (x.row(i) - x.row(j)).norm();
            if d > 0.0 {
                dists.push(d);
            }
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    dists[dists.len() / 2]
}

/// Convenience: Gram column block for prediction, k(anchors, queries)^T a + rho.
pub fn kernel_predict(
    spec: &KernelSpec,
    anchors: &DMatrix<f64>,
    coeffs: &DVector<f64>,
    bias: f64,
    queries: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let k = gram(spec, queries, anchors)?;
    Ok(&k * coeffs + DVector::from_element(queries.nrows(), bias))
}
