//! Synthetic data generators, a confounding-induction transform, and CSV
//! ingestion for external datasets.
//!
//! The stroke-trial-like generator draws ages from a moment-matched
//! skew-normal (mean 71.8, skewness -0.79, sd 11), maps them onto sigmoid
//! outcome surfaces, and assigns treatment by a fair coin; all confounding
//! is induced afterwards by dropping part of one arm above a covariate
//! threshold.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propensity::WeightSet;

/// Observational dataset with optional simulation-only potential outcomes.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub feature_names: Vec<String>,
    pub t: Vec<u8>,
    pub y: DVector<f64>,
    pub y0: Option<DVector<f64>>,
    pub y1: Option<DVector<f64>>,
    pub weights: Option<WeightSet>,
    /// Per-feature (mean, scale) applied to `x`, when standardized.
    pub standardization: Option<Vec<(f64, f64)>>,
    pub metadata: BTreeMap<String, String>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.t.len()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.x.nrows() != n || self.y.len() != n {
            return Err(Error::DimensionMismatch("dataset field lengths".into()));
        }
        if self.t.iter().any(|&t| t > 1) {
            return Err(Error::InvalidArgument("treatment must be binary".into()));
        }
        if self.x.iter().any(|v| !v.is_finite()) || self.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset".into()));
        }
        // consistency: Y = Y(T) whenever potential outcomes are present
        if let (Some(y0), Some(y1)) = (&self.y0, &self.y1) {
            for i in 0..n {
                let expected = if self.t[i] == 1 { y1[i] } else { y0[i] };
                if (self.y[i] - expected).abs() > 1e-12 {
                    return Err(Error::InvalidArgument(format!(
                        "consistency violated at row {i}: y != y({})",
                        self.t[i]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn arm_indices(&self, arm: u8) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.t[i] == arm).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let x = DMatrix::from_fn(idx.len(), self.x.ncols(), |i, j| self.x[(idx[i], j)]);
        Dataset {
            x,
            feature_names: self.feature_names.clone(),
            t: idx.iter().map(|&i| self.t[i]).collect(),
            y: DVector::from_fn(idx.len(), |i, _| self.y[idx[i]]),
            y0: self
                .y0
                .as_ref()
                .map(|v| DVector::from_fn(idx.len(), |i, _| v[idx[i]])),
            y1: self
                .y1
                .as_ref()
                .map(|v| DVector::from_fn(idx.len(), |i, _| v[idx[i]])),
            weights: None,
            standardization: self.standardization.clone(),
            metadata: self.metadata.clone(),
        }
    }

    /// Standardize covariates to mean 0, scale 1, recording the stats.
    pub fn standardized(&self) -> Dataset {
        let n = self.n() as f64;
        let mut stats = Vec::with_capacity(self.x.ncols());
        let mut xs = self.x.clone();
        for j in 0..self.x.ncols() {
            let mean = self.x.column(j).sum() / n;
            let var = self.x.column(j).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let scale = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
            for i in 0..self.x.nrows() {
                xs[(i, j)] = (self.x[(i, j)] - mean) / scale;
            }
            stats.push((mean, scale));
        }
        Dataset {
            x: xs,
            standardization: Some(stats),
            ..self.clone()
        }
    }

    /// Apply previously recorded standardization stats (e.g. train stats to test).
    pub fn standardized_with(&self, stats: &[(f64, f64)]) -> Result<Dataset> {
        if stats.len() != self.x.ncols() {
            return Err(Error::DimensionMismatch("standardization stats".into()));
        }
        let mut xs = self.x.clone();
        for j in 0..self.x.ncols() {
            let (mean, scale) = stats[j];
            for i in 0..self.x.nrows() {
                xs[(i, j)] = (self.x[(i, j)] - mean) / scale;
            }
        }
        Ok(Dataset {
            x: xs,
            standardization: Some(stats.to_vec()),
            ..self.clone()
        })
    }
}

/// Which generator to use.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DgpSpec {
    IstLike {
        n: usize,
        seed: u64,
    },
    Heteroskedastic {
        n: usize,
        seed: u64,
    },
}

impl DgpSpec {
    pub fn generate(&self) -> Result<Dataset> {
        match *self {
            DgpSpec::IstLike { n, seed } => gen_ist_like(n, seed),
            DgpSpec::Heteroskedastic { n, seed } => gen_heteroskedastic(n, seed),
        }
    }

    pub fn with_seed(&self, seed: u64) -> DgpSpec {
        match *self {
            DgpSpec::IstLike { n, .. } => DgpSpec::IstLike { n, seed },
            DgpSpec::Heteroskedastic { n, .. } => DgpSpec::Heteroskedastic { n, seed },
        }
    }
}

/// Rule for inducing confounding by downsampling part of one arm.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConfoundRule {
    pub covariate: String,
    pub threshold: f64,
    pub arm: u8,
    pub drop_fraction: f64,
}

impl ConfoundRule {
    /// The rule used throughout the stroke-trial experiments: drop 70% of
    /// the older (age > 70) untreated population.
    pub fn ist_default() -> Self {
        ConfoundRule {
            covariate: "age".into(),
            threshold: 70.0,
            arm: 0,
            drop_fraction: 0.7,
        }
    }
}

// Target age distribution: mean 71.8, skewness -0.79, sd 11 (chosen as a
// plausible stroke-trial spread), clipped to [40, 100].
const AGE_MEAN: f64 = 71.8;
const AGE_SD: f64 = 11.0;
const AGE_SKEW: f64 = -0.79;

/// Skew-normal shape delta solving the moment equation for a target skewness.
fn skew_normal_delta(target_skew: f64) -> f64 {
    let skew_of = |delta: f64| {
        let m = delta * (2.0 / std::f64::consts::PI).sqrt();
        (4.0 - std::f64::consts::PI) / 2.0 * m.powi(3) / (1.0 - m * m).powf(1.5)
    };
    let (mut lo, mut hi) = if target_skew < 0.0 { (-0.9999, 0.0) } else { (0.0, 0.9999) };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if skew_of(mid) < target_skew {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn sample_ages(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let delta = skew_normal_delta(AGE_SKEW);
    let m = delta * (2.0 / std::f64::consts::PI).sqrt();
    let omega = AGE_SD / (1.0 - m * m).sqrt();
    let xi = AGE_MEAN - omega * m;
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    (0..n)
        .map(|_| {
            let z0: f64 = std_normal.sample(rng);
            let z1: f64 = std_normal.sample(rng);
            let u = delta * z0.abs() + (1.0 - delta * delta).sqrt() * z1;
            (xi + omega * u).clamp(40.0, 100.0)
        })
        .collect()
}

/// Sigmoid surface S(a, x) = 1 / (1 + exp(-a x / 10)); the /10 centers the
/// transition at the rescaled-age origin and saturates at the range ends.
pub fn sigmoid_surface(a: f64, x: f64) -> f64 {
    1.0 / (1.0 + (-a * x / 10.0).exp())
}

fn assemble(
    ages: Vec<f64>,
    t: Vec<u8>,
    y0: Vec<f64>,
    y1: Vec<f64>,
    metadata: BTreeMap<String, String>,
) -> Dataset {
    let n = ages.len();
    let y = DVector::from_fn(n, |i, _| if t[i] == 1 { y1[i] } else { y0[i] });
    Dataset {
        x: DMatrix::from_fn(n, 1, |i, _| ages[i]),
        feature_names: vec!["age".into()],
        t,
        y,
        y0: Some(DVector::from_vec(y0)),
        y1: Some(DVector::from_vec(y1)),
        weights: None,
        standardization: None,
        metadata,
    }
}

/// Stroke-trial-like outcome surfaces over age, treatment by fair coin.
///
/// E[Y(1) | age] = 2 S(-5, age') + 2.5 and E[Y(0) | age] = 2 S(-5, age' - 4)
/// + 1.5 with age' = (age - 50) / 0.75 and Gaussian noise of sd 0.1. The
/// treated surface transitions sharply around age 50: the elderly bulk of the
/// population sits on the flat 2.5 plateau while the small (~3%)
/// under-represented young minority sits two units higher, so any linear
/// model is misspecified with a strongly one-sided error concentrated on the
/// young. The control surface transitions around age 53, dropping everyone
/// older to a low plateau.
pub fn gen_ist_like(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ages = sample_ages(n, &mut rng);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let mut t = Vec::with_capacity(n);
    let mut y0 = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);
    for &age in &ages {
        let age_r = (age - 50.0) / 0.75;
        y1.push(2.0 * sigmoid_surface(-5.0, age_r) + 2.5 + noise.sample(&mut rng));
        y0.push(2.0 * sigmoid_surface(-5.0, age_r - 4.0) + 1.5 + noise.sample(&mut rng));
        t.push(u8::from(rng.random::<f64>() < 0.5));
    }
    let mut meta = BTreeMap::new();
    meta.insert("dgp".into(), "ist_like".into());
    meta.insert("seed".into(), seed.to_string());
    meta.insert(
        "age_model".into(),
        format!("skew_normal(mean={AGE_MEAN},sd={AGE_SD},skew={AGE_SKEW}),clip[40,100]"),
    );
    meta.insert("surface".into(), "S(a,x)=1/(1+exp(-a*x/10))".into());
    Ok(assemble(ages, t, y0, y1, meta))
}

/// Heteroskedastic variant: Y(1) = x^2 + eps with sd 0.1 for x <= 0 and
/// 0.1 + x otherwise, x the age rescaled to [-2, 2].
pub fn gen_heteroskedastic(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ages = sample_ages(n, &mut rng);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let mut t = Vec::with_capacity(n);
    let mut y0 = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);
    for &age in &ages {
        let x = (age - 70.0) / 15.0; // [40, 100] -> [-2, 2]
        let sd1 = if x <= 0.0 { 0.1 } else { 0.1 + x };
        y1.push(x * x + sd1 * std_normal.sample(&mut rng));
        y0.push(x * x + 0.1 * std_normal.sample(&mut rng));
        t.push(u8::from(rng.random::<f64>() < 0.5));
    }
    let mut meta = BTreeMap::new();
    meta.insert("dgp".into(), "heteroskedastic".into());
    meta.insert("seed".into(), seed.to_string());
    Ok(assemble(ages, t, y0, y1, meta))
}

/// Remove each sample matching the rule independently with probability
/// `drop_fraction`.
pub fn confound(dataset: &Dataset, rule: &ConfoundRule, seed: u64) -> Result<Dataset> {
    let col = dataset
        .feature_names
        .iter()
        .position(|n| *n == rule.covariate)
        .ok_or_else(|| Error::MissingColumn(rule.covariate.clone()))?;
    if !(0.0..=1.0).contains(&rule.drop_fraction) {
        return Err(Error::InvalidArgument("drop_fraction must be in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::with_capacity(dataset.n());
    for i in 0..dataset.n() {
        let matches = dataset.x[(i, col)] > rule.threshold && dataset.t[i] == rule.arm;
        let dropped = matches && rng.random::<f64>() < rule.drop_fraction;
        if !dropped {
            keep.push(i);
        }
    }
    let mut out = dataset.subset(&keep);
    for arm in [0u8, 1u8] {
        if out.arm_indices(arm).is_empty() {
            return Err(Error::EmptyArm(arm));
        }
    }
    out.metadata.insert(
        "confound_rule".into(),
        format!(
            "{}>{} arm={} drop={}",
            rule.covariate, rule.threshold, rule.arm, rule.drop_fraction
        ),
    );
    Ok(out)
}

/// Column schema for CSV ingestion.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CsvSchema {
    pub covariates: Vec<String>,
    pub treatment: String,
    pub outcome: String,
    #[serde(default)]
    pub y0: Option<String>,
    #[serde(default)]
    pub y1: Option<String>,
}

impl Default for CsvSchema {
    /// Matches the column names written by [`save_csv`] for the built-in
    /// generators (potential-outcome columns opt-in).
    fn default() -> Self {
        CsvSchema {
            covariates: vec!["age".into()],
            treatment: "treatment".into(),
            outcome: "outcome".into(),
            y0: None,
            y1: None,
        }
    }
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<f64> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(Error::CsvCell {
            row,
            column: column.to_string(),
            message: "missing value".into(),
        });
    }
    trimmed.parse::<f64>().map_err(|_| Error::CsvCell {
        row,
        column: column.to_string(),
        message: format!("non-numeric cell '{trimmed}'"),
    })
}

/// Load a dataset from CSV, standardizing covariates and recording the stats.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))?;
    let headers = reader.headers()?.clone();
    let col_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let cov_idx: Vec<usize> = schema
        .covariates
        .iter()
        .map(|c| col_index(c))
        .collect::<Result<_>>()?;
    let t_idx = col_index(&schema.treatment)?;
    let y_idx = col_index(&schema.outcome)?;
    let y0_idx = schema.y0.as_ref().map(|c| col_index(c)).transpose()?;
    let y1_idx = schema.y1.as_ref().map(|c| col_index(c)).transpose()?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut t = Vec::new();
    let mut y = Vec::new();
    let mut y0 = Vec::new();
    let mut y1 = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = r + 1; // 1-based data row
        let mut row = Vec::with_capacity(cov_idx.len());
        for (&ci, name) in cov_idx.iter().zip(&schema.covariates) {
            row.push(parse_cell(&record[ci], row_no, name)?);
        }
        let t_val = parse_cell(&record[t_idx], row_no, &schema.treatment)?;
        if t_val != 0.0 && t_val != 1.0 {
            return Err(Error::CsvCell {
                row: row_no,
                column: schema.treatment.clone(),
                message: format!("treatment value '{t_val}' is not binary"),
            });
        }
        t.push(t_val as u8);
        y.push(parse_cell(&record[y_idx], row_no, &schema.outcome)?);
        if let Some(i) = y0_idx {
            y0.push(parse_cell(&record[i], row_no, schema.y0.as_ref().unwrap())?);
        }
        if let Some(i) = y1_idx {
            y1.push(parse_cell(&record[i], row_no, schema.y1.as_ref().unwrap())?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput(format!("csv file {}", path.display())));
    }
    let n = rows.len();
    let d = cov_idx.len();
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    let dataset = Dataset {
        x,
        feature_names: schema.covariates.clone(),
        t,
        y: DVector::from_vec(y),
        y0: (y0_idx.is_some()).then(|| DVector::from_vec(y0)),
        y1: (y1_idx.is_some()).then(|| DVector::from_vec(y1)),
        weights: None,
        standardization: None,
        metadata: BTreeMap::new(),
    };
    dataset.validate()?;
    Ok(dataset.standardized())
}

/// Write a dataset to CSV (UTF-8, '.' decimal separator, header row).
/// Potential-outcome columns are included when present.
pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))?;
    let mut header: Vec<String> = dataset.feature_names.clone();
    header.push("treatment".into());
    header.push("outcome".into());
    let has_po = dataset.y0.is_some() && dataset.y1.is_some();
    if has_po {
        header.push("y0".into());
        header.push("y1".into());
    }
    writer.write_record(&header)?;
    for i in 0..dataset.n() {
        let mut row: Vec<String> = (0..dataset.x.ncols())
            .map(|j| format!("{}", dataset.x[(i, j)]))
            .collect();
        row.push(dataset.t[i].to_string());
        row.push(format!("{}", dataset.y[i]));
        if has_po {
            row.push(format!("{}", dataset.y0.as_ref().unwrap()[i]));
            row.push(format!("{}", dataset.y1.as_ref().unwrap()[i]));
        }
        writer.write_record(&row)?;
    }
    writer.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}
