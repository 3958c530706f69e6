//! Working correlation structures and the moment estimators for the
//! dispersion `phi` and the correlation parameters.
//!
//! Residual products enter the estimators as `r_{i,j} r_{i,k} / phi`. By
//! default the denominators are the raw observation or pair counts; the
//! `df_corrected` option subtracts the parameter dimension `p` instead.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ReserveError, Result};
use crate::linalg::{min_abs_eigenvalue, min_eigenvalue};
use crate::model::VarianceFunction;
use crate::triangle::ClusterSet;

/// Estimates are kept inside this bound so `C(theta)` stays invertible.
pub const CORRELATION_CLIP: f64 = 0.99;
/// Eigenvalues at or below this count as not positive definite.
pub const PD_TOLERANCE: f64 = 1e-10;
/// Minimum `|eigenvalue|` the fit tolerates in a cluster correlation matrix.
pub const SINGULARITY_GAP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "m")]
pub enum CorrelationKind {
    Independence,
    Exchangeable,
    Ar1,
    MDependent(usize),
    Unstructured,
}

impl CorrelationKind {
    /// Number of correlation parameters for clusters of at most `n` observations.
    pub fn dimension(self, n: usize) -> usize {
        match self {
            CorrelationKind::Independence => 0,
            CorrelationKind::Exchangeable | CorrelationKind::Ar1 => 1,
            CorrelationKind::MDependent(m) => m,
            CorrelationKind::Unstructured => n * n.saturating_sub(1) / 2,
        }
    }

    pub fn short_name(self) -> String {
        match self {
            CorrelationKind::Independence => "ind".into(),
            CorrelationKind::Exchangeable => "exch".into(),
            CorrelationKind::Ar1 => "ar1".into(),
            CorrelationKind::MDependent(m) => format!("mdep:{m}"),
            CorrelationKind::Unstructured => "unstr".into(),
        }
    }

    /// Stationary structures whose correlations depend only on the lag, so
    /// they extend to unobserved development years.
    pub fn is_translation_symmetric(self) -> bool {
        !matches!(self, CorrelationKind::Unstructured)
    }
}

impl fmt::Display for CorrelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            CorrelationKind::Independence => "independence".to_string(),
            CorrelationKind::Exchangeable => "exchangeable".to_string(),
            CorrelationKind::Ar1 => "AR(1)".to_string(),
            CorrelationKind::MDependent(m) => format!("{m}-dependent"),
            CorrelationKind::Unstructured => "unstructured".to_string(),
        };
        f.write_str(&name)
    }
}

/// A correlation kind together with its parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationStructure {
    kind: CorrelationKind,
    params: Vec<f64>,
    max_size: usize,
}

impl CorrelationStructure {
    pub fn new(kind: CorrelationKind, params: Vec<f64>, max_size: usize) -> Result<Self> {
        if let CorrelationKind::MDependent(m) = kind {
            if m == 0 || m >= max_size.max(1) {
                return Err(ReserveError::InvalidSpec(format!(
                    "m-dependent order {m} must lie in 1..{max_size}"
                )));
            }
        }
        let expected = kind.dimension(max_size);
        if params.len() != expected {
            return Err(ReserveError::DimensionMismatch(format!(
                "{kind} structure needs {expected} parameters, got {}",
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(ReserveError::InvalidSpec("non-finite correlation parameter".into()));
        }
        Ok(Self { kind, params, max_size })
    }

    /// Parameters all zero; the matrix is the identity.
    pub fn zero(kind: CorrelationKind, max_size: usize) -> Result<Self> {
        Self::new(kind, vec![0.0; kind.dimension(max_size)], max_size)
    }

    pub fn independence(max_size: usize) -> Self {
        Self { kind: CorrelationKind::Independence, params: Vec::new(), max_size }
    }

    pub fn kind(&self) -> CorrelationKind {
        self.kind
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        Self::new(self.kind, params, self.max_size)
    }

    /// `C(theta)` for a cluster of size `k`, validated as positive definite.
    pub fn build_matrix(&self, k: usize) -> Result<DMatrix<f64>> {
        let c = self.build_matrix_unchecked(k)?;
        let min = min_eigenvalue(&c);
        if min <= PD_TOLERANCE {
            return Err(ReserveError::NotPositiveDefinite { size: k, min_eigenvalue: min });
        }
        Ok(c)
    }

    /// `C(theta)` for a cluster of size `k` without the definiteness check.
    pub fn build_matrix_unchecked(&self, k: usize) -> Result<DMatrix<f64>> {
        if k == 0 || k > self.max_size {
            return Err(ReserveError::DimensionMismatch(format!(
                "cluster size {k} outside 1..={}",
                self.max_size
            )));
        }
        Ok(DMatrix::from_fn(k, k, |r, c| if r == c { 1.0 } else { self.entry(r + 1, c + 1) }))
    }

    /// Off-diagonal correlation between development years `j != k` (1-based).
    fn entry(&self, j: usize, k: usize) -> f64 {
        let lag = j.abs_diff(k);
        match self.kind {
            CorrelationKind::Independence => 0.0,
            CorrelationKind::Exchangeable => self.params[0],
            CorrelationKind::Ar1 => self.params[0].powi(lag as i32),
            CorrelationKind::MDependent(m) => {
                if lag <= m {
                    self.params[lag - 1]
                } else {
                    0.0
                }
            }
            CorrelationKind::Unstructured => self.params[unstructured_index(j.min(k), j.max(k), self.max_size)],
        }
    }
}

/// Position of pair `(j, k)`, `j < k`, in the row-major upper triangle.
pub fn unstructured_index(j: usize, k: usize, n: usize) -> usize {
    debug_assert!(j < k && k <= n);
    (j - 1) * (2 * n - j) / 2 + (k - j - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ar1Method {
    /// Root of the estimating equation over all within-cluster pairs,
    /// `sum (r_j r_k / phi - a^l) l a^(l-1) = 0` with `l = |j - k|`.
    #[default]
    AllPairs,
    /// Lag-one moment estimate.
    Lag1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MomentOptions {
    /// Subtract the parameter dimension from every denominator.
    pub df_corrected: bool,
    pub ar1: Ar1Method,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispersionEstimate {
    pub phi: f64,
    pub denominator: usize,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEstimate {
    pub params: Vec<f64>,
    pub warnings: Vec<String>,
}

/// `(X - mu) / sqrt(h(mu))` cluster by cluster.
pub fn pearson_residuals(clusters: &ClusterSet, mu: &[DVector<f64>], h: VarianceFunction) -> Result<Vec<DVector<f64>>> {
    if mu.len() != clusters.clusters.len() {
        return Err(ReserveError::DimensionMismatch(format!(
            "{} mean vectors for {} clusters",
            mu.len(),
            clusters.clusters.len()
        )));
    }
    clusters
        .clusters
        .iter()
        .zip(mu)
        .map(|(c, m)| {
            if m.len() != c.size() {
                return Err(ReserveError::DimensionMismatch(format!(
                    "cluster {} has {} values and {} means",
                    c.accident_year,
                    c.size(),
                    m.len()
                )));
            }
            if let Some(&bad) = m.iter().find(|&&v| !(v > 0.0)) {
                return Err(ReserveError::NonPositiveMean(bad));
            }
            Ok(DVector::from_fn(c.size(), |j, _| (c.values[j] - m[j]) / h.h(m[j]).sqrt()))
        })
        .collect()
}

pub fn estimate_dispersion(residuals: &[DVector<f64>], p: usize, options: MomentOptions) -> Result<DispersionEstimate> {
    let n_obs: usize = residuals.iter().map(|r| r.len()).sum();
    if n_obs <= p {
        return Err(ReserveError::DegenerateFit { observations: n_obs, parameters: p });
    }
    let denominator = if options.df_corrected { n_obs - p } else { n_obs };
    let ss: f64 = residuals.iter().map(|r| r.norm_squared()).sum();
    let phi = ss / denominator as f64;
    let warning = (phi == 0.0).then(|| "dispersion estimate is zero: the fit interpolates the data".to_string());
    Ok(DispersionEstimate { phi, denominator, warning })
}

/// Accumulates residual products by lag: `(sum, count)` for lags `1..=max_lag`.
fn lag_products(residuals: &[DVector<f64>], max_lag: usize) -> Vec<(f64, usize)> {
    let mut acc = vec![(0.0, 0usize); max_lag];
    for r in residuals {
        for j in 0..r.len() {
            for k in j + 1..r.len().min(j + max_lag + 1) {
                let slot = &mut acc[k - j - 1];
                slot.0 += r[j] * r[k];
                slot.1 += 1;
            }
        }
    }
    acc
}

fn corrected_denominator(count: usize, p: usize, options: MomentOptions, what: &str, warnings: &mut Vec<String>) -> Result<f64> {
    if count == 0 {
        return Err(ReserveError::InsufficientPairs(what.to_string()));
    }
    if !options.df_corrected {
        return Ok(count as f64);
    }
    if count > p {
        Ok((count - p) as f64)
    } else {
        warnings.push(format!(
            "{what}: {count} pairs do not exceed p = {p}; using the uncorrected denominator"
        ));
        Ok(count as f64)
    }
}

fn clip(v: f64) -> f64 {
    v.clamp(-CORRELATION_CLIP, CORRELATION_CLIP)
}

/// Moment estimates of the correlation parameters from Pearson residuals.
pub fn estimate_params(
    residuals: &[DVector<f64>],
    kind: CorrelationKind,
    phi: f64,
    p: usize,
    options: MomentOptions,
) -> Result<ParamEstimate> {
    let mut warnings = Vec::new();
    if kind == CorrelationKind::Independence {
        return Ok(ParamEstimate { params: Vec::new(), warnings });
    }
    if !(phi > 0.0) {
        return Err(ReserveError::InvalidSpec(format!("dispersion must be positive, got {phi}")));
    }
    let max_size = residuals.iter().map(|r| r.len()).max().unwrap_or(0);
    let params = match kind {
        CorrelationKind::Independence => unreachable!(),
        CorrelationKind::Exchangeable => {
            let (sum, count) = lag_products(residuals, max_size.saturating_sub(1))
                .into_iter()
                .fold((0.0, 0), |(s, c), (ls, lc)| (s + ls, c + lc));
            let denom = corrected_denominator(count, p, options, "exchangeable correlation", &mut warnings)?;
            vec![clip(sum / (phi * denom))]
        }
        CorrelationKind::Ar1 => {
            let lags = lag_products(residuals, max_size.saturating_sub(1));
            let (sum1, count1) = lags.first().copied().unwrap_or((0.0, 0));
            let denom = corrected_denominator(count1, p, options, "AR(1) correlation", &mut warnings)?;
            let start = clip(sum1 / (phi * denom));
            match options.ar1 {
                Ar1Method::Lag1 => vec![start],
                Ar1Method::AllPairs => vec![solve_ar1_all_pairs(residuals, phi, start)],
            }
        }
        CorrelationKind::MDependent(m) => {
            if m == 0 || m >= max_size {
                return Err(ReserveError::InsufficientPairs(format!(
                    "{m}-dependent correlation with clusters of at most {max_size} observations"
                )));
            }
            lag_products(residuals, m)
                .into_iter()
                .enumerate()
                .map(|(l, (sum, count))| {
                    let denom = corrected_denominator(count, p, options, &format!("lag-{} correlation", l + 1), &mut warnings)?;
                    Ok(clip(sum / (phi * denom)))
                })
                .collect::<Result<Vec<_>>>()?
        }
        CorrelationKind::Unstructured => {
            let n = max_size;
            let mut sums = vec![0.0; n * n.saturating_sub(1) / 2];
            let mut counts = vec![0usize; sums.len()];
            for r in residuals {
                for j in 0..r.len() {
                    for k in j + 1..r.len() {
                        let idx = unstructured_index(j + 1, k + 1, n);
                        sums[idx] += r[j] * r[k];
                        counts[idx] += 1;
                    }
                }
            }
            let mut thin = Vec::new();
            let mut out = Vec::with_capacity(sums.len());
            for j in 1..=n {
                for k in j + 1..=n {
                    let idx = unstructured_index(j, k, n);
                    if counts[idx] < 3 {
                        thin.push(format!("({j},{k}):{}", counts[idx]));
                    }
                    let denom = corrected_denominator(counts[idx], p, options, &format!("correlation ({j},{k})"), &mut warnings)?;
                    out.push(clip(sums[idx] / (phi * denom)));
                }
            }
            if !thin.is_empty() {
                warnings.push(format!(
                    "unstructured pairs estimated from fewer than 3 clusters: {}",
                    thin.join(" ")
                ));
            }
            out
        }
    };
    Ok(ParamEstimate { params, warnings })
}

/// Fisher scoring on the AR(1) estimating equation over all pairs.
fn solve_ar1_all_pairs(residuals: &[DVector<f64>], phi: f64, start: f64) -> f64 {
    let mut pairs = Vec::new();
    for r in residuals {
        for j in 0..r.len() {
            for k in j + 1..r.len() {
                pairs.push((r[j] * r[k] / phi, (k - j) as i32));
            }
        }
    }
    let mut a = start;
    for _ in 0..200 {
        let (mut score, mut info) = (0.0, 0.0);
        for &(z, l) in &pairs {
            let deriv = f64::from(l) * a.powi(l - 1);
            score += (z - a.powi(l)) * deriv;
            info += deriv * deriv;
        }
        if !(info > 0.0) {
            break;
        }
        let next = clip(a + score / info);
        let done = (next - a).abs() < 1e-15;
        a = next;
        if done {
            break;
        }
    }
    a
}

/// Shrinks the parameters toward zero until every cluster correlation matrix
/// has all `|eigenvalues| >= SINGULARITY_GAP`. Returns the shrink factor
/// applied, if any.
///
/// The factor is the smallest one restoring the gap (found by bisection
/// inside the first doubling step that works), so the result depends
/// continuously on the raw estimate.
pub fn guard_singularity(structure: &CorrelationStructure, sizes: &[usize]) -> Result<Option<(CorrelationStructure, f64)>> {
    let singular = |s: &CorrelationStructure| -> Result<bool> {
        for &k in sizes {
            if k >= 2 && min_abs_eigenvalue(&s.build_matrix_unchecked(k)?) < SINGULARITY_GAP {
                return Ok(true);
            }
        }
        Ok(false)
    };
    let shrunk = |shrink: f64| structure.with_params(structure.params().iter().map(|v| v * (1.0 - shrink)).collect());
    if !singular(structure)? {
        return Ok(None);
    }
    let mut low = 0.0;
    let mut high = SINGULARITY_GAP;
    while singular(&shrunk(high)?)? {
        low = high;
        high *= 2.0;
        if high >= 1.0 {
            return Ok(Some((CorrelationStructure::zero(structure.kind(), structure.max_size())?, 1.0)));
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (low + high);
        if singular(&shrunk(mid)?)? {
            low = mid;
        } else {
            high = mid;
        }
    }
    Ok(Some((shrunk(high)?, high)))
}
