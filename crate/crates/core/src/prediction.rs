//! Plug-in prediction of the lower triangle, reserves, and the mean squared
//! error of prediction including the past-future correlation cross term.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::correlation::{CorrelationKind, CorrelationStructure};
use crate::error::{ReserveError, Result};
use crate::gee::{invert_b, unit_information, FitResult};
use crate::linalg::{grand_sum, symmetrize};
use crate::model::{jacobian_from_design, DesignBuilder, ModelSpec};
use crate::selection::CriteriaReport;

/// Predicted future cells of one accident year.
#[derive(Debug, Clone, PartialEq)]
pub struct FutureYear {
    pub accident_year: usize,
    /// Cells `(i, j)`, 1-based, in development order.
    pub cells: Vec<(usize, usize)>,
    pub mu: DVector<f64>,
    pub jacobian: DMatrix<f64>,
}

/// Predictions for accident years `2..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct FutureCells {
    pub n: usize,
    pub years: Vec<FutureYear>,
}

impl FutureCells {
    pub fn total(&self) -> f64 {
        self.years.iter().map(|y| y.mu.sum()).sum()
    }
}

/// `X_hat = g^{-1}(z' theta_hat)` over the lower triangle. Refuses a
/// non-converged fit unless `force` is set.
pub fn predict_future(fit: &FitResult, builder: &DesignBuilder, force: bool) -> Result<FutureCells> {
    if !fit.converged && !force {
        return Err(ReserveError::NotConverged);
    }
    if builder.p() != fit.theta.len() {
        return Err(ReserveError::DimensionMismatch(format!(
            "design has p = {}, fit has {} parameters",
            builder.p(),
            fit.theta.len()
        )));
    }
    let n = builder.n();
    let years = (2..=n)
        .map(|i| {
            let cells: Vec<_> = (n + 2 - i..=n).map(|j| (i, j)).collect();
            let z = builder.design_matrix(&cells)?;
            let mu = (&z * &fit.theta).map(|e| fit.spec.link.inverse(e));
            if mu.iter().any(|m| !m.is_finite() || *m <= 0.0) {
                return Err(ReserveError::NonPositiveMean(mu.min()));
            }
            let jacobian = jacobian_from_design(&z, &mu, fit.spec.link);
            Ok(FutureYear { accident_year: i, cells, mu, jacobian })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FutureCells { n, years })
}

/// Full-development correlation of one accident year and its blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedCorrelation {
    pub accident_year: usize,
    /// `n x n` correlation over all development years.
    pub full: DMatrix<f64>,
    /// Future rows against past columns, `(i-1) x (n+1-i)`.
    pub cross: DMatrix<f64>,
    /// Future-future block, `(i-1) x (i-1)`.
    pub future: DMatrix<f64>,
}

pub fn extend_correlation(structure: &CorrelationStructure, n: usize, i: usize) -> Result<ExtendedCorrelation> {
    if !structure.kind().is_translation_symmetric() {
        return Err(ReserveError::UnsupportedStructureForPrediction(format!(
            "{} has no defined correlation for future development years",
            structure.kind()
        )));
    }
    if i < 2 || i > n {
        return Err(ReserveError::DimensionMismatch(format!("accident year {i} has no future cells for n = {n}")));
    }
    let full = if structure.max_size() >= n {
        structure.build_matrix_unchecked(n)?
    } else {
        CorrelationStructure::new(structure.kind(), structure.params().to_vec(), n)?.build_matrix_unchecked(n)?
    };
    let past = n + 1 - i;
    let cross = full.view((past, 0), (i - 1, past)).into_owned();
    let future = full.view((past, past), (i - 1, i - 1)).into_owned();
    Ok(ExtendedCorrelation { accident_year: i, full, cross, future })
}

/// Mean squared error of prediction, per accident year `2..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct MsePrediction {
    /// `1' M_i 1` for `i = 2..=n`.
    pub per_year: Vec<f64>,
    /// Symmetrized per-cell matrices `M_i`.
    pub matrices: Vec<DMatrix<f64>>,
    pub total: f64,
    pub warnings: Vec<String>,
}

pub fn mse_prediction(fit: &FitResult, future: &FutureCells, ext: &[ExtendedCorrelation]) -> Result<MsePrediction> {
    if ext.len() != future.years.len() {
        return Err(ReserveError::DimensionMismatch(format!(
            "{} extended correlations for {} accident years",
            ext.len(),
            future.years.len()
        )));
    }
    let terms = fit.cluster_terms()?;
    let b_unit_inv = invert_b(&unit_information(&terms, fit.clusters.p))?;
    let phi = fit.phi;
    let h = fit.spec.variance;
    let mut per_year = Vec::with_capacity(future.years.len());
    let mut matrices = Vec::with_capacity(future.years.len());
    let mut warnings = Vec::new();
    for (fy, e) in future.years.iter().zip(ext) {
        let i = fy.accident_year;
        let k = fy.cells.len();
        let idx = fit
            .clusters
            .clusters
            .iter()
            .position(|c| c.accident_year == i)
            .ok_or_else(|| ReserveError::DimensionMismatch(format!("no cluster for accident year {i}")))?;
        let t = &terms[idx];
        if e.accident_year != i || e.future.nrows() != k || e.cross.ncols() != t.mu.len() {
            return Err(ReserveError::DimensionMismatch(format!(
                "extended correlation does not match accident year {i}"
            )));
        }
        let sd_future = fy.mu.map(|m| h.h(m).sqrt());
        let sd_past = t.variance.map(f64::sqrt);
        // H = D_future B^{-1} D_i' V_i^{-1}; the dispersion cancels.
        let hat = &fy.jacobian * &b_unit_inv * t.jacobian.transpose() * &t.weight;
        let process = DMatrix::from_fn(k, k, |r, c| phi * sd_future[r] * e.future[(r, c)] * sd_future[c]);
        let cross = DMatrix::from_fn(k, t.mu.len(), |r, c| sd_future[r] * e.cross[(r, c)] * sd_past[c]);
        let estimation = &fy.jacobian * &fit.sigma_sandwich * fy.jacobian.transpose();
        let m = process - cross * hat.transpose() * (2.0 * phi) + estimation;
        let mse = grand_sum(&m);
        if !(mse > 0.0) {
            warnings.push(format!("estimated mean squared error for accident year {i} is not positive ({mse:.6e})"));
        }
        per_year.push(mse);
        matrices.push(symmetrize(&m));
    }
    let total = per_year.iter().sum();
    Ok(MsePrediction { per_year, matrices, total, warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct YearReserve {
    pub i: usize,
    pub reserve: f64,
    pub mse: Option<f64>,
    /// `100 sqrt(mse) / reserve`; absent when undefined.
    pub rmse_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReserveReport {
    pub spec: ModelSpec,
    pub years: Vec<YearReserve>,
    pub total: YearReserve,
    pub criteria: Option<CriteriaReport>,
    pub warnings: Vec<String>,
}

fn rmse_pct(mse: Option<f64>, reserve: f64) -> Option<f64> {
    match mse {
        Some(m) if m >= 0.0 && reserve > 0.0 => Some(100.0 * m.sqrt() / reserve),
        _ => None,
    }
}

pub fn reserve_report(
    fit: &FitResult,
    future: &FutureCells,
    mse: Option<&MsePrediction>,
    criteria: Option<CriteriaReport>,
) -> ReserveReport {
    let mut years = Vec::with_capacity(future.n);
    if future.n >= 1 {
        years.push(YearReserve { i: 1, reserve: 0.0, mse: mse.map(|_| 0.0), rmse_pct: None });
    }
    for (k, fy) in future.years.iter().enumerate() {
        let reserve = fy.mu.sum();
        let m = mse.map(|m| m.per_year[k]);
        years.push(YearReserve { i: fy.accident_year, reserve, mse: m, rmse_pct: rmse_pct(m, reserve) });
    }
    let reserve: f64 = years.iter().map(|y| y.reserve).sum();
    let total_mse = mse.map(|m| m.total);
    let total = YearReserve { i: 0, reserve, mse: total_mse, rmse_pct: rmse_pct(total_mse, reserve) };
    let mut warnings = fit.warnings.clone();
    if let Some(m) = mse {
        warnings.extend(m.warnings.iter().cloned());
    }
    ReserveReport { spec: fit.spec, years, total, criteria, warnings }
}

/// Every accident year's extended correlation for a fitted structure.
pub fn extend_all(structure: &CorrelationStructure, n: usize) -> Result<Vec<ExtendedCorrelation>> {
    (2..=n).map(|i| extend_correlation(structure, n, i)).collect()
}

/// Convenience: whether MSE can be computed for a structure.
pub fn supports_mse(kind: CorrelationKind) -> bool {
    kind.is_translation_symmetric()
}
