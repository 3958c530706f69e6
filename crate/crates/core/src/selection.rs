//! Quasi-likelihood information criteria for choosing the mean structure and
//! the working correlation.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{ReserveError, Result};
use crate::gee::FitResult;
use crate::model::{jacobian_from_design, VarianceFunction};
use crate::triangle::ClusterSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriteriaReport {
    /// Independence quasi-likelihood at the fit's own estimate.
    pub q_indep: f64,
    pub qic: f64,
    pub qic_hh: f64,
    pub cic: f64,
    pub cic_hh: f64,
}

/// Unscaled quasi-likelihood contribution `Q(mu; x)` of one observation.
pub fn quasi_likelihood_term(x: f64, mu: f64, variance: VarianceFunction) -> f64 {
    match variance {
        VarianceFunction::Linear => x * mu.ln() - mu,
        VarianceFunction::Quadratic => -(x / mu + mu.ln()),
        VarianceFunction::Power(q) => mu.powf(1.0 - q) * (x / (1.0 - q) - mu / (2.0 - q)),
    }
}

/// `Q(theta; I)`, summed over every observed cell.
pub fn quasi_likelihood_indep(fit: &FitResult) -> f64 {
    quasi_likelihood_at(&fit.clusters, &fit.fitted, fit.spec.variance)
}

fn quasi_likelihood_at(clusters: &ClusterSet, fitted: &[DVector<f64>], variance: VarianceFunction) -> f64 {
    clusters
        .clusters
        .iter()
        .zip(fitted)
        .flat_map(|(c, mu)| c.values.iter().zip(mu.iter()))
        .map(|(&x, &m)| quasi_likelihood_term(x, m, variance))
        .sum()
}

/// `Omega_I(theta) = sum D_i' A_i^{-1} D_i`, without the dispersion.
pub fn omega_independence(clusters: &ClusterSet, theta: &DVector<f64>, fit: &FitResult) -> Result<DMatrix<f64>> {
    if theta.len() != clusters.p {
        return Err(ReserveError::DimensionMismatch(format!(
            "theta has length {}, clusters carry p = {}",
            theta.len(),
            clusters.p
        )));
    }
    let p = clusters.p;
    let mut omega = DMatrix::zeros(p, p);
    for c in &clusters.clusters {
        let mu = (&c.design * theta).map(|e| fit.spec.link.inverse(e));
        let d = jacobian_from_design(&c.design, &mu, fit.spec.link);
        let mut scaled = d.clone();
        for (r, m) in mu.iter().enumerate() {
            let mut row = scaled.row_mut(r);
            row /= fit.spec.variance.h(*m);
        }
        omega += d.transpose() * scaled;
    }
    Ok(omega)
}

/// QIC, QIC_HH, CIC and CIC_HH of `fit`, using `fit_indep` (the independence
/// fit of the same mean and variance) for the naive information and scale.
///
/// Both penalties use the sandwich of `fit` against the inverse naive
/// covariance `Omega_I / phi_I`; CIC evaluates `Omega_I` at the fit's own
/// estimate, CIC_HH at the independence estimate.
pub fn criteria(fit: &FitResult, fit_indep: &FitResult) -> Result<CriteriaReport> {
    if fit.spec.mean != fit_indep.spec.mean
        || fit.spec.variance != fit_indep.spec.variance
        || fit.spec.link != fit_indep.spec.link
        || fit.clusters != fit_indep.clusters
    {
        return Err(ReserveError::MismatchedModels(format!(
            "{} / {} against {} / {}",
            fit.spec.mean.name(),
            fit.spec.variance.name(),
            fit_indep.spec.mean.name(),
            fit_indep.spec.variance.name()
        )));
    }
    if fit_indep.correlation.kind() != crate::correlation::CorrelationKind::Independence {
        return Err(ReserveError::MismatchedModels("reference fit must use the independence working correlation".into()));
    }
    let phi_i = fit_indep.phi;
    if !(phi_i > 0.0) {
        return Err(ReserveError::InvalidSpec("independence fit has zero dispersion; criteria undefined".into()));
    }
    let omega_own = omega_independence(&fit.clusters, &fit.theta, fit)?;
    let omega_hh = omega_independence(&fit.clusters, &fit_indep.theta, fit)?;
    let cic = (omega_own * &fit.sigma_sandwich).trace() / phi_i;
    let cic_hh = (omega_hh * &fit.sigma_sandwich).trace() / phi_i;
    let q = quasi_likelihood_indep(fit);
    Ok(CriteriaReport { q_indep: q, qic: -2.0 * q + 2.0 * cic, qic_hh: -2.0 * q + 2.0 * cic_hh, cic, cic_hh })
}
