//! Quasi-score solver with alternating moment re-estimation of the
//! dispersion and working correlation, plus the model-based and sandwich
//! covariance estimates of the mean parameters.
//!
//! Internally every cluster contributes through the unit-scale weight
//! `W_i = A_i^{-1/2} C_i^{-1} A_i^{-1/2}`, so that `V_i^{-1} = W_i / phi`.
//! The Fisher-scoring step `B^{-1} u` does not depend on `phi`, and neither
//! does the sandwich `B^{-1} S B^{-1}`; only the model-based covariance
//! `B^{-1} = phi (sum D' W D)^{-1}` carries the dispersion.

use nalgebra::{DMatrix, DVector};

use crate::correlation::{
    estimate_dispersion, estimate_params, guard_singularity, pearson_residuals, CorrelationKind, CorrelationStructure,
    MomentOptions,
};
use crate::error::{ReserveError, Result};
use crate::linalg::{inverse_with_condition, min_eigenvalue, symmetrize};
use crate::model::{jacobian_from_design, DesignBuilder, ModelSpec};
use crate::triangle::{Cluster, ClusterSet};

/// Condition estimate of `B` above which the system counts as singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Stop when `max |delta theta| < tol`.
    pub tol: f64,
    pub max_iter: usize,
    pub theta_init: Option<DVector<f64>>,
    pub moments: MomentOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 200, theta_init: None, moments: MomentOptions::default() }
    }
}

/// Per-cluster quantities at a given `theta`.
#[derive(Debug, Clone)]
pub struct ClusterTerms {
    pub mu: DVector<f64>,
    /// `D_i = d mu_i / d theta`.
    pub jacobian: DMatrix<f64>,
    /// Diagonal of `A_i`, i.e. `h(mu_{i,j})`.
    pub variance: DVector<f64>,
    /// `W_i = A^{-1/2} C^{-1} A^{-1/2}`.
    pub weight: DMatrix<f64>,
    pub residual: DVector<f64>,
}

impl ClusterTerms {
    fn new(cluster: &Cluster, theta: &DVector<f64>, spec: &ModelSpec, corr: &CorrelationStructure) -> Result<Self> {
        let eta = &cluster.design * theta;
        let mu = eta.map(|e| spec.link.inverse(e));
        if mu.iter().any(|m| !m.is_finite() || *m <= 0.0) {
            return Err(ReserveError::DivergedFit { iteration: 0 });
        }
        let jacobian = jacobian_from_design(&cluster.design, &mu, spec.link);
        let variance = mu.map(|m| spec.variance.h(m));
        let c = corr.build_matrix_unchecked(cluster.size())?;
        let c_inv = c
            .try_inverse()
            .filter(|m| m.iter().all(|v| v.is_finite()))
            .ok_or(ReserveError::SingularWorkingCovariance { cluster: cluster.accident_year })?;
        let scale = variance.map(|v| 1.0 / v.sqrt());
        let weight = DMatrix::from_fn(c_inv.nrows(), c_inv.ncols(), |r, k| scale[r] * c_inv[(r, k)] * scale[k]);
        let residual = &cluster.values - &mu;
        Ok(Self { mu, jacobian, variance, weight, residual })
    }

    /// `D' W (X - mu)`.
    fn unit_score(&self) -> DVector<f64> {
        self.jacobian.transpose() * (&self.weight * &self.residual)
    }

    /// `D' W D`.
    fn unit_information(&self) -> DMatrix<f64> {
        self.jacobian.transpose() * &self.weight * &self.jacobian
    }

    /// `V_i^{-1}` for dispersion `phi`.
    pub fn v_inverse(&self, phi: f64) -> DMatrix<f64> {
        &self.weight / phi
    }
}

pub fn cluster_terms(
    clusters: &ClusterSet,
    theta: &DVector<f64>,
    spec: &ModelSpec,
    corr: &CorrelationStructure,
) -> Result<Vec<ClusterTerms>> {
    if theta.len() != clusters.p {
        return Err(ReserveError::DimensionMismatch(format!(
            "theta has length {}, clusters carry p = {}",
            theta.len(),
            clusters.p
        )));
    }
    clusters.clusters.iter().map(|c| ClusterTerms::new(c, theta, spec, corr)).collect()
}

/// `u(theta) = sum D_i' V_i^{-1} (X_i - mu_i)`.
pub fn quasi_score(
    clusters: &ClusterSet,
    theta: &DVector<f64>,
    phi: f64,
    corr: &CorrelationStructure,
    spec: &ModelSpec,
) -> Result<DVector<f64>> {
    let terms = cluster_terms(clusters, theta, spec, corr)?;
    Ok(unit_score(&terms) / phi)
}

/// `B(theta) = sum D_i' V_i^{-1} D_i`.
pub fn information(
    clusters: &ClusterSet,
    theta: &DVector<f64>,
    phi: f64,
    corr: &CorrelationStructure,
    spec: &ModelSpec,
) -> Result<DMatrix<f64>> {
    let terms = cluster_terms(clusters, theta, spec, corr)?;
    Ok(unit_information(&terms, clusters.p) / phi)
}

fn unit_score(terms: &[ClusterTerms]) -> DVector<f64> {
    terms.iter().fold(DVector::zeros(terms[0].jacobian.ncols()), |acc, t| acc + t.unit_score())
}

pub(crate) fn unit_information(terms: &[ClusterTerms], p: usize) -> DMatrix<f64> {
    let b = terms.iter().fold(DMatrix::zeros(p, p), |acc, t| acc + t.unit_information());
    symmetrize(&b)
}

fn unit_meat(terms: &[ClusterTerms], p: usize) -> DMatrix<f64> {
    terms.iter().fold(DMatrix::zeros(p, p), |acc, t| {
        let g = t.unit_score();
        acc + &g * g.transpose()
    })
}

pub(crate) fn invert_b(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match inverse_with_condition(b) {
        Some((inv, cond)) if cond <= MAX_CONDITION => Ok(symmetrize(&inv)),
        Some((_, cond)) => Err(ReserveError::SingularB { condition: cond }),
        None => Err(ReserveError::SingularB { condition: f64::INFINITY }),
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub design: DesignBuilder,
    pub clusters: ClusterSet,
    pub theta: DVector<f64>,
    pub phi: f64,
    pub correlation: CorrelationStructure,
    pub sigma_sandwich: DMatrix<f64>,
    pub sigma_model: DMatrix<f64>,
    pub fitted: Vec<DVector<f64>>,
    pub residuals: Vec<DVector<f64>>,
    pub iterations: usize,
    pub converged: bool,
    /// `max |u(theta_hat)|`.
    pub score_norm: f64,
    /// Condition estimate of `B` at `theta_hat`.
    pub condition: f64,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn cluster_terms(&self) -> Result<Vec<ClusterTerms>> {
        cluster_terms(&self.clusters, &self.theta, &self.spec, &self.correlation)
    }

    /// `V_i = phi A^{1/2} C_i A^{1/2}` for every cluster.
    pub fn working_covariances(&self) -> Result<Vec<DMatrix<f64>>> {
        self.clusters
            .clusters
            .iter()
            .zip(&self.fitted)
            .map(|(c, mu)| {
                let corr = self.correlation.build_matrix_unchecked(c.size())?;
                let sd = mu.map(|m| self.spec.variance.h(m).sqrt());
                Ok(DMatrix::from_fn(c.size(), c.size(), |r, k| self.phi * sd[r] * corr[(r, k)] * sd[k]))
            })
            .collect()
    }

    pub fn observations(&self) -> usize {
        self.clusters.observations()
    }
}

struct Nuisance {
    phi: f64,
    corr: CorrelationStructure,
    residuals: Vec<DVector<f64>>,
}

fn estimate_nuisance(
    clusters: &ClusterSet,
    fitted: &[DVector<f64>],
    spec: &ModelSpec,
    options: &FitOptions,
    warnings: &mut Vec<String>,
) -> Result<Nuisance> {
    let residuals = pearson_residuals(clusters, fitted, spec.variance)?;
    let disp = estimate_dispersion(&residuals, clusters.p, options.moments)?;
    if let Some(w) = disp.warning {
        push_unique(warnings, w);
    }
    let max_size = clusters.sizes().into_iter().max().unwrap_or(1);
    let corr = if spec.correlation == CorrelationKind::Independence || disp.phi == 0.0 {
        CorrelationStructure::zero(spec.correlation, max_size)?
    } else {
        let est = estimate_params(&residuals, spec.correlation, disp.phi, clusters.p, options.moments)?;
        for w in est.warnings {
            push_unique(warnings, w);
        }
        let corr = CorrelationStructure::new(spec.correlation, est.params, max_size)?;
        match guard_singularity(&corr, &clusters.sizes())? {
            Some((guarded, shrink)) => {
                push_unique(
                    warnings,
                    format!("working correlation nearly singular for some cluster size; parameters shrunk by {shrink:.1e}"),
                );
                guarded
            }
            None => corr,
        }
    };
    Ok(Nuisance { phi: disp.phi, corr, residuals })
}

fn push_unique(warnings: &mut Vec<String>, w: String) {
    if !warnings.contains(&w) {
        warnings.push(w);
    }
}

fn fitted_means(clusters: &ClusterSet, theta: &DVector<f64>, spec: &ModelSpec, iteration: usize) -> Result<Vec<DVector<f64>>> {
    clusters
        .clusters
        .iter()
        .map(|c| {
            let mu = (&c.design * theta).map(|e| spec.link.inverse(e));
            if mu.iter().all(|m| m.is_finite() && *m > 0.0) {
                Ok(mu)
            } else {
                Err(ReserveError::DivergedFit { iteration })
            }
        })
        .collect()
}

/// Independence GLM by iteratively reweighted least squares; the starting
/// point of the GEE iteration.
pub fn glm_start(clusters: &ClusterSet, spec: &ModelSpec) -> Result<DVector<f64>> {
    let n_obs = clusters.observations();
    let p = clusters.p;
    let mut z = DMatrix::zeros(n_obs, p);
    let mut x = DVector::zeros(n_obs);
    let mut row = 0;
    for c in &clusters.clusters {
        for j in 0..c.size() {
            z.row_mut(row).copy_from(&c.design.row(j));
            x[row] = c.values[j];
            row += 1;
        }
    }
    let mean = x.mean();
    let floor = 1e-3 * mean.abs().max(f64::MIN_POSITIVE);
    let mut eta = x.map(|v| spec.link.link(v.max(floor)));
    let mut theta = DVector::zeros(p);
    for iteration in 0..100 {
        let mu = eta.map(|e| spec.link.inverse(e));
        let mut zw = z.clone();
        let mut wz = DVector::zeros(n_obs);
        for r in 0..n_obs {
            let d = spec.link.mu_eta(mu[r]);
            let w = d * d / spec.variance.h(mu[r]);
            let working = eta[r] + (x[r] - mu[r]) / d;
            let mut zr = zw.row_mut(r);
            zr *= w;
            wz[r] = w * working;
        }
        let lhs = z.transpose() * &zw;
        let rhs = z.transpose() * wz;
        let next = invert_b(&symmetrize(&lhs))? * rhs;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(ReserveError::DivergedFit { iteration });
        }
        let change = (&next - &theta).amax();
        theta = next;
        eta = &z * &theta;
        if change < 1e-12 {
            break;
        }
    }
    Ok(theta)
}

pub fn fit(clusters: &ClusterSet, design: &DesignBuilder, spec: &ModelSpec, options: &FitOptions) -> Result<FitResult> {
    if design.p() != clusters.p || design.structure() != spec.mean {
        return Err(ReserveError::DimensionMismatch("design does not match clusters or model".into()));
    }
    let mut warnings = Vec::new();
    let mut theta = match &options.theta_init {
        Some(t) if t.len() == clusters.p => t.clone(),
        Some(t) => {
            return Err(ReserveError::DimensionMismatch(format!(
                "theta_init has length {}, expected {}",
                t.len(),
                clusters.p
            )))
        }
        None => glm_start(clusters, spec)?,
    };

    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iter {
        iterations += 1;
        let fitted = fitted_means(clusters, &theta, spec, iterations)?;
        let nuisance = estimate_nuisance(clusters, &fitted, spec, options, &mut warnings)?;
        let terms = cluster_terms(clusters, &theta, spec, &nuisance.corr)?;
        let b_inv = invert_b(&unit_information(&terms, clusters.p))?;
        let step = b_inv * unit_score(&terms);
        if step.iter().any(|v| !v.is_finite()) {
            return Err(ReserveError::DivergedFit { iteration: iterations });
        }
        theta += &step;
        if step.amax() < options.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        warnings.push(format!("no convergence after {iterations} iterations"));
    }
    log::debug!("{} / {} / {}: {iterations} iterations, converged {converged}", spec.mean.name(), spec.variance.name(), spec.correlation);

    let fitted = fitted_means(clusters, &theta, spec, iterations)?;
    let nuisance = estimate_nuisance(clusters, &fitted, spec, options, &mut warnings)?;
    let terms = cluster_terms(clusters, &theta, spec, &nuisance.corr)?;
    let b_unit = unit_information(&terms, clusters.p);
    let (b_unit_inv, condition) =
        inverse_with_condition(&b_unit).ok_or(ReserveError::SingularB { condition: f64::INFINITY })?;
    if condition > MAX_CONDITION {
        return Err(ReserveError::SingularB { condition });
    }
    let b_unit_inv = symmetrize(&b_unit_inv);
    let sigma_model = &b_unit_inv * nuisance.phi;
    let sigma_sandwich = symmetrize(&(&b_unit_inv * unit_meat(&terms, clusters.p) * &b_unit_inv));
    let score = unit_score(&terms);
    let score_norm = if nuisance.phi > 0.0 { (score / nuisance.phi).amax() } else { 0.0 };

    let sizes = clusters.sizes();
    let mut seen = Vec::new();
    for &k in &sizes {
        if k < 2 || seen.contains(&k) {
            continue;
        }
        seen.push(k);
        let min = min_eigenvalue(&nuisance.corr.build_matrix_unchecked(k)?);
        if min <= crate::correlation::PD_TOLERANCE {
            warnings.push(format!(
                "working correlation for clusters of size {k} is not positive definite (smallest eigenvalue {min:.3e})"
            ));
        }
    }

    Ok(FitResult {
        spec: *spec,
        design: *design,
        clusters: clusters.clone(),
        theta,
        phi: nuisance.phi,
        correlation: nuisance.corr,
        sigma_sandwich,
        sigma_model,
        fitted,
        residuals: nuisance.residuals,
        iterations,
        converged,
        score_norm,
        condition,
        warnings,
    })
}

/// `B^{-1} S B^{-1}` at the fit's estimates, symmetrized.
pub fn sandwich(fit: &FitResult) -> Result<DMatrix<f64>> {
    let terms = fit.cluster_terms()?;
    let b_inv = invert_b(&unit_information(&terms, fit.clusters.p))?;
    Ok(symmetrize(&(&b_inv * unit_meat(&terms, fit.clusters.p) * &b_inv)))
}

/// `B(theta_hat)^{-1}`.
pub fn model_based_cov(fit: &FitResult) -> Result<DMatrix<f64>> {
    let terms = fit.cluster_terms()?;
    Ok(invert_b(&unit_information(&terms, fit.clusters.p))? * fit.phi)
}
