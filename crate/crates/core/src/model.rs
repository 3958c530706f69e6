//! Mean structures, link and variance functions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::correlation::CorrelationKind;
use crate::error::{ReserveError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanStructure {
    /// `log mu = gamma + alpha_i + beta_j`, corner constraints `alpha_1 = beta_1 = 0`.
    ChainLadder,
    /// Dummy-coded Hoerl layout `gamma + alpha_i + j*beta_j + lambda_j*log j`.
    ///
    /// Both development-year blocks are multiples of the same indicator
    /// `delta_{k,j}`, so the design has rank `2n - 1` and cannot be fitted on
    /// its own. It is kept for design-level work; use [`MeanStructure::HoerlCurve`]
    /// to fit a Hoerl curve.
    Hoerl,
    /// Parametric Hoerl curve `gamma + alpha_i + beta*j + lambda*log j`.
    HoerlCurve,
}

impl MeanStructure {
    pub fn name(self) -> &'static str {
        match self {
            MeanStructure::ChainLadder => "chain-ladder",
            MeanStructure::Hoerl => "hoerl",
            MeanStructure::HoerlCurve => "hoerl-curve",
        }
    }
}

/// Builds covariate rows `z_{i,j}` for a triangle of size `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DesignBuilder {
    structure: MeanStructure,
    n: usize,
}

impl DesignBuilder {
    pub fn new(structure: MeanStructure, n: usize) -> Self {
        Self { structure, n }
    }

    pub fn structure(&self) -> MeanStructure {
        self.structure
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Parameter dimension.
    pub fn p(&self) -> usize {
        let n = self.n;
        match self.structure {
            MeanStructure::ChainLadder => 2 * n - 1,
            MeanStructure::Hoerl => 3 * n - 2,
            MeanStructure::HoerlCurve => n + 2,
        }
    }

    pub fn design_row(&self, i: usize, j: usize) -> Result<DVector<f64>> {
        let n = self.n;
        if i == 0 || j == 0 || i > n || j > n {
            return Err(ReserveError::IndexOutOfRange { i, j, n });
        }
        let mut z = DVector::zeros(self.p());
        z[0] = 1.0;
        if i >= 2 {
            z[i - 1] = 1.0;
        }
        match self.structure {
            MeanStructure::ChainLadder => {
                if j >= 2 {
                    z[n + j - 2] = 1.0;
                }
            }
            MeanStructure::Hoerl => {
                if j >= 2 {
                    z[n + j - 2] = j as f64;
                    z[2 * n + j - 3] = (j as f64).ln();
                }
            }
            MeanStructure::HoerlCurve => {
                z[n] = j as f64;
                z[n + 1] = (j as f64).ln();
            }
        }
        Ok(z)
    }

    /// Stacks design rows for the given cells.
    pub fn design_matrix(&self, cells: &[(usize, usize)]) -> Result<DMatrix<f64>> {
        let mut z = DMatrix::zeros(cells.len(), self.p());
        for (r, &(i, j)) in cells.iter().enumerate() {
            z.row_mut(r).copy_from(&self.design_row(i, j)?.transpose());
        }
        Ok(z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkFunction {
    #[default]
    Log,
}

impl LinkFunction {
    pub fn link(self, mu: f64) -> f64 {
        match self {
            LinkFunction::Log => mu.ln(),
        }
    }

    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            LinkFunction::Log => eta.exp(),
        }
    }

    /// `d mu / d eta` at `mu`.
    pub fn mu_eta(self, mu: f64) -> f64 {
        match self {
            LinkFunction::Log => mu,
        }
    }
}

pub const DEFAULT_POWER: f64 = 1.5;

/// Mean-variance relationship `Var X = phi * h(mu)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "power")]
pub enum VarianceFunction {
    Linear,
    Quadratic,
    Power(f64),
}

impl VarianceFunction {
    pub fn power(q: f64) -> Result<Self> {
        if q > 1.0 && q < 2.0 {
            Ok(VarianceFunction::Power(q))
        } else {
            Err(ReserveError::InvalidSpec(format!("power exponent {q} outside (1, 2)")))
        }
    }

    pub fn h(self, mu: f64) -> f64 {
        match self {
            VarianceFunction::Linear => mu,
            VarianceFunction::Quadratic => mu * mu,
            VarianceFunction::Power(q) => mu.powf(q),
        }
    }

    pub fn name(self) -> String {
        match self {
            VarianceFunction::Linear => "linear".into(),
            VarianceFunction::Quadratic => "quadratic".into(),
            VarianceFunction::Power(q) => format!("power({q})"),
        }
    }
}

/// Everything needed to fit one GEE model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSpec {
    pub mean: MeanStructure,
    pub link: LinkFunction,
    pub variance: VarianceFunction,
    pub correlation: CorrelationKind,
}

impl ModelSpec {
    pub fn new(mean: MeanStructure, variance: VarianceFunction, correlation: CorrelationKind) -> Self {
        Self { mean, link: LinkFunction::Log, variance, correlation }
    }

    /// The same model with an independence working correlation.
    pub fn independence(&self) -> Self {
        Self { correlation: CorrelationKind::Independence, ..*self }
    }
}

/// Fitted means `g^{-1}(z' theta)` for the given cells.
pub fn mean(builder: &DesignBuilder, link: LinkFunction, theta: &DVector<f64>, cells: &[(usize, usize)]) -> Result<DVector<f64>> {
    check_theta(builder, theta)?;
    let z = builder.design_matrix(cells)?;
    Ok((z * theta).map(|eta| link.inverse(eta)))
}

/// Rows `d mu_{i,j} / d theta`.
pub fn mean_jacobian(
    builder: &DesignBuilder,
    link: LinkFunction,
    theta: &DVector<f64>,
    cells: &[(usize, usize)],
) -> Result<DMatrix<f64>> {
    check_theta(builder, theta)?;
    let z = builder.design_matrix(cells)?;
    let mu = (&z * theta).map(|eta| link.inverse(eta));
    Ok(jacobian_from_design(&z, &mu, link))
}

pub(crate) fn jacobian_from_design(z: &DMatrix<f64>, mu: &DVector<f64>, link: LinkFunction) -> DMatrix<f64> {
    let mut d = z.clone();
    for (r, mut row) in d.row_iter_mut().enumerate() {
        row *= link.mu_eta(mu[r]);
    }
    d
}

fn check_theta(builder: &DesignBuilder, theta: &DVector<f64>) -> Result<()> {
    if theta.len() != builder.p() {
        return Err(ReserveError::DimensionMismatch(format!(
            "theta has length {}, design expects {}",
            theta.len(),
            builder.p()
        )));
    }
    Ok(())
}

/// All observed cells of a triangle of size `n`, row-major.
pub fn observed_cells(n: usize) -> Vec<(usize, usize)> {
    (1..=n).flat_map(|i| (1..=n + 1 - i).map(move |j| (i, j))).collect()
}

/// Future cells `(i, j)` with `i >= 2` and `j > n + 1 - i`, row-major.
pub fn future_cells(n: usize) -> Vec<(usize, usize)> {
    (2..=n).flat_map(|i| (n + 2 - i..=n).map(move |j| (i, j))).collect()
}
