//! Correlated run-off triangles with known parameters, and a Monte Carlo
//! check of the sandwich covariance and the prediction error estimate.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Gamma, Normal};

use crate::correlation::CorrelationStructure;
use crate::error::{ReserveError, Result};
use crate::gee::{fit, FitOptions};
use crate::linalg::min_eigenvalue;
use crate::model::{DesignBuilder, ModelSpec};
use crate::prediction::{extend_all, mse_prediction, predict_future};
use crate::triangle::{to_clusters, Triangle, TriangleKind};

/// Two-sided 95% standard normal quantile.
const Z_975: f64 = 1.959_963_984_540_054;

/// Keeps copula uniforms away from 0 and 1.
const UNIFORM_EPS: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Marginal {
    #[default]
    Gamma,
    Lognormal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec {
    pub n: usize,
    pub theta: DVector<f64>,
    pub phi: f64,
    /// Mean structure, variance function and working correlation kind; the
    /// same model is fitted to every replication.
    pub model: ModelSpec,
    pub vartheta: Vec<f64>,
    pub marginal: Marginal,
    pub seed: u64,
}

impl SimSpec {
    fn validate(&self) -> Result<(DesignBuilder, CorrelationStructure)> {
        if self.n == 0 {
            return Err(ReserveError::InvalidSpec("n must be positive".into()));
        }
        if !(self.phi > 0.0) || !self.phi.is_finite() {
            return Err(ReserveError::InvalidSpec(format!("phi must be positive, got {}", self.phi)));
        }
        let design = DesignBuilder::new(self.model.mean, self.n);
        if self.theta.len() != design.p() {
            return Err(ReserveError::DimensionMismatch(format!(
                "theta has length {}, the {} design needs {}",
                self.theta.len(),
                self.model.mean.name(),
                design.p()
            )));
        }
        let corr = CorrelationStructure::new(self.model.correlation, self.vartheta.clone(), self.n)?;
        Ok((design, corr))
    }
}

/// A full `n x n` realisation and its observed upper triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedTriangle {
    pub full: DMatrix<f64>,
    pub observed: Triangle,
}

impl SimulatedTriangle {
    /// Realised outstanding amount, the sum over the lower triangle.
    pub fn realized_reserve(&self) -> f64 {
        let n = self.full.nrows();
        (1..n).map(|r| (n - r..n).map(|c| self.full[(r, c)]).sum::<f64>()).sum()
    }
}

struct Sampler {
    mu: DMatrix<f64>,
    chol: DMatrix<f64>,
    phi: f64,
    spec: ModelSpec,
    marginal: Marginal,
    normal: Normal,
}

impl Sampler {
    fn new(spec: &SimSpec) -> Result<Self> {
        let (design, corr) = spec.validate()?;
        let c = corr.build_matrix(spec.n)?;
        let chol = Cholesky::new(c.clone())
            .ok_or_else(|| ReserveError::NotPositiveDefinite { size: spec.n, min_eigenvalue: min_eigenvalue(&c) })?
            .l();
        let mut mu = DMatrix::zeros(spec.n, spec.n);
        for i in 1..=spec.n {
            for j in 1..=spec.n {
                let m = spec.model.link.inverse(design.design_row(i, j)?.dot(&spec.theta));
                if !(m > 0.0) || !m.is_finite() {
                    return Err(ReserveError::NonPositiveMean(m));
                }
                mu[(i - 1, j - 1)] = m;
            }
        }
        let normal = Normal::standard();
        Ok(Self { mu, chol, phi: spec.phi, spec: spec.model, marginal: spec.marginal, normal })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<SimulatedTriangle> {
        let n = self.mu.nrows();
        let mut full = DMatrix::zeros(n, n);
        for r in 0..n {
            let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let g = &self.chol * z;
            for c in 0..n {
                full[(r, c)] = self.quantile(self.mu[(r, c)], g[c])?;
            }
        }
        let rows = (0..n).map(|r| (0..n - r).map(|c| full[(r, c)]).collect()).collect();
        Ok(SimulatedTriangle { full, observed: Triangle::from_rows(rows, TriangleKind::Incremental)? })
    }

    /// Marginal with mean `mu` and variance `phi h(mu)` at normal score `g`.
    fn quantile(&self, mu: f64, g: f64) -> Result<f64> {
        let var = self.phi * self.spec.variance.h(mu);
        match self.marginal {
            Marginal::Gamma => {
                let shape = mu * mu / var;
                let scale = var / mu;
                let u = self.normal.cdf(g).clamp(UNIFORM_EPS, 1.0 - UNIFORM_EPS);
                let unit = Gamma::new(shape, 1.0).map_err(|e| ReserveError::InvalidSpec(e.to_string()))?;
                Ok(unit.inverse_cdf(u) * scale)
            }
            Marginal::Lognormal => {
                let s2 = (1.0 + var / (mu * mu)).ln();
                Ok((mu.ln() - 0.5 * s2 + s2.sqrt() * g).exp())
            }
        }
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One draw from the spec; deterministic in the seed.
pub fn simulate_triangle(spec: &SimSpec) -> Result<SimulatedTriangle> {
    Sampler::new(spec)?.draw(&mut stream_rng(spec.seed, 0))
}

/// Many independent draws from a single stream, for moment checks.
pub fn simulate_many(spec: &SimSpec, count: usize) -> Result<Vec<SimulatedTriangle>> {
    let sampler = Sampler::new(spec)?;
    let mut rng = stream_rng(spec.seed, 0);
    (0..count).map(|_| sampler.draw(&mut rng)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McSummary {
    pub replications: usize,
    /// Replications whose fit failed or did not converge.
    pub failures: usize,
    pub failure_messages: Vec<String>,
    /// Share of 95% Wald intervals from the sandwich covering each true
    /// parameter.
    pub coverage: Vec<f64>,
    /// Mean of `(R_hat - R)^2` over replications.
    pub empirical_mse: f64,
    pub mean_estimated_mse: f64,
    pub median_estimated_mse: f64,
    pub mean_reserve: f64,
    pub mean_realized_reserve: f64,
    /// Mean estimated correlation parameters.
    pub mean_vartheta: Vec<f64>,
}

struct Replication {
    theta: DVector<f64>,
    se: DVector<f64>,
    reserve: f64,
    realized: f64,
    mse: f64,
    vartheta: Vec<f64>,
}

fn replicate(sampler: &Sampler, spec: &SimSpec, design: &DesignBuilder, rep: usize) -> Result<Replication> {
    let sim = sampler.draw(&mut stream_rng(spec.seed, rep as u64 + 1))?;
    let clusters = to_clusters(&sim.observed, design)?;
    let f = fit(&clusters, design, &spec.model, &FitOptions::default())?;
    if !f.converged {
        return Err(ReserveError::NotConverged);
    }
    let future = predict_future(&f, design, false)?;
    let mse = mse_prediction(&f, &future, &extend_all(&f.correlation, spec.n)?)?;
    Ok(Replication {
        se: f.sigma_sandwich.diagonal().map(|v| v.max(0.0).sqrt()),
        theta: f.theta,
        reserve: future.total(),
        realized: sim.realized_reserve(),
        mse: mse.total,
        vartheta: f.correlation.params().to_vec(),
    })
}

/// Fits `spec.model` to `replications` simulated triangles and compares the
/// estimates with the truth. Replication `r` uses RNG stream `r + 1` of the
/// seed, so results do not depend on scheduling.
pub fn mc_validate(spec: &SimSpec, replications: usize) -> Result<McSummary> {
    if replications < 2 {
        return Err(ReserveError::InvalidSpec("at least 2 replications are required".into()));
    }
    let sampler = Sampler::new(spec)?;
    let design = DesignBuilder::new(spec.model.mean, spec.n);
    let results: Vec<Result<Replication>> =
        (0..replications).into_par_iter().map(|r| replicate(&sampler, spec, &design, r)).collect();

    let mut ok = Vec::with_capacity(replications);
    let mut failure_messages = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(rep) => ok.push(rep),
            Err(e) => failure_messages.push(format!("replication {r}: {e}")),
        }
    }
    let failures = failure_messages.len();
    failure_messages.truncate(20);

    let p = spec.theta.len();
    let m = ok.len() as f64;
    let mean_of = |f: &dyn Fn(&Replication) -> f64| if ok.is_empty() { f64::NAN } else { ok.iter().map(f).sum::<f64>() / m };
    let coverage = (0..p)
        .map(|k| mean_of(&|r| f64::from(u8::from((r.theta[k] - spec.theta[k]).abs() <= Z_975 * r.se[k]))))
        .collect();
    let mut mses: Vec<f64> = ok.iter().map(|r| r.mse).collect();
    mses.sort_by(f64::total_cmp);
    let median_estimated_mse = match mses.len() {
        0 => f64::NAN,
        k if k % 2 == 1 => mses[k / 2],
        k => 0.5 * (mses[k / 2 - 1] + mses[k / 2]),
    };
    let q = spec.vartheta.len();
    let mean_vartheta = (0..q).map(|k| mean_of(&|r| r.vartheta.get(k).copied().unwrap_or(0.0))).collect();
    Ok(McSummary {
        replications,
        failures,
        failure_messages,
        coverage,
        empirical_mse: mean_of(&|r| (r.reserve - r.realized).powi(2)),
        mean_estimated_mse: mean_of(&|r| r.mse),
        median_estimated_mse,
        mean_reserve: mean_of(&|r| r.reserve),
        mean_realized_reserve: mean_of(&|r| r.realized),
        mean_vartheta,
    })
}
