//! End-to-end runs: triangle to fitted model, predictions, prediction error
//! and selection criteria, for one model or the standard six-model sweep.

use rayon::prelude::*;

use crate::correlation::CorrelationKind;
use crate::error::{ReserveError, Result};
use crate::gee::{fit, FitOptions, FitResult};
use crate::model::{DesignBuilder, MeanStructure, ModelSpec, VarianceFunction};
use crate::prediction::{extend_all, mse_prediction, predict_future, reserve_report, ReserveReport};
use crate::selection::criteria;
use crate::triangle::{to_clusters, Triangle};

/// Environment variable capping the number of sweep threads; `0` runs the
/// sweep sequentially.
pub const THREADS_ENV: &str = "GEE_RESERVE_THREADS";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunOptions {
    pub fit: FitOptions,
    /// Skip the prediction error (required for unstructured correlation).
    pub skip_mse: bool,
}

#[derive(Debug, Clone)]
pub struct ModelRun {
    pub fit: FitResult,
    pub report: ReserveReport,
}

pub fn run_model(triangle: &Triangle, spec: &ModelSpec, options: &RunOptions) -> Result<ModelRun> {
    let incremental = triangle.to_incremental();
    let design = DesignBuilder::new(spec.mean, incremental.n());
    let clusters = to_clusters(&incremental, &design)?;
    if !options.skip_mse && !spec.correlation.is_translation_symmetric() {
        return Err(ReserveError::UnsupportedStructureForPrediction(format!(
            "{} correlation has no prediction error estimate; rerun without it",
            spec.correlation
        )));
    }
    let fitted = fit(&clusters, &design, spec, &options.fit)?;
    let mut extra_warnings = Vec::new();

    let indep = if spec.correlation == CorrelationKind::Independence {
        Ok(fitted.clone())
    } else {
        fit(&clusters, &design, &spec.independence(), &options.fit)
    };
    let crit = match indep.and_then(|fi| criteria(&fitted, &fi)) {
        Ok(c) => Some(c),
        Err(e) => {
            extra_warnings.push(format!("selection criteria unavailable: {e}"));
            None
        }
    };

    let future = predict_future(&fitted, &design, true)?;
    let mse = if options.skip_mse {
        None
    } else {
        let ext = extend_all(&fitted.correlation, incremental.n())?;
        Some(mse_prediction(&fitted, &future, &ext)?)
    };
    let mut report = reserve_report(&fitted, &future, mse.as_ref(), crit);
    report.warnings.extend(extra_warnings);
    Ok(ModelRun { fit: fitted, report })
}

/// The six models of the standard comparison, in report order.
pub fn standard_models(mean: MeanStructure) -> Vec<ModelSpec> {
    let mut specs = Vec::with_capacity(6);
    for corr in [CorrelationKind::Independence, CorrelationKind::Exchangeable, CorrelationKind::Ar1] {
        for var in [VarianceFunction::Linear, VarianceFunction::Quadratic] {
            specs.push(ModelSpec::new(mean, var, corr));
        }
    }
    specs
}

/// Thread count from the environment; `None` means the rayon default.
pub fn sweep_threads() -> Option<usize> {
    std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok())
}

/// Fits every model of `specs`, concurrently unless the thread cap is 0.
/// Results come back in the order of `specs`.
pub fn compare(triangle: &Triangle, specs: &[ModelSpec], options: &RunOptions) -> Vec<Result<ModelRun>> {
    let run_all = || specs.par_iter().map(|s| run_model(triangle, s, options)).collect::<Vec<_>>();
    match sweep_threads() {
        Some(0) => specs.iter().map(|s| run_model(triangle, s, options)).collect(),
        Some(k) => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
            Ok(pool) => pool.install(run_all),
            Err(_) => run_all(),
        },
        None => run_all(),
    }
}
