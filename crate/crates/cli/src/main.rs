use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use gee_reserve::correlation::CorrelationKind;
use gee_reserve::fixtures::taylor_ashe;
use gee_reserve::gee::FitOptions;
use gee_reserve::model::{MeanStructure, ModelSpec, VarianceFunction, DEFAULT_POWER};
use gee_reserve::pipeline::{compare, run_model, standard_models, RunOptions};
use gee_reserve::report;
use gee_reserve::simulate::{mc_validate, Marginal, SimSpec};
use gee_reserve::triangle::{CsvFormat, Triangle, TriangleKind};

#[derive(Parser)]
#[command(name = "gee-reserve", version, about = "Claims reserves from run-off triangles with GEE")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model and report reserves, prediction error and criteria.
    Fit(FitArgs),
    /// Fit independence, exchangeable and AR(1) with linear and quadratic
    /// variance side by side.
    Compare(CompareArgs),
    /// Monte Carlo check of the estimators on simulated triangles.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Wide,
    Long,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Inc,
    Cum,
}

#[derive(Clone, Copy, ValueEnum)]
enum MeanArg {
    ChainLadder,
    /// Hoerl curve with one slope and one log-slope per development year.
    Hoerl,
    /// Hoerl curve with a single slope and log-slope.
    HoerlCurve,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum VarianceArg {
    Linear,
    Quadratic,
    Power,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum OutArg {
    Table,
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum MarginalArg {
    Gamma,
    Lognormal,
}

#[derive(Args)]
struct InputArgs {
    #[arg(long)]
    triangle: PathBuf,
    #[arg(long, value_enum, default_value = "wide")]
    format: FormatArg,
    #[arg(long, value_enum, default_value = "inc")]
    kind: KindArg,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "chain-ladder")]
    mean: MeanArg,
    #[arg(long, value_enum, default_value = "linear")]
    variance: VarianceArg,
    /// Exponent of the power variance function, in (1, 2).
    #[arg(long)]
    power: Option<f64>,
    /// ind, exch, ar1, mdep (with --m), mdep:M or unstr.
    #[arg(long, default_value = "ind")]
    corr: String,
    #[arg(long)]
    m: Option<usize>,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, value_enum, default_value = "table")]
    out: OutArg,
    /// Skip the prediction error estimate.
    #[arg(long)]
    no_mse: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_enum, default_value = "chain-ladder")]
    mean: MeanArg,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, value_enum, default_value = "table")]
    out: OutArg,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 500)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    model: ModelArgs,
    /// True correlation parameters, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    vartheta: Vec<f64>,
    /// JSON array of true mean parameters, or an object with `theta` and
    /// optionally `phi` (such as the output of `fit --out json`).
    #[arg(long)]
    theta_file: Option<PathBuf>,
    #[arg(long)]
    phi: Option<f64>,
    #[arg(long, value_enum, default_value = "gamma")]
    marginal: MarginalArg,
    #[arg(long, value_enum, default_value = "json")]
    out: OutArg,
}

impl InputArgs {
    fn load(&self) -> Result<Triangle> {
        let src = std::fs::read_to_string(&self.triangle)
            .with_context(|| format!("cannot read {}", self.triangle.display()))?;
        let format = match self.format {
            FormatArg::Wide => CsvFormat::Wide,
            FormatArg::Long => CsvFormat::Long,
        };
        let kind = match self.kind {
            KindArg::Inc => TriangleKind::Incremental,
            KindArg::Cum => TriangleKind::Cumulative,
        };
        Triangle::parse(&src, format, kind).with_context(|| format!("cannot parse {}", self.triangle.display()))
    }
}

impl MeanArg {
    fn structure(self) -> MeanStructure {
        match self {
            MeanArg::ChainLadder => MeanStructure::ChainLadder,
            MeanArg::Hoerl => MeanStructure::Hoerl,
            MeanArg::HoerlCurve => MeanStructure::HoerlCurve,
        }
    }
}

fn parse_corr(corr: &str, m: Option<usize>) -> Result<CorrelationKind> {
    let lower = corr.trim().to_ascii_lowercase();
    let kind = match lower.as_str() {
        "ind" | "independence" => CorrelationKind::Independence,
        "exch" | "exchangeable" => CorrelationKind::Exchangeable,
        "ar1" => CorrelationKind::Ar1,
        "unstr" | "unstructured" => CorrelationKind::Unstructured,
        "mdep" => match m {
            Some(m) if m >= 1 => return Ok(CorrelationKind::MDependent(m)),
            _ => bail!("--corr mdep needs --m with m >= 1"),
        },
        other => match other.strip_prefix("mdep:") {
            Some(v) => {
                let parsed: usize = v.parse().with_context(|| format!("bad m in `{corr}`"))?;
                if parsed == 0 || m.is_some_and(|k| k != parsed) {
                    bail!("inconsistent m in `{corr}`");
                }
                return Ok(CorrelationKind::MDependent(parsed));
            }
            None => bail!("unknown correlation `{corr}` (ind, exch, ar1, mdep, unstr)"),
        },
    };
    if m.is_some() {
        bail!("--m is only valid with --corr mdep");
    }
    Ok(kind)
}

impl ModelArgs {
    fn spec(&self) -> Result<ModelSpec> {
        let variance = match (self.variance, self.power) {
            (VarianceArg::Linear, None) => VarianceFunction::Linear,
            (VarianceArg::Quadratic, None) => VarianceFunction::Quadratic,
            (VarianceArg::Power, q) => VarianceFunction::power(q.unwrap_or(DEFAULT_POWER))?,
            (_, Some(_)) => bail!("--power is only valid with --variance power"),
        };
        Ok(ModelSpec::new(self.mean.structure(), variance, parse_corr(&self.corr, self.m)?))
    }
}

impl SolverArgs {
    fn options(&self) -> Result<FitOptions> {
        let mut opts = FitOptions::default();
        if let Some(t) = self.tol {
            if !(t > 0.0) {
                bail!("--tol must be positive");
            }
            opts.tol = t;
        }
        if let Some(k) = self.max_iter {
            if k == 0 {
                bail!("--max-iter must be positive");
            }
            opts.max_iter = k;
        }
        Ok(opts)
    }
}

fn cmd_fit(args: &FitArgs) -> Result<u8> {
    let triangle = args.input.load()?;
    let spec = args.model.spec()?;
    let opts = RunOptions { fit: args.solver.options()?, skip_mse: args.no_mse };
    let run = run_model(&triangle, &spec, &opts)?;
    let text = match args.out {
        OutArg::Table => report::run_table(&run),
        OutArg::Json => report::to_canonical_string(&report::run_json(&run)),
        OutArg::Csv => report::run_csv(&run),
    };
    print!("{text}");
    if run.fit.converged {
        Ok(0)
    } else {
        eprintln!("warning: fit did not converge");
        Ok(2)
    }
}

fn cmd_compare(args: &CompareArgs) -> Result<u8> {
    let triangle = args.input.load()?;
    let specs = standard_models(args.mean.structure());
    let opts = RunOptions { fit: args.solver.options()?, skip_mse: false };
    let runs = compare(&triangle, &specs, &opts);
    let text = match args.out {
        OutArg::Table => report::compare_table(&specs, &runs),
        OutArg::Json => report::to_canonical_string(&report::compare_json(&specs, &runs)),
        OutArg::Csv => report::compare_csv(&specs, &runs),
    };
    print!("{text}");
    let clean = runs.iter().all(|r| r.as_ref().is_ok_and(|run| run.fit.converged));
    Ok(if clean { 0 } else { 2 })
}

fn read_theta_file(path: &Path) -> Result<(Vec<f64>, Option<f64>)> {
    let src = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let v: Value = serde_json::from_str(&src).with_context(|| format!("{} is not JSON", path.display()))?;
    let numbers = |a: &Value| -> Result<Vec<f64>> {
        a.as_array()
            .context("theta must be an array of numbers")?
            .iter()
            .map(|x| x.as_f64().context("theta must be an array of numbers"))
            .collect()
    };
    match &v {
        Value::Array(_) => Ok((numbers(&v)?, None)),
        Value::Object(o) => {
            let theta = numbers(o.get("theta").context("missing `theta`")?)?;
            Ok((theta, o.get("phi").and_then(Value::as_f64)))
        }
        _ => bail!("{} must hold an array or an object with `theta`", path.display()),
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<u8> {
    let model = args.model.spec()?;
    let (theta, file_phi) = match &args.theta_file {
        Some(p) => read_theta_file(p)?,
        None => {
            // Default truth: the independence fit to the Taylor and Ashe data.
            if args.n != 10 {
                bail!("--theta-file is required unless --n is 10");
            }
            let run = run_model(&taylor_ashe(), &model.independence(), &RunOptions { skip_mse: true, ..Default::default() })?;
            (run.fit.theta.iter().copied().collect(), Some(run.fit.phi))
        }
    };
    let phi = args.phi.or(file_phi).context("--phi is required when the theta file carries no phi")?;
    let vartheta = if args.vartheta.is_empty() {
        vec![0.0; model.correlation.dimension(args.n)]
    } else {
        args.vartheta.clone()
    };
    let spec = SimSpec {
        n: args.n,
        theta: theta.clone().into(),
        phi,
        model,
        vartheta: vartheta.clone(),
        marginal: match args.marginal {
            MarginalArg::Gamma => Marginal::Gamma,
            MarginalArg::Lognormal => Marginal::Lognormal,
        },
        seed: args.seed,
    };
    let summary = mc_validate(&spec, args.reps)?;
    let out = json!({
        "spec": {
            "n": spec.n,
            "theta": theta,
            "phi": spec.phi,
            "model": report::model_json(&spec.model),
            "vartheta": vartheta,
            "marginal": spec.marginal,
            "seed": spec.seed,
        },
        "summary": summary,
    });
    match args.out {
        OutArg::Json => print!("{}", report::to_canonical_string(&out)),
        OutArg::Table | OutArg::Csv => {
            println!("replications {}  failures {}", summary.replications, summary.failures);
            println!("coverage {:?}", summary.coverage.iter().map(|c| format!("{c:.3}")).collect::<Vec<_>>());
            println!(
                "empirical mse {:.6e}  median estimated {:.6e}  mean estimated {:.6e}",
                summary.empirical_mse, summary.median_estimated_mse, summary.mean_estimated_mse
            );
            println!("mean vartheta {:?}", summary.mean_vartheta);
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
