//! Rendering of fit results as canonical JSON, aligned text tables and CSV.

use serde_json::{json, Map, Value};

use crate::error::ReserveError;
use crate::model::{ModelSpec, VarianceFunction};
use crate::pipeline::ModelRun;
use crate::prediction::YearReserve;

/// Significant digits kept for every number in JSON output.
pub const JSON_DIGITS: usize = 10;

/// Rounds to [`JSON_DIGITS`] significant digits; non-finite values map to
/// `null`.
pub fn round_sig(x: f64) -> Value {
    if !x.is_finite() {
        return Value::Null;
    }
    let rounded: f64 = format!("{:.*e}", JSON_DIGITS - 1, x).parse().unwrap_or(x);
    serde_json::Number::from_f64(rounded).map_or(Value::Null, Value::Number)
}

/// Applies [`round_sig`] to every float in the tree. Integers stay exact.
pub fn canonicalize(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => round_sig(n.as_f64().unwrap_or(f64::NAN)),
        Value::Array(a) => Value::Array(a.into_iter().map(canonicalize).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, canonicalize(v))).collect()),
        other => other,
    }
}

/// Pretty JSON with sorted keys and rounded floats; parsing and re-emitting
/// the output reproduces it byte for byte.
pub fn to_canonical_string(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(&canonicalize(v.clone())).unwrap_or_default();
    s.push('\n');
    s
}

fn opt(x: Option<f64>) -> Value {
    x.map_or(Value::Null, |v| json!(v))
}

pub fn model_json(spec: &ModelSpec) -> Value {
    let mut m = Map::new();
    m.insert("mean".into(), json!(spec.mean.name()));
    m.insert("link".into(), json!("log"));
    let (variance, power) = match spec.variance {
        VarianceFunction::Linear => ("linear", None),
        VarianceFunction::Quadratic => ("quadratic", None),
        VarianceFunction::Power(q) => ("power", Some(q)),
    };
    m.insert("variance".into(), json!(variance));
    if let Some(q) = power {
        m.insert("power".into(), json!(q));
    }
    m.insert("correlation".into(), json!(spec.correlation.short_name()));
    Value::Object(m)
}

fn year_json(y: &YearReserve) -> Value {
    json!({ "i": y.i, "reserve": y.reserve, "mse": opt(y.mse), "rmse_pct": opt(y.rmse_pct) })
}

pub fn run_json(run: &ModelRun) -> Value {
    let f = &run.fit;
    let r = &run.report;
    let criteria = r.criteria.map_or(Value::Null, |c| {
        json!({ "q_indep": c.q_indep, "qic": c.qic, "qic_hh": c.qic_hh, "cic": c.cic, "cic_hh": c.cic_hh })
    });
    json!({
        "model": model_json(&r.spec),
        "convergence": {
            "converged": f.converged,
            "iterations": f.iterations,
            "score_norm": f.score_norm,
            "condition": f.condition,
        },
        "theta": f.theta.iter().copied().collect::<Vec<_>>(),
        "phi": f.phi,
        "vartheta": f.correlation.params(),
        "reserves": r.years.iter().map(year_json).collect::<Vec<_>>(),
        "total": { "reserve": r.total.reserve, "mse": opt(r.total.mse), "rmse_pct": opt(r.total.rmse_pct) },
        "criteria": criteria,
        "warnings": r.warnings,
    })
}

pub fn compare_json(specs: &[ModelSpec], runs: &[Result<ModelRun, ReserveError>]) -> Value {
    let models: Vec<Value> = specs
        .iter()
        .zip(runs)
        .map(|(s, r)| match r {
            Ok(run) => run_json(run),
            Err(e) => json!({ "model": model_json(s), "error": e.to_string() }),
        })
        .collect();
    json!({ "models": models })
}

/// Integer with thousands separators.
pub fn group_thousands(x: f64) -> String {
    if !x.is_finite() {
        return "-".into();
    }
    let v = x.round() as i64;
    let digits = v.unsigned_abs().to_string();
    let mut out = String::new();
    for (k, ch) in digits.chars().enumerate() {
        if k > 0 && (digits.len() - k) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    if v < 0 {
        format!("-{out}")
    } else {
        out
    }
}

fn pct(x: Option<f64>, decimals: usize) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.decimals$}"))
}

fn label(spec: &ModelSpec) -> String {
    format!("{} {}", spec.correlation.short_name(), spec.variance.name())
}

/// Reserves in thousands and prediction error in percent of the reserve.
pub fn run_table(run: &ModelRun) -> String {
    let r = &run.report;
    let mut out = format!("model: {} / {} / {}\n", r.spec.mean.name(), r.spec.variance.name(), r.spec.correlation);
    out.push_str(&format!("{:<8}{:>12}{:>10}\n", "year", "reserve", "rmse %"));
    for y in r.years.iter().filter(|y| y.i >= 2) {
        out.push_str(&format!("{:<8}{:>12}{:>10}\n", format!("i={}", y.i), group_thousands(y.reserve / 1000.0), pct(y.rmse_pct, 0)));
    }
    out.push_str(&format!("{:<8}{:>12}{:>10}\n", "Total", group_thousands(r.total.reserve / 1000.0), pct(r.total.rmse_pct, 2)));
    if let Some(c) = r.criteria {
        out.push_str(&format!("QIC_HH {:.2}  CIC_HH {:.2}  QIC {:.2}  CIC {:.2}\n", c.qic_hh, c.cic_hh, c.qic, c.cic));
    }
    out.push_str(&format!(
        "phi {:.6}  vartheta {:?}  iterations {}{}\n",
        run.fit.phi,
        run.fit.correlation.params(),
        run.fit.iterations,
        if run.fit.converged { "" } else { " (not converged)" }
    ));
    for w in &r.warnings {
        out.push_str(&format!("warning: {w}\n"));
    }
    out
}

/// Side-by-side comparison of several models.
pub fn compare_table(specs: &[ModelSpec], runs: &[Result<ModelRun, ReserveError>]) -> String {
    const W: usize = 16;
    let mut out = format!("{:<8}", "");
    for s in specs {
        out.push_str(&format!("{:>W$}", label(s)));
    }
    out.push('\n');
    let n = runs.iter().flatten().map(|r| r.report.years.len()).max().unwrap_or(0);
    let cell = |r: &Result<ModelRun, ReserveError>, f: &dyn Fn(&ModelRun) -> String| match r {
        Ok(run) => f(run),
        Err(_) => "failed".into(),
    };
    let section = |title: &str, out: &mut String, f: &dyn Fn(&ModelRun, usize) -> String, total: &dyn Fn(&ModelRun) -> String| {
        out.push_str(title);
        out.push('\n');
        for i in 2..=n {
            out.push_str(&format!("{:<8}", format!("i={i}")));
            for r in runs {
                out.push_str(&format!("{:>W$}", cell(r, &|run| f(run, i))));
            }
            out.push('\n');
        }
        out.push_str(&format!("{:<8}", "Total"));
        for r in runs {
            out.push_str(&format!("{:>W$}", cell(r, total)));
        }
        out.push('\n');
    };
    let year = |run: &ModelRun, i: usize| run.report.years.iter().find(|y| y.i == i).copied();
    section(
        "reserves (thousands)",
        &mut out,
        &|run, i| year(run, i).map_or("-".into(), |y| group_thousands(y.reserve / 1000.0)),
        &|run| group_thousands(run.report.total.reserve / 1000.0),
    );
    section(
        "rmse (% of reserve)",
        &mut out,
        &|run, i| year(run, i).map_or("-".into(), |y| pct(y.rmse_pct, 0)),
        &|run| pct(run.report.total.rmse_pct, 2),
    );
    for (name, get) in [
        ("QIC_HH", (|c: crate::selection::CriteriaReport| c.qic_hh) as fn(_) -> f64),
        ("CIC_HH", |c| c.cic_hh),
    ] {
        out.push_str(&format!("{name:<8}"));
        for r in runs {
            out.push_str(&format!("{:>W$}", cell(r, &|run| run.report.criteria.map_or("-".into(), |c| format!("{:.2}", get(c))))));
        }
        out.push('\n');
    }
    for (s, r) in specs.iter().zip(runs) {
        match r {
            Err(e) => out.push_str(&format!("{}: error: {e}\n", label(s))),
            Ok(run) => {
                for w in &run.report.warnings {
                    out.push_str(&format!("{}: warning: {w}\n", label(s)));
                }
            }
        }
    }
    out
}

pub fn run_csv(run: &ModelRun) -> String {
    let r = &run.report;
    let mut out = String::from("i,reserve,mse,rmse_pct\n");
    let num = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v}"));
    for y in &r.years {
        out.push_str(&format!("{},{},{},{}\n", y.i, y.reserve, num(y.mse), num(y.rmse_pct)));
    }
    out.push_str(&format!("total,{},{},{}\n", r.total.reserve, num(r.total.mse), num(r.total.rmse_pct)));
    out
}

pub fn compare_csv(specs: &[ModelSpec], runs: &[Result<ModelRun, ReserveError>]) -> String {
    let mut out = String::from("correlation,variance,i,reserve,mse,rmse_pct,qic_hh,cic_hh,error\n");
    let num = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v}"));
    for (s, r) in specs.iter().zip(runs) {
        let (c, v) = (s.correlation.short_name(), s.variance.name());
        match r {
            Err(e) => out.push_str(&format!("{c},{v},,,,,,,\"{}\"\n", e.to_string().replace('"', "'"))),
            Ok(run) => {
                let crit = run.report.criteria;
                for y in &run.report.years {
                    out.push_str(&format!("{c},{v},{},{},{},{},,,\n", y.i, y.reserve, num(y.mse), num(y.rmse_pct)));
                }
                let t = run.report.total;
                out.push_str(&format!(
                    "{c},{v},total,{},{},{},{},{},\n",
                    t.reserve,
                    num(t.mse),
                    num(t.rmse_pct),
                    num(crit.map(|k| k.qic_hh)),
                    num(crit.map(|k| k.cic_hh))
                ));
            }
        }
    }
    out
}
