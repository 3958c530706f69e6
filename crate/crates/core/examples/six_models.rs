//! Fits the six standard models to both bundled triangles and prints a
//! one-line summary of each.

use gee_reserve::fixtures::{abc, taylor_ashe};
use gee_reserve::model::MeanStructure;
use gee_reserve::pipeline::{compare, standard_models, RunOptions};

fn main() {
    for (name, t) in [("taylor_ashe", taylor_ashe()), ("abc", abc())] {
        let specs = standard_models(MeanStructure::ChainLadder);
        let start = std::time::Instant::now();
        let runs = compare(&t, &specs, &RunOptions::default());
        println!("{name} ({:?})", start.elapsed());
        for (s, r) in specs.iter().zip(runs) {
            match r {
                Ok(run) => {
                    let rep = &run.report;
                    let c = rep.criteria.unwrap();
                    let years: Vec<String> = rep.years.iter().skip(1).map(|y| format!("{:.0}", y.reserve / 1000.0)).collect();
                    let pct: Vec<String> =
                        rep.years.iter().skip(1).map(|y| format!("{:.0}", y.rmse_pct.unwrap_or(f64::NAN))).collect();
                    println!(
                        "{:5} {:9} it={:3} total={:.1} rmse%={:.3} qic_hh={:.3} cic_hh={:.4} params={:?}\n   R={} pct={}\n   warn={:?}",
                        s.correlation.short_name(),
                        s.variance.name(),
                        run.fit.iterations,
                        rep.total.reserve / 1000.0,
                        rep.total.rmse_pct.unwrap_or(f64::NAN),
                        c.qic_hh,
                        c.cic_hh,
                        run.fit.correlation.params(),
                        years.join(" "),
                        pct.join(" "),
                        rep.warnings
                    );
                }
                Err(e) => println!("{s:?}: {e}"),
            }
        }
    }
}
