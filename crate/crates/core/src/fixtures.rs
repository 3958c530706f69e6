//! The two published triangles used throughout the tests and examples.

use crate::triangle::{CsvFormat, Triangle, TriangleKind};

/// Taylor and Ashe (1983) incremental paid claims, 10 accident years.
pub const TAYLOR_ASHE_CSV: &str = include_str!("../data/taylor_ashe.csv");

/// ABC cumulative paid claims (Barnett and Zehnwirth), 11 accident years.
pub const ABC_CSV: &str = include_str!("../data/abc.csv");

pub fn taylor_ashe() -> Triangle {
    Triangle::parse(TAYLOR_ASHE_CSV, CsvFormat::Wide, TriangleKind::Incremental).expect("bundled triangle parses")
}

/// ABC triangle, decumulated to incremental amounts.
pub fn abc() -> Triangle {
    Triangle::parse(ABC_CSV, CsvFormat::Wide, TriangleKind::Cumulative)
        .and_then(|t| t.decumulate())
        .expect("bundled triangle parses")
}
