//! Run-off triangles: storage, CSV input/output, cumulation and the split
//! into accident-year clusters.
//!
//! Indices are 1-based throughout the public API: accident year `i` and
//! development year `j` satisfy `1 <= i, j <= n` and a cell is observed iff
//! `i + j <= n + 1`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ReserveError, Result};
use crate::model::DesignBuilder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriangleKind {
    Incremental,
    Cumulative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvFormat {
    /// One row per accident year, one column per development year.
    Wide,
    /// `i,j,value` records.
    Long,
}

/// Upper-left triangle of claim amounts.
#[derive(Debug, Clone, PartialEq)]
pub struct Triangle {
    n: usize,
    kind: TriangleKind,
    // rows[i - 1] has length n + 1 - i
    rows: Vec<Vec<f64>>,
}

impl Triangle {
    /// Builds a triangle from its rows. Row `i` (1-based) must hold exactly
    /// `n + 1 - i` values, where `n` is the number of rows.
    pub fn from_rows(rows: Vec<Vec<f64>>, kind: TriangleKind) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(ReserveError::EmptyInput);
        }
        for (idx, row) in rows.iter().enumerate() {
            let expected = n - idx;
            if row.len() != expected {
                return Err(ReserveError::RaggedShape(format!(
                    "accident year {} has {} cells, expected {}",
                    idx + 1,
                    row.len(),
                    expected
                )));
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(ReserveError::NonNumericValue {
                    line: idx + 1,
                    value: v.to_string(),
                });
            }
        }
        Ok(Self { n, kind, rows })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> TriangleKind {
        self.kind
    }

    /// Number of observed cells, `n(n+1)/2`.
    pub fn len(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        if i == 0 || j == 0 || i > self.n || i + j > self.n + 1 {
            return None;
        }
        Some(self.rows[i - 1][j - 1])
    }

    /// Observed values of accident year `i`, in development order.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i - 1]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Iterates `(i, j, value)` in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(r, row)| row.iter().enumerate().map(move |(c, &v)| (r + 1, c + 1, v)))
    }

    /// Multiplies every cell by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let rows = self
            .rows
            .iter()
            .map(|row| row.iter().map(|v| v * factor).collect())
            .collect();
        Self { n: self.n, kind: self.kind, rows }
    }

    pub fn cumulate(&self) -> Result<Self> {
        if self.kind != TriangleKind::Incremental {
            return Err(ReserveError::WrongKind { expected: "incremental" });
        }
        let rows = self
            .rows
            .iter()
            .map(|row| {
                row.iter()
                    .scan(0.0, |acc, &x| {
                        *acc += x;
                        Some(*acc)
                    })
                    .collect()
            })
            .collect();
        Ok(Self { n: self.n, kind: TriangleKind::Cumulative, rows })
    }

    pub fn decumulate(&self) -> Result<Self> {
        if self.kind != TriangleKind::Cumulative {
            return Err(ReserveError::WrongKind { expected: "cumulative" });
        }
        let rows = self
            .rows
            .iter()
            .map(|row| {
                let mut prev = 0.0;
                row.iter()
                    .map(|&y| {
                        let x = y - prev;
                        prev = y;
                        x
                    })
                    .collect()
            })
            .collect();
        Ok(Self { n: self.n, kind: TriangleKind::Incremental, rows })
    }

    /// Returns the incremental view, decumulating if necessary.
    pub fn to_incremental(&self) -> Self {
        match self.kind {
            TriangleKind::Incremental => self.clone(),
            TriangleKind::Cumulative => self.decumulate().expect("kind checked"),
        }
    }

    pub fn parse(source: &str, format: CsvFormat, kind: TriangleKind) -> Result<Self> {
        match format {
            CsvFormat::Wide => parse_wide(source, kind),
            CsvFormat::Long => parse_long(source, kind),
        }
    }

    pub fn to_csv(&self, format: CsvFormat) -> String {
        let mut out = String::new();
        match format {
            CsvFormat::Wide => {
                let header: Vec<String> = (1..=self.n).map(|j| format!("dev_{j}")).collect();
                out.push_str(&header.join(","));
                out.push('\n');
                for row in &self.rows {
                    let mut fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                    fields.resize(self.n, String::new());
                    out.push_str(&fields.join(","));
                    out.push('\n');
                }
            }
            CsvFormat::Long => {
                out.push_str("i,j,value\n");
                for (i, j, v) in self.cells() {
                    let _ = writeln!(out, "{i},{j},{v}");
                }
            }
        }
        out
    }
}

fn parse_value(field: &str, line: usize) -> Result<f64> {
    let trimmed = field.trim();
    match trimmed.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(ReserveError::NonNumericValue { line, value: trimmed.to_string() }),
    }
}

fn is_numeric(field: &str) -> bool {
    field.trim().parse::<f64>().is_ok()
}

fn csv_records(source: &str) -> Result<Vec<Vec<String>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source.as_bytes());
    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| ReserveError::Csv(e.to_string()))?;
        let fields: Vec<String> = rec.iter().map(str::to_string).collect();
        if fields.iter().all(|f| f.is_empty()) {
            continue;
        }
        records.push(fields);
    }
    Ok(records)
}

fn parse_wide(source: &str, kind: TriangleKind) -> Result<Triangle> {
    let mut records = csv_records(source)?;
    if records.is_empty() {
        return Err(ReserveError::EmptyInput);
    }
    let mut first_line = 1;
    let mut has_label = false;
    if records[0].iter().any(|f| !f.is_empty() && !is_numeric(f)) {
        let header = records.remove(0);
        first_line = 2;
        let lead = header[0].to_ascii_lowercase();
        has_label = !lead.starts_with("dev");
    }
    if records.is_empty() {
        return Err(ReserveError::EmptyInput);
    }
    let n = records.len();
    let mut rows = Vec::with_capacity(n);
    for (idx, rec) in records.iter().enumerate() {
        let line = first_line + idx;
        let fields = if has_label { &rec[1.min(rec.len())..] } else { &rec[..] };
        let observed = fields.iter().take_while(|f| !f.is_empty()).count();
        if fields[observed..].iter().any(|f| !f.is_empty()) {
            return Err(ReserveError::RaggedShape(format!(
                "gap inside accident year {} (line {line})",
                idx + 1
            )));
        }
        let row = fields[..observed]
            .iter()
            .map(|f| parse_value(f, line))
            .collect::<Result<Vec<_>>>()?;
        if observed != n - idx {
            return Err(ReserveError::RaggedShape(format!(
                "accident year {} has {observed} observed cells, expected {}",
                idx + 1,
                n - idx
            )));
        }
        rows.push(row);
    }
    Triangle::from_rows(rows, kind)
}

fn parse_long(source: &str, kind: TriangleKind) -> Result<Triangle> {
    let mut records = csv_records(source)?;
    if records.is_empty() {
        return Err(ReserveError::EmptyInput);
    }
    let mut first_line = 1;
    if records[0].first().is_some_and(|f| !is_numeric(f)) {
        let header: Vec<String> = records.remove(0).iter().map(|f| f.to_ascii_lowercase()).collect();
        if header != ["i", "j", "value"] {
            return Err(ReserveError::Csv(format!(
                "long format header must be `i,j,value`, got `{}`",
                header.join(",")
            )));
        }
        first_line = 2;
    }
    if records.is_empty() {
        return Err(ReserveError::EmptyInput);
    }
    let mut raw = Vec::with_capacity(records.len());
    for (idx, rec) in records.iter().enumerate() {
        let line = first_line + idx;
        if rec.len() != 3 {
            return Err(ReserveError::Csv(format!("line {line}: expected 3 fields, got {}", rec.len())));
        }
        let index = |f: &str| -> Result<usize> {
            f.parse::<usize>()
                .map_err(|_| ReserveError::NonNumericValue { line, value: f.to_string() })
        };
        raw.push((index(&rec[0])?, index(&rec[1])?, parse_value(&rec[2], line)?));
    }

    // 0-based sources are shifted to 1-based
    let min_i = raw.iter().map(|c| c.0).min().unwrap_or(1);
    let min_j = raw.iter().map(|c| c.1).min().unwrap_or(1);
    let shift = usize::from(min_i == 0 && min_j == 0);

    let mut cells = BTreeMap::new();
    for (i, j, v) in raw {
        let (i, j) = (i + shift, j + shift);
        if i == 0 || j == 0 {
            return Err(ReserveError::RaggedShape(format!("index ({i}, {j}) is not 1-based")));
        }
        if cells.insert((i, j), v).is_some() {
            return Err(ReserveError::DuplicateCell { i, j });
        }
    }
    let n = cells.keys().map(|&(i, j)| i.max(j)).max().unwrap_or(0);
    if let Some(&(i, j)) = cells.keys().find(|&&(i, j)| i + j > n + 1) {
        return Err(ReserveError::RaggedShape(format!(
            "cell ({i}, {j}) lies outside the triangle for n = {n}"
        )));
    }
    if cells.len() != n * (n + 1) / 2 {
        return Err(ReserveError::RaggedShape(format!(
            "{} cells present, a triangle with n = {n} needs {}",
            cells.len(),
            n * (n + 1) / 2
        )));
    }
    let rows = (1..=n)
        .map(|i| (1..=n + 1 - i).map(|j| cells[&(i, j)]).collect())
        .collect();
    Triangle::from_rows(rows, kind)
}

/// Observations of one accident year with their design rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub accident_year: usize,
    pub values: DVector<f64>,
    /// `n_i x p`, row `j - 1` is `z_{i,j}`.
    pub design: DMatrix<f64>,
}

impl Cluster {
    pub fn size(&self) -> usize {
        self.values.len()
    }
}

/// Accident-year clusters of an incremental triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet {
    pub n: usize,
    pub p: usize,
    pub clusters: Vec<Cluster>,
}

impl ClusterSet {
    /// Total number of observations `N`.
    pub fn observations(&self) -> usize {
        self.clusters.iter().map(Cluster::size).sum()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(Cluster::size).collect()
    }

    /// Same clusters in a different order.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            n: self.n,
            p: self.p,
            clusters: order.iter().map(|&k| self.clusters[k].clone()).collect(),
        }
    }
}

pub fn to_clusters(t: &Triangle, design: &DesignBuilder) -> Result<ClusterSet> {
    if t.kind() != TriangleKind::Incremental {
        return Err(ReserveError::WrongKind { expected: "incremental" });
    }
    if design.n() != t.n() {
        return Err(ReserveError::DimensionMismatch(format!(
            "design built for n = {}, triangle has n = {}",
            design.n(),
            t.n()
        )));
    }
    let p = design.p();
    let clusters = (1..=t.n())
        .map(|i| {
            let row = t.row(i);
            let mut z = DMatrix::zeros(row.len(), p);
            for j in 1..=row.len() {
                let zr = design.design_row(i, j)?;
                z.row_mut(j - 1).copy_from(&zr.transpose());
            }
            Ok(Cluster { accident_year: i, values: DVector::from_column_slice(row), design: z })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClusterSet { n: t.n(), p, clusters })
}
