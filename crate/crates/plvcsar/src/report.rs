//! Serializable reports and a small table type written as CSV or JSON.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use plvcsar_core::ivqr::{ConfidenceIntervals, Interval};
use plvcsar_core::ranktest::{RankScoreResult, Reference};
use plvcsar_core::{CovarianceBundle, IvqrEstimate};
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
        }
    }
}

/// Short decimal label for file and column names, e.g. `0.5` or `0.25`.
pub fn tau_label(tau: f64) -> String {
    format!("{tau}")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Cell {
    Text(String),
    Int(usize),
    Num(f64),
    Flag(bool),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(v) => v.to_string(),
            Cell::Num(v) => v.to_string(),
            Cell::Flag(b) => b.to_string(),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            Cell::Text(s) => s.as_str().into(),
            Cell::Int(v) => (*v).into(),
            Cell::Num(v) => serde_json::Number::from_f64(*v).map_or(serde_json::Value::Null, Into::into),
            Cell::Flag(b) => (*b).into(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Flag(v)
    }
}

/// Rectangular output: CSV with a header row, or JSON as an array of
/// objects keyed by column.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn to_json(&self) -> serde_json::Value {
        self.rows
            .iter()
            .map(|r| {
                let obj: serde_json::Map<_, _> = self.columns.iter().cloned().zip(r.iter().map(Cell::json)).collect();
                serde_json::Value::Object(obj)
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r.iter().map(Cell::render))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Writes `<stem>.csv` or `<stem>.json` under `dir`.
    pub fn write(&self, dir: &Path, stem: &str, format: Format) -> Result<PathBuf> {
        let path = dir.join(format!("{stem}.{}", format.extension()));
        match format {
            Format::Csv => self.write_csv(&path)?,
            Format::Json => write_json(&path, &self.to_json())?,
        }
        Ok(path)
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), value)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalRow {
    pub parameter: String,
    pub estimate: f64,
    pub std_error: f64,
    pub lower: f64,
    pub upper: f64,
}

impl IntervalRow {
    fn new(parameter: String, i: &Interval) -> Self {
        Self {
            parameter,
            estimate: i.estimate,
            std_error: i.std_error,
            lower: i.lower,
            upper: i.upper,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileRow {
    pub rho: f64,
    pub zeta_norm: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KnotRow {
    pub k_n: usize,
    pub objective: f64,
    pub sic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceReport {
    pub bandwidth: f64,
    pub lambda_rho: f64,
    /// Row-major `p x p`.
    pub lambda_beta: Vec<Vec<f64>>,
    pub annihilation_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub tau: f64,
    pub n: usize,
    pub degree: usize,
    pub k_n: usize,
    pub interior_knots: Vec<f64>,
    pub rho_hat: f64,
    pub beta_hat: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub zeta_hat: Vec<f64>,
    pub objective: f64,
    pub alpha: f64,
    pub ci_rate: &'static str,
    pub intervals: Vec<IntervalRow>,
    pub covariance: CovarianceReport,
    pub knot_selection: Option<Vec<KnotRow>>,
    pub profile: Vec<ProfileRow>,
}

pub fn interval_rows(ci: &ConfidenceIntervals) -> Vec<IntervalRow> {
    let mut rows = vec![IntervalRow::new("rho".into(), &ci.rho)];
    rows.extend(ci.beta.iter().enumerate().map(|(j, b)| IntervalRow::new(format!("beta{}", j + 1), b)));
    rows
}

impl EstimateReport {
    pub fn new(est: &IvqrEstimate, bundle: &CovarianceBundle, ci: &ConfidenceIntervals, ci_rate: &'static str) -> Self {
        let lb = &bundle.lambda_beta;
        Self {
            tau: est.tau,
            n: est.residuals.len(),
            degree: est.basis.degree(),
            k_n: est.basis.interior_knot_count(),
            interior_knots: est.basis.interior_knots().to_vec(),
            rho_hat: est.rho_hat,
            beta_hat: est.beta_hat.as_slice().to_vec(),
            theta_hat: est.theta_hat.as_slice().to_vec(),
            zeta_hat: est.zeta_hat.as_slice().to_vec(),
            objective: est.objective,
            alpha: ci.alpha,
            ci_rate,
            intervals: interval_rows(ci),
            covariance: CovarianceReport {
                bandwidth: bundle.bandwidth,
                lambda_rho: bundle.lambda_rho,
                lambda_beta: (0..lb.nrows()).map(|i| lb.row(i).iter().copied().collect()).collect(),
                annihilation_ratio: bundle.annihilation_ratio(),
            },
            knot_selection: est.knot_selection.as_ref().map(|s| {
                s.table
                    .iter()
                    .map(|k| KnotRow {
                        k_n: k.k_n,
                        objective: k.objective,
                        sic: k.sic,
                    })
                    .collect()
            }),
            profile: est
                .profile
                .iter()
                .map(|p| ProfileRow {
                    rho: p.rho,
                    zeta_norm: p.zeta_norm,
                    objective: p.objective,
                })
                .collect(),
        }
    }
}

pub fn reference_name(r: Reference) -> &'static str {
    match r {
        Reference::ChiSquare => "chi_square",
        Reference::NormalApprox => "normal",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestReport {
    pub tau: f64,
    pub test: &'static str,
    pub hypothesis: String,
    pub statistic: f64,
    pub df: usize,
    pub reference: &'static str,
    pub p_value: f64,
    pub cutoff: f64,
    pub reject: bool,
}

impl TestReport {
    pub fn new(tau: f64, test: &'static str, hypothesis: String, r: &RankScoreResult, alpha: f64) -> Self {
        Self {
            tau,
            test,
            hypothesis,
            statistic: r.statistic,
            df: r.df,
            reference: reference_name(r.reference),
            p_value: r.p_value,
            cutoff: r.cutoff(alpha),
            reject: r.rejects(alpha),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_renders_both_formats() {
        let mut t = Table::new(["name", "value", "ok"]);
        t.push(vec!["a".into(), 1.5.into(), true.into()]);
        t.push(vec!["b".into(), f64::NAN.into(), false.into()]);
        let j = t.to_json();
        assert_eq!(j[0]["value"], 1.5);
        assert!(j[1]["value"].is_null());
        let dir = tempfile::tempdir().unwrap();
        let p = t.write(dir.path(), "t", Format::Csv).unwrap();
        assert_eq!(std::fs::read_to_string(p).unwrap(), "name,value,ok\na,1.5,true\nb,NaN,false\n");
        assert_eq!(tau_label(0.25), "0.25");
    }
}
