//! Dataset and weight-matrix files.
//!
//! A dataset is a headed CSV with columns `y`, `x1..xp`, `z1..zq` and `u` in
//! any order. Weights are either a dense `n x n` CSV without header or
//! `i,j,w` triplets with 0-based indices (header optional).

use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use plvcsar_core::Dataset;

use crate::error::{Error, Result};

fn reader(path: &Path, headers: bool) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(headers)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn record_line(r: &csv::StringRecord, fallback: u64) -> u64 {
    r.position().map_or(fallback, |p| p.line())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

fn parse_field(path: &Path, line: u64, column: &str, raw: &str) -> Result<f64> {
    raw.parse::<f64>().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("column `{column}`: cannot parse `{raw}` as a number"),
    })
}

/// Columns of a dataset file, before the weight matrix is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct Columns {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub u: DVector<f64>,
}

impl Columns {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn with_weights(self, w: DMatrix<f64>) -> Result<Dataset> {
        Ok(Dataset::new(self.y, self.x, self.z, self.u, w)?)
    }
}

fn numbered(headers: &csv::StringRecord, prefix: &str) -> Vec<usize> {
    let mut out = Vec::new();
    for k in 1.. {
        match headers.iter().position(|h| h == format!("{prefix}{k}")) {
            Some(i) => out.push(i),
            None => break,
        }
    }
    out
}

pub fn read_columns(path: &Path) -> Result<Columns> {
    let mut rdr = reader(path, true)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
        })
    };
    let iy = find("y")?;
    let iu = find("u")?;
    let ix = numbered(&headers, "x");
    let iz = numbered(&headers, "z");
    let width = headers.len();

    let (mut y, mut u, mut x, mut z) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = record_line(&rec, k as u64 + 2);
        if rec.len() != width {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        y.push(parse_field(path, line, "y", &rec[iy])?);
        u.push(parse_field(path, line, "u", &rec[iu])?);
        for (j, &c) in ix.iter().enumerate() {
            x.push(parse_field(path, line, &format!("x{}", j + 1), &rec[c])?);
        }
        for (j, &c) in iz.iter().enumerate() {
            z.push(parse_field(path, line, &format!("z{}", j + 1), &rec[c])?);
        }
    }
    let n = y.len();
    if n == 0 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "no data rows".into(),
        });
    }
    Ok(Columns {
        y: DVector::from_vec(y),
        u: DVector::from_vec(u),
        x: DMatrix::from_row_slice(n, ix.len(), &x),
        z: DMatrix::from_row_slice(n, iz.len(), &z),
    })
}

/// Reads an `n x n` weight matrix, detecting dense or triplet layout.
///
/// A file with exactly `n` rows of `n` fields is dense; otherwise every row
/// must be an `i,j,w` triplet.
pub fn read_weights(path: &Path, n: usize) -> Result<DMatrix<f64>> {
    let mut rdr = reader(path, false)?;
    let mut rows: Vec<(u64, csv::StringRecord)> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        rows.push((record_line(&rec, k as u64 + 1), rec));
    }
    let dense = rows.len() == n && rows.iter().all(|(_, r)| r.len() == n);
    if dense {
        let mut w = DMatrix::zeros(n, n);
        for (i, (line, rec)) in rows.iter().enumerate() {
            for (j, raw) in rec.iter().enumerate() {
                w[(i, j)] = parse_field(path, *line, &format!("{j}"), raw)?;
            }
        }
        return Ok(w);
    }

    let is_header = |r: &csv::StringRecord| r.len() == 3 && r[0].parse::<f64>().is_err();
    let start = usize::from(rows.first().is_some_and(|(_, r)| is_header(r)));
    let mut w = DMatrix::zeros(n, n);
    for (line, rec) in &rows[start..] {
        if rec.len() != 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: *line,
                message: format!(
                    "weights are neither a dense {n}x{n} matrix nor i,j,w triplets ({} fields)",
                    rec.len()
                ),
            });
        }
        let index = |c: usize, name: &str| -> Result<usize> {
            match rec[c].parse::<usize>() {
                Ok(v) if v < n => Ok(v),
                _ => Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: *line,
                    message: format!("{name} index `{}` is not in 0..{n}", &rec[c]),
                }),
            }
        };
        let (i, j) = (index(0, "row")?, index(1, "column")?);
        w[(i, j)] = parse_field(path, *line, "w", &rec[2])?;
    }
    Ok(w)
}

pub fn read_dataset(data: &Path, weights: &Path) -> Result<Dataset> {
    let cols = read_columns(data)?;
    let w = read_weights(weights, cols.n())?;
    cols.with_weights(w)
}

fn create(path: &Path) -> Result<std::io::BufWriter<File>> {
    File::create(path).map(std::io::BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Writes the columns of `d` so that [`read_columns`] recovers them exactly.
pub fn write_dataset(path: &Path, d: &Dataset) -> Result<()> {
    let mut header = vec!["y".to_string()];
    header.extend((1..=d.p()).map(|j| format!("x{j}")));
    header.extend((1..=d.q()).map(|j| format!("z{j}")));
    header.push("u".into());
    let mut out = create(path)?;
    let mut put = |s: String| writeln!(out, "{s}").map_err(|e| Error::io(path, e));
    put(header.join(","))?;
    for i in 0..d.n() {
        let mut row = vec![d.y()[i].to_string()];
        row.extend(d.x().row(i).iter().map(f64::to_string));
        row.extend(d.z().row(i).iter().map(f64::to_string));
        row.push(d.u()[i].to_string());
        put(row.join(","))?;
    }
    Ok(())
}

pub fn write_weights_dense(path: &Path, w: &DMatrix<f64>) -> Result<()> {
    let mut out = create(path)?;
    for i in 0..w.nrows() {
        let row: Vec<String> = w.row(i).iter().map(f64::to_string).collect();
        writeln!(out, "{}", row.join(",")).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Nonzero entries as `i,j,w` with a header row.
pub fn write_weights_triplets(path: &Path, w: &DMatrix<f64>) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "i,j,w").map_err(|e| Error::io(path, e))?;
    for i in 0..w.nrows() {
        for j in 0..w.ncols() {
            if w[(i, j)] != 0.0 {
                writeln!(out, "{i},{j},{}", w[(i, j)]).map_err(|e| Error::io(path, e))?;
            }
        }
    }
    Ok(())
}
