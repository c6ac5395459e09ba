//! CSV files for fitted models and traces.
//!
//! A model directory holds `mode_<k>.csv` for every mode (row = entity,
//! column = factor), plus `lambda.csv` and `p.csv` with a single row each.
//! All files share the header `factor_0,…,factor_{R−1}`. Values are written
//! with 17 significant digits so they reload bit-exactly.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::evaluation::FitTrace;
use crate::model::{Matrix, ModelState};

pub fn factor_header(rank: usize) -> String {
    (0..rank).map(|r| format!("factor_{r}")).collect::<Vec<_>>().join(",")
}

pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_matrix(m: &Matrix, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "{}", factor_header(m.cols()))?;
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|&v| format_value(v)).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_matrix(reader: impl BufRead) -> Result<Matrix> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(Ok(h)) => h,
        _ => return Err(Error::Format("empty factor file".into())),
    };
    let cols = header.trim().split(',').count();
    if header.trim() != factor_header(cols) {
        return Err(Error::Format(format!("unexpected header `{}`", header.trim())));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::Parse { line: n + 2, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .trim()
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse { line: n + 2, message: format!("`{tok}` is not a number") })
            })
            .collect::<Result<Vec<_>>>()?;
        if row.len() != cols {
            return Err(Error::Parse { line: n + 2, message: format!("expected {cols} values") });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Format("factor file has no rows".into()));
    }
    Matrix::from_rows(&rows)
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn read_file<T>(path: &Path, parse: impl FnOnce(BufReader<File>) -> Result<T>) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse(BufReader::new(file)).map_err(|e| match e {
        Error::Io { .. } => e,
        other => Error::Format(format!("{}: {other}", path.display())),
    })
}

/// Writes a row vector (λ or p) as a one-row CSV.
pub fn write_vector(path: impl AsRef<Path>, values: &[f64]) -> Result<()> {
    let m = Matrix::from_rows(&[values.to_vec()])?;
    write_file(path.as_ref(), |w| write_matrix(&m, w))
}

pub fn read_vector(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let m = read_file(path.as_ref(), read_matrix)?;
    if m.rows() != 1 {
        return Err(Error::Format(format!("{}: expected a single row", path.as_ref().display())));
    }
    Ok(m.row(0).to_vec())
}

pub fn write_model(dir: impl AsRef<Path>, model: &ModelState) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (k, f) in model.factors.iter().enumerate() {
        write_file(&dir.join(format!("mode_{k}.csv")), |w| write_matrix(f, w))?;
    }
    write_vector(dir.join("lambda.csv"), &model.lambda)?;
    write_vector(dir.join("p.csv"), &model.p)
}

/// Loads a model directory written by [`write_model`] and checks its invariants.
pub fn read_model(dir: impl AsRef<Path>) -> Result<ModelState> {
    let dir = dir.as_ref();
    let mut factors = Vec::new();
    loop {
        let path = dir.join(format!("mode_{}.csv", factors.len()));
        if !path.exists() {
            break;
        }
        factors.push(read_file(&path, read_matrix)?);
    }
    if factors.len() < 2 {
        return Err(Error::Format(format!("{}: expected mode_0.csv and mode_1.csv at least", dir.display())));
    }
    let model =
        ModelState { factors, lambda: read_vector(dir.join("lambda.csv"))?, p: read_vector(dir.join("p.csv"))? };
    model.validate()?;
    Ok(model)
}

pub fn write_trace(path: impl AsRef<Path>, trace: &FitTrace) -> Result<()> {
    write_file(path.as_ref(), |w| trace.write_csv(w))
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<FitTrace> {
    read_file(path.as_ref(), FitTrace::read_csv)
}
