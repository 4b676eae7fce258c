//! Plain numeric CSV helpers. Values are written with the shortest
//! representation that parses back to the identical `f64`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Write a matrix as headerless CSV, one matrix row per line.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_matrix_to(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn write_matrix_to<W: Write>(w: &mut W, m: &DMatrix<f64>) -> Result<()> {
    let mut line = String::new();
    for i in 0..m.nrows() {
        line.clear();
        for j in 0..m.ncols() {
            if j > 0 {
                line.push(',');
            }
            line.push_str(&fmt_f64(m[(i, j)]));
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    Ok(())
}

/// Write a matrix with a header row.
pub fn write_matrix_with_header(path: &Path, header: &[String], m: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    write_matrix_to(&mut w, m)?;
    w.flush()?;
    Ok(())
}

/// Read a headerless numeric CSV. All rows must have the same width.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        match width {
            None => width = Some(rec.len()),
            Some(w) if w != rec.len() => {
                return Err(Error::Shape(format!(
                    "{}: row {} has {} columns, expected {w}",
                    path.display(),
                    r + 1,
                    rec.len()
                )))
            }
            _ => {}
        }
        for field in rec.iter() {
            let v: f64 = field.parse().map_err(|_| {
                Error::Parse(format!("{}: row {}: cannot parse {field:?} as a number", path.display(), r + 1))
            })?;
            data.push(v);
        }
        rows += 1;
    }
    let cols = width.unwrap_or(0);
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

/// Read a numeric CSV whose first line is a header.
pub fn read_matrix_with_header(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Parse(format!("{}: empty file", path.display())))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let body: String = lines.collect::<Vec<_>>().join("\n");
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let mut data = Vec::new();
    let mut rows = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Shape(format!(
                "{}: row {} has {} columns, header has {}",
                path.display(),
                r + 2,
                rec.len(),
                header.len()
            )));
        }
        for field in rec.iter() {
            data.push(field.parse().map_err(|_| {
                Error::Parse(format!("{}: row {}: cannot parse {field:?}", path.display(), r + 2))
            })?);
        }
        rows += 1;
    }
    Ok((header.clone(), DMatrix::from_row_slice(rows, header.len(), &data)))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
