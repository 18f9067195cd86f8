//! CSV and JSON file handling. Every CSV has a header row; floats are written
//! in their shortest round-trip form.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use vppe::{DesignMatrix, OutputMatrix};

use crate::error::CliError;

/// Reads a numeric CSV with a header row into `(header, rows)`.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(CliError::data(format!("{}: missing header row", path.display())));
    }
    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { pos, expected_len, len } => CliError::data(format!(
                "{}: line {}: expected {expected_len} fields, found {len}",
                path.display(),
                pos.as_ref().map_or(r + 2, |p| p.line() as usize)
            )),
            _ => CliError::data(format!("{}: {e}", path.display())),
        })?;
        // line 1 is the header
        let line = r + 2;
        let row = record
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    CliError::data(format!("{}: line {line}, column {}: cannot parse {cell:?} as a finite number", path.display(), c + 1))
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::data(format!("{}: no data rows", path.display())));
    }
    Ok((header, rows))
}

pub fn read_design(path: &Path) -> Result<DesignMatrix, CliError> {
    let (_, rows) = read_table(path)?;
    DesignMatrix::from_rows(&rows).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn read_outputs(path: &Path) -> Result<OutputMatrix, CliError> {
    let (_, rows) = read_table(path)?;
    OutputMatrix::from_rows(&rows).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn read_indices(path: &Path) -> Result<Vec<usize>, CliError> {
    let (_, rows) = read_table(path)?;
    rows.iter()
        .enumerate()
        .map(|(i, r)| match r.as_slice() {
            [v] if *v >= 0.0 && v.fract() == 0.0 => Ok(*v as usize),
            _ => Err(CliError::data(format!("{}: line {}: expected one nonnegative integer", path.display(), i + 2))),
        })
        .collect()
}

pub fn headers(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|j| format!("{prefix}{j}")).collect()
}

/// Writes row-major `values` with `header.len()` columns.
pub fn write_table(path: &Path, header: &[String], values: &[f64]) -> Result<(), CliError> {
    let width = header.len();
    let mut w = create(path)?;
    let io = |e: std::io::Error| CliError::data(format!("{}: {e}", path.display()));
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for row in values.chunks(width) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", cells.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_design(path: &Path, design: &DesignMatrix) -> Result<(), CliError> {
    write_table(path, &headers("x", design.ncols()), design.as_slice())
}

pub fn write_outputs(path: &Path, outputs: &OutputMatrix) -> Result<(), CliError> {
    write_table(path, &headers("y", outputs.ncols()), outputs.as_slice())
}

pub fn write_indices(path: &Path, idx: &[usize]) -> Result<(), CliError> {
    let mut w = create(path)?;
    let io = |e: std::io::Error| CliError::data(format!("{}: {e}", path.display()));
    writeln!(w, "index").map_err(io)?;
    for i in idx {
        writeln!(w, "{i}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let file = File::open(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}
