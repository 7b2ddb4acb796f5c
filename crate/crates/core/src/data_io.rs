//! Readers and writers for datasets, sequences, matrices and couplings.
//!
//! Every number is written with 17 significant digits, so text output
//! round-trips `f64` values exactly. Writers take a list of header lines that
//! are emitted as `# ` comments; readers skip such lines and blank lines.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::sequence::Sequence;
use crate::tasks::LabeledSet;

/// Name of the index file inside a CSV dataset directory.
pub const CSV_INDEX: &str = "index.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    /// One series per line: integer label, then tab-separated values.
    UcrTsv,
    /// A directory of sequence CSVs listed in `index.csv` as `file,label`.
    CsvDir,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHandle {
    pub items: LabeledSet,
    pub source: PathBuf,
    pub format: DatasetFormat,
}

pub fn format_number(x: f64) -> String {
    format!("{x:.16e}")
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_error(path: &Path, line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message: message.into(),
    }
}

/// Non-comment, non-blank lines with their 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

fn parse_value(path: &Path, line: usize, column: usize, token: &str) -> Result<f64> {
    let token = token.trim();
    if token.is_empty() {
        return Err(parse_error(path, line, column, "missing value"));
    }
    match token.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(parse_error(path, line, column, format!("non-finite value `{token}`"))),
        Err(_) => Err(parse_error(path, line, column, format!("not a number: `{token}`"))),
    }
}

fn parse_label(path: &Path, line: usize, column: usize, token: &str) -> Result<i64> {
    let token = token.trim();
    if let Ok(v) = token.parse::<i64>() {
        return Ok(v);
    }
    match token.parse::<f64>() {
        Ok(v) if v.is_finite() && v.fract() == 0.0 && v.abs() < 9.0e15 => Ok(v as i64),
        _ => Err(parse_error(
            path,
            line,
            column,
            format!("label `{token}` is not an integer"),
        )),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_error(path))
}

/// Writes the header lines as `# ` comments followed by `body`.
pub fn write_text(path: &Path, header: &[String], body: &str) -> Result<()> {
    let mut out = String::with_capacity(body.len() + 64 * header.len());
    for h in header {
        out.push_str("# ");
        out.push_str(h);
        out.push('\n');
    }
    out.push_str(body);
    fs::write(path, out).map_err(io_error(path))
}

pub fn read_ucr_tsv(path: &Path) -> Result<DatasetHandle> {
    let text = read(path)?;
    let mut items = Vec::new();
    for (line, content) in data_lines(&text) {
        let mut fields = content.split('\t');
        let label = parse_label(path, line, 1, fields.next().unwrap_or(""))?;
        let values: Vec<f64> = fields
            .enumerate()
            .map(|(k, tok)| parse_value(path, line, k + 2, tok))
            .collect::<Result<_>>()?;
        if values.is_empty() {
            return Err(parse_error(path, line, 2, "series has no values"));
        }
        items.push((Sequence::from_scalars(&values)?, label));
    }
    if items.is_empty() {
        return Err(Error::Empty(format!("dataset {}", path.display())));
    }
    Ok(DatasetHandle {
        items: LabeledSet::new(items)?,
        source: path.to_path_buf(),
        format: DatasetFormat::UcrTsv,
    })
}

pub fn write_ucr_tsv(path: &Path, set: &LabeledSet, header: &[String]) -> Result<()> {
    if set.dim() != 1 {
        return Err(Error::DimensionMismatch(
            "the TSV format holds univariate series only".into(),
        ));
    }
    let mut body = String::new();
    for (s, label) in set.items() {
        body.push_str(&label.to_string());
        for v in s.as_slice() {
            body.push('\t');
            body.push_str(&format_number(*v));
        }
        body.push('\n');
    }
    write_text(path, header, &body)
}

fn parse_grid(path: &Path, text: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, content) in data_lines(text) {
        let row: Vec<f64> = content
            .split(',')
            .enumerate()
            .map(|(k, tok)| parse_value(path, line, k + 1, tok))
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(parse_error(
                    path,
                    line,
                    row.len().min(first.len()) + 1,
                    format!("ragged row: {} values, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Empty(format!("grid {}", path.display())));
    }
    Ok(rows)
}

fn grid_text<'a>(rows: impl Iterator<Item = &'a [f64]>) -> String {
    let mut body = String::new();
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format_number(*v)).collect();
        body.push_str(&line.join(","));
        body.push('\n');
    }
    body
}

/// Reads a sequence stored with one row per feature and one column per step.
pub fn read_csv_sequence(path: &Path) -> Result<Sequence> {
    Sequence::from_feature_rows(&parse_grid(path, &read(path)?)?)
}

pub fn write_csv_sequence(path: &Path, s: &Sequence, header: &[String]) -> Result<()> {
    let rows: Vec<Vec<f64>> = (0..s.dim()).map(|k| s.feature_row(k)).collect();
    write_text(path, header, &grid_text(rows.iter().map(Vec::as_slice)))
}

pub fn read_csv_matrix(path: &Path) -> Result<Matrix> {
    Matrix::from_rows(&parse_grid(path, &read(path)?)?)
}

pub fn write_csv_matrix(path: &Path, m: &Matrix, header: &[String]) -> Result<()> {
    write_text(path, header, &grid_text((0..m.rows()).map(|i| m.row(i))))
}

/// Reads a directory whose `index.csv` lists `file,label` rows; each file is
/// a sequence CSV relative to the directory.
pub fn read_csv_dir(dir: &Path) -> Result<DatasetHandle> {
    let index = dir.join(CSV_INDEX);
    let text = read(&index)?;
    let mut items = Vec::new();
    for (line, content) in data_lines(&text) {
        let Some((file, label)) = content.split_once(',') else {
            return Err(parse_error(&index, line, 1, "expected `file,label`"));
        };
        let label = parse_label(&index, line, 2, label)?;
        items.push((read_csv_sequence(&dir.join(file.trim()))?, label));
    }
    if items.is_empty() {
        return Err(Error::Empty(format!("dataset {}", dir.display())));
    }
    Ok(DatasetHandle {
        items: LabeledSet::new(items)?,
        source: dir.to_path_buf(),
        format: DatasetFormat::CsvDir,
    })
}

/// A directory is read as a CSV dataset, anything else as UCR TSV.
pub fn read_dataset(path: &Path) -> Result<DatasetHandle> {
    if path.is_dir() {
        read_csv_dir(path)
    } else {
        read_ucr_tsv(path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingFormat {
    Csv,
    /// Binary 8-bit greyscale image.
    Pgm,
}

/// Grey level of a coupling entry: `round(255 * c^0.1)` with power
/// normalisation, `round(255 * c)` without.
pub fn pixel_level(c: f64, power_normalize: bool) -> u8 {
    let c = c.clamp(0.0, 1.0);
    let v = if power_normalize { c.powf(0.1) } else { c };
    (255.0 * v).round() as u8
}

pub fn pgm_bytes(coupling: &Matrix, power_normalize: bool, header: &[String]) -> Vec<u8> {
    let mut out = b"P5\n".to_vec();
    for h in header {
        out.extend_from_slice(format!("# {h}\n").as_bytes());
    }
    out.extend_from_slice(format!("{} {}\n255\n", coupling.cols(), coupling.rows()).as_bytes());
    out.extend(coupling.as_slice().iter().map(|&c| pixel_level(c, power_normalize)));
    out
}

pub fn write_coupling(
    coupling: &Matrix,
    path: &Path,
    format: CouplingFormat,
    power_normalize: bool,
    header: &[String],
) -> Result<()> {
    match format {
        CouplingFormat::Csv => write_csv_matrix(path, coupling, header),
        CouplingFormat::Pgm => fs::write(path, pgm_bytes(coupling, power_normalize, header)).map_err(io_error(path)),
    }
}
