//! Plain-text formats: numeric CSV, 1-based edge TSV and `key=value` files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use mixggm::{AdjacencyMatrix, ClusterAssignment};
use nalgebra::DMatrix;

use crate::error::{CliError, CliResult};

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn ensure_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// Reads a rectangular numeric CSV. A first row with any non-numeric field is
/// taken as a header.
pub fn read_matrix(path: &Path) -> CliResult<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::io(path, e))?;
        let line = record.position().map_or(idx as u64 + 1, |p| p.line());
        let parsed: Result<Vec<f64>, usize> =
            record.iter().enumerate().map(|(c, f)| f.parse::<f64>().map_err(|_| c)).collect();
        match parsed {
            Ok(values) => {
                if let Some(first) = rows.first() {
                    if values.len() != first.len() {
                        return Err(CliError::Data(format!(
                            "{}: row {line}: expected {} fields, found {}",
                            path.display(),
                            first.len(),
                            values.len()
                        )));
                    }
                }
                rows.push(values);
            }
            Err(_) if idx == 0 => continue,
            Err(c) => {
                return Err(CliError::Data(format!(
                    "{}: row {line}: cannot parse {:?} in column {} as a number",
                    path.display(),
                    &record[c],
                    c + 1
                )))
            }
        }
    }
    if rows.is_empty() || rows[0].is_empty() {
        return Err(CliError::Data(format!("{}: no numeric rows", path.display())));
    }
    let ncols = rows[0].len();
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.into_iter().flatten()))
}

pub fn matrix_csv(m: &DMatrix<f64>, header: Option<&[String]>) -> String {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(&h.join(","));
        out.push('\n');
    }
    for r in 0..m.nrows() {
        let row: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>, header: Option<&[String]>) -> CliResult<()> {
    write_text(path, &matrix_csv(m, header))
}

pub fn variable_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

/// Labels from the last column of a CSV, 1-based on disk.
pub fn read_labels(path: &Path, n_components: Option<usize>) -> CliResult<ClusterAssignment> {
    let m = read_matrix(path)?;
    let col = m.ncols() - 1;
    let mut labels = Vec::with_capacity(m.nrows());
    for r in 0..m.nrows() {
        let v = m[(r, col)];
        if v < 1.0 || v.fract() != 0.0 {
            return Err(CliError::Data(format!("{}: label {v} in data row {} is not a positive integer", path.display(), r + 1)));
        }
        labels.push(v as usize - 1);
    }
    let m = n_components.unwrap_or_else(|| labels.iter().max().map_or(0, |l| l + 1));
    Ok(ClusterAssignment::new(labels, m)?)
}

pub fn labels_csv(header: &str, tau: &ClusterAssignment, with_index: bool) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for (i, l) in tau.labels().iter().enumerate() {
        if with_index {
            let _ = writeln!(out, "{},{}", i + 1, l + 1);
        } else {
            let _ = writeln!(out, "{}", l + 1);
        }
    }
    out
}

/// Edge list with 1-based endpoints in the first two columns; lines that do
/// not start with a number are skipped.
pub fn read_edges(path: &Path, p: usize) -> CliResult<AdjacencyMatrix> {
    let text = read_text(path)?;
    let mut adjacency = AdjacencyMatrix::empty(p);
    for (idx, line) in text.lines().enumerate() {
        let mut fields = line.split(['\t', ',', ' ']).filter(|f| !f.is_empty());
        let Some(first) = fields.next() else { continue };
        if !first.starts_with(|c: char| c.is_ascii_digit()) {
            continue;
        }
        let bad = || CliError::Data(format!("{}: row {}: malformed edge {line:?}", path.display(), idx + 1));
        let i: usize = first.parse().map_err(|_| bad())?;
        let j: usize = fields.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        if i == 0 || j == 0 || i > p || j > p || i == j {
            return Err(CliError::Data(format!(
                "{}: row {}: edge ({i}, {j}) outside 1..={p} or a self loop",
                path.display(),
                idx + 1
            )));
        }
        adjacency.insert(i - 1, j - 1);
    }
    Ok(adjacency)
}

pub fn edges_tsv(adjacency: &AdjacencyMatrix) -> String {
    let mut out = String::from("i\tj\n");
    for (i, j) in adjacency.edges() {
        let _ = writeln!(out, "{}\t{}", i + 1, j + 1);
    }
    out
}

/// Ordered `key=value` lines.
#[derive(Debug, Default)]
pub struct KeyValues(Vec<(String, String)>);

impl KeyValues {
    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.0.push((key.into(), value.to_string()));
    }

    pub fn render(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        write_text(path, &self.render())
    }
}

pub fn join<T: ToString>(values: impl IntoIterator<Item = T>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}
