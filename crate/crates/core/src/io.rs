//! CSV input and output.
//!
//! Numbers are written with the shortest representation that parses back to
//! the same `f64`, so every written table reads back bit-for-bit.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::dissim::{validate_dissimilarity, DissimilarityMatrix, FeatureTable};
use crate::error::{Error, Result};
use crate::significance::ReplicateMatrices;

/// Cells read as missing in feature tables.
pub const MISSING_TOKENS: [&str; 4] = ["", "NA", "NaN", "nan"];
pub const MANIFEST: &str = "manifest.csv";
pub const ROLES: [&str; 4] = ["reference", "reference_holdout", "target", "target_holdout"];

/// A matrix with row and column labels, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub corner: String,
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub values: DMatrix<f64>,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn parse_cell(s: &str, line: usize) -> Result<Option<f64>> {
    let t = s.trim();
    if MISSING_TOKENS.contains(&t) {
        return Ok(None);
    }
    t.parse::<f64>().map(Some).map_err(|_| Error::Parse { line, msg: format!("`{t}` is not a number") })
}

/// Corner label, row labels, column labels and cells (`None` when missing).
type Grid = (String, Vec<String>, Vec<String>, Vec<Vec<Option<f64>>>);

fn read_grid<R: Read>(reader: R) -> Result<Grid> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            msg: "header needs a label column and at least one value column".into(),
        });
    }
    let corner = header[0].to_string();
    let cols: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = idx + 2;
        if rec.len() != cols.len() + 1 {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", cols.len() + 1, rec.len()),
            });
        }
        rows.push(rec[0].to_string());
        cells.push(rec.iter().skip(1).map(|c| parse_cell(c, line)).collect::<Result<Vec<_>>>()?);
    }
    if rows.is_empty() {
        return Err(Error::Parse { line: 2, msg: "no data rows".into() });
    }
    Ok((corner, rows, cols, cells))
}

/// Subjects in rows, features in columns; the first column holds subject labels.
pub fn read_feature_table<R: Read>(reader: R) -> Result<FeatureTable> {
    let (_, rows, cols, cells) = read_grid(reader)?;
    let (d, l) = (rows.len(), cols.len());
    let values = DMatrix::from_fn(d, l, |i, j| cells[i][j].unwrap_or(0.0));
    let mask = DMatrix::from_fn(d, l, |i, j| cells[i][j].is_none());
    FeatureTable::new(rows, cols, values, mask)
}

pub fn read_feature_table_path(path: &Path) -> Result<FeatureTable> {
    read_feature_table(open(path)?)
}

/// A labelled numeric matrix; missing cells are an error.
pub fn read_matrix<R: Read>(reader: R) -> Result<LabeledMatrix> {
    let (corner, rows, cols, cells) = read_grid(reader)?;
    let mut values = DMatrix::zeros(rows.len(), cols.len());
    for (i, row) in cells.iter().enumerate() {
        for (j, c) in row.iter().enumerate() {
            values[(i, j)] = c.ok_or_else(|| Error::Parse {
                line: i + 2,
                msg: format!("missing value in column `{}`", cols[j]),
            })?;
        }
    }
    Ok(LabeledMatrix { corner, rows, cols, values })
}

pub fn read_matrix_path(path: &Path) -> Result<LabeledMatrix> {
    read_matrix(open(path)?)
}

/// A square dissimilarity matrix whose row and column labels agree.
pub fn read_dissimilarity<R: Read>(reader: R) -> Result<DissimilarityMatrix> {
    let m = read_matrix(reader)?;
    if m.rows.len() != m.cols.len() {
        return Err(Error::BadShape(format!("{}x{} is not square", m.rows.len(), m.cols.len())));
    }
    if m.rows != m.cols {
        return Err(Error::BadLabels("row and column labels differ".into()));
    }
    validate_dissimilarity(m.values, m.rows)
}

pub fn read_dissimilarity_path(path: &Path) -> Result<DissimilarityMatrix> {
    read_dissimilarity(open(path)?)
}

/// Shortest decimal that parses back to the same value.
pub fn format_f64(v: f64) -> String {
    format!("{v}")
}

pub fn write_matrix<W: Write>(writer: W, m: &LabeledMatrix) -> Result<()> {
    if m.rows.len() != m.values.nrows() || m.cols.len() != m.values.ncols() {
        return Err(Error::ShapeMismatch("labels do not match matrix shape".into()));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(std::iter::once(m.corner.as_str()).chain(m.cols.iter().map(String::as_str)))?;
    for (i, label) in m.rows.iter().enumerate() {
        let mut rec = Vec::with_capacity(m.cols.len() + 1);
        rec.push(label.clone());
        rec.extend(m.values.row(i).iter().map(|&v| format_f64(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_matrix_path(path: &Path, m: &LabeledMatrix) -> Result<()> {
    write_matrix(File::create(path)?, m)
}

pub fn write_feature_table<W: Write>(writer: W, t: &FeatureTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(std::iter::once("subject").chain(t.features().iter().map(String::as_str)))?;
    for (i, s) in t.subjects().iter().enumerate() {
        let mut rec = Vec::with_capacity(t.n_features() + 1);
        rec.push(s.clone());
        for j in 0..t.n_features() {
            rec.push(if t.is_missing(i, j) { "NA".to_string() } else { format_f64(t.values()[(i, j)]) });
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_feature_table_path(path: &Path, t: &FeatureTable) -> Result<()> {
    write_feature_table(File::create(path)?, t)
}

pub fn write_dissimilarity_path(path: &Path, subjects: &[String], values: &DMatrix<f64>) -> Result<()> {
    write_matrix_path(
        path,
        &LabeledMatrix {
            corner: "subject".into(),
            rows: subjects.to_vec(),
            cols: subjects.to_vec(),
            values: values.clone(),
        },
    )
}

/// Replicate matrices from a directory holding `manifest.csv` with columns
/// `replicate,role,path` (paths relative to the directory). Every replicate
/// needs all four roles; all matrices must share one subject list.
pub fn read_bootstrap_dir(dir: &Path) -> Result<(Vec<String>, Vec<ReplicateMatrices>)> {
    let mut rdr = csv::Reader::from_reader(open(&dir.join(MANIFEST))?);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["replicate", "role", "path"] {
        return Err(Error::Parse { line: 1, msg: "manifest header must be replicate,role,path".into() });
    }
    let mut entries: BTreeMap<usize, BTreeMap<String, PathBuf>> = BTreeMap::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = idx + 2;
        let rep: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::Parse { line, msg: format!("bad replicate index `{}`", &rec[0]) })?;
        let role = rec[1].trim().to_string();
        if !ROLES.contains(&role.as_str()) {
            return Err(Error::Parse { line, msg: format!("unknown role `{role}`") });
        }
        if entries.entry(rep).or_default().insert(role.clone(), dir.join(rec[2].trim())).is_some() {
            return Err(Error::Parse { line, msg: format!("duplicate role `{role}` for replicate {rep}") });
        }
    }
    if entries.is_empty() {
        return Err(Error::Parse { line: 2, msg: "manifest lists no matrices".into() });
    }
    let mut subjects: Option<Vec<String>> = None;
    let mut out = Vec::with_capacity(entries.len());
    for (rep, roles) in entries {
        let mut load = |role: &str| -> Result<DMatrix<f64>> {
            let path = roles.get(role).ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("replicate {rep} has no `{role}` matrix"),
            })?;
            let m = read_dissimilarity_path(path)?;
            match &subjects {
                None => subjects = Some(m.subjects().to_vec()),
                Some(s) => crate::comparison::check_subjects(s, m.subjects())?,
            }
            Ok(m.into_values())
        };
        out.push(ReplicateMatrices {
            reference: load(ROLES[0])?,
            reference_holdout: load(ROLES[1])?,
            target: load(ROLES[2])?,
            target_holdout: load(ROLES[3])?,
        });
    }
    Ok((subjects.unwrap_or_default(), out))
}

/// Write replicate matrices in the layout [`read_bootstrap_dir`] reads.
pub fn write_bootstrap_dir(dir: &Path, subjects: &[String], mats: &[ReplicateMatrices]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_writer(File::create(dir.join(MANIFEST))?);
    w.write_record(["replicate", "role", "path"])?;
    for (i, m) in mats.iter().enumerate() {
        for (role, values) in
            ROLES.iter().zip([&m.reference, &m.reference_holdout, &m.target, &m.target_holdout])
        {
            let name = format!("rep{i}_{role}.csv");
            write_dissimilarity_path(&dir.join(&name), subjects, values)?;
            w.write_record([i.to_string().as_str(), role, name.as_str()])?;
        }
    }
    w.flush()?;
    Ok(())
}
