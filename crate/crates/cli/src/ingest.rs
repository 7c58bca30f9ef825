//! CSV and LIBSVM readers.
//!
//! Features are standardized column by column (population standard deviation,
//! constant columns set to zero). For logistic loss the two label values are
//! mapped to `−1` and `+1`.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use rsqn::objectives::{Loss, RegressionObjective};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    Csv,
    Libsvm,
}

impl FileFormat {
    /// `.csv` means CSV, anything else LIBSVM.
    pub fn from_extension(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => FileFormat::Csv,
            _ => FileFormat::Libsvm,
        }
    }
}

impl FromStr for FileFormat {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(FileFormat::Csv),
            "libsvm" | "svmlight" => Ok(FileFormat::Libsvm),
            _ => Err(CliError::Input(format!("unknown format `{s}` (expected csv or libsvm)"))),
        }
    }
}

/// Raw rows and labels, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledData {
    pub features: DMatrix<f64>,
    pub labels: DVector<f64>,
}

fn parse_number(tok: &str) -> Option<f64> {
    let t = tok.trim();
    let v = if t.contains('\u{2212}') {
        t.replace('\u{2212}', "-").parse().ok()?
    } else {
        t.parse().ok()?
    };
    Some(v)
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> CliError {
    CliError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Comma-separated rows, last column is the label. A first line that does not parse
/// as numbers is taken as a header.
pub fn parse_csv(text: &str, path: &Path) -> Result<LabeledData> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    let mut seen_first = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: Option<Vec<f64>> = line.split(',').map(parse_number).collect();
        let first = !seen_first;
        seen_first = true;
        let values = match parsed {
            Some(v) => v,
            None if first => continue,
            None => return Err(parse_error(path, line_no, "non-numeric field")),
        };
        if values.len() < 2 {
            return Err(parse_error(path, line_no, "need at least one feature and a label"));
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(parse_error(path, line_no, format!("expected {w} fields, found {}", values.len())))
            }
            _ => {}
        }
        rows.push(values);
    }
    let Some(w) = width else {
        return Err(CliError::Input(format!("{}: no data rows", path.display())));
    };
    let features = DMatrix::from_fn(rows.len(), w - 1, |i, j| rows[i][j]);
    let labels = DVector::from_iterator(rows.len(), rows.iter().map(|r| r[w - 1]));
    Ok(LabeledData { features, labels })
}

/// `label idx:val …` lines with 1-based indices. The dimension is the largest index
/// seen, or `dim` when given. Text after `#` is ignored.
pub fn parse_libsvm(text: &str, path: &Path, dim: Option<usize>) -> Result<LabeledData> {
    let mut labels = Vec::new();
    let mut entries: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut max_idx = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        let label = toks
            .next()
            .and_then(parse_number)
            .ok_or_else(|| parse_error(path, line_no, "missing or invalid label"))?;
        let mut row = Vec::new();
        for tok in toks {
            let (i, v) = tok
                .split_once(':')
                .ok_or_else(|| parse_error(path, line_no, format!("expected idx:val, found `{tok}`")))?;
            let i: usize = i
                .parse()
                .map_err(|_| parse_error(path, line_no, format!("invalid index `{i}`")))?;
            if i == 0 {
                return Err(parse_error(path, line_no, "indices are 1-based"));
            }
            let v = parse_number(v).ok_or_else(|| parse_error(path, line_no, format!("invalid value `{v}`")))?;
            if let Some(d) = dim {
                if i > d {
                    return Err(parse_error(path, line_no, format!("index {i} exceeds dimension {d}")));
                }
            }
            max_idx = max_idx.max(i);
            row.push((i - 1, v));
        }
        labels.push(label);
        entries.push(row);
    }
    if labels.is_empty() {
        return Err(CliError::Input(format!("{}: no data rows", path.display())));
    }
    let d = dim.unwrap_or(max_idx);
    if d == 0 {
        return Err(CliError::Input(format!("{}: no features", path.display())));
    }
    let mut features = DMatrix::zeros(labels.len(), d);
    for (r, row) in entries.iter().enumerate() {
        for &(c, v) in row {
            features[(r, c)] = v;
        }
    }
    Ok(LabeledData {
        features,
        labels: DVector::from_vec(labels),
    })
}

/// Zero mean and unit population variance per column; constant columns become zero.
pub fn standardize(features: &mut DMatrix<f64>) {
    let n = features.nrows() as f64;
    for mut col in features.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
        let std = (col.norm_squared() / n).sqrt();
        if std > 1e-12 * (1.0 + mean.abs()) {
            col /= std;
        } else {
            col.fill(0.0);
        }
    }
}

/// Maps two distinct label values to `−1` (smaller) and `+1` (larger). A single class
/// is accepted only if it is already `±1`.
pub fn binarize_labels(labels: &DVector<f64>) -> Result<DVector<f64>> {
    let mut distinct: Vec<f64> = Vec::new();
    for &b in labels.iter() {
        if !distinct.contains(&b) {
            distinct.push(b);
        }
    }
    distinct.sort_by(f64::total_cmp);
    match *distinct.as_slice() {
        [_, hi] => Ok(labels.map(|b| if b == hi { 1.0 } else { -1.0 })),
        [b] if b == 1.0 || b == -1.0 => Ok(labels.clone()),
        _ => Err(CliError::Input(format!(
            "logistic loss needs two label values, found {}",
            distinct.len()
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub format: FileFormat,
    pub loss: Loss,
    pub tau: f64,
    /// LIBSVM feature count; inferred from the largest index when absent.
    pub dim: Option<usize>,
}

pub fn read_labeled(path: &Path, format: FileFormat, dim: Option<usize>) -> Result<LabeledData> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    match format {
        FileFormat::Csv => parse_csv(&text, path),
        FileFormat::Libsvm => parse_libsvm(&text, path, dim),
    }
}

/// Reads, standardizes and wraps a dataset as a regression objective.
pub fn ingest(path: &Path, opts: &IngestOptions) -> Result<RegressionObjective> {
    let raw = read_labeled(path, opts.format, opts.dim)?;
    into_objective(raw, opts.loss, opts.tau)
}

pub fn into_objective(mut raw: LabeledData, loss: Loss, tau: f64) -> Result<RegressionObjective> {
    standardize(&mut raw.features);
    let labels = match loss {
        Loss::Logistic => binarize_labels(&raw.labels)?,
        Loss::Square => raw.labels,
    };
    Ok(RegressionObjective::new(raw.features, labels, loss, tau)?)
}

/// CSV text (no header) with features followed by the label.
pub fn emit_csv(features: &DMatrix<f64>, labels: &DVector<f64>) -> String {
    let mut out = String::new();
    for (row, b) in features.row_iter().zip(labels.iter()) {
        for v in row.iter() {
            write!(out, "{v},").unwrap();
        }
        writeln!(out, "{b}").unwrap();
    }
    out
}

/// LIBSVM text listing nonzero features only.
pub fn emit_libsvm(features: &DMatrix<f64>, labels: &DVector<f64>) -> String {
    let mut out = String::new();
    for (row, b) in features.row_iter().zip(labels.iter()) {
        write!(out, "{b}").unwrap();
        for (j, v) in row.iter().enumerate() {
            if *v != 0.0 {
                write!(out, " {}:{v}", j + 1).unwrap();
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn libsvm_line_is_densified() {
        let d = parse_libsvm("1 1:2.0 3:-1.0\n", p(), None).unwrap();
        assert_eq!(d.features, dmatrix![2.0, 0.0, -1.0]);
        assert_eq!(d.labels, dvector![1.0]);
    }

    #[test]
    fn libsvm_explicit_dim_pads() {
        let d = parse_libsvm("-1 2:1\n+1 1:3 # comment\n", p(), Some(4)).unwrap();
        assert_eq!(d.features, dmatrix![0.0, 1.0, 0.0, 0.0; 3.0, 0.0, 0.0, 0.0]);
        assert_eq!(d.labels, dvector![-1.0, 1.0]);
    }

    #[test]
    fn libsvm_errors_carry_line_numbers() {
        let err = parse_libsvm("1 1:2\n\n1 0:3\n", p(), None).unwrap_err();
        assert!(err.to_string().contains(":3:"), "{err}");
        let err = parse_libsvm("1 1:2\nx 1:1\n", p(), None).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
        let err = parse_libsvm("1 1-2\n", p(), None).unwrap_err();
        assert!(err.to_string().contains(":1:"), "{err}");
        assert!(parse_libsvm("1 5:1\n", p(), Some(3)).is_err());
    }

    #[test]
    fn csv_standardizes_and_binarizes() {
        let raw = parse_csv("0.5,1.5,0\n\u{2212}0.5,\u{2212}1.5,1\n", p()).unwrap();
        let obj = into_objective(raw, Loss::Logistic, 0.0).unwrap();
        assert_eq!(obj.data(), &dmatrix![1.0, 1.0; -1.0, -1.0]);
        assert_eq!(obj.labels(), &dvector![-1.0, 1.0]);
    }

    #[test]
    fn csv_header_is_detected_only_on_first_line() {
        let d = parse_csv("a,b,y\n1,2,3\n4,5,6\n", p()).unwrap();
        assert_eq!(d.features.shape(), (2, 2));
        let err = parse_csv("1,2,3\na,b,c\n", p()).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
        let err = parse_csv("1,2,3\n4,5\n", p()).unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(parse_csv("", p()).is_err());
        assert!(parse_csv("x,y\n", p()).is_err());
        assert!(parse_libsvm("\n# nothing\n", p(), None).is_err());
    }

    #[test]
    fn constant_column_becomes_zero() {
        let mut m = dmatrix![1.0, 3.0; 1.0, 5.0; 1.0, 7.0];
        standardize(&mut m);
        assert_eq!(m.column(0).amax(), 0.0);
        let c = m.column(1);
        assert!(c.sum().abs() < 1e-15);
        assert!((c.norm_squared() / 3.0 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn binarize_rejects_many_classes() {
        assert!(binarize_labels(&dvector![0.0, 1.0, 2.0]).is_err());
        assert_eq!(binarize_labels(&dvector![3.0, 7.0, 3.0]).unwrap(), dvector![-1.0, 1.0, -1.0]);
    }

    #[test]
    fn emitted_text_round_trips() {
        let m = dmatrix![1.0, 0.0, -2.5; 0.25, 3.0, 0.0];
        let b = dvector![1.0, -1.0];
        let csv = parse_csv(&emit_csv(&m, &b), p()).unwrap();
        assert_eq!((csv.features, csv.labels), (m.clone(), b.clone()));
        let svm = parse_libsvm(&emit_libsvm(&m, &b), p(), Some(3)).unwrap();
        assert_eq!((svm.features, svm.labels), (m, b));
    }
}
