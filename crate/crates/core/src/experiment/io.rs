//! Dataset ingestion from CSV, train/test splitting and standardization.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Largest test set drawn from a fixed dataset.
pub const MAX_TEST_SIZE: usize = 1000;

/// `min(1000, ⌊N/5⌋)`, but at least one row once `N ≥ 2`.
pub fn test_size(n: usize) -> usize {
    if n < 2 {
        return 0;
    }
    (n / 5).clamp(1, MAX_TEST_SIZE)
}

/// Splits `data` into `(train, test)` with a uniformly drawn test set of
/// [`test_size`] rows. Both parts keep the original row order.
pub fn split_test(data: &Dataset, rng: &mut SeededRng) -> Result<(Dataset, Dataset)> {
    let n = data.len();
    if n < 2 {
        return Err(Error::out_of_range("N", n, "at least 2 rows to split"));
    }
    let mut is_test = vec![false; n];
    for i in sample(rng, n, test_size(n)) {
        is_test[i] = true;
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| is_test[i]);
    Ok((data.subset(&train)?, data.subset(&test)?))
}

/// Per-column centering and scaling, fitted on one dataset and applied to
/// others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation; constant columns use 1.
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: &Dataset) -> Self {
        let d = data.dim();
        let n = data.len() as f64;
        let mut mean = vec![0.0; d];
        for row in data.rows() {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in data.rows() {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|v| {
                let sd = (v / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, data: &mut Dataset) {
        data.map_rows(|row| {
            for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *x = (*x - m) / s;
            }
        });
    }
}

/// Which CSV column holds the label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Name(String),
    /// Zero-based position.
    Index(usize),
}

impl LabelColumn {
    /// A header name, or a zero-based index when `spec` is all digits.
    pub fn parse(spec: &str) -> Self {
        match spec.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(spec.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvOptions {
    pub label_column: LabelColumn,
    /// Label value mapped to class 1; every other value maps to 0. When
    /// absent the label column must already hold `0`/`1`.
    pub positive_label: Option<String>,
    pub has_header: bool,
}

/// Reads a numeric CSV. Every column except the label column is a feature.
///
/// Errors name the 1-based file line and the column of the offending cell.
pub fn load_csv(path: &Path, options: &CsvOptions) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(options.has_header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, 0, "-", e.to_string()))?;
    let header: Vec<String> = if options.has_header {
        reader
            .headers()
            .map_err(|e| csv_error(path, 1, "-", e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect()
    } else {
        Vec::new()
    };
    let column_name = |j: usize| header.get(j).cloned().unwrap_or_else(|| j.to_string());

    let mut label_at = match &options.label_column {
        LabelColumn::Index(i) => Some(*i),
        LabelColumn::Name(name) => Some(header.iter().position(|h| h == name).ok_or_else(|| {
            csv_error(path, 1, name, "label column not found in header".into())
        })?),
    };
    let mut width = None;
    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    let mut lines = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            csv_error(path, line, "-", e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(csv_error(
                path,
                line,
                "-",
                format!("expected {w} fields, found {}", record.len()),
            ));
        }
        let label = *label_at.get_or_insert(0);
        if label >= w {
            return Err(csv_error(
                path,
                line,
                &label.to_string(),
                format!("label column index out of range for {w} fields"),
            ));
        }
        for (j, cell) in record.iter().enumerate() {
            if j == label {
                raw_labels.push(cell.to_string());
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| {
                csv_error(path, line, &column_name(j), format!("cannot parse {cell:?} as a number"))
            })?;
            if !v.is_finite() {
                return Err(csv_error(path, line, &column_name(j), format!("{cell:?} is not finite")));
            }
            features.push(v);
        }
        lines.push(line);
    }
    let width = width.ok_or(Error::EmptyDataset)?;
    if width < 2 {
        return Err(csv_error(path, 1, "-", "need a label column and at least one feature".into()));
    }
    let label_at = label_at.unwrap_or(0);
    let labels = map_labels(&raw_labels, options.positive_label.as_deref())
        .map_err(|(row, cause)| csv_error(path, lines[row], &column_name(label_at), cause))?;
    Dataset::new(features, labels, width - 1)
}

fn map_labels(raw: &[String], positive: Option<&str>) -> Result<Vec<Label>, (usize, String)> {
    let distinct: BTreeSet<&str> = raw.iter().map(String::as_str).collect();
    if distinct.len() > 2 {
        let shown: Vec<&str> = distinct.iter().take(5).copied().collect();
        return Err((
            0,
            format!("label column has {} distinct values {shown:?}; expected 2", distinct.len()),
        ));
    }
    raw.iter()
        .enumerate()
        .map(|(row, v)| match positive {
            Some(p) => Ok(Label::from(v == p)),
            None => match v.parse::<f64>() {
                Ok(x) if x == 0.0 => Ok(0),
                Ok(x) if x == 1.0 => Ok(1),
                _ => Err((
                    row,
                    format!("label {v:?} is not 0/1; declare the positive label"),
                )),
            },
        })
        .collect()
}

fn csv_error(path: &Path, row: usize, column: &str, cause: String) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        row,
        column: column.to_string(),
        cause,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    fn opts(label: &str, positive: Option<&str>) -> CsvOptions {
        CsvOptions {
            label_column: LabelColumn::parse(label),
            positive_label: positive.map(str::to_string),
            has_header: true,
        }
    }

    #[test]
    fn test_size_rule() {
        assert_eq!(test_size(10_000), 1000);
        assert_eq!(test_size(100), 20);
        assert_eq!(test_size(6), 1);
        assert_eq!(test_size(2), 1);
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let data = Dataset::new((0..100).map(f64::from).collect(), vec![0; 100], 1).unwrap();
        let (train, test) = split_test(&data, &mut SeededRng::new(3, 0)).unwrap();
        assert_eq!(test.len(), 20);
        assert_eq!(train.len(), 80);
        let mut all: Vec<f64> = train.features().iter().chain(test.features()).copied().collect();
        all.sort_by(f64::total_cmp);
        all.dedup();
        assert_eq!(all.len(), 100);
        let one = Dataset::new(vec![0.0], vec![0], 1).unwrap();
        assert!(split_test(&one, &mut SeededRng::new(3, 0)).is_err());
    }

    #[test]
    fn toy_csv_loads() {
        let f = write("a,b,y\n1,2,0\n3,4,1\n5,6,1\n7,8,0\n");
        let data = load_csv(f.path(), &opts("y", None)).unwrap();
        assert_eq!(data.len(), 4);
        assert_eq!(data.dim(), 2);
        assert_eq!(data.labels(), &[0, 1, 1, 0]);
        assert_eq!(data.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn label_by_index_and_positive_value() {
        let f = write("y,a\nM,1.5\nB,2.5\nM,3.5\n");
        let data = load_csv(f.path(), &opts("0", Some("M"))).unwrap();
        assert_eq!(data.labels(), &[1, 0, 1]);
        assert_eq!(data.features(), &[1.5, 2.5, 3.5]);
    }

    #[test]
    fn three_labels_rejected() {
        let f = write("a,y\n1,0\n2,1\n3,2\n");
        let err = load_csv(f.path(), &opts("y", None)).unwrap_err();
        assert!(err.to_string().contains("3 distinct"), "{err}");
    }

    #[test]
    fn bad_cell_reports_row_and_column() {
        let f = write("a,b,y\n1,2,0\n3,oops,1\n");
        match load_csv(f.path(), &opts("y", None)).unwrap_err() {
            Error::Csv { row, column, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, "b");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_label_column() {
        let f = write("a,b\n1,0\n");
        assert!(load_csv(f.path(), &opts("y", None)).is_err());
    }

    #[test]
    fn standardized_train_has_zero_mean() {
        let mut rng = SeededRng::new(5, 0);
        let feats: Vec<f64> = (0..300).map(|i| (i as f64).sin() * 7.0 + 3.0).collect();
        let data = Dataset::new(feats, vec![0; 100], 3).unwrap();
        let (mut train, mut test) = split_test(&data, &mut rng).unwrap();
        let s = Standardizer::fit(&train);
        s.apply(&mut train);
        s.apply(&mut test);
        let again = Standardizer::fit(&train);
        for (m, sd) in again.mean.iter().zip(&again.scale) {
            assert!(m.abs() < 1e-9);
            assert!((sd - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_column_is_only_centered() {
        let mut data = Dataset::new(vec![2.0, 2.0, 2.0], vec![0, 1, 0], 1).unwrap();
        let s = Standardizer::fit(&data);
        assert_eq!(s.scale, vec![1.0]);
        s.apply(&mut data);
        assert_eq!(data.features(), &[0.0, 0.0, 0.0]);
    }
}
