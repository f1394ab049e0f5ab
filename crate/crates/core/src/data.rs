//! Feature matrices with binary labels, and the Euclidean distance every
//! neighbor search is built on.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class label. Only `0` and `1` are valid.
pub type Label = u8;

/// An `N × d` feature matrix (row-major) with one binary label per row.
///
/// Immutable once constructed; every constructor enforces `N ≥ 1`, `d ≥ 1`,
/// finite features, and labels in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<Label>,
    dim: usize,
}

impl Dataset {
    /// Builds a dataset from a flat row-major feature buffer.
    pub fn new(features: Vec<f64>, labels: Vec<Label>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::out_of_range("d", 0, "d >= 1"));
        }
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if features.len() != labels.len() * dim {
            return Err(Error::LengthMismatch {
                left: features.len(),
                right: labels.len() * dim,
            });
        }
        for (row, (x, &y)) in features.chunks_exact(dim).zip(&labels).enumerate() {
            check_row(row, x, y)?;
        }
        Ok(Self {
            features,
            labels,
            dim,
        })
    }

    /// Assembles a dataset from rows that are already known to be valid.
    pub(crate) fn from_parts_unchecked(features: Vec<f64>, labels: Vec<Label>, dim: usize) -> Self {
        debug_assert_eq!(features.len(), labels.len() * dim);
        Self {
            features,
            labels,
            dim,
        }
    }

    /// Number of observations `N`.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    /// Always false: datasets hold at least one row.
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature dimension `d`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.features.chunks_exact(self.dim)
    }

    pub fn label(&self, i: usize) -> Label {
        self.labels[i]
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Number of rows with label 1.
    pub fn count_positive(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    /// Copies the given rows, in the given order, into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::out_of_range("row index", i, format!("< {}", self.len())));
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Ok(Self::from_parts_unchecked(features, labels, self.dim))
    }

    /// Applies `f` to every feature row in place (used for standardization).
    pub(crate) fn map_rows(&mut self, mut f: impl FnMut(&mut [f64])) {
        for row in self.features.chunks_exact_mut(self.dim) {
            f(row);
        }
    }
}

fn check_row(row: usize, x: &[f64], y: Label) -> Result<()> {
    if y > 1 {
        return Err(Error::InvalidRow {
            row,
            cause: format!("label {y} is not binary"),
        });
    }
    if let Some(j) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidRow {
            row,
            cause: format!("feature {j} is not finite ({})", x[j]),
        });
    }
    Ok(())
}

/// Validates raw `(features, label)` rows and packs them into a [`Dataset`].
///
/// Rejections name the offending row: ragged rows, non-binary labels, and
/// NaN or infinite features.
pub fn validate_dataset<R, F>(rows: R) -> Result<Dataset>
where
    R: IntoIterator<Item = (F, i64)>,
    F: AsRef<[f64]>,
{
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut dim = None;
    for (row, (x, y)) in rows.into_iter().enumerate() {
        let x = x.as_ref();
        let d = *dim.get_or_insert(x.len());
        if d == 0 {
            return Err(Error::InvalidRow {
                row,
                cause: "row has no features".into(),
            });
        }
        if x.len() != d {
            return Err(Error::InvalidRow {
                row,
                cause: format!("ragged row: {} features, expected {d}", x.len()),
            });
        }
        let y = match y {
            0 => 0,
            1 => 1,
            other => {
                return Err(Error::InvalidRow {
                    row,
                    cause: format!("label {other} is not binary"),
                })
            }
        };
        check_row(row, x, y)?;
        features.extend_from_slice(x);
        labels.push(y);
    }
    let dim = dim.ok_or(Error::EmptyDataset)?;
    Ok(Dataset::from_parts_unchecked(features, labels, dim))
}

/// A single query location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPoint(Vec<f64>);

impl QueryPoint {
    pub fn new(coords: Vec<f64>) -> Self {
        Self(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for QueryPoint {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for QueryPoint {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Squared Euclidean distance `Σⱼ (aⱼ − bⱼ)²`.
pub fn squared_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(sq_dist(a, b))
}

/// Unchecked kernel shared by the brute-force and tree searches. Both paths
/// must accumulate in the same order so that their distances are
/// bit-identical.
#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let t = x - y;
        acc += t * t;
    }
    acc
}
