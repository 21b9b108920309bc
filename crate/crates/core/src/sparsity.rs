//! Target sparsity patterns and the rounding step that enforces them.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{PruneError, Result};
use crate::linalg::Matrix;

/// Target sparsity for a weight matrix.
///
/// String form is `unstructured:<rate>` or `semi:<n>:<m>`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SparsityPattern {
    /// Zero `floor(rate · rows · cols)` entries anywhere in the matrix.
    Unstructured { rate: f64 },
    /// Zero exactly `n` entries in every contiguous group of `m` along a row.
    SemiStructured { n: usize, m: usize },
}

impl SparsityPattern {
    pub fn unstructured(rate: f64) -> Result<Self> {
        let p = SparsityPattern::Unstructured { rate };
        p.validate()?;
        Ok(p)
    }

    pub fn semi_structured(n: usize, m: usize) -> Result<Self> {
        let p = SparsityPattern::SemiStructured { n, m };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SparsityPattern::Unstructured { rate } => {
                if !(rate > 0.0 && rate < 1.0) {
                    return Err(PruneError::Parameter(format!(
                        "unstructured rate must lie in (0, 1), got {rate}"
                    )));
                }
            }
            SparsityPattern::SemiStructured { n, m } => {
                if !(n > 0 && n < m) {
                    return Err(PruneError::Parameter(format!(
                        "n:m pattern needs 0 < n < m, got {n}:{m}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Checks the pattern against a weight shape (validity plus n:m divisibility).
    pub fn check_shape(&self, rows: usize, cols: usize) -> Result<()> {
        self.validate()?;
        if let SparsityPattern::SemiStructured { n, m } = *self {
            if cols % m != 0 {
                return Err(PruneError::Shape(format!(
                    "{n}:{m} pattern needs a column count divisible by {m}, got {rows}x{cols}"
                )));
            }
        }
        Ok(())
    }

    /// Number of entries the pattern removes from a `rows × cols` matrix.
    pub fn zeros_required(&self, rows: usize, cols: usize) -> usize {
        match *self {
            SparsityPattern::Unstructured { rate } => {
                ((rate * (rows * cols) as f64).floor() as usize).min(rows * cols)
            }
            SparsityPattern::SemiStructured { n, m } => rows * (cols / m) * n,
        }
    }

    /// Nominal sparsity fraction (`rate` or `n / m`).
    pub fn nominal(&self) -> f64 {
        match *self {
            SparsityPattern::Unstructured { rate } => rate,
            SparsityPattern::SemiStructured { n, m } => n as f64 / m as f64,
        }
    }
}

impl fmt::Display for SparsityPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SparsityPattern::Unstructured { rate } => write!(f, "unstructured:{rate}"),
            SparsityPattern::SemiStructured { n, m } => write!(f, "semi:{n}:{m}"),
        }
    }
}

impl FromStr for SparsityPattern {
    type Err = PruneError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || PruneError::Parameter(format!("unrecognized sparsity pattern `{s}`"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts.as_slice() {
            ["unstructured", rate] => Self::unstructured(rate.parse().map_err(|_| bad())?),
            ["semi", n, m] => {
                Self::semi_structured(n.parse().map_err(|_| bad())?, m.parse().map_err(|_| bad())?)
            }
            _ => Err(bad()),
        }
    }
}

impl Serialize for SparsityPattern {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SparsityPattern {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Orders candidate indices by ascending score, lower index first on ties.
fn by_score(scores: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b))
}

/// Marks the entries with the lowest `scores` for removal according to
/// `pattern`. `scores` is row-major with the given shape; ties break toward
/// the smaller linear index.
pub(crate) fn lowest_score_mask(
    scores: &[f64],
    rows: usize,
    cols: usize,
    pattern: &SparsityPattern,
) -> Result<Vec<bool>> {
    pattern.check_shape(rows, cols)?;
    debug_assert_eq!(scores.len(), rows * cols);
    let mut mask = vec![false; rows * cols];
    match *pattern {
        SparsityPattern::Unstructured { .. } => {
            let k = pattern.zeros_required(rows, cols);
            let mut idx: Vec<usize> = (0..scores.len()).collect();
            if k > 0 && k < idx.len() {
                idx.select_nth_unstable_by(k - 1, by_score(scores));
            }
            for &i in &idx[..k] {
                mask[i] = true;
            }
        }
        SparsityPattern::SemiStructured { n, m } => {
            let mut group: Vec<usize> = Vec::with_capacity(m);
            for start in (0..scores.len()).step_by(m) {
                group.clear();
                group.extend(start..start + m);
                group.sort_by(by_score(scores));
                for &i in &group[..n] {
                    mask[i] = true;
                }
            }
        }
    }
    Ok(mask)
}

/// Zeroes the smallest-magnitude entries so `w` meets `pattern` exactly.
/// Surviving entries are copied bit-for-bit.
///
/// For unstructured patterns `floor(rate · size)` entries are removed from the
/// whole matrix, so tiny matrices can land marginally below `rate`.
pub fn round_to_pattern(w: &Matrix, pattern: &SparsityPattern) -> Result<Matrix> {
    let magnitudes: Vec<f64> = w.data().iter().map(|v| v.abs()).collect();
    let mask = lowest_score_mask(&magnitudes, w.rows(), w.cols(), pattern)?;
    Ok(apply_mask(w, &mask))
}

pub(crate) fn apply_mask(w: &Matrix, mask: &[bool]) -> Matrix {
    let data = w
        .data()
        .iter()
        .zip(mask)
        .map(|(&v, &zero)| if zero { 0.0 } else { v })
        .collect();
    Matrix::from_raw(w.rows(), w.cols(), data)
}

/// Fraction of entries that are exactly zero.
pub fn sparsity_of(w: &Matrix) -> f64 {
    let zeros = w.data().iter().filter(|&&v| v == 0.0).count();
    zeros as f64 / w.len() as f64
}

pub fn satisfies_pattern(w: &Matrix, pattern: &SparsityPattern) -> Result<bool> {
    pattern.check_shape(w.rows(), w.cols())?;
    Ok(match *pattern {
        SparsityPattern::Unstructured { .. } => {
            let zeros = w.data().iter().filter(|&&v| v == 0.0).count();
            zeros >= pattern.zeros_required(w.rows(), w.cols())
        }
        SparsityPattern::SemiStructured { n, m } => w
            .data()
            .chunks(m)
            .all(|g| g.iter().filter(|&&v| v == 0.0).count() >= n),
    })
}
