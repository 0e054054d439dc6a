//! Per-class prototype bank: initialization from class means, per-batch
//! mean aggregation, EMA updates, and instance-prototype similarity scoring.
//!
//! Prototypes never participate in gradient-based optimization; they change
//! only through [`PrototypeBank::ema_update`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use thiserror::Error;

use crate::math::{tempered_softmax, FeatureVector, MathError, SimplexVector, Temperature};

#[derive(Debug, Error)]
pub enum BankError {
    #[error("momentum must lie in (0, 1), got {0}")]
    InvalidMomentum(f64),
    #[error("no features supplied")]
    EmptyFeatures,
    #[error("class index {class} out of range for {n_classes} classes")]
    ClassOutOfRange { class: usize, n_classes: usize },
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no prototype has been initialized")]
    Uninitialized,
    #[error("bank file malformed at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Math(#[from] MathError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How prototype rows are scored against an instance feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilarityMode {
    /// Cosine similarity: rows are L2-normalized at scoring time.
    Cosine,
    /// Raw dot product against the stored (unnormalized) rows.
    RawDot,
}

/// Mean feature of one class within a batch, with its sample count.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMean {
    pub mean: Array1<f64>,
    pub count: usize,
}

/// Per-class batch means, keyed by class index. Classes absent from the
/// batch are absent from the map.
#[derive(Debug, Clone, Default)]
pub struct ClassMeanSet {
    means: BTreeMap<usize, ClassMean>,
}

impl ClassMeanSet {
    pub fn get(&self, class: usize) -> Option<&ClassMean> {
        self.means.get(&class)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &ClassMean)> {
        self.means.iter().map(|(&c, m)| (c, m))
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }
}

/// Arithmetic mean of the features of each class present in the batch.
pub fn batch_class_means<'a, I>(batch: I, n_classes: usize) -> Result<ClassMeanSet, BankError>
where
    I: IntoIterator<Item = (&'a FeatureVector, usize)>,
{
    let mut sums: BTreeMap<usize, (Array1<f64>, usize)> = BTreeMap::new();
    let mut dim = None;
    for (f, class) in batch {
        if class >= n_classes {
            return Err(BankError::ClassOutOfRange { class, n_classes });
        }
        let d = *dim.get_or_insert(f.len());
        if f.len() != d {
            return Err(BankError::DimensionMismatch { expected: d, got: f.len() });
        }
        match sums.get_mut(&class) {
            Some((sum, count)) => {
                *sum += &f.values();
                *count += 1;
            }
            None => {
                sums.insert(class, (f.values().to_owned(), 1));
            }
        }
    }
    if sums.is_empty() {
        return Err(BankError::EmptyFeatures);
    }
    let means = sums
        .into_iter()
        .map(|(class, (sum, count))| {
            let mean = sum.mapv(|v| v / count as f64);
            (class, ClassMean { mean, count })
        })
        .collect();
    Ok(ClassMeanSet { means })
}

/// The N x D matrix of class prototypes plus the EMA momentum.
///
/// Rows for classes that have never received a feature stay zero and are
/// flagged uninitialized; the first observation overwrites such a row
/// directly instead of blending with zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    rows: Array2<f64>,
    alpha: f64,
    initialized: Vec<bool>,
}

impl PrototypeBank {
    /// Empty bank with all rows zero and uninitialized.
    pub fn new(n_classes: usize, dim: usize, alpha: f64) -> Result<Self, BankError> {
        if !alpha.is_finite() || alpha <= 0.0 || alpha >= 1.0 {
            return Err(BankError::InvalidMomentum(alpha));
        }
        Ok(Self {
            rows: Array2::zeros((n_classes, dim)),
            alpha,
            initialized: vec![false; n_classes],
        })
    }

    /// Build a bank directly from a prototype matrix and its initialization
    /// mask, as checkpoint tooling does.
    pub fn from_rows(
        rows: Array2<f64>,
        alpha: f64,
        initialized: Vec<bool>,
    ) -> Result<Self, BankError> {
        if !alpha.is_finite() || alpha <= 0.0 || alpha >= 1.0 {
            return Err(BankError::InvalidMomentum(alpha));
        }
        if initialized.len() != rows.nrows() {
            return Err(BankError::DimensionMismatch {
                expected: rows.nrows(),
                got: initialized.len(),
            });
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(BankError::Math(MathError::NonFinite));
        }
        Ok(Self { rows, alpha, initialized })
    }

    /// Initialize each row as the mean feature of its class over the given
    /// set. Classes with no samples keep the zero row and stay flagged
    /// uninitialized.
    pub fn init_from_features<'a, I>(
        features: I,
        n_classes: usize,
        alpha: f64,
    ) -> Result<Self, BankError>
    where
        I: IntoIterator<Item = (&'a FeatureVector, usize)>,
    {
        let means = batch_class_means(features, n_classes)?;
        let dim = means.iter().next().map(|(_, m)| m.mean.len()).unwrap_or(0);
        let mut bank = Self::new(n_classes, dim, alpha)?;
        for (class, m) in means.iter() {
            bank.rows.row_mut(class).assign(&m.mean);
            bank.initialized[class] = true;
        }
        Ok(bank)
    }

    pub fn n_classes(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn rows(&self) -> ArrayView2<'_, f64> {
        self.rows.view()
    }

    pub fn is_initialized(&self, class: usize) -> bool {
        self.initialized.get(class).copied().unwrap_or(false)
    }

    pub fn any_initialized(&self) -> bool {
        self.initialized.iter().any(|&b| b)
    }

    /// Move each present class prototype toward its batch mean:
    /// `P_n <- P_n + alpha * (F_n - P_n)`. Classes absent from `means` are
    /// untouched; an uninitialized row is overwritten with the mean.
    pub fn ema_update(&mut self, means: &ClassMeanSet) -> Result<(), BankError> {
        for (class, m) in means.iter() {
            if class >= self.n_classes() {
                return Err(BankError::ClassOutOfRange {
                    class,
                    n_classes: self.n_classes(),
                });
            }
            if m.mean.len() != self.dim() {
                return Err(BankError::DimensionMismatch {
                    expected: self.dim(),
                    got: m.mean.len(),
                });
            }
        }
        for (class, m) in means.iter() {
            let mut row = self.rows.row_mut(class);
            if self.initialized[class] {
                let alpha = self.alpha;
                row.zip_mut_with(&m.mean, |p, &f| *p += alpha * (f - *p));
            } else {
                row.assign(&m.mean);
                self.initialized[class] = true;
            }
        }
        Ok(())
    }

    /// Similarity scores of `f` against every prototype, softmax-normalized
    /// at temperature `t2`. Zero-norm (uninitialized) rows score 0.
    pub fn similarity_scores(
        &self,
        f: &FeatureVector,
        t2: Temperature,
        mode: SimilarityMode,
    ) -> Result<SimplexVector, BankError> {
        if !self.any_initialized() {
            return Err(BankError::Uninitialized);
        }
        if f.len() != self.dim() {
            return Err(BankError::DimensionMismatch {
                expected: self.dim(),
                got: f.len(),
            });
        }
        let mut scores = Array1::zeros(self.n_classes());
        for (n, row) in self.rows.outer_iter().enumerate() {
            let dot = row.dot(&f.values());
            scores[n] = match mode {
                SimilarityMode::RawDot => dot,
                SimilarityMode::Cosine => {
                    let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm == 0.0 {
                        0.0
                    } else {
                        dot / norm
                    }
                }
            };
        }
        Ok(tempered_softmax(scores.view(), t2)?)
    }

    /// Frobenius norm of the difference between this bank's rows and
    /// another's. Used for per-batch prototype drift.
    pub fn frobenius_distance(&self, other: &PrototypeBank) -> f64 {
        self.rows
            .iter()
            .zip(other.rows.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Text checkpoint: header, momentum, initialization mask, then one
    /// row per line at 17 significant digits (exact f64 round trip).
    pub fn save_text(&self, path: &Path) -> Result<(), BankError> {
        let mut out = String::new();
        writeln!(out, "pel-bank 1").unwrap();
        writeln!(out, "{} {}", self.n_classes(), self.dim()).unwrap();
        writeln!(out, "alpha {:.16e}", self.alpha).unwrap();
        let mask: Vec<&str> = self
            .initialized
            .iter()
            .map(|&b| if b { "1" } else { "0" })
            .collect();
        writeln!(out, "mask {}", mask.join(" ")).unwrap();
        for row in self.rows.outer_iter() {
            let vals: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{}", vals.join(" ")).unwrap();
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load_text(path: &Path) -> Result<Self, BankError> {
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        let parse_err = |line: usize, message: &str| BankError::Parse {
            line: line + 1,
            message: message.to_string(),
        };

        let (i, header) = lines.next().ok_or_else(|| parse_err(0, "empty file"))?;
        if header.trim() != "pel-bank 1" {
            return Err(parse_err(i, "expected header 'pel-bank 1'"));
        }
        let (i, shape) = lines.next().ok_or_else(|| parse_err(1, "missing shape line"))?;
        let dims: Vec<usize> = shape
            .split_whitespace()
            .map(|s| s.parse())
            .collect::<Result<_, _>>()
            .map_err(|_| parse_err(i, "shape line must be two integers"))?;
        if dims.len() != 2 {
            return Err(parse_err(i, "shape line must be two integers"));
        }
        let (n, d) = (dims[0], dims[1]);

        let (i, alpha_line) = lines.next().ok_or_else(|| parse_err(2, "missing alpha line"))?;
        let alpha = alpha_line
            .strip_prefix("alpha ")
            .and_then(|s| s.trim().parse::<f64>().ok())
            .ok_or_else(|| parse_err(i, "expected 'alpha <value>'"))?;

        let (i, mask_line) = lines.next().ok_or_else(|| parse_err(3, "missing mask line"))?;
        let mask_body = mask_line
            .strip_prefix("mask")
            .ok_or_else(|| parse_err(i, "expected 'mask <flags>'"))?;
        let initialized: Vec<bool> = mask_body
            .split_whitespace()
            .map(|s| match s {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(parse_err(i, "mask flags must be 0 or 1")),
            })
            .collect::<Result<_, _>>()?;
        if initialized.len() != n {
            return Err(parse_err(i, "mask length does not match class count"));
        }

        let mut bank = Self::new(n, d, alpha)?;
        bank.initialized = initialized;
        for r in 0..n {
            let (i, line) = lines
                .next()
                .ok_or_else(|| parse_err(4 + r, "missing prototype row"))?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse())
                .collect::<Result<_, _>>()
                .map_err(|_| parse_err(i, "row contains a non-numeric value"))?;
            if vals.len() != d {
                return Err(parse_err(i, "row length does not match dimension"));
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(parse_err(i, "row contains a non-finite value"));
            }
            bank.rows.row_mut(r).assign(&Array1::from_vec(vals));
        }
        Ok(bank)
    }
}
