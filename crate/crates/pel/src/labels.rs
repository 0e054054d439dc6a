//! Soft-target construction: fuse one-hot labels with prototype similarity
//! scores into enhanced labels, plus the label-smoothing baseline target.

use ndarray::{Array1, ArrayView1};
use thiserror::Error;

use crate::math::{OneHot, SimplexVector};

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("fusion weight must be positive and finite, got {0}")]
    InvalidBeta(f64),
    #[error("smoothing coefficient must lie in [0, 1), got {0}")]
    InvalidEpsilon(f64),
    #[error("dimension mismatch: label has {label} classes, scores have {scores}")]
    DimensionMismatch { label: usize, scores: usize },
}

/// Enhanced soft target `beta * y + w`. Not renormalized: entries sum to
/// `beta + 1`, and the ground-truth entry carries at least `beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancedLabel {
    values: Array1<f64>,
    beta: f64,
}

impl EnhancedLabel {
    pub fn values(&self) -> ArrayView1<'_, f64> {
        self.values.view()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.values.sum()
    }

    /// Values divided by `beta + 1`, for trainers that want a normalized
    /// target.
    pub fn normalized(&self) -> Array1<f64> {
        self.values.mapv(|v| v / (self.beta + 1.0))
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.values
    }
}

/// Fuse a one-hot label with similarity scores: `beta * y + w`, elementwise,
/// no renormalization.
pub fn fuse_labels(y: OneHot, w: &SimplexVector, beta: f64) -> Result<EnhancedLabel, LabelError> {
    if !beta.is_finite() || beta <= 0.0 {
        return Err(LabelError::InvalidBeta(beta));
    }
    if y.n_classes() != w.len() {
        return Err(LabelError::DimensionMismatch {
            label: y.n_classes(),
            scores: w.len(),
        });
    }
    let mut values = w.values().to_owned();
    values[y.class()] += beta;
    Ok(EnhancedLabel { values, beta })
}

/// Label-smoothing baseline target: the ground-truth class gets
/// `1 - eps + eps/N`, every other class gets `eps/N`.
pub fn smooth_labels(y: OneHot, epsilon: f64) -> Result<SimplexVector, LabelError> {
    if !epsilon.is_finite() || !(0.0..1.0).contains(&epsilon) {
        return Err(LabelError::InvalidEpsilon(epsilon));
    }
    let n = y.n_classes();
    let mut values = Array1::from_elem(n, epsilon / n as f64);
    values[y.class()] = 1.0 - epsilon + epsilon / n as f64;
    Ok(SimplexVector::try_new(values).expect("smoothed label is on the simplex"))
}
