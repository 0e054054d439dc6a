//! Shared numerical primitives: tempered softmax, L2 normalization, and the
//! cross-entropy / KL objectives.
//!
//! All arithmetic is `f64`; the gradient checks elsewhere in the crate rely
//! on that headroom.

use ndarray::{Array1, ArrayView1};
use thiserror::Error;

/// Tolerance for "sums to one" checks on probability vectors.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Predicted probabilities are clamped to `[PROB_EPSILON, 1]` before any log.
pub const PROB_EPSILON: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MathError {
    #[error("non-finite value in input vector")]
    NonFinite,
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("cannot L2-normalize a zero vector")]
    ZeroNorm,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("entries must be nonnegative, found {0}")]
    NegativeEntry(f64),
    #[error("vector sums to {0}, expected 1 within {SIMPLEX_TOL}")]
    NotOnSimplex(f64),
    #[error("class index {class} out of range for {n_classes} classes")]
    ClassOutOfRange { class: usize, n_classes: usize },
    #[error("empty vector")]
    Empty,
}

/// Softmax temperature; guaranteed positive and finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(t: f64) -> Result<Self, MathError> {
        if !t.is_finite() || t <= 0.0 {
            return Err(MathError::InvalidTemperature(t));
        }
        Ok(Self(t))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Probability distribution over classes: nonnegative entries summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexVector(Array1<f64>);

impl SimplexVector {
    pub fn try_new(values: Array1<f64>) -> Result<Self, MathError> {
        if values.is_empty() {
            return Err(MathError::Empty);
        }
        let mut sum = 0.0;
        for &v in &values {
            if !v.is_finite() {
                return Err(MathError::NonFinite);
            }
            if v < 0.0 {
                return Err(MathError::NegativeEntry(v));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(MathError::NotOnSimplex(sum));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.0
    }

    /// Index of the largest entry; first index wins on ties.
    pub fn argmax(&self) -> usize {
        argmax(self.0.view())
    }
}

/// Feature vector with unit L2 norm, as produced by [`l2_normalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Array1<f64>);

impl FeatureVector {
    pub fn values(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.0
    }
}

/// One-hot ground-truth label: all mass on a single class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OneHot {
    class: usize,
    n_classes: usize,
}

impl OneHot {
    pub fn new(class: usize, n_classes: usize) -> Result<Self, MathError> {
        if class >= n_classes {
            return Err(MathError::ClassOutOfRange { class, n_classes });
        }
        Ok(Self { class, n_classes })
    }

    pub fn class(self) -> usize {
        self.class
    }

    pub fn n_classes(self) -> usize {
        self.n_classes
    }

    pub fn to_dense(self) -> Array1<f64> {
        let mut v = Array1::zeros(self.n_classes);
        v[self.class] = 1.0;
        v
    }
}

/// Index of the largest entry; first index wins on ties.
pub fn argmax(values: ArrayView1<f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &v) in values.iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

/// Softmax of `logits / t`, computed with max-subtraction so large logits
/// cannot overflow.
pub fn tempered_softmax(logits: ArrayView1<f64>, t: Temperature) -> Result<SimplexVector, MathError> {
    if logits.is_empty() {
        return Err(MathError::Empty);
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(MathError::NonFinite);
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut exps: Array1<f64> = logits.mapv(|z| ((z - max) / t.get()).exp());
    let sum: f64 = exps.sum();
    exps.mapv_inplace(|e| e / sum);
    SimplexVector::try_new(exps)
}

/// Scale `v` to unit L2 norm, preserving direction.
pub fn l2_normalize(v: ArrayView1<f64>) -> Result<FeatureVector, MathError> {
    if v.is_empty() {
        return Err(MathError::Empty);
    }
    let norm_sq: f64 = v.iter().map(|x| x * x).sum();
    let norm = norm_sq.sqrt();
    if !norm.is_finite() {
        return Err(MathError::NonFinite);
    }
    if norm == 0.0 {
        return Err(MathError::ZeroNorm);
    }
    Ok(FeatureVector(v.mapv(|x| x / norm)))
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPSILON, 1.0)
}

/// `-log p(target)` for a one-hot target.
pub fn cross_entropy(y: OneHot, yhat: &SimplexVector) -> Result<f64, MathError> {
    if y.n_classes() != yhat.len() {
        return Err(MathError::DimensionMismatch {
            expected: y.n_classes(),
            got: yhat.len(),
        });
    }
    Ok(-clamp_prob(yhat.values()[y.class()]).ln())
}

/// `sum_j target_j * ln(target_j / yhat_j)` with the `0 * ln 0 := 0`
/// convention. The target may be unnormalized (enhanced labels sum to
/// `beta + 1`); the divergence is computed on the values as given.
pub fn kl_loss(target: ArrayView1<f64>, yhat: &SimplexVector) -> Result<f64, MathError> {
    if target.len() != yhat.len() {
        return Err(MathError::DimensionMismatch {
            expected: yhat.len(),
            got: target.len(),
        });
    }
    let mut loss = 0.0;
    for (&t, &p) in target.iter().zip(yhat.values().iter()) {
        if !t.is_finite() {
            return Err(MathError::NonFinite);
        }
        if t < 0.0 {
            return Err(MathError::NegativeEntry(t));
        }
        if t > 0.0 {
            loss += t * (t / clamp_prob(p)).ln();
        }
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn t(v: f64) -> Temperature {
        Temperature::new(v).unwrap()
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        for c in [-3.0, 0.0, 17.5] {
            let z = array![c, c, c, c];
            let p = tempered_softmax(z.view(), t(0.7)).unwrap();
            for &v in p.values() {
                assert!((v - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn softmax_matches_direct_evaluation() {
        let z = array![2.0_f64.ln(), 0.0];
        let p = tempered_softmax(z.view(), t(1.0)).unwrap();
        assert!((p.values()[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p.values()[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let z = array![1000.0, 0.0];
        let p = tempered_softmax(z.view(), t(1.0)).unwrap();
        assert!(p.values()[0] > 1.0 - 1e-12);
        assert!(p.values()[1] < 1e-12);
        assert!(p.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_rejects_bad_input() {
        let z = array![f64::NAN, 0.0];
        assert!(matches!(
            tempered_softmax(z.view(), t(1.0)),
            Err(MathError::NonFinite)
        ));
        assert!(Temperature::new(0.0).is_err());
        assert!(Temperature::new(-1.0).is_err());
        assert!(Temperature::new(f64::INFINITY).is_err());
    }

    #[test]
    fn l2_normalize_scales_to_unit_norm() {
        let f = l2_normalize(array![3.0, 4.0].view()).unwrap();
        assert!((f.values()[0] - 0.6).abs() < 1e-15);
        assert!((f.values()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn l2_normalize_is_idempotent() {
        let f = l2_normalize(array![1.0, -2.0, 0.5].view()).unwrap();
        let g = l2_normalize(f.values()).unwrap();
        for (a, b) in f.values().iter().zip(g.values().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn l2_normalize_rejects_zero_vector() {
        assert!(matches!(
            l2_normalize(array![0.0, 0.0].view()),
            Err(MathError::ZeroNorm)
        ));
    }

    #[test]
    fn cross_entropy_examples() {
        let perfect = SimplexVector::try_new(array![1.0, 0.0, 0.0]).unwrap();
        let ce = cross_entropy(OneHot::new(0, 3).unwrap(), &perfect).unwrap();
        assert!(ce.abs() < 1e-10);

        let p = SimplexVector::try_new(array![0.5, 0.25, 0.25]).unwrap();
        let ce = cross_entropy(OneHot::new(1, 3).unwrap(), &p).unwrap();
        assert!((ce - 0.25_f64.ln().abs()).abs() < 1e-12);
        assert!((ce - 1.3862943611198906).abs() < 1e-12);

        let uniform = SimplexVector::try_new(Array1::from_elem(4, 0.25)).unwrap();
        let ce = cross_entropy(OneHot::new(0, 4).unwrap(), &uniform).unwrap();
        assert!((ce - 4.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_dimension_mismatch() {
        let p = SimplexVector::try_new(array![0.5, 0.5]).unwrap();
        assert!(cross_entropy(OneHot::new(0, 3).unwrap(), &p).is_err());
    }

    #[test]
    fn kl_loss_examples() {
        let p = SimplexVector::try_new(array![0.3, 0.2, 0.5]).unwrap();
        let kl = kl_loss(p.values(), &p).unwrap();
        assert!(kl.abs() < 1e-12);

        let q = SimplexVector::try_new(array![0.5, 0.5]).unwrap();
        let kl = kl_loss(array![1.0, 0.0].view(), &q).unwrap();
        assert!((kl - 2.0_f64.ln()).abs() < 1e-12);

        // Scaling oracle: sum c*p * ln(c*p/p) = c * ln c for simplex p.
        let doubled = p.values().mapv(|v| 2.0 * v);
        let kl = kl_loss(doubled.view(), &p).unwrap();
        assert!((kl - 2.0 * 2.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn kl_loss_rejects_bad_targets() {
        let q = SimplexVector::try_new(array![0.5, 0.5]).unwrap();
        assert!(matches!(
            kl_loss(array![0.5, -0.5].view(), &q),
            Err(MathError::NegativeEntry(_))
        ));
        assert!(matches!(
            kl_loss(array![1.0, 0.0, 0.0].view(), &q),
            Err(MathError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn onehot_validates_class_range() {
        assert!(OneHot::new(3, 3).is_err());
        let y = OneHot::new(2, 4).unwrap();
        assert_eq!(y.to_dense(), array![0.0, 0.0, 1.0, 0.0]);
    }

    proptest! {
        #[test]
        fn softmax_lands_on_simplex(
            logits in proptest::collection::vec(-50.0_f64..50.0, 1..12),
            temp in prop_oneof![Just(0.1), Just(1.0), Just(10.0)],
        ) {
            let z = Array1::from_vec(logits);
            let p = tempered_softmax(z.view(), t(temp)).unwrap();
            let sum: f64 = p.values().sum();
            prop_assert!((sum - 1.0).abs() < SIMPLEX_TOL);
            prop_assert!(p.values().iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn softmax_preserves_argmax(
            logits in proptest::collection::vec(-50.0_f64..50.0, 2..12),
            temp in 0.05_f64..20.0,
        ) {
            let z = Array1::from_vec(logits);
            let p = tempered_softmax(z.view(), t(temp)).unwrap();
            prop_assert_eq!(p.argmax(), argmax(z.view()));
        }

        #[test]
        fn softmax_is_shift_invariant(
            logits in proptest::collection::vec(-50.0_f64..50.0, 1..12),
            shift in -100.0_f64..100.0,
            temp in 0.1_f64..10.0,
        ) {
            let z = Array1::from_vec(logits);
            let shifted = z.mapv(|v| v + shift);
            let p = tempered_softmax(z.view(), t(temp)).unwrap();
            let q = tempered_softmax(shifted.view(), t(temp)).unwrap();
            for (a, b) in p.values().iter().zip(q.values().iter()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn kl_is_nonnegative_on_simplex_pairs(
            raw_p in proptest::collection::vec(0.01_f64..1.0, 3),
            raw_q in proptest::collection::vec(0.01_f64..1.0, 3),
        ) {
            let sp: f64 = raw_p.iter().sum();
            let sq: f64 = raw_q.iter().sum();
            let p = SimplexVector::try_new(Array1::from_vec(raw_p).mapv(|v| v / sp)).unwrap();
            let q = SimplexVector::try_new(Array1::from_vec(raw_q).mapv(|v| v / sq)).unwrap();
            let kl = kl_loss(p.values(), &q).unwrap();
            prop_assert!(kl >= -1e-12);
        }

        #[test]
        fn cross_entropy_equals_kl_for_onehot(
            class in 0_usize..4,
            raw_q in proptest::collection::vec(0.01_f64..1.0, 4),
        ) {
            let sq: f64 = raw_q.iter().sum();
            let q = SimplexVector::try_new(Array1::from_vec(raw_q).mapv(|v| v / sq)).unwrap();
            let y = OneHot::new(class, 4).unwrap();
            let ce = cross_entropy(y, &q).unwrap();
            let kl = kl_loss(y.to_dense().view(), &q).unwrap();
            prop_assert!((ce - kl).abs() < 1e-12);
        }

        #[test]
        fn l2_normalize_idempotence(
            raw in proptest::collection::vec(-10.0_f64..10.0, 1..16),
        ) {
            let v = Array1::from_vec(raw);
            prop_assume!(v.iter().map(|x| x * x).sum::<f64>() > 1e-12);
            let f = l2_normalize(v.view()).unwrap();
            let norm: f64 = f.values().iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-12);
            let g = l2_normalize(f.values()).unwrap();
            for (a, b) in f.values().iter().zip(g.values().iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
