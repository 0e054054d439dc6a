//! Orchestrates the full training loop — forward, bank update, similarity
//! scoring, label fusion, KL objective, backprop, SGD — plus the one-hot and
//! label-smoothing baselines, evaluation, and metrics capture.
//!
//! Batches are grouped by *observed* labels: under label noise the trainer
//! never sees the truth, matching real mislabeled-data conditions.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::Dataset;
use crate::labels::{fuse_labels, smooth_labels, LabelError};
use crate::math::{kl_loss, FeatureVector, MathError, OneHot, Temperature};
use crate::model::{GradientSet, MlpModel, ModelError, SgdState};
use crate::prototype::{batch_class_means, BankError, PrototypeBank, SimilarityMode};

const SHUFFLE_SEED_SALT: u64 = 0x51ab_5ca1_e5ee_d001;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {field}: {message}")]
    InvalidConfig { field: &'static str, message: String },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("datasets do not match: {0}")]
    DatasetMismatch(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged { epoch: usize, batch: usize, detail: String },
    #[error("beta list is empty")]
    EmptyBetas,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Math(#[from] MathError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Target-construction strategy for one training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Prototype-enhanced soft targets.
    Pel,
    /// Plain one-hot cross-entropy.
    OnehotCe,
    /// Label smoothing at `smoothing_epsilon`.
    LabelSmoothing,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Pel => "pel",
            Strategy::OnehotCe => "onehot_ce",
            Strategy::LabelSmoothing => "label_smoothing",
        }
    }

    pub const ALL: [Strategy; 3] = [Strategy::OnehotCe, Strategy::LabelSmoothing, Strategy::Pel];
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pel" => Ok(Strategy::Pel),
            "onehot_ce" => Ok(Strategy::OnehotCe),
            "label_smoothing" => Ok(Strategy::LabelSmoothing),
            other => Err(format!(
                "unknown strategy '{other}' (expected pel, onehot_ce, or label_smoothing)"
            )),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Hyperparameters for one training run. Defaults are the reference
/// settings: alpha 0.9, beta 6, t1 = t2 = 1, SGD momentum 0.9 with weight
/// decay 1e-4 at lr 0.001, batch size 8.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub strategy: Strategy,
    /// Fusion weight on the one-hot target.
    pub beta: f64,
    /// EMA momentum of the prototype bank.
    pub alpha: f64,
    /// Classifier softmax temperature.
    pub t1: f64,
    /// Similarity-score softmax temperature.
    pub t2: f64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub smoothing_epsilon: f64,
    /// Divide the enhanced target by `beta + 1` before the KL loss.
    pub normalize_enhanced_target: bool,
    /// Score with the pre-update bank instead of update-then-score.
    pub score_before_update: bool,
    pub cosine_mode: SimilarityMode,
    pub seed: u64,
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            strategy: Strategy::Pel,
            beta: 6.0,
            alpha: 0.9,
            t1: 1.0,
            t2: 1.0,
            lr: 0.001,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 8,
            epochs: 15,
            smoothing_epsilon: 0.1,
            normalize_enhanced_target: false,
            score_before_update: false,
            cosine_mode: SimilarityMode::Cosine,
            seed: 1,
            hidden_dims: vec![],
            feature_dim: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |field: &'static str, message: String| {
            Err(TrainError::InvalidConfig { field, message })
        };
        if !self.beta.is_finite() || self.beta <= 0.0 {
            return fail("beta", format!("must be positive, got {}", self.beta));
        }
        if !self.alpha.is_finite() || self.alpha <= 0.0 || self.alpha >= 1.0 {
            return fail("alpha", format!("must lie in (0, 1), got {}", self.alpha));
        }
        for (name, t) in [("t1", self.t1), ("t2", self.t2)] {
            if !t.is_finite() || t <= 0.0 {
                return fail(
                    if name == "t1" { "t1" } else { "t2" },
                    format!("temperature must be positive, got {t}"),
                );
            }
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return fail("lr", format!("must be positive, got {}", self.lr));
        }
        if !self.momentum.is_finite() || self.momentum < 0.0 {
            return fail("momentum", format!("must be nonnegative, got {}", self.momentum));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return fail(
                "weight_decay",
                format!("must be nonnegative, got {}", self.weight_decay),
            );
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be at least 1".into());
        }
        if !self.smoothing_epsilon.is_finite() || !(0.0..1.0).contains(&self.smoothing_epsilon) {
            return fail(
                "smoothing_epsilon",
                format!("must lie in [0, 1), got {}", self.smoothing_epsilon),
            );
        }
        if self.feature_dim == 0 {
            return fail("feature_dim", "must be at least 1".into());
        }
        if self.hidden_dims.contains(&0) {
            return fail("hidden_dims", "layer widths must be nonzero".into());
        }
        Ok(())
    }
}

/// One row of the per-epoch metrics log.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Mean per-batch Frobenius norm of the prototype matrix change;
    /// zero for the baseline strategies.
    pub prototype_drift: f64,
    pub wall_seconds: f64,
}

/// Per-epoch metrics. `wall_seconds` is the only nondeterministic column;
/// [`MetricsLog::same_results`] compares everything else bit-for-bit.
#[derive(Debug, Clone, Default)]
pub struct MetricsLog {
    rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    /// Bit-exact equality of all deterministic columns (wall-clock time is
    /// excluded; it cannot reproduce across runs).
    pub fn same_results(&self, other: &MetricsLog) -> bool {
        self.rows.len() == other.rows.len()
            && self.rows.iter().zip(other.rows.iter()).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.train_loss.to_bits() == b.train_loss.to_bits()
                    && a.train_accuracy.to_bits() == b.train_accuracy.to_bits()
                    && a.test_accuracy.to_bits() == b.test_accuracy.to_bits()
                    && a.prototype_drift.to_bits() == b.prototype_drift.to_bits()
            })
    }

    pub fn to_csv_string(&self) -> String {
        let mut out =
            String::from("epoch,train_loss,train_accuracy,test_accuracy,prototype_drift,wall_seconds\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.6}\n",
                r.epoch, r.train_loss, r.train_accuracy, r.test_accuracy, r.prototype_drift, r.wall_seconds
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), TrainError> {
        fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

/// Everything a finished run hands back.
#[derive(Debug)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub bank: PrototypeBank,
    pub metrics: MetricsLog,
}

fn numeric_abort(e: ModelError, epoch: usize, batch: usize) -> TrainError {
    match e {
        ModelError::Math(MathError::NonFinite) | ModelError::Math(MathError::ZeroNorm) => {
            TrainError::Diverged { epoch, batch, detail: e.to_string() }
        }
        other => TrainError::Model(other),
    }
}

/// Run one full training loop and return the model, the prototype bank, and
/// the metrics log.
///
/// Per batch, in order: forward every instance, group batch means by
/// observed label, EMA-update the bank, score similarities, fuse labels,
/// take the mean KL loss, backpropagate, and step SGD. The baseline
/// strategies skip every bank step and swap in their own target. For the
/// prototype strategy the bank is initialized from the class means of a
/// full forward pass over the training set before epoch 1 and persists
/// across epochs.
pub fn train(
    cfg: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if train_set.input_dim() != test_set.input_dim() {
        return Err(TrainError::DatasetMismatch(format!(
            "input dims differ: train {} vs test {}",
            train_set.input_dim(),
            test_set.input_dim()
        )));
    }
    if train_set.n_classes != test_set.n_classes {
        return Err(TrainError::DatasetMismatch(format!(
            "class counts differ: train {} vs test {}",
            train_set.n_classes, test_set.n_classes
        )));
    }
    let n_classes = train_set.n_classes;
    let t1 = Temperature::new(cfg.t1).map_err(|e| TrainError::InvalidConfig {
        field: "t1",
        message: e.to_string(),
    })?;
    let t2 = Temperature::new(cfg.t2).map_err(|e| TrainError::InvalidConfig {
        field: "t2",
        message: e.to_string(),
    })?;

    let mut model = MlpModel::new(
        train_set.input_dim(),
        &cfg.hidden_dims,
        cfg.feature_dim,
        n_classes,
        t1,
        cfg.seed,
    )?;

    let mut bank = if cfg.strategy == Strategy::Pel {
        let mut init_features: Vec<(FeatureVector, usize)> = Vec::with_capacity(train_set.len());
        for s in &train_set.samples {
            let fp = model.forward(s.input.view()).map_err(|e| numeric_abort(e, 0, 0))?;
            init_features.push((fp.feature, s.observed_class));
        }
        PrototypeBank::init_from_features(
            init_features.iter().map(|(f, c)| (f, *c)),
            n_classes,
            cfg.alpha,
        )?
    } else {
        PrototypeBank::new(n_classes, cfg.feature_dim, cfg.alpha)?
    };

    let mut sgd = SgdState::new(&model);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SEED_SALT);
    let mut log = MetricsLog::default();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        let mut drift_sum = 0.0;
        let mut n_batches = 0usize;

        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            n_batches += 1;
            let mut passes = Vec::with_capacity(batch.len());
            for &i in batch {
                let s = &train_set.samples[i];
                let fp = model
                    .forward(s.input.view())
                    .map_err(|e| numeric_abort(e, epoch, batch_idx))?;
                passes.push((fp, s.observed_class));
            }

            let targets: Vec<Array1<f64>> = match cfg.strategy {
                Strategy::OnehotCe => passes
                    .iter()
                    .map(|(_, c)| OneHot::new(*c, n_classes).map(|y| y.to_dense()))
                    .collect::<Result<_, _>>()?,
                Strategy::LabelSmoothing => passes
                    .iter()
                    .map(|(_, c)| {
                        let y = OneHot::new(*c, n_classes)?;
                        Ok(smooth_labels(y, cfg.smoothing_epsilon)?.into_inner())
                    })
                    .collect::<Result<_, TrainError>>()?,
                Strategy::Pel => {
                    let means = batch_class_means(
                        passes.iter().map(|(fp, c)| (&fp.feature, *c)),
                        n_classes,
                    )?;
                    let before = bank.clone();
                    let score = |bank: &PrototypeBank| -> Result<Vec<_>, TrainError> {
                        passes
                            .iter()
                            .map(|(fp, _)| {
                                Ok(bank.similarity_scores(&fp.feature, t2, cfg.cosine_mode)?)
                            })
                            .collect()
                    };
                    let scores = if cfg.score_before_update {
                        let w = score(&bank)?;
                        bank.ema_update(&means)?;
                        w
                    } else {
                        bank.ema_update(&means)?;
                        score(&bank)?
                    };
                    drift_sum += bank.frobenius_distance(&before);
                    passes
                        .iter()
                        .zip(scores.iter())
                        .map(|((_, c), w)| {
                            let y = OneHot::new(*c, n_classes)?;
                            let enhanced = fuse_labels(y, w, cfg.beta)?;
                            Ok(if cfg.normalize_enhanced_target {
                                enhanced.normalized()
                            } else {
                                enhanced.into_inner()
                            })
                        })
                        .collect::<Result<_, TrainError>>()?
                }
            };

            let mut batch_loss = 0.0;
            let mut grads = GradientSet::zeros_like(&model);
            for ((fp, _), target) in passes.iter().zip(targets.iter()) {
                batch_loss += kl_loss(target.view(), &fp.probs)?;
                let g = model
                    .backward(&fp.cache, target.view())
                    .map_err(|e| numeric_abort(e, epoch, batch_idx))?;
                grads.add_assign(&g);
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    batch: batch_idx,
                    detail: format!("batch loss is {batch_loss}"),
                });
            }
            loss_sum += batch_loss;
            grads.scale(1.0 / batch.len() as f64);
            model.sgd_step(&grads, cfg.lr, cfg.momentum, cfg.weight_decay, &mut sgd)?;
        }

        log.rows.push(MetricsRow {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: evaluate(&model, train_set)?,
            test_accuracy: evaluate(&model, test_set)?,
            prototype_drift: if n_batches > 0 { drift_sum / n_batches as f64 } else { 0.0 },
            wall_seconds: started.elapsed().as_secs_f64(),
        });
    }

    Ok(TrainOutcome { model, bank, metrics: log })
}

/// Fraction of samples whose predicted class equals the *true* class.
/// Pure inference: reads no prototype-bank or label-enhancer state.
pub fn evaluate(model: &MlpModel, ds: &Dataset) -> Result<f64, TrainError> {
    if ds.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut correct = 0usize;
    for s in &ds.samples {
        if model.predict(s.input.view())? == s.true_class {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// One sweep cell: the beta value and either the final test accuracy or the
/// error that cell hit.
#[derive(Debug)]
pub struct BetaSweepRow {
    pub beta: f64,
    pub outcome: Result<f64, TrainError>,
}

/// Train once per beta on identical data and seed; rows come back sorted by
/// beta, and a failing cell does not abort the others.
pub fn run_beta_sweep(
    cfg: &TrainConfig,
    betas: &[f64],
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<Vec<BetaSweepRow>, TrainError> {
    if betas.is_empty() {
        return Err(TrainError::EmptyBetas);
    }
    let mut sorted = betas.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let rows = sorted
        .into_iter()
        .map(|beta| {
            let mut cell_cfg = cfg.clone();
            cell_cfg.beta = beta;
            let outcome = train(&cell_cfg, train_set, test_set)
                .and_then(|out| evaluate(&out.model, test_set));
            BetaSweepRow { beta, outcome }
        })
        .collect();
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, Sample, Split, SyntheticSpec};
    use ndarray::Array1;

    fn toy_spec() -> SyntheticSpec {
        SyntheticSpec {
            n_classes: 3,
            input_dim: 8,
            n_super_groups: 3,
            group_spread: 0.4,
            intra_noise_sigma: 0.08,
            samples_per_class_train: 12,
            samples_per_class_test: 6,
            mislabel_rate: 0.0,
            seed: 21,
        }
    }

    fn toy_cfg(strategy: Strategy) -> TrainConfig {
        TrainConfig {
            strategy,
            epochs: 60,
            lr: 0.01,
            hidden_dims: vec![16],
            feature_dim: 8,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn onehot_baseline_learns_separable_toy_data() {
        let (train_set, test_set) = generate(&toy_spec()).unwrap();
        let out = train(&toy_cfg(Strategy::OnehotCe), &train_set, &test_set).unwrap();
        let acc = out.metrics.rows().last().unwrap().train_accuracy;
        assert!(acc >= 0.95, "train accuracy {acc}");
        assert!(out.metrics.len() <= 200);
    }

    #[test]
    fn pel_tracks_the_baseline_on_clean_toy_data() {
        let (train_set, test_set) = generate(&toy_spec()).unwrap();
        let ce = train(&toy_cfg(Strategy::OnehotCe), &train_set, &test_set).unwrap();
        let pel = train(&toy_cfg(Strategy::Pel), &train_set, &test_set).unwrap();
        let ce_acc = ce.metrics.rows().last().unwrap().train_accuracy;
        let pel_acc = pel.metrics.rows().last().unwrap().train_accuracy;
        assert!(
            pel_acc >= ce_acc - 0.02,
            "pel {pel_acc} vs onehot_ce {ce_acc}"
        );
    }

    #[test]
    fn zero_epochs_leaves_the_model_at_init() {
        let (train_set, test_set) = generate(&toy_spec()).unwrap();
        let mut cfg = toy_cfg(Strategy::Pel);
        cfg.epochs = 0;
        let out = train(&cfg, &train_set, &test_set).unwrap();
        assert!(out.metrics.is_empty());
        let t1 = Temperature::new(cfg.t1).unwrap();
        let fresh = MlpModel::new(
            train_set.input_dim(),
            &cfg.hidden_dims,
            cfg.feature_dim,
            train_set.n_classes,
            t1,
            cfg.seed,
        )
        .unwrap();
        assert_eq!(out.model.params_flat(), fresh.params_flat());
    }

    #[test]
    fn untrained_zero_head_model_scores_chance_on_balanced_data() {
        let (train_set, _) = generate(&toy_spec()).unwrap();
        let t1 = Temperature::new(1.0).unwrap();
        let mut model = MlpModel::new(8, &[16], 8, 3, t1, 5).unwrap();
        model.head_mut().weight.fill(0.0);
        model.head_mut().bias.fill(0.0);
        // Uniform output ties resolve to class 0, so balanced data scores
        // exactly 1/N.
        let acc = evaluate(&model, &train_set).unwrap();
        assert!((acc - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn handcrafted_memorizer_scores_perfectly() {
        let n = 3;
        let t1 = Temperature::new(1.0).unwrap();
        let mut model = MlpModel::new(n, &[], n, n, t1, 0).unwrap();
        let eye = ndarray::Array2::from_shape_fn((n, n), |(i, j)| if i == j { 1.0 } else { 0.0 });
        model.encoder_mut()[0].weight.assign(&eye);
        model.encoder_mut()[0].bias.fill(0.0);
        model.head_mut().weight.assign(&eye.mapv(|v| 10.0 * v));
        model.head_mut().bias.fill(0.0);
        let samples = (0..n)
            .map(|c| {
                let mut x = Array1::zeros(n);
                x[c] = 1.0;
                Sample { input: x, true_class: c, observed_class: c }
            })
            .collect();
        let ds = Dataset { samples, split: Split::Train, n_classes: n };
        assert_eq!(evaluate(&model, &ds).unwrap(), 1.0);
    }

    #[test]
    fn evaluate_rejects_empty_dataset() {
        let t1 = Temperature::new(1.0).unwrap();
        let model = MlpModel::new(4, &[], 4, 2, t1, 0).unwrap();
        let ds = Dataset { samples: vec![], split: Split::Test, n_classes: 2 };
        assert!(matches!(evaluate(&model, &ds), Err(TrainError::EmptyDataset)));
    }

    #[test]
    fn identical_seeds_give_bit_identical_metrics() {
        let (train_set, test_set) = generate(&toy_spec()).unwrap();
        let mut cfg = toy_cfg(Strategy::Pel);
        cfg.epochs = 8;
        let a = train(&cfg, &train_set, &test_set).unwrap();
        let b = train(&cfg, &train_set, &test_set).unwrap();
        assert!(a.metrics.same_results(&b.metrics));
        assert_eq!(a.model.params_flat(), b.model.params_flat());
        assert_eq!(a.bank, b.bank);
    }

    #[test]
    fn evaluate_leaves_the_bank_untouched() {
        let (train_set, test_set) = generate(&toy_spec()).unwrap();
        let mut cfg = toy_cfg(Strategy::Pel);
        cfg.epochs = 4;
        let out = train(&cfg, &train_set, &test_set).unwrap();
        let bank_before = out.bank.clone();
        let with_bank_alive = evaluate(&out.model, &test_set).unwrap();
        assert_eq!(out.bank, bank_before);
        // Inference is structurally isolated: dropping the bank cannot
        // change anything evaluate sees.
        drop(out.bank);
        let after_drop = evaluate(&out.model, &test_set).unwrap();
        assert_eq!(with_bank_alive.to_bits(), after_drop.to_bits());
    }

    #[test]
    fn prototype_drift_is_finite_and_settles() {
        let (train_set, test_set) = generate(&toy_spec()).unwrap();
        // The non-increasing drift trend is a property of the decaying-loss
        // regime, so run at the default lr where the loss is still falling
        // through the final quarter.
        let mut cfg = toy_cfg(Strategy::Pel);
        cfg.lr = 0.001;
        let out = train(&cfg, &train_set, &test_set).unwrap();
        let losses: Vec<f64> = out.metrics.rows().iter().map(|r| r.train_loss).collect();
        assert!(losses.last().unwrap() < &losses[losses.len() / 2]);
        let drifts: Vec<f64> = out.metrics.rows().iter().map(|r| r.prototype_drift).collect();
        assert!(drifts.iter().all(|d| d.is_finite()));
        // Trailing-mean trend over the last quarter vs the quarter before.
        let e = drifts.len();
        let q = e / 4;
        let last: f64 = drifts[e - q..].iter().sum::<f64>() / q as f64;
        let prev: f64 = drifts[e - 2 * q..e - q].iter().sum::<f64>() / q as f64;
        assert!(last <= prev, "drift trailing mean rose: {prev} -> {last}");
    }

    #[test]
    fn baseline_strategies_never_touch_the_bank() {
        let (train_set, test_set) = generate(&toy_spec()).unwrap();
        let mut cfg = toy_cfg(Strategy::OnehotCe);
        cfg.epochs = 3;
        let out = train(&cfg, &train_set, &test_set).unwrap();
        assert!(!out.bank.any_initialized());
        assert!(out.metrics.rows().iter().all(|r| r.prototype_drift == 0.0));
    }

    #[test]
    fn ablation_switches_run_and_change_the_run() {
        let (train_set, test_set) = generate(&toy_spec()).unwrap();
        let mut base = toy_cfg(Strategy::Pel);
        base.epochs = 6;
        let reference = train(&base, &train_set, &test_set).unwrap();

        // Normalized targets divide y~ by beta+1, shrinking the loss scale
        // while still training.
        let mut cfg = base.clone();
        cfg.normalize_enhanced_target = true;
        let normalized = train(&cfg, &train_set, &test_set).unwrap();
        assert!(
            normalized.metrics.rows()[0].train_loss < reference.metrics.rows()[0].train_loss
        );

        // Scoring with the pre-update bank changes the targets, hence the
        // trajectory, from the first batch on.
        let mut cfg = base.clone();
        cfg.score_before_update = true;
        let pre_scored = train(&cfg, &train_set, &test_set).unwrap();
        assert!(!pre_scored.metrics.same_results(&reference.metrics));

        // Raw-dot scoring also trains end to end.
        let mut cfg = base.clone();
        cfg.cosine_mode = SimilarityMode::RawDot;
        let raw = train(&cfg, &train_set, &test_set).unwrap();
        assert_eq!(raw.metrics.len(), 6);
    }

    #[test]
    fn divergence_reports_epoch_and_batch() {
        let (train_set, test_set) = generate(&toy_spec()).unwrap();
        let mut cfg = toy_cfg(Strategy::OnehotCe);
        cfg.lr = 1e18;
        cfg.epochs = 30;
        match train(&cfg, &train_set, &test_set) {
            Err(TrainError::Diverged { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn sweep_sorts_by_beta_and_isolates_failures() {
        let (train_set, test_set) = generate(&toy_spec()).unwrap();
        let mut cfg = toy_cfg(Strategy::Pel);
        cfg.epochs = 3;
        let rows = run_beta_sweep(&cfg, &[8.0, -1.0, 4.0], &train_set, &test_set).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].beta, -1.0);
        assert!(rows[0].outcome.is_err());
        assert_eq!(rows[1].beta, 4.0);
        assert!(rows[1].outcome.is_ok());
        assert_eq!(rows[2].beta, 8.0);
        assert!(rows[2].outcome.is_ok());
    }

    #[test]
    fn single_element_sweep_equals_one_train_call() {
        let (train_set, test_set) = generate(&toy_spec()).unwrap();
        let mut cfg = toy_cfg(Strategy::Pel);
        cfg.epochs = 4;
        cfg.beta = 6.0;
        let rows = run_beta_sweep(&cfg, &[6.0], &train_set, &test_set).unwrap();
        let direct = train(&cfg, &train_set, &test_set).unwrap();
        let direct_acc = evaluate(&direct.model, &test_set).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].outcome.as_ref().unwrap().to_bits(), direct_acc.to_bits());
    }

    #[test]
    fn empty_beta_list_is_rejected() {
        let (train_set, test_set) = generate(&toy_spec()).unwrap();
        let cfg = toy_cfg(Strategy::Pel);
        assert!(matches!(
            run_beta_sweep(&cfg, &[], &train_set, &test_set),
            Err(TrainError::EmptyBetas)
        ));
    }

    #[test]
    fn config_validation_names_fields() {
        let cfg = TrainConfig { beta: 0.0, ..TrainConfig::default() };
        match cfg.validate() {
            Err(TrainError::InvalidConfig { field, .. }) => assert_eq!(field, "beta"),
            other => panic!("expected InvalidConfig, got {other:?}"),
        }
        let cfg = TrainConfig { alpha: 1.0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig { smoothing_epsilon: 1.0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
