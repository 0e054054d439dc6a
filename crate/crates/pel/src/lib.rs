//! Prototype-enhanced learning: soft-target supervision for
//! ultra-fine-grained classification.
//!
//! Instead of training against one-hot labels, the trainer keeps a bank of
//! per-class prototype features updated by exponential moving average,
//! scores each instance against every prototype, and fuses the
//! softmax-normalized similarity scores into the one-hot target
//! (`beta * y + w`). The classifier is trained against these enhanced
//! targets with a KL objective. Inference uses only the encoder and the
//! classifier head — the bank adds no model parameters and is absent from
//! the prediction path.
//!
//! # Layout
//!
//! - [`math`] — tempered softmax, L2 normalization, cross-entropy and KL
//! - [`prototype`] — the prototype bank: init, batch means, EMA, scoring
//! - [`labels`] — enhanced-label fusion and the label-smoothing baseline
//! - [`model`] — MLP encoder + linear head with exact analytic gradients
//! - [`data`] — grouped synthetic datasets, label noise, CSV round trips
//! - [`trainer`] — the training loop, evaluation, and the beta sweep
//! - [`bench`] — the noise-robustness grid
//! - [`gradcheck`] — finite-difference gradient verification
//! - [`config`] — flat key=value run configuration

pub mod bench;
pub mod config;
pub mod data;
pub mod gradcheck;
pub mod labels;
pub mod math;
pub mod model;
pub mod prototype;
pub mod trainer;

pub use bench::{run_noise_benchmark, BenchSettings, CorruptionKind, NoiseCell, NoiseGrid};
pub use config::{parse_config, ConfigError, RunConfig};
pub use data::{
    generate, inject_label_noise, load_csv, save_csv, DataError, Dataset, NoiseMode, Sample,
    Split, SyntheticSpec,
};
pub use gradcheck::{run_gradcheck, GradCheckReport};
pub use labels::{fuse_labels, smooth_labels, EnhancedLabel, LabelError};
pub use math::{
    argmax, cross_entropy, kl_loss, l2_normalize, tempered_softmax, FeatureVector, MathError,
    OneHot, SimplexVector, Temperature,
};
pub use model::{Cache, Dense, ForwardPass, GradientSet, MlpModel, ModelError, SgdState};
pub use prototype::{
    batch_class_means, BankError, ClassMean, ClassMeanSet, PrototypeBank, SimilarityMode,
};
pub use trainer::{
    evaluate, run_beta_sweep, train, BetaSweepRow, MetricsLog, MetricsRow, Strategy, TrainConfig,
    TrainError, TrainOutcome,
};
