//! Flat `key=value` run configuration with `#` comments. Every key has a
//! default (the reference hyperparameters), so an empty or absent file is a
//! fully valid run; `--set key=value` overrides apply after the file.

use std::path::Path;

use thiserror::Error;

use crate::bench::{BenchSettings, CorruptionKind};
use crate::data::SyntheticSpec;
use crate::prototype::SimilarityMode;
use crate::trainer::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file not found: {0}")]
    MissingFile(String),
    #[error("{location}: unknown key '{key}'")]
    UnknownKey { key: String, location: String },
    #[error("{location}: invalid value for '{key}': {message}")]
    InvalidValue {
        key: String,
        location: String,
        message: String,
    },
    #[error("{location}: expected key=value, got '{text}'")]
    NotKeyValue { text: String, location: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Everything one CLI invocation needs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: SyntheticSpec,
    pub bench: BenchSettings,
}

/// Parse an optional config file plus `key=value` overrides into a full
/// [`RunConfig`]. Unknown keys and malformed values are rejected with the
/// key name and source location.
pub fn parse_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = path {
        if !path.exists() {
            return Err(ConfigError::MissingFile(path.display().to_string()));
        }
        let text = std::fs::read_to_string(path)?;
        let name = path.display().to_string();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let location = format!("{name}:{}", i + 1);
            apply_entry(&mut cfg, line, &location)?;
        }
    }
    for entry in overrides {
        apply_entry(&mut cfg, entry.trim(), "override")?;
    }
    Ok(cfg)
}

fn apply_entry(cfg: &mut RunConfig, entry: &str, location: &str) -> Result<(), ConfigError> {
    let (key, value) = entry.split_once('=').ok_or_else(|| ConfigError::NotKeyValue {
        text: entry.to_string(),
        location: location.to_string(),
    })?;
    let key = key.trim();
    let value = value.trim();
    let bad = |message: String| ConfigError::InvalidValue {
        key: key.to_string(),
        location: location.to_string(),
        message,
    };
    let f64_of = |v: &str| v.parse::<f64>().map_err(|e| bad(e.to_string()));
    let usize_of = |v: &str| v.parse::<usize>().map_err(|e| bad(e.to_string()));
    let u64_of = |v: &str| v.parse::<u64>().map_err(|e| bad(e.to_string()));
    let bool_of = |v: &str| match v {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(bad(format!("expected true or false, got '{other}'"))),
    };
    let f64_list_of = |v: &str| -> Result<Vec<f64>, ConfigError> {
        v.split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|e| bad(e.to_string())))
            .collect()
    };
    let usize_list_of = |v: &str| -> Result<Vec<usize>, ConfigError> {
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|s| s.trim().parse::<usize>().map_err(|e| bad(e.to_string())))
            .collect()
    };

    match key {
        // Training
        "strategy" => cfg.train.strategy = value.parse().map_err(bad)?,
        "beta" => cfg.train.beta = f64_of(value)?,
        "alpha" => cfg.train.alpha = f64_of(value)?,
        "t1" => cfg.train.t1 = f64_of(value)?,
        "t2" => cfg.train.t2 = f64_of(value)?,
        "lr" => cfg.train.lr = f64_of(value)?,
        "momentum" => cfg.train.momentum = f64_of(value)?,
        "weight_decay" => cfg.train.weight_decay = f64_of(value)?,
        "batch_size" => cfg.train.batch_size = usize_of(value)?,
        "epochs" => cfg.train.epochs = usize_of(value)?,
        "smoothing_epsilon" => cfg.train.smoothing_epsilon = f64_of(value)?,
        "normalize_enhanced_target" => cfg.train.normalize_enhanced_target = bool_of(value)?,
        "score_before_update" => cfg.train.score_before_update = bool_of(value)?,
        "cosine_mode" => {
            cfg.train.cosine_mode = match value {
                "normalized" => SimilarityMode::Cosine,
                "raw_dot" => SimilarityMode::RawDot,
                other => return Err(bad(format!("expected normalized or raw_dot, got '{other}'"))),
            }
        }
        "seed" => cfg.train.seed = u64_of(value)?,
        "hidden_dims" => cfg.train.hidden_dims = usize_list_of(value)?,
        "feature_dim" => cfg.train.feature_dim = usize_of(value)?,

        // Synthetic data
        "n_classes" => cfg.data.n_classes = usize_of(value)?,
        "input_dim" => cfg.data.input_dim = usize_of(value)?,
        "n_super_groups" => cfg.data.n_super_groups = usize_of(value)?,
        "group_spread" => cfg.data.group_spread = f64_of(value)?,
        "intra_noise_sigma" => cfg.data.intra_noise_sigma = f64_of(value)?,
        "samples_per_class_train" => cfg.data.samples_per_class_train = usize_of(value)?,
        "samples_per_class_test" => cfg.data.samples_per_class_test = usize_of(value)?,
        "mislabel_rate" => cfg.data.mislabel_rate = f64_of(value)?,
        "data_seed" => cfg.data.seed = u64_of(value)?,

        // Benchmark / sweep
        "noise_rates" => cfg.bench.noise_rates = f64_list_of(value)?,
        "n_replicates" => cfg.bench.n_replicates = usize_of(value)?,
        "noise_mode" => {
            cfg.bench.noise_mode = match value {
                "uniform" => CorruptionKind::Uniform,
                "group_sibling" => CorruptionKind::GroupSibling,
                other => {
                    return Err(bad(format!("expected uniform or group_sibling, got '{other}'")))
                }
            }
        }
        "sweep_betas" => cfg.bench.sweep_betas = f64_list_of(value)?,

        unknown => {
            return Err(ConfigError::UnknownKey {
                key: unknown.to_string(),
                location: location.to_string(),
            })
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::Strategy;

    #[test]
    fn empty_file_yields_reference_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.cfg");
        std::fs::write(&path, "").unwrap();
        let cfg = parse_config(Some(&path), &[]).unwrap();
        assert_eq!(cfg.train.beta, 6.0);
        assert_eq!(cfg.train.alpha, 0.9);
        assert_eq!(cfg.train.t1, 1.0);
        assert_eq!(cfg.train.t2, 1.0);
        assert_eq!(cfg.train.lr, 0.001);
        assert_eq!(cfg.train.momentum, 0.9);
        assert_eq!(cfg.train.weight_decay, 1e-4);
        assert_eq!(cfg.train.batch_size, 8);
        assert_eq!(cfg.train.strategy, Strategy::Pel);
        assert_eq!(cfg.bench.sweep_betas, vec![4.0, 6.0, 8.0]);
        assert_eq!(cfg.bench.noise_rates, vec![0.0, 0.1, 0.2, 0.3]);
        assert_eq!(cfg.bench.n_replicates, 5);
    }

    #[test]
    fn no_file_also_yields_defaults() {
        let cfg = parse_config(None, &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn file_entries_and_comments_parse() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(
            &path,
            "# experiment\nbeta = 8   # per the sweep\nstrategy=label_smoothing\nhidden_dims=64,32\nmislabel_rate=0.2\n",
        )
        .unwrap();
        let cfg = parse_config(Some(&path), &[]).unwrap();
        assert_eq!(cfg.train.beta, 8.0);
        assert_eq!(cfg.train.strategy, Strategy::LabelSmoothing);
        assert_eq!(cfg.train.hidden_dims, vec![64, 32]);
        assert_eq!(cfg.data.mislabel_rate, 0.2);
    }

    #[test]
    fn overrides_apply_after_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "beta=4\n").unwrap();
        let cfg = parse_config(Some(&path), &["beta=8".to_string()]).unwrap();
        assert_eq!(cfg.train.beta, 8.0);
    }

    #[test]
    fn unknown_key_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("typo.cfg");
        std::fs::write(&path, "betta=6\n").unwrap();
        match parse_config(Some(&path), &[]) {
            Err(ConfigError::UnknownKey { key, location }) => {
                assert_eq!(key, "betta");
                assert!(location.ends_with(":1"));
            }
            other => panic!("expected UnknownKey, got {other:?}"),
        }
    }

    #[test]
    fn type_mismatch_names_key_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cfg");
        std::fs::write(&path, "alpha=0.9\nbatch_size=eight\n").unwrap();
        match parse_config(Some(&path), &[]) {
            Err(ConfigError::InvalidValue { key, location, .. }) => {
                assert_eq!(key, "batch_size");
                assert!(location.ends_with(":2"));
            }
            other => panic!("expected InvalidValue, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_reported() {
        assert!(matches!(
            parse_config(Some(Path::new("/nonexistent/x.cfg")), &[]),
            Err(ConfigError::MissingFile(_))
        ));
    }

    #[test]
    fn bad_override_is_reported_as_override() {
        match parse_config(None, &["nonsense".to_string()]) {
            Err(ConfigError::NotKeyValue { location, .. }) => assert_eq!(location, "override"),
            other => panic!("expected NotKeyValue, got {other:?}"),
        }
    }
}
