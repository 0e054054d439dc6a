//! Synthetic ultra-fine-grained datasets: grouped Gaussian clusters whose
//! sibling classes sit much closer to each other than to other groups,
//! label-noise injection, and CSV round trips.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Seed offset so the internal noise-injection stream never collides with
/// the sample-generation stream.
const NOISE_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid synthetic spec: {field}: {message}")]
    InvalidSpec { field: &'static str, message: String },
    #[error("could not place group centers with the requested separation")]
    GroupPlacement,
    #[error("noise rate must lie in [0, 1), got {0}")]
    InvalidRate(f64),
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}'")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One labeled sample. `observed_class` is what the trainer sees; it differs
/// from `true_class` only for corrupted training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Array1<f64>,
    pub true_class: usize,
    pub observed_class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub split: Split,
    pub n_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.samples.first().map(|s| s.input.len()).unwrap_or(0)
    }

    /// Number of samples whose observed label differs from the truth.
    pub fn corrupted_count(&self) -> usize {
        self.samples
            .iter()
            .filter(|s| s.observed_class != s.true_class)
            .count()
    }
}

/// How corrupted labels are resampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    /// Uniform over the other N-1 classes.
    Uniform,
    /// Uniform over the corrupted sample's group siblings (classes sharing
    /// its group center); falls back to uniform when a group has no
    /// sibling. Stresses confusion between near-identical classes.
    GroupSibling { classes_per_group: usize },
}

/// Generation parameters for one synthetic dataset pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub input_dim: usize,
    pub n_super_groups: usize,
    /// Distance of each class center from its group center.
    pub group_spread: f64,
    /// Per-coordinate Gaussian sigma of samples around their class center.
    pub intra_noise_sigma: f64,
    pub samples_per_class_train: usize,
    pub samples_per_class_test: usize,
    pub mislabel_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_classes: 8,
            input_dim: 64,
            n_super_groups: 4,
            group_spread: 0.3,
            intra_noise_sigma: 0.05,
            samples_per_class_train: 50,
            samples_per_class_test: 20,
            mislabel_rate: 0.0,
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    pub fn classes_per_group(&self) -> usize {
        self.n_classes / self.n_super_groups
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |field: &'static str, message: String| Err(DataError::InvalidSpec { field, message });
        if self.n_classes == 0 {
            return fail("n_classes", "must be at least 1".into());
        }
        if self.input_dim == 0 {
            return fail("input_dim", "must be at least 1".into());
        }
        if self.n_super_groups == 0 || !self.n_classes.is_multiple_of(self.n_super_groups) {
            return fail(
                "n_super_groups",
                format!("{} must divide n_classes {}", self.n_super_groups, self.n_classes),
            );
        }
        if !self.group_spread.is_finite() || self.group_spread <= 0.0 {
            return fail("group_spread", format!("must be positive, got {}", self.group_spread));
        }
        if !self.intra_noise_sigma.is_finite() || self.intra_noise_sigma < 0.0 {
            return fail(
                "intra_noise_sigma",
                format!("must be nonnegative, got {}", self.intra_noise_sigma),
            );
        }
        if self.samples_per_class_train == 0 {
            return fail("samples_per_class_train", "must be at least 1".into());
        }
        if !self.mislabel_rate.is_finite() || !(0.0..1.0).contains(&self.mislabel_rate) {
            return fail(
                "mislabel_rate",
                format!("must lie in [0, 1), got {}", self.mislabel_rate),
            );
        }
        if self.mislabel_rate > 0.0 && self.n_classes < 2 {
            return fail("mislabel_rate", "needs at least 2 classes to corrupt".into());
        }
        Ok(())
    }
}

fn random_unit_vector(dim: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    loop {
        let v = Array1::from_shape_fn(dim, |_| rng.sample::<f64, _>(StandardNormal));
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.mapv(|x| x / norm);
        }
    }
}

fn euclidean(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Generate a (train, test) pair. Group centers sit on the unit sphere,
/// separated by more than four group spreads, so every class's nearest
/// other class center is a group sibling — verified exhaustively before
/// returning. `mislabel_rate` corrupts the train split only, uniformly.
pub fn generate(spec: &SyntheticSpec) -> Result<(Dataset, Dataset), DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Group centers with guaranteed separation.
    let min_dist = 4.0 * spec.group_spread;
    let mut group_centers: Vec<Array1<f64>> = Vec::with_capacity(spec.n_super_groups);
    let mut attempts = 0;
    while group_centers.len() < spec.n_super_groups {
        attempts += 1;
        if attempts > MAX_PLACEMENT_ATTEMPTS {
            return Err(DataError::GroupPlacement);
        }
        let candidate = random_unit_vector(spec.input_dim, &mut rng);
        if group_centers.iter().all(|g| euclidean(g, &candidate) > min_dist) {
            group_centers.push(candidate);
        }
    }

    let per_group = spec.classes_per_group();
    let class_centers: Vec<Array1<f64>> = (0..spec.n_classes)
        .map(|c| {
            let offset = random_unit_vector(spec.input_dim, &mut rng);
            &group_centers[c / per_group] + &offset.mapv(|v| v * spec.group_spread)
        })
        .collect();

    // Sibling classes must be mutually nearer than any cross-group class.
    for a in 0..spec.n_classes {
        for b in 0..spec.n_classes {
            for c in 0..spec.n_classes {
                if a == b || a == c || a / per_group != b / per_group || a / per_group == c / per_group {
                    continue;
                }
                let within = euclidean(&class_centers[a], &class_centers[b]);
                let across = euclidean(&class_centers[a], &class_centers[c]);
                if within >= across {
                    return Err(DataError::GroupPlacement);
                }
            }
        }
    }

    let draw = |split: Split, per_class: usize, rng: &mut ChaCha8Rng| -> Dataset {
        let mut samples = Vec::with_capacity(per_class * spec.n_classes);
        for (class, center) in class_centers.iter().enumerate() {
            for _ in 0..per_class {
                let noise =
                    Array1::from_shape_fn(spec.input_dim, |_| rng.sample::<f64, _>(StandardNormal));
                let input = center + &noise.mapv(|v| v * spec.intra_noise_sigma);
                samples.push(Sample { input, true_class: class, observed_class: class });
            }
        }
        Dataset { samples, split, n_classes: spec.n_classes }
    };

    let mut train = draw(Split::Train, spec.samples_per_class_train, &mut rng);
    let test = draw(Split::Test, spec.samples_per_class_test, &mut rng);

    if spec.mislabel_rate > 0.0 {
        train = inject_label_noise(
            &train,
            spec.mislabel_rate,
            spec.seed ^ NOISE_SEED_SALT,
            NoiseMode::Uniform,
        )?;
    }
    Ok((train, test))
}

/// Resample the observed class of exactly `round(rate * n)` samples,
/// chosen without replacement; the true class is always excluded, so every
/// corrupted row has `observed != true`.
pub fn inject_label_noise(
    ds: &Dataset,
    rate: f64,
    seed: u64,
    mode: NoiseMode,
) -> Result<Dataset, DataError> {
    if !rate.is_finite() || !(0.0..1.0).contains(&rate) {
        return Err(DataError::InvalidRate(rate));
    }
    let mut out = ds.clone();
    let k = (rate * ds.len() as f64).round() as usize;
    if k == 0 {
        return Ok(out);
    }
    if ds.n_classes < 2 {
        return Err(DataError::InvalidSpec {
            field: "n_classes",
            message: "needs at least 2 classes to corrupt".into(),
        });
    }
    if let NoiseMode::GroupSibling { classes_per_group } = mode {
        if classes_per_group == 0 || !ds.n_classes.is_multiple_of(classes_per_group) {
            return Err(DataError::InvalidSpec {
                field: "classes_per_group",
                message: format!("{classes_per_group} must divide n_classes {}", ds.n_classes),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..ds.len()).collect();
    indices.shuffle(&mut rng);
    let mut chosen: Vec<usize> = indices.into_iter().take(k).collect();
    chosen.sort_unstable();

    for idx in chosen {
        let truth = out.samples[idx].true_class;
        let wrong = match mode {
            NoiseMode::GroupSibling { classes_per_group } if classes_per_group > 1 => {
                let group = truth / classes_per_group;
                let within = rng.random_range(0..classes_per_group - 1);
                let candidate = group * classes_per_group + within;
                if candidate >= truth {
                    candidate + 1
                } else {
                    candidate
                }
            }
            _ => {
                let r = rng.random_range(0..ds.n_classes - 1);
                if r >= truth {
                    r + 1
                } else {
                    r
                }
            }
        };
        out.samples[idx].observed_class = wrong;
    }
    Ok(out)
}

/// Write `split,true_class,observed_class,x0..x{d-1}` rows with floats at
/// 17 significant digits (exact f64 round trip).
pub fn save_csv(ds: &Dataset, path: &Path) -> Result<(), DataError> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let dim = ds.input_dim();
    let mut header = String::from("split,true_class,observed_class");
    for j in 0..dim {
        header.push_str(&format!(",x{j}"));
    }
    writeln!(w, "{header}")?;
    for s in &ds.samples {
        let mut row = format!("{},{},{}", ds.split, s.true_class, s.observed_class);
        for v in s.input.iter() {
            row.push_str(&format!(",{v:.16e}"));
        }
        writeln!(w, "{row}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_csv(path: &Path) -> Result<Dataset, DataError> {
    let display = path.display().to_string();
    let err = |line: usize, message: String| DataError::Parse {
        path: display.clone(),
        line,
        message,
    };
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| err(1, "no header".to_string()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "split" || cols[1] != "true_class" || cols[2] != "observed_class" {
        return Err(err(1, "no header (expected split,true_class,observed_class,x0,...)".to_string()));
    }
    for (j, col) in cols[3..].iter().enumerate() {
        if *col != format!("x{j}") {
            return Err(err(1, format!("expected column x{j}, found '{col}'")));
        }
    }
    let dim = cols.len() - 3;

    let mut samples = Vec::new();
    let mut split: Option<Split> = None;
    let mut max_class = 0usize;
    for (i, line) in lines {
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 + dim {
            return Err(err(
                lineno,
                format!("expected {} fields, got {}", 3 + dim, fields.len()),
            ));
        }
        let row_split: Split = fields[0].parse().map_err(|e: String| err(lineno, e))?;
        match split {
            None => split = Some(row_split),
            Some(s) if s != row_split => {
                return Err(err(lineno, "mixed splits in one file".to_string()));
            }
            _ => {}
        }
        let true_class: usize = fields[1]
            .parse()
            .map_err(|_| err(lineno, format!("bad true_class '{}'", fields[1])))?;
        let observed_class: usize = fields[2]
            .parse()
            .map_err(|_| err(lineno, format!("bad observed_class '{}'", fields[2])))?;
        let mut input = Array1::zeros(dim);
        for (j, raw) in fields[3..].iter().enumerate() {
            input[j] = raw
                .parse::<f64>()
                .map_err(|_| err(lineno, format!("bad float in column x{j}: '{raw}'")))?;
        }
        max_class = max_class.max(true_class).max(observed_class);
        samples.push(Sample { input, true_class, observed_class });
    }
    let n_classes = if samples.is_empty() { 0 } else { max_class + 1 };
    Ok(Dataset {
        samples,
        split: split.unwrap_or(Split::Train),
        n_classes,
    })
}
