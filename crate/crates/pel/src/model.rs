//! MLP encoder with an L2-normalized feature layer and a linear classifier
//! head, plus exact analytic gradients for the KL-against-constant-target
//! objective and an SGD-with-momentum step.
//!
//! The target distribution is treated as a constant during differentiation:
//! gradients never flow through the similarity scores back into the encoder.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::math::{argmax, l2_normalize, tempered_softmax, FeatureVector, MathError, SimplexVector, Temperature};

const CHECKPOINT_MAGIC: &[u8; 4] = b"PELM";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input dimension mismatch: expected {expected}, got {got}")]
    InputDim { expected: usize, got: usize },
    #[error("target dimension mismatch: expected {expected}, got {got}")]
    TargetDim { expected: usize, got: usize },
    #[error("every layer dimension must be nonzero")]
    ZeroDim,
    #[error("gradient/velocity shapes do not match the model")]
    ShapeMismatch,
    #[error("stale forward cache: the model has been updated since")]
    StaleCache,
    #[error("parameter vector has {got} entries, model has {expected}")]
    ParamCount { expected: usize, got: usize },
    #[error("optimizer hyperparameter out of range: {0}")]
    BadHyper(&'static str),
    #[error("checkpoint malformed: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Math(#[from] MathError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A dense layer: `y = W x + b`, weights stored row-major `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn apply(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.weight.dot(&x) + &self.bias
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn glorot(out_dim: usize, in_dim: usize, rng: &mut ChaCha8Rng) -> Dense {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weight =
            Array2::from_shape_fn((out_dim, in_dim), |_| rng.random_range(-bound..bound));
        Dense { weight, bias: Array1::zeros(out_dim) }
    }
}

/// Gradient (or velocity) arrays, shape-congruent with a model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub encoder: Vec<Dense>,
    pub head: Dense,
}

impl GradientSet {
    pub fn zeros_like(model: &MlpModel) -> GradientSet {
        let encoder = model
            .encoder
            .iter()
            .map(|l| Dense {
                weight: Array2::zeros(l.weight.dim()),
                bias: Array1::zeros(l.bias.len()),
            })
            .collect();
        let head = Dense {
            weight: Array2::zeros(model.head.weight.dim()),
            bias: Array1::zeros(model.head.bias.len()),
        };
        GradientSet { encoder, head }
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.encoder.iter_mut().zip(other.encoder.iter()) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
        self.head.weight += &other.head.weight;
        self.head.bias += &other.head.bias;
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.encoder {
            l.weight.mapv_inplace(|v| v * factor);
            l.bias.mapv_inplace(|v| v * factor);
        }
        self.head.weight.mapv_inplace(|v| v * factor);
        self.head.bias.mapv_inplace(|v| v * factor);
    }

    /// Flattened gradient values in the model's canonical parameter order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.encoder {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out.extend(self.head.weight.iter());
        out.extend(self.head.bias.iter());
        out
    }

    fn congruent_with(&self, model: &MlpModel) -> bool {
        self.encoder.len() == model.encoder.len()
            && self
                .encoder
                .iter()
                .zip(model.encoder.iter())
                .all(|(a, b)| a.weight.dim() == b.weight.dim() && a.bias.len() == b.bias.len())
            && self.head.weight.dim() == model.head.weight.dim()
            && self.head.bias.len() == model.head.bias.len()
    }
}

/// Momentum buffers for [`MlpModel::sgd_step`].
#[derive(Debug, Clone)]
pub struct SgdState {
    velocity: GradientSet,
}

impl SgdState {
    pub fn new(model: &MlpModel) -> SgdState {
        SgdState { velocity: GradientSet::zeros_like(model) }
    }
}

/// Intermediates captured by [`MlpModel::forward`] for the backward pass.
/// Tied to the model state via a version stamp; a step invalidates it.
#[derive(Debug, Clone)]
pub struct Cache {
    version: u64,
    /// Input to each encoder layer: `layer_inputs[0]` is the raw input.
    layer_inputs: Vec<Array1<f64>>,
    feature_norm: f64,
    feature: Array1<f64>,
    probs: Array1<f64>,
}

/// Result of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub feature: FeatureVector,
    pub probs: SimplexVector,
    pub cache: Cache,
}

/// Encoder MLP (rectifier between hidden layers, final layer linear,
/// output L2-normalized) followed by a linear classifier head with a
/// tempered softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    encoder: Vec<Dense>,
    head: Dense,
    t1: Temperature,
    version: u64,
}

impl MlpModel {
    /// Build a model with Glorot-uniform weights and zero biases,
    /// deterministic in `seed`.
    pub fn new(
        input_dim: usize,
        hidden_dims: &[usize],
        feature_dim: usize,
        n_classes: usize,
        t1: Temperature,
        seed: u64,
    ) -> Result<MlpModel, ModelError> {
        if input_dim == 0 || feature_dim == 0 || n_classes == 0 || hidden_dims.contains(&0) {
            return Err(ModelError::ZeroDim);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = Vec::with_capacity(hidden_dims.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(hidden_dims);
        dims.push(feature_dim);
        let encoder = dims
            .windows(2)
            .map(|w| Dense::glorot(w[1], w[0], &mut rng))
            .collect();
        let head = Dense::glorot(n_classes, feature_dim, &mut rng);
        Ok(MlpModel { encoder, head, t1, version: 0 })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.first().map(|l| l.in_dim()).unwrap_or(0)
    }

    pub fn feature_dim(&self) -> usize {
        self.head.in_dim()
    }

    pub fn n_classes(&self) -> usize {
        self.head.out_dim()
    }

    pub fn t1(&self) -> Temperature {
        self.t1
    }

    pub fn encoder(&self) -> &[Dense] {
        &self.encoder
    }

    pub fn head(&self) -> &Dense {
        &self.head
    }

    /// Mutable access to the classifier head. Invalidates outstanding caches.
    pub fn head_mut(&mut self) -> &mut Dense {
        self.version += 1;
        &mut self.head
    }

    /// Mutable access to the encoder layers. Invalidates outstanding caches.
    pub fn encoder_mut(&mut self) -> &mut [Dense] {
        self.version += 1;
        &mut self.encoder
    }

    pub fn param_count(&self) -> usize {
        self.encoder.iter().map(Dense::param_count).sum::<usize>() + self.head.param_count()
    }

    /// Parameter groups in canonical flat order: `(name, length)`.
    pub fn param_layout(&self) -> Vec<(String, usize)> {
        let mut layout = Vec::new();
        for (i, l) in self.encoder.iter().enumerate() {
            layout.push((format!("encoder{i}.weight"), l.weight.len()));
            layout.push((format!("encoder{i}.bias"), l.bias.len()));
        }
        layout.push(("head.weight".to_string(), self.head.weight.len()));
        layout.push(("head.bias".to_string(), self.head.bias.len()));
        layout
    }

    /// All parameters flattened in canonical order (row-major weights, then
    /// bias, per layer; encoder layers first, head last).
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.encoder {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out.extend(self.head.weight.iter());
        out.extend(self.head.bias.iter());
        out
    }

    /// Overwrite all parameters from a flat vector in canonical order.
    /// Invalidates outstanding caches.
    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<(), ModelError> {
        if params.len() != self.param_count() {
            return Err(ModelError::ParamCount {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut it = params.iter();
        for l in &mut self.encoder {
            for w in l.weight.iter_mut() {
                *w = *it.next().unwrap();
            }
            for b in l.bias.iter_mut() {
                *b = *it.next().unwrap();
            }
        }
        for w in self.head.weight.iter_mut() {
            *w = *it.next().unwrap();
        }
        for b in self.head.bias.iter_mut() {
            *b = *it.next().unwrap();
        }
        self.version += 1;
        Ok(())
    }

    /// Forward pass: encoder -> L2-normalized feature -> head -> tempered
    /// softmax. Non-finite activations and zero-norm features are rejected,
    /// which surfaces a diverged or dead encoder immediately.
    pub fn forward(&self, x: ArrayView1<f64>) -> Result<ForwardPass, ModelError> {
        if x.len() != self.input_dim() {
            return Err(ModelError::InputDim { expected: self.input_dim(), got: x.len() });
        }
        let n_layers = self.encoder.len();
        let mut layer_inputs = Vec::with_capacity(n_layers);
        let mut a = x.to_owned();
        for (l, layer) in self.encoder.iter().enumerate() {
            let mut z = layer.apply(a.view());
            layer_inputs.push(a);
            if l + 1 < n_layers {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = z;
        }
        let feature = l2_normalize(a.view())?;
        let norm: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let logits = self.head.apply(feature.values());
        let probs = tempered_softmax(logits.view(), self.t1)?;
        let cache = Cache {
            version: self.version,
            layer_inputs,
            feature_norm: norm,
            feature: feature.values().to_owned(),
            probs: probs.values().to_owned(),
        };
        Ok(ForwardPass { feature, probs, cache })
    }

    /// Exact gradient of `kl_loss(target, probs)` with respect to every
    /// parameter, the target held constant. Includes the Jacobian of the
    /// feature L2 normalization, `(I - f f^T) / ||u||`.
    pub fn backward(&self, cache: &Cache, target: ArrayView1<f64>) -> Result<GradientSet, ModelError> {
        if cache.version != self.version {
            return Err(ModelError::StaleCache);
        }
        if target.len() != self.n_classes() {
            return Err(ModelError::TargetDim {
                expected: self.n_classes(),
                got: target.len(),
            });
        }
        for &t in target.iter() {
            if !t.is_finite() {
                return Err(ModelError::Math(MathError::NonFinite));
            }
            if t < 0.0 {
                return Err(ModelError::Math(MathError::NegativeEntry(t)));
            }
        }

        let t1 = self.t1.get();
        let target_sum: f64 = target.sum();
        // dL/ds_k = (sum(target) * probs_k - target_k) / t1
        let g_logits: Array1<f64> = cache
            .probs
            .iter()
            .zip(target.iter())
            .map(|(&p, &t)| (target_sum * p - t) / t1)
            .collect();

        let mut grads = GradientSet::zeros_like(self);
        grads.head.weight = outer(g_logits.view(), cache.feature.view());
        grads.head.bias = g_logits.clone();

        let g_feature = self.head.weight.t().dot(&g_logits);
        let f_dot_g = cache.feature.dot(&g_feature);
        let mut delta: Array1<f64> = g_feature
            .iter()
            .zip(cache.feature.iter())
            .map(|(&g, &f)| (g - f * f_dot_g) / cache.feature_norm)
            .collect();

        for l in (0..self.encoder.len()).rev() {
            let a_in = &cache.layer_inputs[l];
            grads.encoder[l].weight = outer(delta.view(), a_in.view());
            grads.encoder[l].bias = delta.clone();
            if l > 0 {
                let mut d_prev = self.encoder[l].weight.t().dot(&delta);
                // a_in is the post-rectifier output of layer l-1.
                d_prev.zip_mut_with(a_in, |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = d_prev;
            }
        }
        Ok(grads)
    }

    /// One SGD step: `v <- momentum*v + grad + weight_decay*param`,
    /// `param <- param - lr*v`. Invalidates outstanding caches.
    pub fn sgd_step(
        &mut self,
        grads: &GradientSet,
        lr: f64,
        momentum: f64,
        weight_decay: f64,
        state: &mut SgdState,
    ) -> Result<(), ModelError> {
        if !lr.is_finite() {
            return Err(ModelError::BadHyper("lr must be finite"));
        }
        if !momentum.is_finite() || momentum < 0.0 {
            return Err(ModelError::BadHyper("momentum must be nonnegative"));
        }
        if !weight_decay.is_finite() || weight_decay < 0.0 {
            return Err(ModelError::BadHyper("weight_decay must be nonnegative"));
        }
        if !grads.congruent_with(self) || !state.velocity.congruent_with(self) {
            return Err(ModelError::ShapeMismatch);
        }

        let step = |param: &mut f64, grad: f64, vel: &mut f64| {
            *vel = momentum * *vel + grad + weight_decay * *param;
            *param -= lr * *vel;
        };
        for ((layer, g), v) in self
            .encoder
            .iter_mut()
            .zip(grads.encoder.iter())
            .zip(state.velocity.encoder.iter_mut())
        {
            for ((p, &g), v) in layer.weight.iter_mut().zip(g.weight.iter()).zip(v.weight.iter_mut()) {
                step(p, g, v);
            }
            for ((p, &g), v) in layer.bias.iter_mut().zip(g.bias.iter()).zip(v.bias.iter_mut()) {
                step(p, g, v);
            }
        }
        for ((p, &g), v) in self
            .head
            .weight
            .iter_mut()
            .zip(grads.head.weight.iter())
            .zip(state.velocity.head.weight.iter_mut())
        {
            step(p, g, v);
        }
        for ((p, &g), v) in self
            .head
            .bias
            .iter_mut()
            .zip(grads.head.bias.iter())
            .zip(state.velocity.head.bias.iter_mut())
        {
            step(p, g, v);
        }
        self.version += 1;
        Ok(())
    }

    /// Predicted class: argmax of the softmax output. Touches no prototype
    /// or label-enhancer state; inference uses only the encoder and head.
    pub fn predict(&self, x: ArrayView1<f64>) -> Result<usize, ModelError> {
        let fp = self.forward(x)?;
        Ok(argmax(fp.probs.values()))
    }

    /// Binary checkpoint of all parameter arrays with shape headers.
    /// Round-trips bit-exactly.
    pub fn save_binary(&self, path: &Path) -> Result<(), ModelError> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.t1.get().to_le_bytes());
        buf.extend_from_slice(&(self.encoder.len() as u32).to_le_bytes());
        let write_dense = |buf: &mut Vec<u8>, d: &Dense| {
            buf.extend_from_slice(&(d.out_dim() as u32).to_le_bytes());
            buf.extend_from_slice(&(d.in_dim() as u32).to_le_bytes());
            for &w in d.weight.iter() {
                buf.extend_from_slice(&w.to_le_bytes());
            }
            for &b in d.bias.iter() {
                buf.extend_from_slice(&b.to_le_bytes());
            }
        };
        for l in &self.encoder {
            write_dense(&mut buf, l);
        }
        write_dense(&mut buf, &self.head);
        let mut file = fs::File::create(path)?;
        file.write_all(&buf)?;
        Ok(())
    }

    pub fn load_binary(path: &Path) -> Result<MlpModel, ModelError> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8], ModelError> {
            if *pos + n > bytes.len() {
                return Err(ModelError::Checkpoint("file truncated".to_string()));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        let magic = take(&mut pos, 4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(ModelError::Checkpoint("bad magic".to_string()));
        }
        let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
        }
        let t1_raw = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let t1 = Temperature::new(t1_raw)
            .map_err(|e| ModelError::Checkpoint(format!("bad temperature: {e}")))?;
        let n_layers = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;

        let read_dense = |pos: &mut usize| -> Result<Dense, ModelError> {
            let out_dim = u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()) as usize;
            let in_dim = u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()) as usize;
            if out_dim == 0 || in_dim == 0 {
                return Err(ModelError::Checkpoint("zero layer dimension".to_string()));
            }
            let mut weight = Vec::with_capacity(out_dim * in_dim);
            for _ in 0..out_dim * in_dim {
                weight.push(f64::from_le_bytes(take(pos, 8)?.try_into().unwrap()));
            }
            let mut bias = Vec::with_capacity(out_dim);
            for _ in 0..out_dim {
                bias.push(f64::from_le_bytes(take(pos, 8)?.try_into().unwrap()));
            }
            Ok(Dense {
                weight: Array2::from_shape_vec((out_dim, in_dim), weight)
                    .map_err(|e| ModelError::Checkpoint(e.to_string()))?,
                bias: Array1::from_vec(bias),
            })
        };

        let mut encoder = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            encoder.push(read_dense(&mut pos)?);
        }
        let head = read_dense(&mut pos)?;
        if pos != bytes.len() {
            return Err(ModelError::Checkpoint("trailing bytes".to_string()));
        }
        // Shape chain must be consistent.
        for w in encoder.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(ModelError::Checkpoint("inconsistent layer chain".to_string()));
            }
        }
        if let Some(last) = encoder.last() {
            if last.out_dim() != head.in_dim() {
                return Err(ModelError::Checkpoint("head does not match feature dim".to_string()));
            }
        }
        Ok(MlpModel { encoder, head, t1, version: 0 })
    }
}

fn outer(u: ArrayView1<f64>, v: ArrayView1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((u.len(), v.len()), |(i, j)| u[i] * v[j])
}
