//! A small tanh-hidden-layer classifier with softmax cross-entropy loss.
//!
//! The model is smooth everywhere and cheap enough that exact per-example
//! gradients (hand-rolled backprop) serve as the oracle for every estimator
//! built on top of it. The final linear layer plays the role of the "last
//! projection": its flattened weights+bias block sits at the end of the
//! flattened parameter vector, and a forward pass can be replayed from cached
//! penultimate activations when only that block changes.

use crate::error::{Error, Result};
use crate::numeric::{stream_rng, DenseVector};
use crate::parallel;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// One labelled example with a source tag.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: DenseVector,
    pub label: usize,
    pub source_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 20,
            hidden_dim: 32,
            n_classes: 10,
        }
    }
}

impl ModelConfig {
    pub fn total_dim(&self) -> usize {
        self.input_dim * self.hidden_dim
            + self.hidden_dim
            + self.hidden_dim * self.n_classes
            + self.n_classes
    }

    /// Length of the flattened final-layer block (weights + bias).
    pub fn last_projection_dim(&self) -> usize {
        self.hidden_dim * self.n_classes + self.n_classes
    }
}

/// Which slice of the flattened parameter vector a gradient covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientScope {
    All,
    LastProjection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// Row-major (input_dim x hidden_dim).
    pub hidden_weights: Vec<f64>,
    pub hidden_bias: Vec<f64>,
    /// Row-major (hidden_dim x n_classes).
    pub proj_weights: Vec<f64>,
    pub proj_bias: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(config: ModelConfig) -> Self {
        Self {
            hidden_weights: vec![0.0; config.input_dim * config.hidden_dim],
            hidden_bias: vec![0.0; config.hidden_dim],
            proj_weights: vec![0.0; config.hidden_dim * config.n_classes],
            proj_bias: vec![0.0; config.n_classes],
            config,
        }
    }

    /// Gaussian weights scaled by 1/sqrt(fan_in); biases start at zero.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let mut rng = stream_rng(seed, &[0x1217]);
        let mut params = Self::zeros(config);
        let hidden_scale = 1.0 / (config.input_dim as f64).sqrt();
        for w in params.hidden_weights.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *w = z * hidden_scale;
        }
        let proj_scale = 1.0 / (config.hidden_dim as f64).sqrt();
        for w in params.proj_weights.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *w = z * proj_scale;
        }
        params
    }

    /// Flattens as [hidden_weights, hidden_bias, proj_weights, proj_bias],
    /// so the last `last_projection_dim()` entries are the projection block.
    pub fn to_flat(&self) -> DenseVector {
        let mut flat = Vec::with_capacity(self.config.total_dim());
        flat.extend_from_slice(&self.hidden_weights);
        flat.extend_from_slice(&self.hidden_bias);
        flat.extend_from_slice(&self.proj_weights);
        flat.extend_from_slice(&self.proj_bias);
        DenseVector::from_finite(flat)
    }

    pub fn from_flat(config: ModelConfig, flat: &DenseVector) -> Result<Self> {
        if flat.len() != config.total_dim() {
            return Err(Error::DimensionMismatch {
                expected: config.total_dim(),
                got: flat.len(),
            });
        }
        let s = flat.as_slice();
        let hw = config.input_dim * config.hidden_dim;
        let hb = hw + config.hidden_dim;
        let pw = hb + config.hidden_dim * config.n_classes;
        Ok(Self {
            config,
            hidden_weights: s[..hw].to_vec(),
            hidden_bias: s[hw..hb].to_vec(),
            proj_weights: s[hb..pw].to_vec(),
            proj_bias: s[pw..].to_vec(),
        })
    }

    /// Copy with `delta` (length d_vp) added onto the flattened projection
    /// block, scaled by `factor`.
    pub fn with_projection_offset(&self, delta: &[f64], factor: f64) -> Result<Self> {
        let d_vp = self.config.last_projection_dim();
        if delta.len() != d_vp {
            return Err(Error::DimensionMismatch {
                expected: d_vp,
                got: delta.len(),
            });
        }
        let mut out = self.clone();
        let nw = out.proj_weights.len();
        for (w, d) in out.proj_weights.iter_mut().zip(&delta[..nw]) {
            *w += factor * d;
        }
        for (b, d) in out.proj_bias.iter_mut().zip(&delta[nw..]) {
            *b += factor * d;
        }
        Ok(out)
    }

    fn check_example(&self, example: &Example) -> Result<()> {
        if example.features.len() != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_dim,
                got: example.features.len(),
            });
        }
        if example.label >= self.config.n_classes {
            return Err(Error::InvalidArgument(format!(
                "label {} out of range for {} classes",
                example.label, self.config.n_classes
            )));
        }
        Ok(())
    }

    /// Penultimate activations tanh(Wx + b).
    pub fn hidden_activation(&self, features: &[f64]) -> Vec<f64> {
        let d_h = self.config.hidden_dim;
        let mut u = self.hidden_bias.clone();
        for (&x, row) in features.iter().zip(self.hidden_weights.chunks_exact(d_h)) {
            for (uj, w) in u.iter_mut().zip(row) {
                *uj += x * w;
            }
        }
        u.iter_mut().for_each(|v| *v = v.tanh());
        u
    }

    pub fn logits_from_activation(&self, activation: &[f64]) -> Vec<f64> {
        projection_logits(
            &self.proj_weights,
            &self.proj_bias,
            activation,
            self.config.n_classes,
        )
    }

    pub fn logits(&self, features: &[f64]) -> Vec<f64> {
        self.logits_from_activation(&self.hidden_activation(features))
    }
}

/// Final-layer logits from explicit projection parameters; shared by the
/// cached-activation path so perturbed evaluations reuse the same kernel.
pub fn projection_logits(
    proj_weights: &[f64],
    proj_bias: &[f64],
    activation: &[f64],
    n_classes: usize,
) -> Vec<f64> {
    let mut logits = proj_bias.to_vec();
    for (j, &a) in activation.iter().enumerate() {
        let row = &proj_weights[j * n_classes..(j + 1) * n_classes];
        for (l, w) in logits.iter_mut().zip(row) {
            *l += a * w;
        }
    }
    logits
}

/// Numerically stable softmax cross-entropy.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    log_z - (logits[label] - max)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub fn per_example_loss(params: &ModelParams, example: &Example) -> Result<f64> {
    params.check_example(example)?;
    let logits = params.logits(example.features.as_slice());
    let loss = cross_entropy(&logits, example.label);
    if !loss.is_finite() {
        return Err(Error::NonFinite("per_example_loss".into()));
    }
    Ok(loss)
}

/// Predicted class (argmax logit, ties toward the smaller class id).
pub fn predict(params: &ModelParams, example: &Example) -> Result<usize> {
    params.check_example(example)?;
    let logits = params.logits(example.features.as_slice());
    let mut best = 0;
    for c in 1..logits.len() {
        if logits[c] > logits[best] {
            best = c;
        }
    }
    Ok(best)
}

/// Exact flattened gradient of the per-example loss over the requested scope.
pub fn exact_gradient(
    params: &ModelParams,
    example: &Example,
    scope: GradientScope,
) -> Result<DenseVector> {
    params.check_example(example)?;
    let cfg = params.config;
    let x = example.features.as_slice();
    let a = params.hidden_activation(x);
    let logits = params.logits_from_activation(&a);
    let mut dlogits = softmax(&logits);
    dlogits[example.label] -= 1.0;

    let nc = cfg.n_classes;
    let mut dproj_w = vec![0.0; cfg.hidden_dim * nc];
    for (j, &aj) in a.iter().enumerate() {
        for c in 0..nc {
            dproj_w[j * nc + c] = aj * dlogits[c];
        }
    }
    // proj bias gradient is dlogits itself.
    if scope == GradientScope::LastProjection {
        let mut flat = dproj_w;
        flat.extend_from_slice(&dlogits);
        return Ok(DenseVector::from_finite(flat));
    }

    let mut du = vec![0.0; cfg.hidden_dim];
    for (j, aj) in a.iter().enumerate() {
        let row = &params.proj_weights[j * nc..(j + 1) * nc];
        let da: f64 = row.iter().zip(&dlogits).map(|(w, d)| w * d).sum();
        du[j] = (1.0 - aj * aj) * da;
    }
    let mut dhidden_w = vec![0.0; cfg.input_dim * cfg.hidden_dim];
    for (i, &xi) in x.iter().enumerate() {
        let row = &mut dhidden_w[i * cfg.hidden_dim..(i + 1) * cfg.hidden_dim];
        for (g, d) in row.iter_mut().zip(&du) {
            *g = xi * d;
        }
    }

    let mut flat = dhidden_w;
    flat.extend_from_slice(&du);
    flat.extend_from_slice(&dproj_w);
    flat.extend_from_slice(&dlogits);
    Ok(DenseVector::from_finite(flat))
}

/// Cached penultimate activations for one batch, in batch order.
#[derive(Debug, Clone)]
pub struct ActivationCache {
    rows: Vec<Vec<f64>>,
}

impl ActivationCache {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> Result<&[f64]> {
        self.rows
            .get(i)
            .map(|r| r.as_slice())
            .ok_or(Error::MissingCacheRow {
                row: i,
                rows: self.rows.len(),
            })
    }
}

/// One forward pass over the batch: per-example losses plus the activation
/// cache reused by last-layer-only evaluation.
pub fn forward_cached(
    params: &ModelParams,
    batch: &[Example],
) -> Result<(Vec<f64>, ActivationCache)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument(
            "forward_cached on empty batch".into(),
        ));
    }
    for ex in batch {
        params.check_example(ex)?;
    }
    let per_example = parallel::map_slice(batch, |ex| {
        let a = params.hidden_activation(ex.features.as_slice());
        let loss = cross_entropy(&params.logits_from_activation(&a), ex.label);
        (loss, a)
    });
    let mut losses = Vec::with_capacity(batch.len());
    let mut rows = Vec::with_capacity(batch.len());
    for (loss, a) in per_example {
        if !loss.is_finite() {
            return Err(Error::NonFinite("forward_cached".into()));
        }
        losses.push(loss);
        rows.push(a);
    }
    Ok((losses, ActivationCache { rows }))
}

/// Loss recomputed from a cached activation row under explicit projection
/// parameters (the last-layer-only evaluation path).
pub fn loss_from_activation(
    proj_weights: &[f64],
    proj_bias: &[f64],
    activation: &[f64],
    label: usize,
) -> f64 {
    let logits = projection_logits(proj_weights, proj_bias, activation, proj_bias.len());
    cross_entropy(&logits, label)
}

/// Exact per-example gradients for a whole batch (scope All), in batch order.
pub fn batch_exact_gradients(params: &ModelParams, batch: &[Example]) -> Result<Vec<DenseVector>> {
    parallel::map_slice(batch, |ex| exact_gradient(params, ex, GradientScope::All))
        .into_iter()
        .collect()
}

/// Gradient of the mean batch loss accumulated in one pass; dual route to
/// averaging per-example gradients.
pub fn batch_mean_gradient(params: &ModelParams, batch: &[Example]) -> Result<DenseVector> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument(
            "batch_mean_gradient on empty batch".into(),
        ));
    }
    let mut acc = vec![0.0; params.config.total_dim()];
    let scale = 1.0 / batch.len() as f64;
    for ex in batch {
        let g = exact_gradient(params, ex, GradientScope::All)?;
        for (a, v) in acc.iter_mut().zip(g.as_slice()) {
            *a += scale * v;
        }
    }
    Ok(DenseVector::from_finite(acc))
}
