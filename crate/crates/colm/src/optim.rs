//! Adam and SGD updates, plus the shared normalization history used by the
//! coreset selector.
//!
//! Both states store raw exponential averages and apply the (1 - beta^t)
//! bias correction at read time: the parameter update divides the fresh
//! averages before stepping, and the selection features blend a per-example
//! gradient into the history before correcting. Folding the correction into
//! the stored recurrence instead would compound the divisions and blow the
//! second moment up geometrically.

use crate::error::{Error, Result};
use crate::numeric::DenseVector;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    /// Raw first-moment exponential average.
    pub m: DenseVector,
    /// Raw second-moment exponential average (entries stay >= 0).
    pub v: DenseVector,
    pub t: u32,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(dim: usize, hyper: AdamHyper) -> Self {
        Self {
            m: DenseVector::zeros(dim),
            v: DenseVector::zeros(dim),
            t: 0,
            hyper,
        }
    }

    /// Bias-corrected first moment m / (1 - beta1^t); zero before any step.
    pub fn corrected_first_moment(&self) -> DenseVector {
        if self.t == 0 {
            return DenseVector::zeros(self.m.len());
        }
        self.m
            .scale(1.0 / (1.0 - self.hyper.beta1.powi(self.t as i32)))
    }

    /// Bias-corrected second moment v / (1 - beta2^t); zero before any step.
    pub fn corrected_second_moment(&self) -> DenseVector {
        if self.t == 0 {
            return DenseVector::zeros(self.v.len());
        }
        self.v
            .scale(1.0 / (1.0 - self.hyper.beta2.powi(self.t as i32)))
    }
}

/// One Adam update: advance the raw averages, bias-correct them, and step
/// the parameters by the corrected ratio. Returns the advanced state and the
/// new parameters; `lr_override` substitutes the scheduled learning rate.
pub fn adam_step(
    state: &AdamState,
    params: &DenseVector,
    grad: &DenseVector,
    lr_override: Option<f64>,
) -> Result<(AdamState, DenseVector)> {
    let dim = state.m.len();
    if params.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: params.len(),
        });
    }
    if grad.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: grad.len(),
        });
    }
    let h = state.hyper;
    let lr = lr_override.unwrap_or(h.lr);
    let t = state.t + 1;
    let bc1 = 1.0 - h.beta1.powi(t as i32);
    let bc2 = 1.0 - h.beta2.powi(t as i32);

    let mut m = Vec::with_capacity(dim);
    let mut v = Vec::with_capacity(dim);
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim {
        let g = grad[i];
        let mi = h.beta1 * state.m[i] + (1.0 - h.beta1) * g;
        let vi = h.beta2 * state.v[i] + (1.0 - h.beta2) * g * g;
        m.push(mi);
        v.push(vi);
        out.push(params[i] - lr * (mi / bc1) / (h.eps + (vi / bc2).sqrt()));
    }
    Ok((
        AdamState {
            m: DenseVector::new(m)?,
            v: DenseVector::new(v)?,
            t,
            hyper: h,
        },
        DenseVector::new(out)?,
    ))
}

/// Plain SGD update.
pub fn sgd_step(params: &DenseVector, grad: &DenseVector, lr: f64) -> Result<DenseVector> {
    params.add_scaled(grad, -lr)
}

/// How `normalized_feature` combines the shared history with the per-example
/// gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationMode {
    /// Blend the gradient into both moments before correcting.
    #[default]
    HistoryBlend,
    /// Keep the raw gradient as numerator; only the second moment blends.
    InstantOverSharedV,
}

/// Shared first/second-moment history over the selection feature space,
/// accumulated from big-source gradients only.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionState {
    pub m_hat: DenseVector,
    pub v_hat: DenseVector,
    pub t: u32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl SelectionState {
    pub fn new(dim: usize, hyper: AdamHyper) -> Self {
        Self {
            m_hat: DenseVector::zeros(dim),
            v_hat: DenseVector::zeros(dim),
            t: 0,
            beta1: hyper.beta1,
            beta2: hyper.beta2,
            eps: hyper.eps,
        }
    }

    pub fn dim(&self) -> usize {
        self.m_hat.len()
    }
}

/// Per-example normalized feature: the example's gradient blended one step
/// into the shared history, bias-corrected at the step currently being
/// selected (t + 1), first moment divided by eps + sqrt(second moment).
/// Does not mutate the state.
pub fn normalized_feature(
    state: &SelectionState,
    grad: &DenseVector,
    mode: NormalizationMode,
) -> Result<DenseVector> {
    let dim = state.dim();
    if grad.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: grad.len(),
        });
    }
    let t = state.t + 1;
    let bc1 = 1.0 - state.beta1.powi(t as i32);
    let bc2 = 1.0 - state.beta2.powi(t as i32);
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim {
        let g = grad[i];
        let v = (state.beta2 * state.v_hat[i] + (1.0 - state.beta2) * g * g) / bc2;
        let num = match mode {
            NormalizationMode::HistoryBlend => {
                (state.beta1 * state.m_hat[i] + (1.0 - state.beta1) * g) / bc1
            }
            NormalizationMode::InstantOverSharedV => g,
        };
        out.push(num / (state.eps + v.sqrt()));
    }
    DenseVector::new(out)
}

/// Advances the shared history one step from the mean big-source gradient.
/// Raw exponential averages; correction happens at read time.
pub fn update_selection_history(
    state: &SelectionState,
    big_source_mean_grad: &DenseVector,
) -> Result<SelectionState> {
    let dim = state.dim();
    if big_source_mean_grad.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: big_source_mean_grad.len(),
        });
    }
    let mut m = Vec::with_capacity(dim);
    let mut v = Vec::with_capacity(dim);
    for i in 0..dim {
        let g = big_source_mean_grad[i];
        m.push(state.beta1 * state.m_hat[i] + (1.0 - state.beta1) * g);
        v.push(state.beta2 * state.v_hat[i] + (1.0 - state.beta2) * g * g);
    }
    Ok(SelectionState {
        m_hat: DenseVector::new(m)?,
        v_hat: DenseVector::new(v)?,
        t: state.t + 1,
        beta1: state.beta1,
        beta2: state.beta2,
        eps: state.eps,
    })
}

/// Learning-rate schedules used by the trainer.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Linear warm-up over `warmup_frac` of the run, then cosine decay to 0.
    Cosine { warmup_frac: f64 },
}

impl LrSchedule {
    /// Learning rate at 1-based step `t` of `total`.
    pub fn lr_at(&self, base: f64, t: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine { warmup_frac } => {
                let warmup = ((total as f64) * warmup_frac).ceil().max(1.0) as usize;
                if t <= warmup {
                    base * t as f64 / warmup as f64
                } else if total <= warmup {
                    base
                } else {
                    let progress = (t - warmup) as f64 / (total - warmup) as f64;
                    base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
                }
            }
        }
    }
}
