//! Two-point (SPSA-style) gradient estimation.
//!
//! Each probe draws a Gaussian direction z, evaluates the loss at theta +/-
//! eps*z, and reconstructs coeff * z with coeff = (L+ - L-) / (2 eps). The
//! direction is regenerated from its seed on every use and never stored. The
//! last-projection variant perturbs only the final-layer block and replays
//! the loss from cached penultimate activations, so each probe costs two
//! final-layer evaluations instead of two full forward passes.

use crate::error::{Error, Result};
use crate::model::{loss_from_activation, per_example_loss, ActivationCache, Example, ModelParams};
use crate::numeric::{derive_seed, DenseVector, SeededGaussian};
use crate::parallel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpsaConfig {
    /// Perturbation scale (the finite-difference step along z).
    pub perturbation_scale: f64,
    /// Seed for direction regeneration. Callers wanting one shared direction
    /// per training step derive this from (run seed, step) only.
    pub seed: u64,
    /// Number of probes averaged.
    pub probes: usize,
    /// Whether the perturbation covers the final-layer bias entries too.
    pub perturb_bias: bool,
}

impl Default for SpsaConfig {
    fn default() -> Self {
        Self {
            perturbation_scale: 1e-3,
            seed: 0,
            probes: 1,
            perturb_bias: true,
        }
    }
}

impl SpsaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.perturbation_scale <= 0.0 || !self.perturbation_scale.is_finite() {
            return Err(Error::InvalidArgument(
                "perturbation_scale must be > 0".into(),
            ));
        }
        if self.probes == 0 {
            return Err(Error::InvalidArgument("probes must be >= 1".into()));
        }
        Ok(())
    }

    fn probe_direction(&self, probe: usize, dim: usize) -> DenseVector {
        SeededGaussian::new(derive_seed(self.seed, &[probe as u64]), dim)
            .expect("dim >= 1")
            .sample()
    }
}

/// Two-sided estimate of the directional derivative along a fixed direction:
/// (loss(theta + eps z) - loss(theta - eps z)) / (2 eps). Exactly two loss
/// evaluations.
pub fn estimate_along(
    loss: &mut dyn FnMut(&[f64]) -> Result<f64>,
    theta: &[f64],
    z: &[f64],
    eps: f64,
) -> Result<f64> {
    let plus: Vec<f64> = theta.iter().zip(z).map(|(t, zi)| t + eps * zi).collect();
    let minus: Vec<f64> = theta.iter().zip(z).map(|(t, zi)| t - eps * zi).collect();
    Ok((loss(&plus)? - loss(&minus)?) / (2.0 * eps))
}

/// Average over probes of coeff_p * z_p for a generic loss over theta.
pub fn spsa_estimate(
    loss: &mut dyn FnMut(&[f64]) -> Result<f64>,
    theta: &[f64],
    cfg: &SpsaConfig,
) -> Result<DenseVector> {
    cfg.validate()?;
    let dim = theta.len();
    if dim == 0 {
        return Err(Error::InvalidArgument("theta must be non-empty".into()));
    }
    let mut acc = vec![0.0; dim];
    for probe in 0..cfg.probes {
        let z = cfg.probe_direction(probe, dim);
        let coeff = estimate_along(loss, theta, z.as_slice(), cfg.perturbation_scale)?;
        if !coeff.is_finite() {
            return Err(Error::NonFiniteProbe { probe });
        }
        for (a, zi) in acc.iter_mut().zip(z.as_slice()) {
            *a += coeff * zi;
        }
    }
    let inv = 1.0 / cfg.probes as f64;
    DenseVector::new(acc.into_iter().map(|a| a * inv).collect())
}

/// Full-parameter estimate of the per-example gradient of the toy model.
pub fn spsa_full(params: &ModelParams, example: &Example, cfg: &SpsaConfig) -> Result<DenseVector> {
    let flat = params.to_flat();
    let config = params.config;
    let mut loss = |theta: &[f64]| -> Result<f64> {
        let p = ModelParams::from_flat(config, &DenseVector::new(theta.to_vec())?)?;
        per_example_loss(&p, example)
    };
    spsa_estimate(&mut loss, flat.as_slice(), cfg)
}

/// Last-projection estimate (length d_vp) replayed from a cached activation
/// row; no full forward pass.
pub fn spsa_last_projection(
    params: &ModelParams,
    example: &Example,
    cache: &ActivationCache,
    row: usize,
    cfg: &SpsaConfig,
) -> Result<DenseVector> {
    cfg.validate()?;
    let activation = cache.row(row)?;
    let d_vp = params.config.last_projection_dim();
    let n_weights = params.proj_weights.len();
    let eps = cfg.perturbation_scale;

    let mut acc = vec![0.0; d_vp];
    for probe in 0..cfg.probes {
        let mut z = cfg.probe_direction(probe, d_vp).into_vec();
        if !cfg.perturb_bias {
            z[n_weights..].iter_mut().for_each(|b| *b = 0.0);
        }
        let eval = |sign: f64| -> f64 {
            let w: Vec<f64> = params
                .proj_weights
                .iter()
                .zip(&z[..n_weights])
                .map(|(p, zi)| p + sign * eps * zi)
                .collect();
            let b: Vec<f64> = params
                .proj_bias
                .iter()
                .zip(&z[n_weights..])
                .map(|(p, zi)| p + sign * eps * zi)
                .collect();
            loss_from_activation(&w, &b, activation, example.label)
        };
        let coeff = (eval(1.0) - eval(-1.0)) / (2.0 * eps);
        if !coeff.is_finite() {
            return Err(Error::NonFiniteProbe { probe });
        }
        for (a, zi) in acc.iter_mut().zip(&z) {
            *a += coeff * zi;
        }
    }
    let inv = 1.0 / cfg.probes as f64;
    DenseVector::new(acc.into_iter().map(|a| a * inv).collect())
}

/// Last-projection estimates for a whole batch. One shared `cfg` means one
/// shared direction across examples, which is what the selector wants.
pub fn batch_last_projection(
    params: &ModelParams,
    batch: &[Example],
    cache: &ActivationCache,
    cfg: &SpsaConfig,
) -> Result<Vec<DenseVector>> {
    parallel::map_indexed(batch.len(), |i| {
        spsa_last_projection(params, &batch[i], cache, i, cfg)
    })
    .into_iter()
    .collect()
}

/// Sequential twin of [`batch_last_projection`], kept for the bench suite.
pub fn batch_last_projection_seq(
    params: &ModelParams,
    batch: &[Example],
    cache: &ActivationCache,
    cfg: &SpsaConfig,
) -> Result<Vec<DenseVector>> {
    parallel::map_indexed_seq(batch.len(), |i| {
        spsa_last_projection(params, &batch[i], cache, i, cfg)
    })
    .into_iter()
    .collect()
}
