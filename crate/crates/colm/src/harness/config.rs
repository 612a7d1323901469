//! Configuration schemas for the experiment runner. Config files are JSON;
//! every field has a default and unknown fields are rejected.

use crate::data::{DataFormat, MixtureSpec};
use crate::error::{Error, Result};
use crate::optim::{AdamHyper, LrSchedule, NormalizationMode};
use crate::selector::MaskAggregation;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Random,
    Colm,
    BigLoss,
    GradNorm,
    LeastConfidence,
    HiddenFl,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Method::Random => "random",
            Method::Colm => "colm",
            Method::BigLoss => "big-loss",
            Method::GradNorm => "grad-norm",
            Method::LeastConfidence => "least-confidence",
            Method::HiddenFl => "hidden-fl",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetConfig {
    /// Generate a planted mixture in-process.
    Generate(MixtureSpec),
    /// Load a dataset file (format inferred from the extension if absent).
    Load {
        path: PathBuf,
        #[serde(default)]
        format: Option<DataFormat>,
    },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Generate(MixtureSpec::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub algo: Algo,
    #[serde(flatten)]
    pub hyper: AdamHyper,
    pub schedule: LrSchedule,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            algo: Algo::Adam,
            hyper: AdamHyper::default(),
            schedule: LrSchedule::Constant,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpsaSettings {
    pub perturbation_scale: f64,
    pub probes: usize,
    pub perturb_bias: bool,
    /// Mix the example's dataset index into the probe seed. Off by default:
    /// one shared direction per step is what makes per-example estimates
    /// comparable under the facility-location distance.
    pub per_example_seed: bool,
}

impl Default for SpsaSettings {
    fn default() -> Self {
        Self {
            perturbation_scale: 1e-3,
            probes: 1,
            perturb_bias: true,
            per_example_seed: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSettings {
    /// Mask size; defaults to max(8, ceil(0.008 * d_vp)).
    pub h: Option<usize>,
    pub per_source: bool,
    pub keep_small: bool,
    pub weighted: bool,
    pub mask_aggregation: MaskAggregation,
    pub normalization: NormalizationMode,
    pub spsa: SpsaSettings,
}

impl Default for SelectionSettings {
    fn default() -> Self {
        Self {
            h: None,
            per_source: true,
            keep_small: true,
            weighted: false,
            mask_aggregation: MaskAggregation::default(),
            normalization: NormalizationMode::default(),
            spsa: SpsaSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoveryConfig {
    pub clusters: usize,
    pub warmup_steps: usize,
    pub refreshes: usize,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            clusters: 2,
            warmup_steps: 20,
            refreshes: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub method: Method,
    /// Selected mini-batch size.
    pub b: usize,
    /// Large candidate batch size; defaults to 2b, capped at 4b.
    pub r: Option<usize>,
    pub steps: usize,
    pub hidden_dim: usize,
    pub optimizer: OptimizerConfig,
    pub selection: SelectionSettings,
    /// Cluster hidden states to discover sources instead of trusting labels.
    pub discovery: Option<DiscoveryConfig>,
    pub seed: u64,
    /// Number of evenly spaced parameter checkpoints to retain (for the
    /// variance probe); 0 keeps none.
    pub checkpoints: usize,
    /// First step eligible for a checkpoint; lets probes skip the barely
    /// trained prefix of a trajectory.
    pub checkpoint_after: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            method: Method::Colm,
            b: 32,
            r: None,
            steps: 100,
            hidden_dim: 32,
            optimizer: OptimizerConfig::default(),
            selection: SelectionSettings::default(),
            discovery: None,
            seed: 0,
            checkpoints: 0,
            checkpoint_after: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn resolved_r(&self) -> usize {
        self.r.unwrap_or(2 * self.b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.b == 0 || self.steps == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("b, steps and hidden_dim must be >= 1".into()));
        }
        let r = self.resolved_r();
        if r < self.b {
            return Err(Error::Config(format!(
                "r={r} must be at least b={}",
                self.b
            )));
        }
        if r > 4 * self.b {
            return Err(Error::Config(format!(
                "r={r} exceeds the supported ceiling of 4b={}",
                4 * self.b
            )));
        }
        if let Some(d) = &self.discovery {
            if d.clusters == 0 {
                return Err(Error::Config("discovery.clusters must be >= 1".into()));
            }
        }
        if let DatasetConfig::Generate(spec) = &self.dataset {
            spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    /// Dense neighborhoods per source.
    pub k: usize,
    /// Partitions.
    pub m: usize,
    pub delta: f64,
    /// Coverage radius; defaults to alpha_star / 2.
    pub alpha: Option<f64>,
    pub alpha_star: f64,
    /// Density floor, recorded in the report for the sizing context.
    pub beta: f64,
    /// Local-evaluation tolerance.
    pub epsilon: f64,
    /// Planted outliers per partition for the variance-gap check.
    pub kappa_over_m: f64,
    pub alpha_u: f64,
    pub dimension: usize,
    pub trials: usize,
    /// Points and subset size for the variance-gap check.
    pub variance_gap_points: usize,
    pub variance_gap_subset: usize,
    /// Dataset size and resamples for the 1/b variance-scaling probe.
    pub scaling_points: usize,
    pub scaling_batch_sizes: Vec<usize>,
    pub scaling_resamples: usize,
    pub seed: u64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            k: 2,
            m: 2,
            delta: 0.04,
            alpha: None,
            alpha_star: 1.0,
            beta: 0.5,
            epsilon: 0.1,
            kappa_over_m: 1.0,
            alpha_u: 2.0,
            dimension: 2,
            trials: 500,
            variance_gap_points: 400,
            variance_gap_subset: 8,
            scaling_points: 4000,
            scaling_batch_sizes: vec![8, 16, 32, 64],
            scaling_resamples: 400,
            seed: 0,
        }
    }
}

impl TheoryConfig {
    pub fn resolved_alpha(&self) -> f64 {
        self.alpha.unwrap_or(self.alpha_star / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.m == 0 || self.trials == 0 {
            return Err(Error::Config("k, m and trials must be >= 1".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config("delta must lie in (0, 1)".into()));
        }
        if self.alpha_u <= self.alpha_star {
            return Err(Error::Config("alpha_u must exceed alpha_star".into()));
        }
        if self.resolved_alpha() > self.alpha_star {
            return Err(Error::Config("alpha must not exceed alpha_star".into()));
        }
        if self.scaling_batch_sizes.len() < 2 {
            return Err(Error::Config(
                "need at least two batch sizes for the scaling probe".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub experiment: ExperimentConfig,
    pub checkpoints: usize,
    pub resamples: usize,
    pub permutations: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentConfig::default(),
            checkpoints: 10,
            resamples: 30,
            permutations: 2000,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        self.experiment.validate()?;
        if self.checkpoints == 0 || self.resamples < 2 {
            return Err(Error::Config(
                "need >= 1 checkpoint and >= 2 resamples".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchCase {
    pub n: usize,
    pub dim: usize,
    pub h: usize,
    pub budget: usize,
}

impl Default for BenchCase {
    fn default() -> Self {
        Self {
            n: 128,
            dim: 330,
            h: 8,
            budget: 32,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub cases: Vec<BenchCase>,
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            cases: vec![
                BenchCase {
                    n: 64,
                    ..BenchCase::default()
                },
                BenchCase {
                    n: 128,
                    ..BenchCase::default()
                },
                BenchCase {
                    n: 256,
                    ..BenchCase::default()
                },
            ],
            repeats: 5,
            seed: 0,
        }
    }
}

pub fn load_json_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
