//! Gradient-variance probe: at each retained checkpoint, resample large
//! batches and compare the spread of mean gradients between the selected
//! coreset and a same-size random subset.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{batch_exact_gradients, Example};
use crate::numeric::{derive_seed, stream_rng, DenseVector};
use crate::parallel;
use crate::selector::{select_coreset, variance_gap_bound, CandidateBatch, SelectionConfig};
use crate::zo::{batch_last_projection, SpsaConfig};

use super::config::{DatasetConfig, ProbeConfig};
use super::metrics::VarianceRow;
use super::train::{prepare_dataset, run_training_on, Checkpoint};

const STREAM_PROBE: u64 = 21;
const STREAM_PROBE_ZO: u64 = 22;
const STREAM_PERMUTE: u64 = 23;

#[derive(Debug, Clone)]
pub struct ProbeOutcome {
    pub rows: Vec<VarianceRow>,
    /// Fraction of checkpoints where the coreset variance is strictly lower.
    pub fraction_selected_lower: f64,
}

pub fn run_variance_probe(cfg: &ProbeConfig) -> Result<ProbeOutcome> {
    cfg.validate()?;
    let mut experiment = cfg.experiment.clone();
    experiment.checkpoints = cfg.checkpoints;
    let prepared = prepare_dataset(&experiment)?;
    let result = run_training_on(&experiment, &prepared.dataset)?;

    // The closed-form cap applies when the outlier geometry is planted;
    // kappa/m becomes the expected number of outliers per candidate batch.
    let bound = match &experiment.dataset {
        DatasetConfig::Generate(spec) => {
            let per_batch = spec.outliers as f64 * experiment.resolved_r() as f64
                / prepared.dataset.len() as f64;
            Some(variance_gap_bound(
                per_batch,
                spec.outlier_radius,
                spec.alpha_star,
            ))
        }
        DatasetConfig::Load { .. } => None,
    };

    let mut rows = Vec::new();
    let mut lower = 0usize;
    for ckpt in &result.checkpoints {
        let row = probe_checkpoint(cfg, &prepared.dataset, ckpt, bound)?;
        if row.var_selected < row.var_random {
            lower += 1;
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Config("training retained no checkpoints".into()));
    }
    let fraction = lower as f64 / rows.len() as f64;
    Ok(ProbeOutcome {
        rows,
        fraction_selected_lower: fraction,
    })
}

fn probe_checkpoint(
    cfg: &ProbeConfig,
    dataset: &Dataset,
    ckpt: &Checkpoint,
    bound: Option<f64>,
) -> Result<VarianceRow> {
    let exp = &cfg.experiment;
    let catalog = ckpt
        .catalog
        .as_ref()
        .ok_or_else(|| Error::Config("checkpoint has no source catalog".into()))?;
    let r = exp.resolved_r();
    let b = exp.b;
    let d_vp = (exp.hidden_dim * dataset.n_classes) + dataset.n_classes;
    let h = exp
        .selection
        .h
        .unwrap_or_else(|| SelectionConfig::default_h(d_vp));
    let selection_cfg = SelectionConfig {
        budget: b,
        h,
        per_source: exp.selection.per_source,
        keep_small: exp.selection.keep_small,
        weighted: exp.selection.weighted,
        mask_aggregation: exp.selection.mask_aggregation,
        normalization: exp.selection.normalization,
    };

    let resample = |j: usize| -> Result<(DenseVector, DenseVector)> {
        let mut rng = stream_rng(exp.seed, &[STREAM_PROBE, ckpt.step as u64, j as u64]);
        let idx = rand::seq::index::sample(&mut rng, dataset.len(), r).into_vec();
        let batch: Vec<Example> = idx
            .iter()
            .map(|&i| {
                let mut ex = dataset.examples[i].clone();
                ex.source_id = ckpt.source_labels[i];
                ex
            })
            .collect();

        let (_, cache) = crate::model::forward_cached(&ckpt.params, &batch)?;
        let spsa = SpsaConfig {
            perturbation_scale: exp.selection.spsa.perturbation_scale,
            probes: exp.selection.spsa.probes,
            perturb_bias: exp.selection.spsa.perturb_bias,
            seed: derive_seed(exp.seed, &[STREAM_PROBE_ZO, ckpt.step as u64, j as u64]),
        };
        let features = batch_last_projection(&ckpt.params, &batch, &cache, &spsa)?;
        let candidate = CandidateBatch::new(
            idx.clone(),
            batch.iter().map(|e| e.source_id).collect(),
            features,
        )?;
        let coreset = select_coreset(&candidate, catalog, &ckpt.selection_state, &selection_cfg)?;

        let grads = batch_exact_gradients(&ckpt.params, &batch)?;
        let mean_of = |positions: &[usize]| -> Result<DenseVector> {
            let rows: Vec<DenseVector> = positions.iter().map(|&p| grads[p].clone()).collect();
            crate::numeric::mean_vector(&rows)
        };

        let selected_mean = mean_of(&coreset.batch_positions())?;
        let mut random_positions = rand::seq::index::sample(&mut rng, r, b.min(r)).into_vec();
        random_positions.sort_by_key(|&p| idx[p]);
        let random_mean = mean_of(&random_positions)?;
        Ok((selected_mean, random_mean))
    };

    let pairs: Vec<(DenseVector, DenseVector)> = parallel::map_indexed(cfg.resamples, resample)
        .into_iter()
        .collect::<Result<_>>()?;
    let selected: Vec<DenseVector> = pairs.iter().map(|p| p.0.clone()).collect();
    let random: Vec<DenseVector> = pairs.iter().map(|p| p.1.clone()).collect();

    let var_selected = super::train::trace_covariance(&selected)?;
    let var_random = super::train::trace_covariance(&random)?;
    let p_value = permutation_p_value(
        &random,
        &selected,
        cfg.permutations,
        derive_seed(exp.seed, &[STREAM_PERMUTE, ckpt.step as u64]),
    );
    Ok(VarianceRow {
        checkpoint_step: ckpt.step,
        var_random,
        var_selected,
        gap: var_random - var_selected,
        bound,
        p_value,
    })
}

/// Two-sided permutation test on the difference of trace variances between
/// two vector families. Returns an add-one-smoothed p-value.
///
/// trace-cov(group) = [sum ||v||^2 - ||sum v||^2 / n] / (n - 1), so each
/// permutation only needs one group's running sum and squared norms.
pub fn permutation_p_value(
    a: &[DenseVector],
    b: &[DenseVector],
    permutations: usize,
    seed: u64,
) -> f64 {
    let pool: Vec<&DenseVector> = a.iter().chain(b.iter()).collect();
    let na = a.len();
    let total = pool.len();
    if na < 2 || total - na < 2 {
        return 1.0;
    }
    let dim = pool[0].len();
    let sq_norms: Vec<f64> = pool.iter().map(|v| v.dot(v).expect("same dim")).collect();
    let mut sum_all = vec![0.0; dim];
    for v in &pool {
        for (s, x) in sum_all.iter_mut().zip(v.as_slice()) {
            *s += x;
        }
    }
    let sq_total: f64 = sq_norms.iter().sum();

    let stat_for = |a_members: &[usize]| -> f64 {
        let mut sum_a = vec![0.0; dim];
        let mut sq_a = 0.0;
        for &i in a_members {
            sq_a += sq_norms[i];
            for (s, x) in sum_a.iter_mut().zip(pool[i].as_slice()) {
                *s += x;
            }
        }
        let norm2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        let norm_b2: f64 = sum_all
            .iter()
            .zip(&sum_a)
            .map(|(t, a)| (t - a) * (t - a))
            .sum();
        let nb = total - na;
        let var_a = (sq_a - norm2(&sum_a) / na as f64) / (na - 1) as f64;
        let var_b = ((sq_total - sq_a) - norm_b2 / nb as f64) / (nb - 1) as f64;
        var_a - var_b
    };

    let observed = stat_for(&(0..na).collect::<Vec<_>>());
    let hits: usize = parallel::map_indexed(permutations, |p| {
        let mut rng = stream_rng(seed, &[p as u64]);
        let shuffled = rand::seq::index::sample(&mut rng, total, na).into_vec();
        usize::from(stat_for(&shuffled).abs() >= observed.abs() - 1e-15)
    })
    .into_iter()
    .sum();
    (hits + 1) as f64 / (permutations + 1) as f64
}
