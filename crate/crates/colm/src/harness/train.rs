//! The training loop: sample a large batch, select a mini-batch by the
//! configured method, update the model, log metrics.
//!
//! Determinism contract: every random draw comes from a stream seeded by
//! (run seed, stream tag, step), gradients are averaged in dataset-index
//! order, and evaluation reduces in example order. Two runs with the same
//! config and seed produce identical metrics; only the timing sidecar
//! differs.

use crate::data::{generate, load, Dataset, GroundTruth};
use crate::error::{Error, Result};
use crate::model::{
    batch_exact_gradients, exact_gradient, forward_cached, ActivationCache, Example, GradientScope,
    ModelConfig, ModelParams,
};
use crate::numeric::{derive_seed, mean_vector, stream_rng, DenseVector};
use crate::optim::{adam_step, sgd_step, update_selection_history, AdamState, SelectionState};
use crate::parallel;
use crate::selector::{
    discover_sources, select_coreset, CandidateBatch, SelectionConfig, SourceCatalog,
};
use crate::zo::{batch_last_projection, spsa_last_projection, SpsaConfig};
use std::time::Instant;

use super::config::{Algo, DatasetConfig, DiscoveryConfig, ExperimentConfig, Method};
use super::metrics::{MetricsRow, RunSummary, TimingRow};

const STREAM_BATCH: u64 = 1;
const STREAM_SELECT: u64 = 2;
const STREAM_ZO: u64 = 3;
const STREAM_DISCOVERY: u64 = 4;

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub dataset: Dataset,
    pub truth: Option<GroundTruth>,
}

pub fn prepare_dataset(cfg: &ExperimentConfig) -> Result<PreparedData> {
    match &cfg.dataset {
        DatasetConfig::Generate(spec) => {
            let generated = generate(spec)?;
            Ok(PreparedData {
                dataset: generated.dataset,
                truth: Some(generated.truth),
            })
        }
        DatasetConfig::Load { path, format } => {
            let dataset = load(path, *format, cfg.discovery.is_some())?;
            Ok(PreparedData {
                dataset,
                truth: None,
            })
        }
    }
}

/// Model parameters (plus selection context) captured mid-run.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub step: usize,
    pub params: ModelParams,
    pub selection_state: SelectionState,
    pub source_labels: Vec<u32>,
    pub catalog: Option<SourceCatalog>,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub rows: Vec<MetricsRow>,
    pub timings: Vec<TimingRow>,
    pub summary: RunSummary,
    pub checkpoints: Vec<Checkpoint>,
    pub final_params: ModelParams,
}

#[derive(Debug, Clone)]
pub struct EvalStats {
    pub mean_loss: f64,
    pub overall_acc: f64,
    pub small_acc: Option<f64>,
    pub big_acc: Option<f64>,
}

/// Full-dataset loss and per-group accuracy; reduces in example order.
pub fn evaluate(
    params: &ModelParams,
    dataset: &Dataset,
    labels: &[u32],
    catalog: Option<&SourceCatalog>,
) -> Result<EvalStats> {
    let per_example = parallel::map_slice(&dataset.examples, |ex| {
        let logits = params.logits(ex.features.as_slice());
        let loss = crate::model::cross_entropy(&logits, ex.label);
        let mut best = 0;
        for c in 1..logits.len() {
            if logits[c] > logits[best] {
                best = c;
            }
        }
        (loss, best == ex.label)
    });
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    let mut small_total = 0usize;
    let mut small_correct = 0usize;
    let mut big_total = 0usize;
    let mut big_correct = 0usize;
    for (i, (loss, ok)) in per_example.iter().enumerate() {
        total_loss += loss;
        correct += *ok as usize;
        if let Some(cat) = catalog {
            if cat.is_small(labels[i]) {
                small_total += 1;
                small_correct += *ok as usize;
            } else {
                big_total += 1;
                big_correct += *ok as usize;
            }
        }
    }
    let n = dataset.len() as f64;
    let frac = |c: usize, t: usize| {
        if t == 0 {
            None
        } else {
            Some(c as f64 / t as f64)
        }
    };
    Ok(EvalStats {
        mean_loss: total_loss / n,
        overall_acc: correct as f64 / dataset.len() as f64,
        small_acc: catalog.and_then(|_| frac(small_correct, small_total)),
        big_acc: catalog.and_then(|_| frac(big_correct, big_total)),
    })
}

struct StepSelection {
    /// Batch positions, sorted by dataset index.
    positions: Vec<usize>,
    weights: Vec<f64>,
    /// Mean big-source feature for the history update (selection methods
    /// that maintain one).
    big_source_mean: Option<DenseVector>,
}

fn top_b_positions(
    scores: &[f64],
    b: usize,
    descending: bool,
    dataset_indices: &[usize],
) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| {
        let by_score = if descending {
            scores[j].total_cmp(&scores[i])
        } else {
            scores[i].total_cmp(&scores[j])
        };
        by_score.then_with(|| dataset_indices[i].cmp(&dataset_indices[j]))
    });
    order.truncate(b.min(scores.len()));
    order
}

fn sorted_by_dataset_index(mut positions: Vec<usize>, dataset_indices: &[usize]) -> Vec<usize> {
    positions.sort_by_key(|&p| dataset_indices[p]);
    positions
}

pub struct Trainer<'a> {
    cfg: &'a ExperimentConfig,
    dataset: &'a Dataset,
    model_cfg: ModelConfig,
    selection_cfg: SelectionConfig,
    params: ModelParams,
    adam: AdamState,
    selection_state: SelectionState,
    labels: Vec<u32>,
    catalog: Option<SourceCatalog>,
    refresh_steps: Vec<usize>,
    next_refresh: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a ExperimentConfig, dataset: &'a Dataset) -> Result<Self> {
        cfg.validate()?;
        if cfg.resolved_r() > dataset.len() {
            return Err(Error::Config(format!(
                "candidate batch r={} exceeds dataset size {}",
                cfg.resolved_r(),
                dataset.len()
            )));
        }
        let model_cfg = ModelConfig {
            input_dim: dataset.dimension,
            hidden_dim: cfg.hidden_dim,
            n_classes: dataset.n_classes,
        };
        let d_vp = model_cfg.last_projection_dim();
        let h = cfg
            .selection
            .h
            .unwrap_or_else(|| SelectionConfig::default_h(d_vp));
        if h == 0 || h > d_vp {
            return Err(Error::Config(format!("h={h} out of range 1..={d_vp}")));
        }
        let selection_cfg = SelectionConfig {
            budget: cfg.b,
            h,
            per_source: cfg.selection.per_source,
            keep_small: cfg.selection.keep_small,
            weighted: cfg.selection.weighted,
            mask_aggregation: cfg.selection.mask_aggregation,
            normalization: cfg.selection.normalization,
        };

        let (labels, catalog) = if cfg.discovery.is_some() {
            // Sources come from clustering; labels before the first refresh
            // are unknown.
            (vec![0u32; dataset.len()], None)
        } else {
            if !dataset.has_sources {
                return Err(Error::Config(
                    "dataset has no source labels and discovery is disabled".into(),
                ));
            }
            let labels: Vec<u32> = dataset.examples.iter().map(|e| e.source_id).collect();
            let catalog = SourceCatalog::from_labels(labels.iter().copied())?;
            (labels, Some(catalog))
        };

        let refresh_steps = match &cfg.discovery {
            Some(d) => discovery_refresh_steps(d, cfg.steps),
            None => Vec::new(),
        };

        Ok(Self {
            cfg,
            dataset,
            model_cfg,
            selection_cfg,
            params: ModelParams::init(model_cfg, cfg.seed),
            adam: AdamState::new(model_cfg.total_dim(), cfg.optimizer.hyper),
            selection_state: SelectionState::new(d_vp, cfg.optimizer.hyper),
            labels,
            catalog,
            refresh_steps,
            next_refresh: 0,
        })
    }

    fn maybe_rediscover(&mut self, step: usize) -> Result<()> {
        let Some(disc) = &self.cfg.discovery else {
            return Ok(());
        };
        if self.next_refresh >= self.refresh_steps.len()
            || self.refresh_steps[self.next_refresh] != step
        {
            return Ok(());
        }
        let refresh_idx = self.next_refresh as u64;
        self.next_refresh += 1;
        let activations = parallel::map_slice(&self.dataset.examples, |ex| {
            self.params.hidden_activation(ex.features.as_slice())
        });
        let labels = discover_sources(
            &activations,
            disc.clusters,
            derive_seed(self.cfg.seed, &[STREAM_DISCOVERY, refresh_idx]),
        )?;
        self.catalog = Some(SourceCatalog::from_labels(labels.iter().copied())?);
        self.labels = labels;
        Ok(())
    }

    fn sample_batch(&self, step: usize) -> (Vec<usize>, Vec<Example>) {
        let mut rng = stream_rng(self.cfg.seed, &[STREAM_BATCH, step as u64]);
        let idx = rand::seq::index::sample(&mut rng, self.dataset.len(), self.cfg.resolved_r())
            .into_vec();
        let batch = idx
            .iter()
            .map(|&i| {
                let mut ex = self.dataset.examples[i].clone();
                ex.source_id = self.labels[i];
                ex
            })
            .collect();
        (idx, batch)
    }

    /// Replaces the model parameters (e.g. with a trained checkpoint) before
    /// running isolated selections.
    pub fn set_params(&mut self, params: ModelParams) {
        self.params = params;
    }

    /// Runs one step's selection in isolation: (batch positions sorted by
    /// dataset index, weights). Diagnostic surface for baseline comparisons.
    pub fn select_once(
        &self,
        step: usize,
        batch: &[Example],
        dataset_indices: &[usize],
    ) -> Result<(Vec<usize>, Vec<f64>)> {
        let s = self.select(step, batch, dataset_indices)?;
        Ok((s.positions, s.weights))
    }

    fn select(
        &self,
        step: usize,
        batch: &[Example],
        dataset_indices: &[usize],
    ) -> Result<StepSelection> {
        let b = self.cfg.b;
        let uniform = |positions: Vec<usize>| StepSelection {
            weights: vec![1.0; positions.len()],
            positions,
            big_source_mean: None,
        };

        let effective_method = match (self.cfg.method, &self.catalog) {
            // Before sources exist (discovery warm-up) the pipeline degrades
            // to random selection.
            (Method::Colm, None) => Method::Random,
            (m, _) => m,
        };

        match effective_method {
            Method::Random => {
                let mut rng = stream_rng(self.cfg.seed, &[STREAM_SELECT, step as u64]);
                let picked =
                    rand::seq::index::sample(&mut rng, batch.len(), b.min(batch.len())).into_vec();
                Ok(uniform(sorted_by_dataset_index(picked, dataset_indices)))
            }
            Method::Colm => {
                let catalog = self.catalog.as_ref().expect("handled above");
                let spsa = &self.cfg.selection.spsa;
                let (_, cache) = forward_cached(&self.params, batch)?;
                let base_cfg = SpsaConfig {
                    perturbation_scale: spsa.perturbation_scale,
                    probes: spsa.probes,
                    perturb_bias: spsa.perturb_bias,
                    seed: derive_seed(self.cfg.seed, &[STREAM_ZO, step as u64]),
                };
                let features: Vec<DenseVector> = if spsa.per_example_seed {
                    parallel::map_indexed(batch.len(), |i| {
                        let cfg = SpsaConfig {
                            seed: derive_seed(
                                self.cfg.seed,
                                &[STREAM_ZO, step as u64, dataset_indices[i] as u64],
                            ),
                            ..base_cfg
                        };
                        spsa_last_projection(&self.params, &batch[i], &cache, i, &cfg)
                    })
                    .into_iter()
                    .collect::<Result<_>>()?
                } else {
                    batch_last_projection(&self.params, batch, &cache, &base_cfg)?
                };

                let big_rows: Vec<DenseVector> = (0..batch.len())
                    .filter(|&i| !catalog.is_small(batch[i].source_id))
                    .map(|i| features[i].clone())
                    .collect();
                let big_source_mean = if big_rows.is_empty() {
                    None
                } else {
                    Some(mean_vector(&big_rows)?)
                };

                let candidate = CandidateBatch::new(
                    dataset_indices.to_vec(),
                    batch.iter().map(|e| e.source_id).collect(),
                    features,
                )?;
                let coreset = select_coreset(
                    &candidate,
                    catalog,
                    &self.selection_state,
                    &self.selection_cfg,
                )?;
                Ok(StepSelection {
                    positions: coreset.entries.iter().map(|e| e.batch_position).collect(),
                    weights: coreset.entries.iter().map(|e| e.weight).collect(),
                    big_source_mean,
                })
            }
            Method::BigLoss => {
                let (losses, _) = forward_cached(&self.params, batch)?;
                let picked = top_b_positions(&losses, b, true, dataset_indices);
                Ok(uniform(sorted_by_dataset_index(picked, dataset_indices)))
            }
            Method::GradNorm => {
                let norms: Vec<f64> = parallel::map_slice(batch, |ex| {
                    exact_gradient(&self.params, ex, GradientScope::LastProjection)
                        .map(|g| g.norm_l2())
                })
                .into_iter()
                .collect::<Result<_>>()?;
                let picked = top_b_positions(&norms, b, true, dataset_indices);
                Ok(uniform(sorted_by_dataset_index(picked, dataset_indices)))
            }
            Method::LeastConfidence => {
                let (_, cache) = forward_cached(&self.params, batch)?;
                let confidence: Vec<f64> = (0..batch.len())
                    .map(|i| {
                        let logits = self
                            .params
                            .logits_from_activation(cache.row(i).expect("cache covers the batch"));
                        softmax_max(&logits)
                    })
                    .collect();
                let picked = top_b_positions(&confidence, b, false, dataset_indices);
                Ok(uniform(sorted_by_dataset_index(picked, dataset_indices)))
            }
            Method::HiddenFl => {
                let (_, cache) = forward_cached(&self.params, batch)?;
                let picked = hidden_state_medoids(&cache, batch.len(), b)?;
                Ok(uniform(sorted_by_dataset_index(picked, dataset_indices)))
            }
        }
    }

    fn update(&mut self, step: usize, grad: &DenseVector) -> Result<()> {
        let schedule = self.cfg.optimizer.schedule;
        let lr = schedule.lr_at(self.cfg.optimizer.hyper.lr, step, self.cfg.steps);
        let flat = self.params.to_flat();
        let new_flat = match self.cfg.optimizer.algo {
            Algo::Adam => {
                let (next, new_flat) = adam_step(&self.adam, &flat, grad, Some(lr))?;
                self.adam = next;
                new_flat
            }
            Algo::Sgd => sgd_step(&flat, grad, lr)?,
        };
        self.params = ModelParams::from_flat(self.model_cfg, &new_flat)?;
        Ok(())
    }
}

fn softmax_max(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().fold(0.0, f64::max) / z
}

fn hidden_state_medoids(cache: &ActivationCache, n: usize, budget: usize) -> Result<Vec<usize>> {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| cache.row(i).map(|r| r.to_vec()))
        .collect::<Result<_>>()?;
    let problem = crate::facility::FacilityLocationProblem::from_points(
        &rows,
        crate::facility::Metric::L2,
        budget.min(n),
    )?;
    Ok(problem.lazy_greedy().selected)
}

fn discovery_refresh_steps(disc: &DiscoveryConfig, total_steps: usize) -> Vec<usize> {
    if disc.warmup_steps + 1 > total_steps || disc.refreshes == 0 {
        return Vec::new();
    }
    let span = total_steps - disc.warmup_steps;
    let mut steps: Vec<usize> = (0..disc.refreshes)
        .map(|j| disc.warmup_steps + 1 + j * span / disc.refreshes)
        .collect();
    steps.dedup();
    steps
}

fn checkpoint_steps(total: usize, count: usize, after: usize) -> Vec<usize> {
    let after = after.min(total.saturating_sub(1));
    let span = total - after;
    let mut steps: Vec<usize> = (1..=count).map(|j| after + (span * j) / count).collect();
    steps.retain(|&s| s >= 1);
    steps.dedup();
    steps
}

pub fn run_training(cfg: &ExperimentConfig) -> Result<TrainResult> {
    let prepared = prepare_dataset(cfg)?;
    run_training_on(cfg, &prepared.dataset)
}

pub fn run_training_on(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<TrainResult> {
    let mut trainer = Trainer::new(cfg, dataset)?;
    let checkpoint_at = checkpoint_steps(cfg.steps, cfg.checkpoints, cfg.checkpoint_after);

    let mut rows = Vec::with_capacity(cfg.steps);
    let mut timings = Vec::with_capacity(cfg.steps);
    let mut checkpoints = Vec::new();
    let mut last_eval: Option<EvalStats> = None;

    // A non-finite loss anywhere inside a step means the run diverged.
    let divergence = |step: usize, e: Error| match e {
        Error::NonFinite(_) | Error::NonFiniteProbe { .. } => Error::Divergence { step },
        other => other,
    };

    for step in 1..=cfg.steps {
        trainer.maybe_rediscover(step)?;
        let (dataset_indices, batch) = trainer.sample_batch(step);

        let select_started = Instant::now();
        let selection = trainer
            .select(step, &batch, &dataset_indices)
            .map_err(|e| divergence(step, e))?;
        let select_ms = select_started.elapsed().as_secs_f64() * 1e3;

        let train_started = Instant::now();
        let selected_examples: Vec<Example> = selection
            .positions
            .iter()
            .map(|&p| batch[p].clone())
            .collect();
        let selected_grads = batch_exact_gradients(&trainer.params, &selected_examples)
            .map_err(|e| divergence(step, e))?;
        let mean_grad = weighted_mean(&selected_grads, &selection.weights)?;
        trainer
            .update(step, &mean_grad)
            .map_err(|e| divergence(step, e))?;
        let train_ms = train_started.elapsed().as_secs_f64() * 1e3;

        if let Some(mean) = &selection.big_source_mean {
            trainer.selection_state = update_selection_history(&trainer.selection_state, mean)?;
        }

        // Metrics: per-example gradient spread over the whole candidate
        // batch (the sigma^2 statistic), then the full-dataset evaluation.
        let batch_grads =
            batch_exact_gradients(&trainer.params, &batch).map_err(|e| divergence(step, e))?;
        let grad_variance = trace_covariance(&batch_grads)?;
        let eval = evaluate(
            &trainer.params,
            dataset,
            &trainer.labels,
            trainer.catalog.as_ref(),
        )?;
        if !eval.mean_loss.is_finite() {
            return Err(Error::Divergence { step });
        }

        rows.push(MetricsRow {
            step,
            loss: eval.mean_loss,
            grad_variance,
            small_src_acc: eval.small_acc,
            big_src_acc: eval.big_acc,
            select_ms: 0.0,
            train_ms: 0.0,
        });
        timings.push(TimingRow {
            step,
            select_ms,
            train_ms,
        });

        if checkpoint_at.contains(&step) {
            checkpoints.push(Checkpoint {
                step,
                params: trainer.params.clone(),
                selection_state: trainer.selection_state.clone(),
                source_labels: trainer.labels.clone(),
                catalog: trainer.catalog.clone(),
            });
        }
        last_eval = Some(eval);
    }

    let eval = last_eval.expect("steps >= 1");
    let summary = RunSummary {
        method: cfg.method.to_string(),
        steps: cfg.steps,
        b: cfg.b,
        r: cfg.resolved_r(),
        seed: cfg.seed,
        final_loss: eval.mean_loss,
        final_small_src_acc: eval.small_acc,
        final_big_src_acc: eval.big_acc,
        final_overall_acc: eval.overall_acc,
    };
    Ok(TrainResult {
        rows,
        timings,
        summary,
        checkpoints,
        final_params: trainer.params,
    })
}

fn weighted_mean(grads: &[DenseVector], weights: &[f64]) -> Result<DenseVector> {
    if grads.is_empty() {
        return Err(Error::InvalidArgument("no selected examples".into()));
    }
    let total: f64 = weights.iter().sum();
    let mut acc = vec![0.0; grads[0].len()];
    for (g, &w) in grads.iter().zip(weights) {
        for (a, v) in acc.iter_mut().zip(g.as_slice()) {
            *a += w * v;
        }
    }
    DenseVector::new(acc.into_iter().map(|a| a / total).collect())
}

/// Trace of the (unbiased) empirical covariance of a vector family.
pub fn trace_covariance(vectors: &[DenseVector]) -> Result<f64> {
    if vectors.len() < 2 {
        return Ok(0.0);
    }
    let mean = mean_vector(vectors)?;
    let mut total = 0.0;
    for v in vectors {
        for (x, m) in v.as_slice().iter().zip(mean.as_slice()) {
            total += (x - m) * (x - m);
        }
    }
    Ok(total / (vectors.len() - 1) as f64)
}
