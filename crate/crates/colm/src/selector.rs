//! The coreset selection pipeline.
//!
//! Given a large candidate batch with per-example gradient features and
//! source tags, the selector keeps every example from small sources, splits
//! the remaining budget over big sources in proportion to their batch counts,
//! normalizes features by the shared moment history, sparsifies them with a
//! per-source top-h magnitude mask, and picks per-source medoids by lazy
//! greedy facility location under the masked L1 distance. Selected examples
//! carry uniform weights.
//!
//! When the data has no source labels, sources are discovered by clustering
//! penultimate activations; each cluster becomes a source.

use crate::cluster;
use crate::error::{Error, Result};
use crate::facility::{pairwise_distances, FacilityLocationProblem, Metric};
use crate::numeric::{top_h_mask, DenseVector, SparsityMask};
use crate::optim::{normalized_feature, NormalizationMode, SelectionState};
use crate::parallel;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Small/big classification of sources over the full dataset: a source is
/// small when its size is strictly below total/c, c being the source count.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceCatalog {
    pub sizes: BTreeMap<u32, usize>,
    pub threshold: f64,
    pub small: BTreeSet<u32>,
    pub big: BTreeSet<u32>,
}

pub fn classify_sources(sizes: &BTreeMap<u32, usize>) -> Result<SourceCatalog> {
    if sizes.is_empty() {
        return Err(Error::InvalidArgument("no sources to classify".into()));
    }
    if sizes.values().any(|&s| s == 0) {
        return Err(Error::InvalidArgument("source sizes must be >= 1".into()));
    }
    let total: usize = sizes.values().sum();
    let threshold = total as f64 / sizes.len() as f64;
    let mut small = BTreeSet::new();
    let mut big = BTreeSet::new();
    for (&id, &size) in sizes {
        if (size as f64) < threshold {
            small.insert(id);
        } else {
            big.insert(id);
        }
    }
    Ok(SourceCatalog {
        sizes: sizes.clone(),
        threshold,
        small,
        big,
    })
}

impl SourceCatalog {
    pub fn is_small(&self, source: u32) -> bool {
        self.small.contains(&source)
    }

    /// Copy with the small set emptied; the keep-small ablation path.
    pub fn all_big(&self) -> SourceCatalog {
        let mut big = self.big.clone();
        big.extend(self.small.iter().copied());
        SourceCatalog {
            sizes: self.sizes.clone(),
            threshold: self.threshold,
            small: BTreeSet::new(),
            big,
        }
    }

    /// Catalog from per-example source labels.
    pub fn from_labels<I: IntoIterator<Item = u32>>(labels: I) -> Result<SourceCatalog> {
        let mut sizes: BTreeMap<u32, usize> = BTreeMap::new();
        for label in labels {
            *sizes.entry(label).or_insert(0) += 1;
        }
        classify_sources(&sizes)
    }
}

/// The large candidate batch: dataset indices, source tags, and per-example
/// gradient features of equal length.
#[derive(Debug, Clone)]
pub struct CandidateBatch {
    pub indices: Vec<usize>,
    pub sources: Vec<u32>,
    pub features: Vec<DenseVector>,
}

impl CandidateBatch {
    pub fn new(indices: Vec<usize>, sources: Vec<u32>, features: Vec<DenseVector>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument("empty candidate batch".into()));
        }
        if indices.len() != sources.len() || indices.len() != features.len() {
            return Err(Error::InvalidArgument(
                "index/source/feature lengths disagree".into(),
            ));
        }
        let dim = features[0].len();
        if features.iter().any(|f| f.len() != dim) {
            return Err(Error::InvalidArgument("ragged feature lengths".into()));
        }
        Ok(Self {
            indices,
            sources,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features[0].len()
    }
}

/// Budget split for one step: the kept small-source positions and the
/// per-big-source medoid budgets, with the fractional values kept for audit.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetPlan {
    pub total_budget: usize,
    pub kept_small: Vec<usize>,
    pub per_big: BTreeMap<u32, usize>,
    pub fractional: BTreeMap<u32, f64>,
}

/// Proportional budgets with largest-remainder rounding so the per-source
/// budgets sum exactly to b - |kept small|. Rounding ties go to the larger
/// source, then the smaller id. When the kept small examples already exceed
/// the budget, every big budget is zero and the coreset runs over budget
/// (small sources are never dropped).
pub fn plan_budgets(
    batch: &CandidateBatch,
    catalog: &SourceCatalog,
    budget: usize,
) -> Result<BudgetPlan> {
    if budget == 0 {
        return Err(Error::InvalidArgument("budget must be >= 1".into()));
    }
    let mut kept_small: Vec<usize> = (0..batch.len())
        .filter(|&p| catalog.is_small(batch.sources[p]))
        .collect();
    kept_small.sort_by_key(|&p| batch.indices[p]);

    let mut big_counts: BTreeMap<u32, usize> = BTreeMap::new();
    for p in 0..batch.len() {
        if !catalog.is_small(batch.sources[p]) {
            *big_counts.entry(batch.sources[p]).or_insert(0) += 1;
        }
    }

    let mut fractional = BTreeMap::new();
    let mut per_big: BTreeMap<u32, usize> = big_counts.keys().map(|&q| (q, 0)).collect();

    if kept_small.len() >= budget {
        if kept_small.len() > budget {
            log::warn!(
                "kept small-source examples ({}) exceed the budget ({budget}); \
                 coreset will run over budget",
                kept_small.len()
            );
        }
        for &q in big_counts.keys() {
            fractional.insert(q, 0.0);
        }
        return Ok(BudgetPlan {
            total_budget: budget,
            kept_small,
            per_big,
            fractional,
        });
    }

    let pool = budget - kept_small.len();
    let total_big: usize = big_counts.values().sum();
    if total_big == 0 {
        return Ok(BudgetPlan {
            total_budget: budget,
            kept_small,
            per_big,
            fractional,
        });
    }

    if pool >= total_big {
        // Not enough big-source candidates; take them all.
        for (&q, &count) in &big_counts {
            fractional.insert(q, count as f64);
            per_big.insert(q, count);
        }
        return Ok(BudgetPlan {
            total_budget: budget,
            kept_small,
            per_big,
            fractional,
        });
    }

    let mut assigned = 0usize;
    let mut remainders: Vec<(u32, f64, usize)> = Vec::new();
    for (&q, &count) in &big_counts {
        let f = pool as f64 * count as f64 / total_big as f64;
        fractional.insert(q, f);
        let floor = f.floor() as usize;
        per_big.insert(q, floor);
        assigned += floor;
        remainders.push((q, f - floor as f64, count));
    }
    remainders.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| b.2.cmp(&a.2))
            .then_with(|| a.0.cmp(&b.0))
    });
    for (q, _, _) in remainders.into_iter().take(pool - assigned) {
        *per_big.get_mut(&q).unwrap() += 1;
    }
    Ok(BudgetPlan {
        total_budget: budget,
        kept_small,
        per_big,
        fractional,
    })
}

/// How per-member absolute normalized features aggregate into the source
/// mask statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskAggregation {
    #[default]
    MeanAbs,
    MaxAbs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    /// Selected mini-batch size b.
    pub budget: usize,
    /// Kept feature dimensions per source mask.
    pub h: usize,
    /// Select medoids per big source rather than from the pooled big batch.
    pub per_source: bool,
    /// Keep every small-source example (the default path); disabling this is
    /// the ablation that treats every source as big.
    pub keep_small: bool,
    /// Weight medoids by cluster size instead of uniformly (ablation).
    pub weighted: bool,
    pub mask_aggregation: MaskAggregation,
    pub normalization: NormalizationMode,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            budget: 32,
            h: 8,
            per_source: true,
            keep_small: true,
            weighted: false,
            mask_aggregation: MaskAggregation::MeanAbs,
            normalization: NormalizationMode::HistoryBlend,
        }
    }
}

impl SelectionConfig {
    pub fn new(budget: usize, h: usize) -> Self {
        Self {
            budget,
            h,
            ..Self::default()
        }
    }

    /// Default sparsity: keep about 0.8% of the feature dimensions, never
    /// fewer than 8 (or the whole vector when it is smaller than that).
    pub fn default_h(feature_dim: usize) -> usize {
        ((0.008 * feature_dim as f64).ceil() as usize)
            .max(8)
            .min(feature_dim)
    }
}

/// Normalized, mask-restricted features for one selection group.
#[derive(Debug, Clone)]
pub struct SourceFeatures {
    pub source: u32,
    /// Batch positions, sorted by dataset index.
    pub positions: Vec<usize>,
    pub mask: SparsityMask,
    /// One compacted row (length h) per position.
    pub masked_features: Vec<Vec<f64>>,
}

fn group_features(
    batch: &CandidateBatch,
    state: &SelectionState,
    h: usize,
    source: u32,
    positions: Vec<usize>,
    aggregation: MaskAggregation,
    normalization: NormalizationMode,
) -> Result<SourceFeatures> {
    let normalized: Vec<DenseVector> = parallel::map_slice(&positions, |&p| {
        normalized_feature(state, &batch.features[p], normalization)
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let dim = batch.feature_dim();
    let mut stat = vec![0.0f64; dim];
    match aggregation {
        MaskAggregation::MeanAbs => {
            let inv = 1.0 / normalized.len() as f64;
            for f in &normalized {
                for (s, v) in stat.iter_mut().zip(f.as_slice()) {
                    *s += v.abs() * inv;
                }
            }
        }
        MaskAggregation::MaxAbs => {
            for f in &normalized {
                for (s, v) in stat.iter_mut().zip(f.as_slice()) {
                    *s = s.max(v.abs());
                }
            }
        }
    }
    let mask = top_h_mask(&DenseVector::new(stat)?, h)?;
    let masked_features = normalized
        .iter()
        .map(|f| mask.apply(f))
        .collect::<Result<_>>()?;
    Ok(SourceFeatures {
        source,
        positions,
        mask,
        masked_features,
    })
}

/// Per-big-source masked normalized features: each source gets the top-h
/// mask of its aggregated absolute normalized feature, and its members'
/// features restricted to that mask.
pub fn build_features(
    batch: &CandidateBatch,
    state: &SelectionState,
    h: usize,
    catalog: &SourceCatalog,
    aggregation: MaskAggregation,
    normalization: NormalizationMode,
) -> Result<Vec<SourceFeatures>> {
    let dim = batch.feature_dim();
    if h > dim {
        return Err(Error::InvalidArgument(format!(
            "h={h} exceeds feature dim {dim}"
        )));
    }
    if state.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: state.dim(),
        });
    }
    let groups = big_source_groups(batch, catalog);
    groups
        .into_iter()
        .map(|(source, positions)| {
            group_features(
                batch,
                state,
                h,
                source,
                positions,
                aggregation,
                normalization,
            )
        })
        .collect()
}

/// Batch positions of each big source present in the batch, sorted by
/// dataset index so downstream tie-breaking follows dataset order.
fn big_source_groups(batch: &CandidateBatch, catalog: &SourceCatalog) -> Vec<(u32, Vec<usize>)> {
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for p in 0..batch.len() {
        if !catalog.is_small(batch.sources[p]) {
            groups.entry(batch.sources[p]).or_default().push(p);
        }
    }
    groups
        .into_iter()
        .map(|(q, mut positions)| {
            positions.sort_by_key(|&p| batch.indices[p]);
            (q, positions)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    KeptSmall,
    Medoid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoresetEntry {
    pub dataset_index: usize,
    pub batch_position: usize,
    pub source_id: u32,
    pub provenance: Provenance,
    pub weight: f64,
}

/// A selected mini-batch: kept small-source examples plus per-source medoids,
/// sorted by dataset index, with the budget plan that produced it.
#[derive(Debug, Clone)]
pub struct Coreset {
    pub entries: Vec<CoresetEntry>,
    pub plan: BudgetPlan,
}

impl Coreset {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn batch_positions(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.batch_position).collect()
    }

    pub fn dataset_indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.dataset_index).collect()
    }
}

/// Runs the full selection for one step. The state is read-only here; the
/// caller advances it afterwards from the big-source mean gradient.
pub fn select_coreset(
    batch: &CandidateBatch,
    catalog: &SourceCatalog,
    state: &SelectionState,
    cfg: &SelectionConfig,
) -> Result<Coreset> {
    let effective = if cfg.keep_small {
        catalog.clone()
    } else {
        catalog.all_big()
    };
    let plan = plan_budgets(batch, &effective, cfg.budget)?;

    let mut entries: Vec<CoresetEntry> = plan
        .kept_small
        .iter()
        .map(|&p| CoresetEntry {
            dataset_index: batch.indices[p],
            batch_position: p,
            source_id: batch.sources[p],
            provenance: Provenance::KeptSmall,
            weight: 1.0,
        })
        .collect();

    let groups = big_source_groups(batch, &effective);
    let selection_groups: Vec<(usize, Vec<usize>)> = if cfg.per_source {
        groups
            .iter()
            .map(|(q, positions)| (plan.per_big[q], positions.clone()))
            .collect()
    } else {
        // Pooled ablation: one selection over every big-source member.
        let mut pooled: Vec<usize> = groups.iter().flat_map(|(_, p)| p.clone()).collect();
        pooled.sort_by_key(|&p| batch.indices[p]);
        let pool_budget: usize = plan.per_big.values().sum();
        vec![(pool_budget, pooled)]
    };

    let selected_groups: Vec<Result<Vec<CoresetEntry>>> =
        parallel::map_slice(&selection_groups, |(budget, positions)| {
            select_group(batch, state, cfg, *budget, positions)
        });
    for group in selected_groups {
        entries.extend(group?);
    }

    entries.sort_by_key(|e| e.dataset_index);
    Ok(Coreset { entries, plan })
}

fn select_group(
    batch: &CandidateBatch,
    state: &SelectionState,
    cfg: &SelectionConfig,
    budget: usize,
    positions: &[usize],
) -> Result<Vec<CoresetEntry>> {
    if budget == 0 || positions.is_empty() {
        return Ok(Vec::new());
    }
    let medoid_entry = |p: usize, weight: f64| CoresetEntry {
        dataset_index: batch.indices[p],
        batch_position: p,
        source_id: batch.sources[p],
        provenance: Provenance::Medoid,
        weight,
    };
    if budget >= positions.len() {
        return Ok(positions.iter().map(|&p| medoid_entry(p, 1.0)).collect());
    }

    let features = group_features(
        batch,
        state,
        cfg.h,
        batch.sources[positions[0]],
        positions.to_vec(),
        cfg.mask_aggregation,
        cfg.normalization,
    )?;
    let problem = FacilityLocationProblem::new(
        pairwise_distances(&features.masked_features, Metric::L1),
        positions.len(),
        budget,
    )?;
    let solution = problem.lazy_greedy();
    Ok(solution
        .selected
        .iter()
        .map(|&local| {
            let weight = if cfg.weighted {
                solution.cluster_sizes[&local] as f64
            } else {
                1.0
            };
            medoid_entry(features.positions[local], weight)
        })
        .collect())
}

/// Labels discovered by clustering penultimate activations; each cluster id
/// becomes a source id.
pub fn discover_sources(
    activations: &[Vec<f64>],
    k_clusters: usize,
    seed: u64,
) -> Result<Vec<u32>> {
    Ok(cluster::kmeans(activations, k_clusters, seed)?.labels)
}

/// Closed-form cap on how much variance the selected mini-batch can shave
/// off a same-size random subset, given the planted outlier geometry.
pub fn variance_gap_bound(kappa_over_m: f64, alpha_u: f64, alpha_star: f64) -> f64 {
    let spread = kappa_over_m * (alpha_u - alpha_star);
    spread * (2.0 * alpha_star + spread)
}
