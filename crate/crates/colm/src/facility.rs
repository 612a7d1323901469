//! Facility-location objective and greedy medoid selection.
//!
//! The objective over a candidate set S is sum_i max_{s in S} (C - d(i, s))
//! with f(empty) = 0. With C at least the largest pairwise distance the
//! function is monotone submodular, so greedy selection carries the usual
//! (1 - 1/e) guarantee. Three maximizers share one output contract: the naive
//! greedy scan, a lazy-evaluation variant that must match it selection for
//! selection, and a brute-force enumerator used as the optimality oracle.

use crate::error::{Error, Result};
use crate::parallel;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    L1,
    L2,
}

impl Metric {
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            Metric::L2 => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
        }
    }
}

/// Dense row-major pairwise distance matrix. Rows are independent, so the
/// parallel and sequential paths produce bit-identical matrices.
pub fn pairwise_distances(points: &[Vec<f64>], metric: Metric) -> Vec<f64> {
    let n = points.len();
    parallel::map_indexed(n, |i| {
        (0..n)
            .map(|j| metric.distance(&points[i], &points[j]))
            .collect::<Vec<f64>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

/// Sequential twin of [`pairwise_distances`], kept for the bench suite.
pub fn pairwise_distances_seq(points: &[Vec<f64>], metric: Metric) -> Vec<f64> {
    let n = points.len();
    parallel::map_indexed_seq(n, |i| {
        (0..n)
            .map(|j| metric.distance(&points[i], &points[j]))
            .collect::<Vec<f64>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

#[derive(Debug, Clone)]
pub struct FacilityLocationProblem {
    n: usize,
    dist: Vec<f64>,
    offset: f64,
    budget: usize,
}

impl FacilityLocationProblem {
    /// Builds a problem from a row-major distance matrix, choosing the offset
    /// C = 1.01 * max distance so every marginal term stays non-negative
    /// without swamping differences.
    pub fn new(dist: Vec<f64>, n: usize, budget: usize) -> Result<Self> {
        let max = Self::validate_matrix(&dist, n)?;
        Self::with_offset_unchecked(dist, n, budget, max * 1.01)
    }

    /// Same, with an explicit offset (must dominate every distance).
    pub fn with_offset(dist: Vec<f64>, n: usize, budget: usize, offset: f64) -> Result<Self> {
        let max = Self::validate_matrix(&dist, n)?;
        if offset < max {
            return Err(Error::InvalidArgument(format!(
                "offset {offset} below max distance {max}"
            )));
        }
        Self::with_offset_unchecked(dist, n, budget, offset)
    }

    fn with_offset_unchecked(dist: Vec<f64>, n: usize, budget: usize, offset: f64) -> Result<Self> {
        if budget == 0 {
            return Err(Error::InvalidArgument("budget must be >= 1".into()));
        }
        if budget > n {
            return Err(Error::InvalidArgument(format!(
                "budget {budget} exceeds n {n}"
            )));
        }
        Ok(Self {
            n,
            dist,
            offset,
            budget,
        })
    }

    fn validate_matrix(dist: &[f64], n: usize) -> Result<f64> {
        if dist.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: dist.len(),
            });
        }
        let mut max = 0.0f64;
        for i in 0..n {
            if dist[i * n + i] != 0.0 {
                return Err(Error::InvalidArgument(format!("non-zero diagonal at {i}")));
            }
            for j in 0..n {
                let d = dist[i * n + j];
                if !d.is_finite() || d < 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "invalid distance at ({i},{j}): {d}"
                    )));
                }
                if d != dist[j * n + i] {
                    return Err(Error::InvalidArgument(format!(
                        "asymmetric distances at ({i},{j})"
                    )));
                }
                max = max.max(d);
            }
        }
        Ok(max)
    }

    pub fn from_points(points: &[Vec<f64>], metric: Metric, budget: usize) -> Result<Self> {
        let n = points.len();
        Self::new(pairwise_distances(points, metric), n, budget)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.n + j]
    }

    /// Exact objective for a candidate set; the empty set evaluates to 0.
    pub fn value(&self, selected: &[usize]) -> f64 {
        if selected.is_empty() {
            return 0.0;
        }
        (0..self.n)
            .map(|i| {
                selected
                    .iter()
                    .map(|&s| self.offset - self.distance(i, s))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum()
    }

    fn gain(&self, candidate: usize, coverage: &[f64]) -> f64 {
        let row = &self.dist[candidate * self.n..(candidate + 1) * self.n];
        row.iter()
            .zip(coverage)
            .map(|(&d, &cov)| (self.offset - d - cov).max(0.0))
            .sum()
    }

    fn finish(&self, selected: Vec<usize>, gain_evaluations: usize) -> MedoidSolution {
        let mut assignment = Vec::with_capacity(self.n);
        let mut by_index = selected.clone();
        by_index.sort_unstable();
        for i in 0..self.n {
            let mut best = by_index[0];
            for &s in &by_index[1..] {
                if self.distance(i, s) < self.distance(i, best) {
                    best = s;
                }
            }
            assignment.push(best);
        }
        let mut cluster_sizes: BTreeMap<usize, usize> = by_index.iter().map(|&s| (s, 0)).collect();
        for &a in &assignment {
            *cluster_sizes.get_mut(&a).unwrap() += 1;
        }
        let objective_value = self.value(&selected);
        MedoidSolution {
            selected,
            assignment,
            cluster_sizes,
            objective_value,
            gain_evaluations,
        }
    }

    /// Naive greedy: each round scans every remaining candidate for the
    /// largest marginal gain, ties toward the smaller index.
    pub fn greedy(&self) -> MedoidSolution {
        let mut coverage = vec![0.0; self.n];
        let mut taken = vec![false; self.n];
        let mut selected = Vec::with_capacity(self.budget);
        let mut evals = 0usize;
        for _ in 0..self.budget {
            evals += self.n - selected.len();
            let pick = parallel::argmax_by_key(self.n, |e| {
                if taken[e] {
                    f64::NEG_INFINITY
                } else {
                    self.gain(e, &coverage)
                }
            })
            .expect("budget <= n guarantees a candidate");
            taken[pick] = true;
            selected.push(pick);
            for (i, cov) in coverage.iter_mut().enumerate() {
                *cov = cov.max(self.offset - self.distance(i, pick));
            }
        }
        self.finish(selected, evals)
    }

    /// Lazy greedy over stale upper bounds. Submodularity makes cached gains
    /// upper bounds, so an entry that is fresh when popped is the argmax; the
    /// heap orders equal gains by smaller index, matching the naive scan
    /// selection for selection.
    pub fn lazy_greedy(&self) -> MedoidSolution {
        let mut coverage = vec![0.0; self.n];
        let mut selected = Vec::with_capacity(self.budget);
        let mut evals = self.n;
        let mut heap: BinaryHeap<HeapEntry> = (0..self.n)
            .map(|e| HeapEntry {
                gain: self.gain(e, &coverage),
                index: e,
                round: 0,
            })
            .collect();

        while selected.len() < self.budget {
            let top = heap.pop().expect("heap holds all unselected candidates");
            if top.round == selected.len() {
                selected.push(top.index);
                for (i, cov) in coverage.iter_mut().enumerate() {
                    *cov = cov.max(self.offset - self.distance(i, top.index));
                }
            } else {
                evals += 1;
                heap.push(HeapEntry {
                    gain: self.gain(top.index, &coverage),
                    index: top.index,
                    round: selected.len(),
                });
            }
        }
        self.finish(selected, evals)
    }

    /// Exhaustive optimum over all budget-sized subsets; the oracle for the
    /// greedy approximation ratio. Guarded to small instances.
    pub fn brute_force(&self) -> Result<MedoidSolution> {
        let combos = binomial(self.n, self.budget);
        if combos > 2_000_000 {
            return Err(Error::InvalidArgument(format!(
                "brute force over {} subsets is not sensible",
                combos
            )));
        }
        let mut best: Option<(f64, Vec<usize>)> = None;
        let mut subset: Vec<usize> = (0..self.budget).collect();
        loop {
            let value = self.value(&subset);
            let replace = match &best {
                None => true,
                Some((bv, bs)) => value > *bv || (value == *bv && subset < *bs),
            };
            if replace {
                best = Some((value, subset.clone()));
            }
            if !next_combination(&mut subset, self.n) {
                break;
            }
        }
        let (_, selected) = best.expect("budget >= 1");
        Ok(self.finish(selected, binomial(self.n, self.budget) as usize))
    }
}

#[derive(Debug)]
struct HeapEntry {
    gain: f64,
    index: usize,
    round: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Max-heap on gain; equal gains pop the smaller index first.
        self.gain
            .total_cmp(&other.gain)
            .then_with(|| other.index.cmp(&self.index))
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut result: u128 = 1;
    for i in 0..k {
        result = result * (n - i) as u128 / (i + 1) as u128;
    }
    result
}

fn next_combination(subset: &mut [usize], n: usize) -> bool {
    let k = subset.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if subset[i] < n - k + i {
            subset[i] += 1;
            for j in i + 1..k {
                subset[j] = subset[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Output of a medoid selection: selection order, nearest-medoid assignment,
/// cluster sizes keyed by medoid, the exact objective, and how many marginal
/// gains were evaluated along the way.
#[derive(Debug, Clone, PartialEq)]
pub struct MedoidSolution {
    pub selected: Vec<usize>,
    pub assignment: Vec<usize>,
    pub cluster_sizes: BTreeMap<usize, usize>,
    pub objective_value: f64,
    pub gain_evaluations: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::stream_rng;
    use rand::Rng;

    fn random_problem(
        rng: &mut rand_chacha::ChaCha8Rng,
        n: usize,
        budget: usize,
        metric: Metric,
    ) -> FacilityLocationProblem {
        let dim = rng.random_range(1..4);
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        FacilityLocationProblem::from_points(&points, metric, budget).unwrap()
    }

    #[test]
    fn selecting_everything_scores_n_times_offset() {
        let mut rng = stream_rng(51, &[0]);
        let problem = random_problem(&mut rng, 6, 6, Metric::L1);
        let all: Vec<usize> = (0..6).collect();
        let expected = 6.0 * problem.offset();
        assert!((problem.value(&all) - expected).abs() < 1e-9);
        let solution = problem.greedy();
        assert_eq!(solution.selected.len(), 6);
        assert!((solution.objective_value - expected).abs() < 1e-9);
    }

    #[test]
    fn two_point_value_by_substitution() {
        // d(0,1) = 3, C = 10, S = {0}: (10 - 0) + (10 - 3) = 17.
        let dist = vec![0.0, 3.0, 3.0, 0.0];
        let problem = FacilityLocationProblem::with_offset(dist, 2, 1, 10.0).unwrap();
        assert_eq!(problem.value(&[0]), 17.0);
    }

    #[test]
    fn empty_set_evaluates_to_zero() {
        let dist = vec![0.0, 1.0, 1.0, 0.0];
        let problem = FacilityLocationProblem::new(dist, 2, 1).unwrap();
        assert_eq!(problem.value(&[]), 0.0);
    }

    #[test]
    fn value_matches_per_element_max_sum_oracle() {
        let mut rng = stream_rng(52, &[0]);
        for _ in 0..20 {
            let problem = random_problem(&mut rng, 6, 3, Metric::L2);
            let s = vec![0, 2, 5];
            let oracle: f64 = (0..6)
                .map(|i| {
                    s.iter()
                        .map(|&m| problem.offset() - problem.distance(i, m))
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .sum();
            assert!((problem.value(&s) - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn single_medoid_of_collinear_points_is_the_center() {
        // Points {0, 1, 10} on a line, L1 distance, C = 100: total distance
        // from 1 is 10, beating 11 (from 0) and 19 (from 10).
        let points = vec![vec![0.0], vec![1.0], vec![10.0]];
        let dist = pairwise_distances(&points, Metric::L1);
        let problem = FacilityLocationProblem::with_offset(dist, 3, 1, 100.0).unwrap();
        let solution = problem.greedy();
        assert_eq!(solution.selected, vec![1]);

        // Enumerate all single-medoid objectives.
        let best = (0..3)
            .max_by(|&a, &b| problem.value(&[a]).total_cmp(&problem.value(&[b])))
            .unwrap();
        assert_eq!(best, 1);
    }

    #[test]
    fn greedy_meets_optimality_ratio_on_random_instances() {
        let mut rng = stream_rng(53, &[0]);
        let ratio = 1.0 - (-1.0f64).exp();
        for _ in 0..50 {
            let n = rng.random_range(3..=8);
            let budget = rng.random_range(1..=3.min(n));
            let problem = random_problem(&mut rng, n, budget, Metric::L1);
            let greedy = problem.greedy().objective_value;
            let opt = problem.brute_force().unwrap().objective_value;
            assert!(greedy >= ratio * opt - 1e-9, "greedy {greedy} opt {opt}");
        }
    }

    #[test]
    fn lazy_matches_naive_bit_for_bit() {
        let mut rng = stream_rng(54, &[0]);
        for _ in 0..100 {
            let n = rng.random_range(2..=32);
            let budget = rng.random_range(1..=n.min(8));
            let problem = random_problem(&mut rng, n, budget, Metric::L1);
            let naive = problem.greedy();
            let lazy = problem.lazy_greedy();
            assert_eq!(naive.selected, lazy.selected);
            assert_eq!(
                naive.objective_value.to_bits(),
                lazy.objective_value.to_bits()
            );
            assert!(lazy.gain_evaluations <= naive.gain_evaluations);
        }
    }

    #[test]
    fn budget_one_lazy_pick_is_the_exact_medoid() {
        let mut rng = stream_rng(55, &[0]);
        for _ in 0..20 {
            let problem = random_problem(&mut rng, 12, 1, Metric::L1);
            let lazy = problem.lazy_greedy();
            assert_eq!(lazy.selected, problem.brute_force().unwrap().selected);
            // The pick minimizes total distance (up to rounding in the
            // offset-shifted objective).
            let total = |m: usize| -> f64 { (0..12).map(|i| problem.distance(i, m)).sum() };
            let min_total = (0..12).map(total).fold(f64::INFINITY, f64::min);
            assert!(total(lazy.selected[0]) <= min_total + 1e-9);
        }
    }

    #[test]
    fn monotone_under_set_growth() {
        let mut rng = stream_rng(56, &[0]);
        for _ in 0..200 {
            let problem = random_problem(&mut rng, 7, 3, Metric::L1);
            let t_len = rng.random_range(2..=5);
            let t: Vec<usize> = rand::seq::index::sample(&mut rng, 7, t_len).into_vec();
            let s = t[..t.len() - 1].to_vec();
            assert!(problem.value(&s) <= problem.value(&t) + 1e-9);
        }
    }

    #[test]
    fn diminishing_marginal_gains() {
        let mut rng = stream_rng(57, &[0]);
        for _ in 0..200 {
            let problem = random_problem(&mut rng, 8, 3, Metric::L2);
            let t: Vec<usize> = rand::seq::index::sample(&mut rng, 8, 4).into_vec();
            let split = rng.random_range(1..t.len());
            let s = t[..split].to_vec();
            let e = (0..8).find(|i| !t.contains(i)).unwrap();

            let gain = |base: &[usize]| {
                let mut with_e = base.to_vec();
                with_e.push(e);
                problem.value(&with_e) - problem.value(base)
            };
            assert!(gain(&s) >= gain(&t) - 1e-9);
        }
    }

    #[test]
    fn offset_shift_moves_value_but_not_selection() {
        let mut rng = stream_rng(58, &[0]);
        for _ in 0..20 {
            let n = 10;
            let dim = 2;
            let points: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect())
                .collect();
            let dist = pairwise_distances(&points, Metric::L1);
            let base = FacilityLocationProblem::new(dist.clone(), n, 3).unwrap();
            let delta = 7.5;
            let shifted =
                FacilityLocationProblem::with_offset(dist, n, 3, base.offset() + delta).unwrap();
            let s = vec![1, 4];
            assert!((shifted.value(&s) - base.value(&s) - n as f64 * delta).abs() < 1e-9);
            assert_eq!(base.greedy().selected, shifted.greedy().selected);
        }
    }

    #[test]
    fn assignments_hit_row_minima_and_sizes_sum() {
        let mut rng = stream_rng(59, &[0]);
        let problem = random_problem(&mut rng, 20, 4, Metric::L1);
        let solution = problem.lazy_greedy();
        assert_eq!(solution.cluster_sizes.values().sum::<usize>(), 20);
        for i in 0..20 {
            let assigned = solution.assignment[i];
            let min = solution
                .selected
                .iter()
                .map(|&s| problem.distance(i, s))
                .fold(f64::INFINITY, f64::min);
            assert_eq!(problem.distance(i, assigned), min);
        }
    }

    #[test]
    fn rejects_bad_matrices() {
        assert!(FacilityLocationProblem::new(vec![0.0, 1.0, 2.0, 0.0], 2, 1).is_err());
        assert!(FacilityLocationProblem::new(vec![0.5, 1.0, 1.0, 0.0], 2, 1).is_err());
        assert!(FacilityLocationProblem::new(vec![0.0, -1.0, -1.0, 0.0], 2, 1).is_err());
        assert!(FacilityLocationProblem::new(vec![0.0, 1.0, 1.0, 0.0], 2, 3).is_err());
    }
}
