//! Dense vectors, sparsity masks and deterministic Gaussian sampling.

use crate::error::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// A fixed-length vector of finite 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector {
    values: Vec<f64>,
}

impl DenseVector {
    /// Builds a vector, rejecting NaN/Inf entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("DenseVector entry {pos}")));
        }
        Ok(Self { values })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    /// Internal constructor for values already known to be finite.
    pub(crate) fn from_finite(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    fn check_len(&self, other: &DenseVector) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: other.len(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &DenseVector) -> Result<DenseVector> {
        self.check_len(other)?;
        Ok(Self::from_finite(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        ))
    }

    pub fn sub(&self, other: &DenseVector) -> Result<DenseVector> {
        self.check_len(other)?;
        Ok(Self::from_finite(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        ))
    }

    pub fn scale(&self, factor: f64) -> DenseVector {
        Self::from_finite(self.values.iter().map(|a| a * factor).collect())
    }

    /// self + factor * other, the fused update used all over the trainer.
    pub fn add_scaled(&self, other: &DenseVector, factor: f64) -> Result<DenseVector> {
        self.check_len(other)?;
        Ok(Self::from_finite(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + factor * b)
                .collect(),
        ))
    }

    pub fn dot(&self, other: &DenseVector) -> Result<f64> {
        self.check_len(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn norm_l2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn norm_l1(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }
}

impl std::ops::Index<usize> for DenseVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

impl AsRef<[f64]> for DenseVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// Mean of a non-empty family of equal-length vectors. Accumulates in input
/// order so the result is reproducible.
pub fn mean_vector(vectors: &[DenseVector]) -> Result<DenseVector> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::InvalidArgument("mean of empty vector family".into()))?;
    let mut acc = vec![0.0; first.len()];
    for v in vectors {
        first.check_len(v)?;
        for (a, x) in acc.iter_mut().zip(v.as_slice()) {
            *a += x;
        }
    }
    let inv = 1.0 / vectors.len() as f64;
    Ok(DenseVector::from_finite(
        acc.into_iter().map(|a| a * inv).collect(),
    ))
}

/// Keeps `h` of `d` coordinates; indices are strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityMask {
    dimension: usize,
    kept: Vec<usize>,
}

impl SparsityMask {
    pub fn new(dimension: usize, kept: Vec<usize>) -> Result<Self> {
        if kept.is_empty() {
            return Err(Error::InvalidArgument("mask keeps no indices".into()));
        }
        for pair in kept.windows(2) {
            if pair[0] >= pair[1] {
                return Err(Error::InvalidArgument(
                    "mask indices must be strictly increasing".into(),
                ));
            }
        }
        if *kept.last().unwrap() >= dimension {
            return Err(Error::InvalidArgument(format!(
                "mask index {} out of range for dimension {dimension}",
                kept.last().unwrap()
            )));
        }
        Ok(Self { dimension, kept })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn kept_indices(&self) -> &[usize] {
        &self.kept
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Gathers the kept coordinates of `v` into a compact vector.
    pub fn apply(&self, v: &DenseVector) -> Result<Vec<f64>> {
        if v.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                got: v.len(),
            });
        }
        Ok(self.kept.iter().map(|&j| v[j]).collect())
    }
}

/// Sum over kept (or all) coordinates of |a_j - b_j|.
pub fn l1_distance(a: &DenseVector, b: &DenseVector, mask: Option<&SparsityMask>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    match mask {
        None => Ok(a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| (x - y).abs())
            .sum()),
        Some(m) => {
            if m.dimension() != a.len() {
                return Err(Error::DimensionMismatch {
                    expected: a.len(),
                    got: m.dimension(),
                });
            }
            Ok(m.kept_indices().iter().map(|&j| (a[j] - b[j]).abs()).sum())
        }
    }
}

/// Mask keeping the `h` coordinates of largest magnitude; ties break toward
/// the smaller index.
pub fn top_h_mask(v: &DenseVector, h: usize) -> Result<SparsityMask> {
    let d = v.len();
    if h == 0 || h > d {
        return Err(Error::InvalidArgument(format!(
            "h={h} out of range 1..={d}"
        )));
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| v[j].abs().total_cmp(&v[i].abs()).then_with(|| i.cmp(&j)));
    let mut kept: Vec<usize> = order[..h].to_vec();
    kept.sort_unstable();
    SparsityMask::new(d, kept)
}

/// Deterministic standard-normal source. ChaCha is counter-based, so the
/// (seed, dimension) -> vector map is stable across platforms and calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeededGaussian {
    pub seed: u64,
    pub dimension: usize,
}

impl SeededGaussian {
    pub fn new(seed: u64, dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidArgument("dimension must be >= 1".into()));
        }
        Ok(Self { seed, dimension })
    }

    /// Samples i.i.d. standard-normal entries; same (seed, dimension) gives
    /// bit-identical output on every call.
    pub fn sample(&self) -> DenseVector {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let values = (0..self.dimension)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        DenseVector::from_finite(values)
    }
}

/// Mixes a base seed with stream labels (step, example, probe, ...) into a
/// fresh seed. SplitMix64 finalizer; any change in any part changes the
/// output, and the map is stable across platforms.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut state = base ^ 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        state = state.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        state = splitmix64(state);
    }
    splitmix64(state)
}

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seeded RNG for a named stream; used wherever the harness needs fresh
/// deterministic randomness.
pub fn stream_rng(base: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, parts))
}
