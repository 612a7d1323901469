//! Synthetic imbalanced multi-source mixtures with planted structure, plus
//! text-format dataset IO.
//!
//! Every source is a union of dense neighborhoods: isotropic Gaussians
//! truncated at radius alpha_star around well-separated centers. Planted
//! outliers sit at distance in (alpha_star, alpha_u] from their center.
//! Labels come from a linear rule over the features plus Gaussian logit
//! noise. Generation is a pure function of its spec (one seeded stream,
//! fixed draw order), so a spec reproduces its dataset byte for byte.

use crate::error::{Error, Result};
use crate::model::Example;
use crate::numeric::{stream_rng, DenseVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureSpec {
    /// Examples per source; the imbalance profile of the dataset.
    pub source_sizes: Vec<usize>,
    /// Dense neighborhoods per source (k).
    pub centers_per_source: usize,
    /// Dense neighborhood radius.
    pub alpha_star: f64,
    /// Density floor inside a neighborhood; recorded for sizing formulas,
    /// generation is constructive.
    pub density_floor: f64,
    /// Total planted outliers, spread round-robin over sources.
    pub outliers: usize,
    /// Outliers land at distance in (alpha_star, outlier_radius] of their
    /// center.
    pub outlier_radius: f64,
    pub dimension: usize,
    pub n_classes: usize,
    /// Standard deviation of the logit noise in the labelling rule.
    pub label_noise: f64,
    /// In-cluster Gaussian scale; defaults to alpha_star / (2 sqrt(D)) so
    /// truncation rejects almost nothing.
    pub cluster_sigma: Option<f64>,
    /// Explicit centers (source-major, length sources * centers_per_source).
    /// When absent, centers go on a lattice with ample separation.
    pub centers: Option<Vec<Vec<f64>>>,
    pub seed: u64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self {
            source_sizes: vec![200],
            centers_per_source: 1,
            alpha_star: 1.0,
            density_floor: 0.5,
            outliers: 0,
            outlier_radius: 2.0,
            dimension: 2,
            n_classes: 2,
            label_noise: 0.1,
            cluster_sigma: None,
            centers: None,
            seed: 0,
        }
    }
}

/// Geometric source-size profile with the requested max/min ratio.
pub fn imbalanced_sizes(num_sources: usize, smallest: usize, ratio: f64) -> Vec<usize> {
    assert!(num_sources >= 1 && smallest >= 1 && ratio >= 1.0);
    if num_sources == 1 {
        return vec![smallest];
    }
    (0..num_sources)
        .map(|i| {
            let t = i as f64 / (num_sources - 1) as f64;
            (smallest as f64 * ratio.powf(t)).round() as usize
        })
        .collect()
}

impl MixtureSpec {
    pub fn total(&self) -> usize {
        self.source_sizes.iter().sum()
    }

    pub fn num_sources(&self) -> usize {
        self.source_sizes.len()
    }

    pub fn sigma(&self) -> f64 {
        self.cluster_sigma
            .unwrap_or(self.alpha_star / (2.0 * (self.dimension as f64).sqrt()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.source_sizes.is_empty() || self.source_sizes.contains(&0) {
            return Err(Error::InvalidArgument("source sizes must be >= 1".into()));
        }
        if self.centers_per_source == 0 || self.dimension == 0 {
            return Err(Error::InvalidArgument(
                "centers_per_source and dimension must be >= 1".into(),
            ));
        }
        if self.n_classes < 2 {
            return Err(Error::InvalidArgument("need at least 2 classes".into()));
        }
        if self.alpha_star.is_nan() || self.alpha_star <= 0.0 {
            return Err(Error::InvalidArgument("alpha_star must be > 0".into()));
        }
        if self.outlier_radius <= self.alpha_star {
            return Err(Error::InvalidArgument(
                "outlier_radius must exceed alpha_star".into(),
            ));
        }
        if self.outliers > self.total() {
            return Err(Error::InvalidArgument("more outliers than examples".into()));
        }
        if self.sigma() <= 0.0 {
            return Err(Error::InvalidArgument("cluster sigma must be > 0".into()));
        }
        Ok(())
    }

    fn build_centers(&self) -> Result<Vec<Vec<f64>>> {
        let wanted = self.num_sources() * self.centers_per_source;
        if let Some(centers) = &self.centers {
            if centers.len() != wanted {
                return Err(Error::InvalidArgument(format!(
                    "expected {wanted} centers, got {}",
                    centers.len()
                )));
            }
            for c in centers {
                if c.len() != self.dimension {
                    return Err(Error::DimensionMismatch {
                        expected: self.dimension,
                        got: c.len(),
                    });
                }
            }
            let min_sep = 2.0 * self.alpha_star;
            for i in 0..centers.len() {
                for j in i + 1..centers.len() {
                    let d = l2(&centers[i], &centers[j]);
                    if d <= min_sep {
                        return Err(Error::InvalidArgument(format!(
                            "centers {i} and {j} are {d:.3} apart; need > {min_sep}"
                        )));
                    }
                }
            }
            return Ok(centers.clone());
        }
        // Lattice in the first coordinates, spaced so neighborhoods and
        // outlier shells never overlap.
        let spacing = 2.0 * self.outlier_radius + 2.0 * self.alpha_star;
        let side = (wanted as f64).sqrt().ceil() as usize;
        Ok((0..wanted)
            .map(|i| {
                let mut c = vec![0.0; self.dimension];
                c[0] = (i % side) as f64 * spacing;
                if self.dimension > 1 {
                    c[1] = (i / side) as f64 * spacing;
                }
                c
            })
            .collect())
    }
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Planted structure kept alongside a generated dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Source-major centers, index = source * centers_per_source + center.
    pub centers: Vec<Vec<f64>>,
    /// Global center index per example.
    pub center_assignment: Vec<usize>,
    pub outlier_flags: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub dimension: usize,
    pub n_classes: usize,
    pub has_sources: bool,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn source_sizes(&self) -> BTreeMap<u32, usize> {
        let mut sizes = BTreeMap::new();
        for ex in &self.examples {
            *sizes.entry(ex.source_id).or_insert(0) += 1;
        }
        sizes
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub dataset: Dataset,
    pub truth: GroundTruth,
}

pub fn generate(spec: &MixtureSpec) -> Result<GeneratedDataset> {
    spec.validate()?;
    let centers = spec.build_centers()?;
    let mut rng = stream_rng(spec.seed, &[0xda7a]);
    let d = spec.dimension;
    let sigma = spec.sigma();

    // Labelling rule drawn first so it only depends on the seed.
    let rule: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|_| {
            (0..d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z
                })
                .collect()
        })
        .collect();

    // Outlier quota per source, dealt round-robin.
    let q_sources = spec.num_sources();
    let mut outlier_quota = vec![0usize; q_sources];
    for i in 0..spec.outliers {
        outlier_quota[i % q_sources] += 1;
    }
    for (q, &quota) in outlier_quota.iter().enumerate() {
        if quota > spec.source_sizes[q] {
            return Err(Error::InvalidArgument(format!(
                "source {q} cannot hold {quota} outliers"
            )));
        }
    }

    let mut examples = Vec::with_capacity(spec.total());
    let mut center_assignment = Vec::with_capacity(spec.total());
    let mut outlier_flags = Vec::with_capacity(spec.total());

    for (q, &size) in spec.source_sizes.iter().enumerate() {
        let dense_count = size - outlier_quota[q];
        for j in 0..size {
            let center_local = rng.random_range(0..spec.centers_per_source);
            let center_idx = q * spec.centers_per_source + center_local;
            let center = &centers[center_idx];
            let is_outlier = j >= dense_count;

            let offset = if is_outlier {
                let u: f64 = rng.random_range(0.0..1.0);
                let radius = spec.outlier_radius - u * (spec.outlier_radius - spec.alpha_star);
                random_direction(d, &mut rng, radius)
            } else {
                truncated_gaussian(d, sigma, spec.alpha_star, &mut rng)?
            };

            let features: Vec<f64> = center.iter().zip(&offset).map(|(c, o)| c + o).collect();
            let label = {
                let mut best = 0usize;
                let mut best_score = f64::NEG_INFINITY;
                for (c, row) in rule.iter().enumerate() {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    let score: f64 = row.iter().zip(&features).map(|(r, x)| r * x).sum::<f64>()
                        + spec.label_noise * noise;
                    if score > best_score {
                        best_score = score;
                        best = c;
                    }
                }
                best
            };

            examples.push(Example {
                features: DenseVector::new(features)?,
                label,
                source_id: q as u32,
            });
            center_assignment.push(center_idx);
            outlier_flags.push(is_outlier);
        }
    }

    Ok(GeneratedDataset {
        dataset: Dataset {
            examples,
            dimension: d,
            n_classes: spec.n_classes,
            has_sources: true,
        },
        truth: GroundTruth {
            centers,
            center_assignment,
            outlier_flags,
        },
    })
}

fn random_direction(d: usize, rng: &mut rand_chacha::ChaCha8Rng, radius: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x * radius / norm).collect();
        }
    }
}

fn truncated_gaussian(
    d: usize,
    sigma: f64,
    radius: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Vec<f64>> {
    for _ in 0..10_000 {
        let v: Vec<f64> = (0..d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * sigma
            })
            .collect();
        if v.iter().map(|x| x * x).sum::<f64>().sqrt() <= radius {
            return Ok(v);
        }
    }
    Err(Error::InvalidArgument(
        "truncation rejected 10000 draws; cluster sigma too large for alpha_star".into(),
    ))
}

/// P(one draw lands within `alpha` of one fixed center) for a single-source
/// spec; the calibrated stand-in for the density-floor term in the sizing
/// formula. Uses the chi-square radial CDF of the truncated Gaussian.
pub fn neighborhood_probability(spec: &MixtureSpec, alpha: f64) -> Result<f64> {
    if spec.num_sources() != 1 {
        return Err(Error::InvalidArgument(
            "neighborhood probability assumes a single source".into(),
        ));
    }
    let radial = |x: f64| -> f64 {
        let scaled = (x / spec.sigma()).powi(2);
        gamma_lr(spec.dimension as f64 / 2.0, scaled / 2.0)
    };
    let within = radial(alpha.min(spec.alpha_star)) / radial(spec.alpha_star);
    let dense_share = 1.0 - spec.outliers as f64 / spec.total() as f64;
    Ok(dense_share * within / spec.centers_per_source as f64)
}

/// Sample size from the coverage bound: ceil(2 k m ln(k m / delta) / p),
/// enough for every partition to touch every dense neighborhood w.h.p.
pub fn coverage_sample_size(k: usize, m: usize, delta: f64, p: f64) -> usize {
    let km = (k * m) as f64;
    (2.0 * km * (km / delta).ln() / p).ceil() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    Csv,
    Jsonl,
}

impl DataFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(DataFormat::Csv),
            Some("jsonl") => Ok(DataFormat::Jsonl),
            other => Err(Error::Config(format!(
                "cannot infer dataset format from extension {other:?}; pass one explicitly"
            ))),
        }
    }
}

impl std::str::FromStr for DataFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(DataFormat::Csv),
            "jsonl" => Ok(DataFormat::Jsonl),
            other => Err(Error::Config(format!("unknown format {other}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonlRecord {
    features: Vec<f64>,
    label: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    source: Option<u32>,
}

/// 17 significant digits: enough to reproduce any f64 exactly.
fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn save(dataset: &Dataset, path: &Path, format: DataFormat) -> Result<()> {
    match format {
        DataFormat::Csv => {
            let mut writer = csv::Writer::from_path(path).map_err(csv_io)?;
            let mut header: Vec<String> = (0..dataset.dimension).map(|i| format!("f{i}")).collect();
            header.push("label".into());
            header.push("source".into());
            writer.write_record(&header).map_err(csv_io)?;
            for ex in &dataset.examples {
                let mut record: Vec<String> = ex
                    .features
                    .as_slice()
                    .iter()
                    .map(|&x| fmt_float(x))
                    .collect();
                record.push(ex.label.to_string());
                record.push(ex.source_id.to_string());
                writer.write_record(&record).map_err(csv_io)?;
            }
            writer.flush()?;
        }
        DataFormat::Jsonl => {
            let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
            for ex in &dataset.examples {
                let record = JsonlRecord {
                    features: ex.features.as_slice().to_vec(),
                    label: ex.label,
                    source: Some(ex.source_id),
                };
                serde_json::to_writer(&mut out, &record)?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
        }
    }
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    match e.position() {
        Some(pos) => Error::Parse {
            line: pos.line(),
            message: e.to_string(),
        },
        None => Error::Config(e.to_string()),
    }
}

/// Loads a dataset. A `source` column is required unless
/// `allow_missing_sources` is set (the source-discovery path), in which case
/// missing sources default to 0 and `has_sources` reports false.
pub fn load(
    path: &Path,
    format: Option<DataFormat>,
    allow_missing_sources: bool,
) -> Result<Dataset> {
    let format = match format {
        Some(f) => f,
        None => DataFormat::from_path(path)?,
    };
    let dataset = match format {
        DataFormat::Csv => load_csv(path)?,
        DataFormat::Jsonl => load_jsonl(path)?,
    };
    if !dataset.has_sources && !allow_missing_sources {
        return Err(Error::Config(format!(
            "{} has no source column and source discovery is disabled",
            path.display()
        )));
    }
    Ok(dataset)
}

fn load_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(csv_io)?;
    let headers = reader.headers().map_err(csv_io)?.clone();
    let mut feature_cols = Vec::new();
    let mut label_col = None;
    let mut source_col = None;
    for (i, name) in headers.iter().enumerate() {
        if name == "label" {
            label_col = Some(i);
        } else if name == "source" {
            source_col = Some(i);
        } else if name.starts_with('f') && name[1..].parse::<usize>().is_ok() {
            feature_cols.push(i);
        } else {
            return Err(Error::Parse {
                line: 1,
                message: format!("unexpected column {name}"),
            });
        }
    }
    let label_col = label_col.ok_or_else(|| Error::Parse {
        line: 1,
        message: "missing label column".into(),
    })?;
    if feature_cols.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no feature columns".into(),
        });
    }

    let mut examples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_io)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let parse_f64 = |i: usize| -> Result<f64> {
            record
                .get(i)
                .ok_or_else(|| Error::Parse {
                    line,
                    message: format!("missing column {i}"),
                })?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse {
                    line,
                    message: format!("bad float: {e}"),
                })
        };
        let features: Vec<f64> = feature_cols
            .iter()
            .map(|&i| parse_f64(i))
            .collect::<Result<_>>()?;
        let label: usize = record
            .get(label_col)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|e| Error::Parse {
                line,
                message: format!("bad label: {e}"),
            })?;
        let source_id: u32 = match source_col {
            Some(i) => record
                .get(i)
                .unwrap_or("")
                .trim()
                .parse()
                .map_err(|e| Error::Parse {
                    line,
                    message: format!("bad source: {e}"),
                })?,
            None => 0,
        };
        examples.push(Example {
            features: DenseVector::new(features)?,
            label,
            source_id,
        });
    }
    finish_load(examples, source_col.is_some())
}

fn load_jsonl(path: &Path) -> Result<Dataset> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut examples = Vec::new();
    let mut has_sources = true;
    for (idx, line) in file.lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: JsonlRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if record.source.is_none() {
            has_sources = false;
        }
        examples.push(Example {
            features: DenseVector::new(record.features)?,
            label: record.label,
            source_id: record.source.unwrap_or(0),
        });
    }
    finish_load(examples, has_sources)
}

fn finish_load(examples: Vec<Example>, has_sources: bool) -> Result<Dataset> {
    if examples.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    let dimension = examples[0].features.len();
    if examples.iter().any(|e| e.features.len() != dimension) {
        return Err(Error::Config("inconsistent feature dimensions".into()));
    }
    let n_classes = examples.iter().map(|e| e.label).max().unwrap() + 1;
    Ok(Dataset {
        examples,
        dimension,
        n_classes: n_classes.max(2),
        has_sources,
    })
}
