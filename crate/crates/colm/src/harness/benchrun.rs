//! The `bench` subcommand: wall-clock timing of the selection kernels at
//! configurable sizes, sequential and (when compiled in) parallel. This is
//! the one report that is inherently non-reproducible; everything else the
//! CLI writes is seed-determined.

use crate::error::Result;
use crate::facility::{pairwise_distances_seq, FacilityLocationProblem, Metric};
use crate::model::{forward_cached, Example, ModelConfig, ModelParams};
use crate::numeric::{stream_rng, DenseVector};
use crate::zo::{batch_last_projection_seq, SpsaConfig};
use rand::Rng;
use serde::Serialize;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use super::config::BenchConfig;

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub component: String,
    pub n: usize,
    pub dim: usize,
    pub mode: String,
    pub millis: f64,
}

fn time_ms(repeats: usize, mut f: impl FnMut()) -> f64 {
    let start = Instant::now();
    for _ in 0..repeats {
        f();
    }
    start.elapsed().as_secs_f64() * 1e3 / repeats as f64
}

pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for case in &cfg.cases {
        let mut rng = stream_rng(cfg.seed, &[case.n as u64, case.dim as u64]);
        let points: Vec<Vec<f64>> = (0..case.n)
            .map(|_| (0..case.dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();

        let seq_ms = time_ms(cfg.repeats, || {
            std::hint::black_box(pairwise_distances_seq(&points, Metric::L1));
        });
        rows.push(BenchRow {
            component: "pairwise-l1".into(),
            n: case.n,
            dim: case.dim,
            mode: "seq".into(),
            millis: seq_ms,
        });
        #[cfg(feature = "parallel")]
        {
            let par_ms = time_ms(cfg.repeats, || {
                std::hint::black_box(crate::facility::pairwise_distances(&points, Metric::L1));
            });
            rows.push(BenchRow {
                component: "pairwise-l1".into(),
                n: case.n,
                dim: case.dim,
                mode: "par".into(),
                millis: par_ms,
            });
        }

        let matrix = pairwise_distances_seq(&points, Metric::L1);
        let budget = case.budget.min(case.n);
        let problem = FacilityLocationProblem::new(matrix.clone(), case.n, budget)?;
        let naive_ms = time_ms(cfg.repeats, || {
            std::hint::black_box(problem.greedy());
        });
        rows.push(BenchRow {
            component: "greedy".into(),
            n: case.n,
            dim: case.dim,
            mode: "naive".into(),
            millis: naive_ms,
        });
        let lazy_ms = time_ms(cfg.repeats, || {
            std::hint::black_box(problem.lazy_greedy());
        });
        rows.push(BenchRow {
            component: "greedy".into(),
            n: case.n,
            dim: case.dim,
            mode: "lazy".into(),
            millis: lazy_ms,
        });

        // Last-layer probe features over a batch of case.n examples.
        let model_cfg = ModelConfig::default();
        let params = ModelParams::init(model_cfg, cfg.seed);
        let batch: Vec<Example> = (0..case.n)
            .map(|_| Example {
                features: DenseVector::new(
                    (0..model_cfg.input_dim)
                        .map(|_| rng.random_range(-1.0..1.0))
                        .collect(),
                )
                .expect("finite"),
                label: rng.random_range(0..model_cfg.n_classes),
                source_id: 0,
            })
            .collect();
        let (_, cache) = forward_cached(&params, &batch)?;
        let spsa = SpsaConfig {
            seed: cfg.seed,
            ..SpsaConfig::default()
        };
        let zo_seq = time_ms(cfg.repeats, || {
            std::hint::black_box(
                batch_last_projection_seq(&params, &batch, &cache, &spsa).expect("finite"),
            );
        });
        rows.push(BenchRow {
            component: "zo-features".into(),
            n: case.n,
            dim: model_cfg.last_projection_dim(),
            mode: "seq".into(),
            millis: zo_seq,
        });
        #[cfg(feature = "parallel")]
        {
            let zo_par = time_ms(cfg.repeats, || {
                std::hint::black_box(
                    crate::zo::batch_last_projection(&params, &batch, &cache, &spsa)
                        .expect("finite"),
                );
            });
            rows.push(BenchRow {
                component: "zo-features".into(),
                n: case.n,
                dim: model_cfg.last_projection_dim(),
                mode: "par".into(),
                millis: zo_par,
            });
        }
    }
    Ok(rows)
}

pub fn write_bench(path: &Path, format: crate::data::DataFormat, rows: &[BenchRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    match format {
        crate::data::DataFormat::Csv => {
            writeln!(out, "component,n,dim,mode,millis")?;
            for r in rows {
                writeln!(
                    out,
                    "{},{},{},{},{:.4}",
                    r.component, r.n, r.dim, r.mode, r.millis
                )?;
            }
        }
        crate::data::DataFormat::Jsonl => {
            for r in rows {
                serde_json::to_writer(&mut out, r)?;
                out.write_all(b"\n")?;
            }
        }
    }
    out.flush()?;
    Ok(())
}
