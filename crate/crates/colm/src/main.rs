use clap::{Args, Parser, Subcommand};
use colm::data::{self, DataFormat};
use colm::harness::{
    benchrun, config::load_json_config, metrics, run_theory_checks, run_training,
    run_variance_probe, BenchConfig, ExperimentConfig, ProbeConfig, TheoryConfig,
};
use colm::Error;
use std::path::{Path, PathBuf};

const DEFAULTS_HELP: &str = "\
Config files are JSON. Defaults:
  experiment: method=colm, b=32, r=2b (ceiling 4b), steps=100, hidden_dim=32,
              seed=0, checkpoints=0, checkpoint_after=0,
              optimizer={algo=adam, lr=0.01, beta1=0.9, beta2=0.999,
              eps=1e-8, schedule=constant (cosine: {\"kind\":\"cosine\",
              \"warmup-frac\":0.03})},
              selection={h=max(8, ceil(0.008*d_vp)), per_source=true,
              keep_small=true, weighted=false, mask_aggregation=mean-abs,
              normalization=history-blend, spsa={perturbation_scale=1e-3,
              probes=1, perturb_bias=true, per_example_seed=false}},
              discovery (optional)={clusters=2, warmup_steps=20, refreshes=4}
  mixture:    source_sizes=[200], centers_per_source=1, alpha_star=1.0,
              density_floor=0.5, outliers=0, outlier_radius=2.0, dimension=2,
              n_classes=2, label_noise=0.1, seed=0
  theory:     k=2, m=2, delta=0.04, alpha=alpha_star/2, alpha_star=1.0,
              epsilon=0.1, kappa_over_m=1.0, alpha_u=2.0, dimension=2,
              trials=500, variance_gap_points=400, variance_gap_subset=8, scaling_points=4000,
              scaling_batch_sizes=[8,16,32,64], scaling_resamples=400
  probe:      checkpoints=10, resamples=30, permutations=2000
  bench:      cases=[{n,dim=330,h=8,budget=32} for n in 64,128,256], repeats=5

Outputs: metrics/report files are byte-reproducible for a fixed config+seed;
wall-clock timings go to timing.csv (and the bench report), which are not.
Exit codes: 0 success, 2 configuration error, 3 training divergence.";

#[derive(Parser)]
#[command(
    name = "colm",
    version,
    about = "Coreset-selected mini-batch training laboratory",
    after_long_help = DEFAULTS_HELP
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Output directory (created if missing).
    #[arg(long, default_value = "colm-out")]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output format for data/metrics files.
    #[arg(long, default_value = "csv")]
    format: String,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted synthetic dataset from a mixture spec.
    Generate {
        /// Mixture spec (JSON).
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train with the configured selection method and log metrics.
    Train {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the coverage/medoid/variance/scaling checks on planted data.
    TheoryCheck {
        /// Theory-check config (JSON).
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Compare coreset vs random mean-gradient variance along a trajectory.
    VarianceProbe {
        /// Probe config (JSON) embedding the experiment under "experiment".
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Time the selection kernels (sequential and parallel builds).
    Bench {
        /// Bench config (JSON).
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn parse_format(s: &str) -> Result<DataFormat, Error> {
    s.parse()
}

fn ensure_out(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate { spec, common } => {
            let format = parse_format(&common.format)?;
            let mut mixture: data::MixtureSpec = load_json_config(&spec)?;
            if let Some(seed) = common.seed {
                mixture.seed = seed;
            }
            ensure_out(&common.out)?;
            let generated = data::generate(&mixture)?;
            let ext = match format {
                DataFormat::Csv => "csv",
                DataFormat::Jsonl => "jsonl",
            };
            let data_path = common.out.join(format!("dataset.{ext}"));
            data::save(&generated.dataset, &data_path, format)?;
            write_json(&common.out.join("ground_truth.json"), &generated.truth)?;
            write_json(&common.out.join("spec.json"), &mixture)?;
            println!(
                "generated {} examples across {} sources -> {}",
                generated.dataset.len(),
                mixture.num_sources(),
                data_path.display()
            );
            Ok(())
        }
        Command::Train { config, common } => {
            let format = parse_format(&common.format)?;
            let mut cfg: ExperimentConfig = load_json_config(&config)?;
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            ensure_out(&common.out)?;
            let result = run_training(&cfg)?;
            let ext = match format {
                DataFormat::Csv => "csv",
                DataFormat::Jsonl => "jsonl",
            };
            metrics::write_metrics(
                &common.out.join(format!("metrics.{ext}")),
                format,
                &result.rows,
            )?;
            metrics::write_timings(&common.out.join("timing.csv"), &result.timings)?;
            metrics::write_summary(&common.out.join("summary.json"), &result.summary)?;
            write_json(&common.out.join("config.json"), &cfg)?;
            println!(
                "method={} steps={} final_loss={:.6} overall_acc={:.4}",
                result.summary.method,
                result.summary.steps,
                result.summary.final_loss,
                result.summary.final_overall_acc
            );
            Ok(())
        }
        Command::TheoryCheck { config, common } => {
            let format = parse_format(&common.format)?;
            let mut cfg: TheoryConfig = load_json_config(&config)?;
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            ensure_out(&common.out)?;
            let rows = run_theory_checks(&cfg)?;
            for row in &rows {
                row.print();
            }
            let ext = match format {
                DataFormat::Csv => "csv",
                DataFormat::Jsonl => "jsonl",
            };
            metrics::write_checks(
                &common.out.join(format!("theory_report.{ext}")),
                format,
                &rows,
            )?;
            write_json(&common.out.join("config.json"), &cfg)?;
            let failed = rows.iter().filter(|r| !r.passed).count();
            println!("{} checks, {} failed", rows.len(), failed);
            Ok(())
        }
        Command::VarianceProbe { config, common } => {
            let format = parse_format(&common.format)?;
            let mut cfg: ProbeConfig = load_json_config(&config)?;
            if let Some(seed) = common.seed {
                cfg.experiment.seed = seed;
            }
            ensure_out(&common.out)?;
            let outcome = run_variance_probe(&cfg)?;
            for row in &outcome.rows {
                println!(
                    "PROBE step={} var_random={:.6e} var_selected={:.6e} gap={:.6e} p={:.4}",
                    row.checkpoint_step, row.var_random, row.var_selected, row.gap, row.p_value
                );
            }
            let ext = match format {
                DataFormat::Csv => "csv",
                DataFormat::Jsonl => "jsonl",
            };
            metrics::write_variance(
                &common.out.join(format!("variance.{ext}")),
                format,
                &outcome.rows,
            )?;
            write_json(&common.out.join("config.json"), &cfg)?;
            println!(
                "coreset variance lower at {:.0}% of {} checkpoints",
                100.0 * outcome.fraction_selected_lower,
                outcome.rows.len()
            );
            Ok(())
        }
        Command::Bench { config, common } => {
            let format = parse_format(&common.format)?;
            let mut cfg: BenchConfig = load_json_config(&config)?;
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            ensure_out(&common.out)?;
            let rows = benchrun::run_bench(&cfg)?;
            for r in &rows {
                println!(
                    "BENCH {} n={} dim={} mode={} {:.4} ms",
                    r.component, r.n, r.dim, r.mode, r.millis
                );
            }
            let ext = match format {
                DataFormat::Csv => "csv",
                DataFormat::Jsonl => "jsonl",
            };
            benchrun::write_bench(
                &common.out.join(format!("bench_report.{ext}")),
                format,
                &rows,
            )?;
            Ok(())
        }
    }
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
