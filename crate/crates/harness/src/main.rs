use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dpse::baselines::baseline_fixed;
use dpse::dataset_io::{read_dataset, write_dataset};
use dpse::inversion::invert;
use dpse::sim::{success_prob_oracle, ExecutionRecord, TaskDataset};
use dpse::trainers::{finetune_records, write_loss_csv};
use dpse::shadow::ShadowModel;
use dpse::{Error, Result};
use harness::cache::{source_checksum, source_to_bytes, ArtifactCache};
use harness::config::ExperimentConfig;
use harness::metrics::{check_single_config, read_csv_file, FailureRow, MetaSummaryRow, SummaryRow};
use harness::runners::*;
use harness::{exit_code, Method};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "dpse", version, about = "Search-strategy optimization experiments")]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Use cached checkpoints only; a cache miss is an error.
    #[arg(long, global = true)]
    no_train: bool,
    /// Worker threads for seed fan-out.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or load) the pretraining source dataset.
    GenData,
    /// Pretrain the shadow model on the source dataset.
    Pretrain,
    /// Finetune a checkpoint on a passive buffer from the first test distribution.
    Finetune {
        /// Checkpoint to start from; defaults to the cached pretrained model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Finetuning dataset; defaults to a fresh passive buffer.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Invert a finetuned model for optimized parameters.
    Optimize {
        /// Finetuned checkpoint; defaults to finetuning the pretrained model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Inversion variant (dpse, dpse-linit, dpse-cdist).
        #[arg(long)]
        method: Option<String>,
    },
    RunStationary,
    RunNonstationary,
    RunMeta,
    /// Summarize the CSVs found in the output directory.
    Report,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config <path> is required for this command".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    let from = cfg.seed;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    match cli.seed {
        Some(s) if s != from => println!("provenance: config {} seed {s} (overrides {from})", cfg.short_hash()),
        _ => println!("provenance: config {} seed {}", cfg.short_hash(), cfg.seed),
    }
    Ok(cfg)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Integrity(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let ctx = RunContext {
        cache: ArtifactCache::from_env_or(cli.out.join("cache")),
        no_train: cli.no_train,
    };
    std::fs::create_dir_all(&cli.out)?;
    if let Command::Report = cli.command {
        return report(&cli.out);
    }
    let cfg = load_config(&cli)?;
    write_config(&cfg, &cli.out)?;
    match &cli.command {
        Command::GenData => {
            let source = source_dataset(&cfg, &ctx)?;
            let path = cli.out.join("source.bin");
            std::fs::write(&path, source_to_bytes(&source)?)?;
            println!(
                "{} tasks × {} records → {} (sha256 {})",
                source.len(),
                cfg.n_train,
                path.display(),
                source_checksum(&source)?
            );
        }
        Command::Pretrain => {
            let (model, log) = pretrained_model(&cfg, &ctx)?;
            let path = cli.out.join("pretrained.ckpt");
            std::fs::write(&path, model.to_bytes())?;
            if !log.is_empty() {
                write_loss_csv(&log, std::fs::File::create(cli.out.join("pretrain_loss.csv"))?)?;
            }
            println!("pretrained checkpoint → {}", path.display());
        }
        Command::Finetune { checkpoint, dataset } => {
            let (model, log) = finetuned(&cfg, &ctx, checkpoint.as_deref(), dataset.as_deref(), &cli.out)?;
            let path = cli.out.join("finetuned.ckpt");
            std::fs::write(&path, model.to_bytes())?;
            write_loss_csv(&log, std::fs::File::create(cli.out.join("finetune_loss.csv"))?)?;
            println!("finetuned checkpoint → {}", path.display());
        }
        Command::Optimize { checkpoint, method } => {
            let method = method.as_deref().map(Method::from_name).transpose()?;
            optimize(&cfg, &ctx, checkpoint.as_deref(), method, &cli.out)?
        }
        Command::RunStationary => {
            let r = run_stationary(&cfg, &ctx)?;
            r.write(&cli.out)?;
            for s in &r.summary {
                println!(
                    "{:<12} success {:.4}  cycle {:.3} s  executions {:.0}",
                    s.method, s.mean_success_rate, s.mean_cycle_time, s.mean_executions
                );
            }
        }
        Command::RunNonstationary => {
            let r = run_nonstationary(&cfg, &ctx)?;
            r.write(&cli.out)?;
            for f in &r.failures {
                let red = f.reduction_vs_fixed.map(|v| format!("{:+.1}%", 100.0 * v)).unwrap_or_default();
                println!("{:<10} {:<12} failures {:.1} {red}", f.process, f.method, f.mean_failures);
            }
        }
        Command::RunMeta => {
            let r = run_meta_comparison(&cfg, &ctx)?;
            r.write(&cli.out)?;
            for s in &r.summary {
                println!("{:<8} N={:<4} held-out loss {:.5}", s.method, s.adapt_records, s.mean_heldout_loss);
            }
            for line in &r.ordering {
                println!("{line}");
            }
        }
        Command::Report => unreachable!(),
    }
    Ok(())
}

fn finetuned(
    cfg: &ExperimentConfig,
    ctx: &RunContext,
    checkpoint: Option<&Path>,
    dataset: Option<&Path>,
    out: &Path,
) -> Result<(ShadowModel, Vec<dpse::trainers::LossRow>)> {
    let model = match checkpoint {
        Some(p) => ShadowModel::from_bytes(&std::fs::read(p)?)?,
        None => pretrained_model(cfg, ctx)?.0,
    };
    let seed = test_seed(cfg, 0);
    let buffer: TaskDataset = match dataset {
        Some(p) => read_dataset(std::fs::File::open(p)?)?,
        None => {
            let mix = dpse::env::sample_mixture(seed, cfg.mixture_spec())?;
            let (ds, _) = passive_buffer(cfg, &mix, seed)?;
            write_dataset(&ds, std::fs::File::create(out.join("buffer.bin"))?)?;
            ds
        }
    };
    let refs: Vec<&ExecutionRecord> = buffer.records.iter().collect();
    let t = finetune_records(&model, &refs, &finetune_config(cfg, seed))?;
    Ok((t.model, t.log))
}

#[derive(Serialize)]
struct OptimizeResult {
    config_hash: String,
    method: &'static str,
    params: dpse::params::StrategyParams,
    predicted_fail: f64,
    predicted_cycle: f64,
    oracle_success: f64,
    oracle_cycle: f64,
    initial_oracle_success: f64,
}

fn optimize(cfg: &ExperimentConfig, ctx: &RunContext, checkpoint: Option<&Path>, method: Option<Method>, out: &Path) -> Result<()> {
    let method = method.unwrap_or(match cfg.strategy() {
        dpse::params::StrategyKind::Probe => Method::DpseCdist,
        dpse::params::StrategyKind::Spiral => Method::Dpse,
    });
    let model = match checkpoint {
        Some(p) => ShadowModel::from_bytes(&std::fs::read(p)?)?,
        None => finetuned(cfg, ctx, None, None, out)?.0,
    };
    let sim = cfg.sim();
    let x0 = baseline_fixed(cfg.strategy(), &sim.region);
    let res = invert(&model, &x0, &cfg.objective(method.regularizer()), &cfg.inversion)?;
    let seed = test_seed(cfg, 0);
    let mix = dpse::env::sample_mixture(seed, cfg.mixture_spec())?;
    let after = success_prob_oracle(&res.params, &mix, cfg.eval_samples, seed, &sim)?;
    let before = success_prob_oracle(&x0, &mix, cfg.eval_samples, seed, &sim)?;
    let result = OptimizeResult {
        config_hash: cfg.short_hash(),
        method: method.name(),
        params: res.params,
        predicted_fail: res.predicted_fail,
        predicted_cycle: res.predicted_cycle,
        oracle_success: after.success_rate,
        oracle_cycle: after.mean_duration,
        initial_oracle_success: before.success_rate,
    };
    let path = out.join("optimize.json");
    write_json(&result, &path)?;
    println!(
        "{}: oracle success {:.4} (fixed {:.4}) → {}",
        method.name(),
        after.success_rate,
        before.success_rate,
        path.display()
    );
    Ok(())
}

/// Markdown tables of whatever result CSVs exist in `dir`.
fn report(dir: &Path) -> Result<()> {
    let mut text = String::new();
    let summary = dir.join("summary.csv");
    if summary.exists() {
        let rows: Vec<SummaryRow> = read_csv_file(&summary)?;
        check_single_config(rows.iter().map(|r| r.config_hash.as_str()))?;
        text.push_str("| method | seeds | success | cycle (s) | executions |\n|---|---|---|---|---|\n");
        for r in &rows {
            text.push_str(&format!(
                "| {} | {} | {:.4} | {:.3} | {:.0} |\n",
                r.method, r.seeds, r.mean_success_rate, r.mean_cycle_time, r.mean_executions
            ));
        }
        text.push('\n');
    }
    let failures = dir.join("failures.csv");
    if failures.exists() {
        let rows: Vec<FailureRow> = read_csv_file(&failures)?;
        check_single_config(rows.iter().map(|r| r.config_hash.as_str()))?;
        text.push_str("| process | method | failures | rate | vs fixed |\n|---|---|---|---|---|\n");
        for r in &rows {
            let red = r.reduction_vs_fixed.map(|v| format!("{:+.1}%", 100.0 * v)).unwrap_or_default();
            text.push_str(&format!(
                "| {} | {} | {:.1} | {:.3} | {red} |\n",
                r.process, r.method, r.mean_failures, r.failure_rate
            ));
        }
        text.push('\n');
    }
    let meta = dir.join("meta_summary.csv");
    if meta.exists() {
        let rows: Vec<MetaSummaryRow> = read_csv_file(&meta)?;
        check_single_config(rows.iter().map(|r| r.config_hash.as_str()))?;
        text.push_str("| method | N | tasks | held-out loss |\n|---|---|---|---|\n");
        for r in &rows {
            text.push_str(&format!(
                "| {} | {} | {} | {:.5} |\n",
                r.method, r.adapt_records, r.tasks, r.mean_heldout_loss
            ));
        }
        text.push('\n');
    }
    if text.is_empty() {
        return Err(Error::Config(format!("no result CSVs in {}", dir.display())));
    }
    std::fs::write(dir.join("report.md"), &text)?;
    print!("{text}");
    Ok(())
}
