//! Experiment runners.
//!
//! Seeds fan out over the rayon pool and are collected in seed order. Each
//! seed's work runs on one worker thread, so the simulator's per-thread
//! execution counter charges exactly the executions of that seed's methods.

use std::path::{Path, PathBuf};
use std::time::Instant;

use dpse::baselines::{
    baseline_fixed, baseline_gmm_probe, baseline_pca_spiral, nsga2_optimize, GmmConfig,
};
use dpse::env::{sample_mixture, GaussianMixture2D, HoleProcess};
use dpse::inversion::{invert, InversionConfig, Regularizer};
use dpse::params::{StrategyKind, StrategyParams};
use dpse::rng::derive_seed;
use dpse::shadow::ShadowModel;
use dpse::sim::{
    collect_task_dataset, executions_on_thread, simulate, success_prob_oracle, ExecutionRecord, ParamSampler,
    TaskDataset,
};
use dpse::trainers::{
    continuous_step, finetune_records, meta_train_fomaml, meta_train_reptile, pretrain, ContinuousConfig,
    ContinuousState, LossRow, RingBuffer, SourceDataset, TrainConfig,
};
use dpse::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::cache::{source_checksum, ArtifactCache};
use crate::config::{ExperimentConfig, ExperimentKind, Method};
use crate::metrics::*;
use crate::plot::{plot_pattern, Frame};

const TRAIN: u64 = 1 << 32;
const TEST: u64 = 2 << 32;
const PRETRAIN: u64 = 3 << 32;
const FINETUNE: u64 = 4 << 32;
const META: u64 = 5 << 32;

/// Seed of pretraining task `i`.
pub fn train_seed(cfg: &ExperimentConfig, i: usize) -> u64 {
    derive_seed(cfg.seed, TRAIN + i as u64)
}

/// Seed of test distribution `i`.
pub fn test_seed(cfg: &ExperimentConfig, i: usize) -> u64 {
    derive_seed(cfg.seed, TEST + i as u64)
}

fn trainer_seed(cfg: &ExperimentConfig, label: u64, own: u64) -> u64 {
    derive_seed(derive_seed(cfg.seed, label), own)
}

pub fn pretrain_config(cfg: &ExperimentConfig) -> TrainConfig {
    TrainConfig {
        seed: trainer_seed(cfg, PRETRAIN, cfg.pretrain.seed),
        ..cfg.pretrain.clone()
    }
}

pub fn finetune_config(cfg: &ExperimentConfig, test: u64) -> TrainConfig {
    TrainConfig {
        seed: derive_seed(trainer_seed(cfg, FINETUNE, cfg.finetune.seed), test),
        ..cfg.finetune.clone()
    }
}

fn inversion_config(base: &InversionConfig, test: u64) -> InversionConfig {
    InversionConfig {
        seed: derive_seed(base.seed, test),
        ..*base
    }
}

/// Everything a runner needs besides the configuration.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub cache: ArtifactCache,
    pub no_train: bool,
}

#[derive(Serialize)]
struct SourceKey<'a> {
    what: &'static str,
    kind: StrategyKind,
    region: dpse::params::SearchRegion,
    timing: dpse::sim::Timing,
    mixture: &'a dpse::env::MixtureSpec,
    m_train: usize,
    n_train: usize,
    seed: u64,
}

fn source_key(cfg: &ExperimentConfig) -> String {
    ArtifactCache::key(&SourceKey {
        what: "source",
        kind: cfg.strategy(),
        region: cfg.sim().region,
        timing: cfg.timing,
        mixture: cfg.mixture_spec(),
        m_train: cfg.m_train,
        n_train: cfg.n_train,
        seed: cfg.seed,
    })
}

fn model_key<T: Serialize>(cfg: &ExperimentConfig, what: &str, trainer: &T) -> String {
    ArtifactCache::key(&(what, source_key(cfg), cfg.shadow_config(), trainer))
}

/// Key of the pretrained checkpoint for `cfg`.
pub fn pretrain_key(cfg: &ExperimentConfig) -> String {
    model_key(cfg, "pretrain", &pretrain_config(cfg))
}

/// Uniform-parameter datasets on `m_train` sampled mixtures, built in parallel.
pub fn build_source(cfg: &ExperimentConfig) -> Result<SourceDataset> {
    let sim = cfg.sim();
    let kind = cfg.strategy();
    let tasks = (0..cfg.m_train)
        .into_par_iter()
        .map(|i| {
            let seed = train_seed(cfg, i);
            let mix = sample_mixture(seed, cfg.mixture_spec())?;
            let mut process = HoleProcess::stationary(mix, seed);
            let mut sampler = ParamSampler::uniform(kind, &sim.region, seed);
            collect_task_dataset(&mut process, &mut sampler, cfg.n_train, &sim)
        })
        .collect::<Result<Vec<_>>>()?;
    SourceDataset::new(tasks)
}

/// Source dataset from the cache, generated and stored on a miss.
pub fn source_dataset(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<SourceDataset> {
    let key = source_key(cfg);
    if let Some(s) = ctx.cache.load_source(&key)? {
        return Ok(s);
    }
    let s = build_source(cfg)?;
    ctx.cache.store_source(&key, &s)?;
    Ok(s)
}

/// Pretrained model and, when it was trained in this call, its loss log.
pub fn pretrained_model(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<(ShadowModel, Vec<LossRow>)> {
    let key = pretrain_key(cfg);
    let mut log = Vec::new();
    let model = ctx.cache.model_or(&key, ctx.no_train, || {
        let source = source_dataset(cfg, ctx)?;
        let init = ShadowModel::new(cfg.strategy(), cfg.shadow_config(), &cfg.sim())?;
        log::info!("pretraining on {} tasks × {} records", cfg.m_train, cfg.n_train);
        let out = pretrain(init, &source, &pretrain_config(cfg))?;
        log = out.log;
        Ok(out.model)
    })?;
    Ok((model, log))
}

/// Passive finetuning buffer: `n_test` executions of the fixed params on test
/// distribution `i`, and the number of executions that cost.
pub fn passive_buffer(cfg: &ExperimentConfig, mix: &GaussianMixture2D, test: u64) -> Result<(TaskDataset, u64)> {
    let sim = cfg.sim();
    let x0 = baseline_fixed(cfg.strategy(), &sim.region);
    let before = executions_on_thread();
    let mut process = HoleProcess::stationary(mix.clone(), derive_seed(test, 1));
    let ds = collect_task_dataset(&mut process, &mut ParamSampler::Passive(x0), cfg.n_test, &sim)?;
    Ok((ds, executions_on_thread() - before))
}

/// Everything written by the stationary benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryReport {
    pub rows: Vec<MetricsRow>,
    pub summary: Vec<SummaryRow>,
    pub timings: Vec<TimingRow>,
    /// `(file name, svg)` pairs.
    pub plots: Vec<(String, String)>,
}

impl StationaryReport {
    pub fn mean_success(&self, m: Method) -> Option<f64> {
        self.summary.iter().find(|s| s.method == m.name()).map(|s| s.mean_success_rate)
    }

    pub fn mean_cycle(&self, m: Method) -> Option<f64> {
        self.summary.iter().find(|s| s.method == m.name()).map(|s| s.mean_cycle_time)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_csv_file(&self.rows, &dir.join("metrics.csv"))?;
        write_csv_file(&self.summary, &dir.join("summary.csv"))?;
        write_csv_file(&self.timings, &dir.join("timings.csv"))?;
        write_plots(&self.plots, dir)
    }
}

fn write_plots(plots: &[(String, String)], dir: &Path) -> Result<()> {
    if plots.is_empty() {
        return Ok(());
    }
    let pdir = dir.join("patterns");
    std::fs::create_dir_all(&pdir)?;
    for (name, svg) in plots {
        std::fs::write(pdir.join(name), svg)?;
    }
    Ok(())
}

struct SeedResult {
    rows: Vec<MetricsRow>,
    timings: Vec<TimingRow>,
    plots: Vec<(String, String)>,
}

/// Stationary benchmark: per test distribution, collect a passive buffer,
/// run every method and score its params with the oracle.
pub fn run_stationary(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<StationaryReport> {
    if !matches!(cfg.kind, ExperimentKind::SpiralStationary | ExperimentKind::ProbeStationary) {
        return Err(Error::Config(format!("{} is not a stationary experiment", cfg.kind.name())));
    }
    cfg.validate()?;
    let needs_model = cfg.methods.iter().any(|m| m.is_dpse());
    let pre = if needs_model { Some(pretrained_model(cfg, ctx)?.0) } else { None };
    let hash = cfg.short_hash();
    let per_seed = (0..cfg.m_test)
        .into_par_iter()
        .map(|i| stationary_seed(cfg, &hash, pre.as_ref(), i))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    let mut plots = Vec::new();
    for s in per_seed {
        rows.extend(s.rows);
        timings.extend(s.timings);
        plots.extend(s.plots);
    }
    let summary = summarize(&rows);
    Ok(StationaryReport {
        rows,
        summary,
        timings,
        plots,
    })
}

fn stationary_seed(cfg: &ExperimentConfig, hash: &str, pre: Option<&ShadowModel>, i: usize) -> Result<SeedResult> {
    let seed = test_seed(cfg, i);
    let sim = cfg.sim();
    let kind = cfg.strategy();
    let mix = sample_mixture(seed, cfg.mixture_spec())?;
    let x0 = baseline_fixed(kind, &sim.region);
    let (buffer, buffer_execs) = passive_buffer(cfg, &mix, seed)?;

    let t_ft = Instant::now();
    let tuned = match pre {
        Some(p) => {
            let refs: Vec<&ExecutionRecord> = buffer.records.iter().collect();
            Some(finetune_records(p, &refs, &finetune_config(cfg, seed))?.model)
        }
        None => None,
    };
    let ft_time = t_ft.elapsed().as_secs_f64();

    let mut out = SeedResult {
        rows: Vec::new(),
        timings: Vec::new(),
        plots: Vec::new(),
    };
    for &m in &cfg.methods {
        let t0 = Instant::now();
        let mut note = String::new();
        let (params, executions) = match m {
            Method::Fixed => (x0.clone(), 0),
            Method::Dpse | Method::DpseLinit | Method::DpseCdist => {
                let model = tuned.as_ref().expect("finetuned model exists for dpse methods");
                let res = invert(model, &x0, &cfg.objective(m.regularizer()), &inversion_config(&cfg.inversion, seed))?;
                (res.params, buffer_execs)
            }
            Method::Pca => {
                note.push_str("oracle-privileged: fitted to ground-truth hole poses");
                let holes: Vec<_> = buffer.records.iter().map(|r| r.hole).collect();
                match baseline_pca_spiral(&holes, &sim.region) {
                    Ok(p) => (StrategyParams::Spiral(p), 0),
                    Err(Error::Degenerate(msg)) => {
                        log::warn!("seed {seed}: PCA fallback to fixed spiral: {msg}");
                        note.push_str("; degenerate input, fixed spiral used");
                        (x0.clone(), 0)
                    }
                    Err(e) => return Err(e),
                }
            }
            Method::Gmm => {
                let gcfg = GmmConfig {
                    seed: derive_seed(seed, 2),
                    ..cfg.gmm
                };
                match baseline_gmm_probe(&buffer, &sim.region, &gcfg) {
                    Ok(p) => (StrategyParams::Probe(p), buffer_execs),
                    Err(Error::InsufficientData(msg)) => {
                        log::warn!("seed {seed}: GMM fallback to grid: {msg}");
                        note.push_str("insufficient successes, fixed grid used");
                        (x0.clone(), buffer_execs)
                    }
                    Err(e) => return Err(e),
                }
            }
            Method::Nsga2 => {
                let before = executions_on_thread();
                let mut process = HoleProcess::stationary(mix.clone(), derive_seed(seed, 3));
                let res = nsga2_optimize(
                    kind,
                    &mut process,
                    &cfg.nsga2_config(derive_seed(seed, 4)),
                    &sim,
                    &cfg.objective(Regularizer::None),
                )?;
                let used = executions_on_thread() - before;
                debug_assert_eq!(used as usize, res.executions);
                (res.best_params(kind)?, used)
            }
            Method::Fomaml | Method::Reptile => {
                return Err(Error::Config(format!("{} is not a stationary method", m.name())));
            }
        };
        let mut elapsed = t0.elapsed().as_secs_f64();
        if m.is_dpse() {
            elapsed += ft_time;
        }
        let score = success_prob_oracle(&params, &mix, cfg.eval_samples, derive_seed(seed, 5), &sim)?;
        out.rows.push(MetricsRow {
            config_hash: hash.to_string(),
            method: m.name().to_string(),
            seed,
            success_rate: score.success_rate,
            mean_cycle_time: score.mean_duration,
            executions,
            note,
        });
        out.timings.push(TimingRow {
            config_hash: hash.to_string(),
            method: m.name().to_string(),
            seed,
            wall_clock_s: elapsed,
        });
        if cfg.plots {
            out.plots.push((
                format!("pattern_{i:02}_{}.svg", m.name()),
                plot_pattern(&mix, &params, &sim.region, &[]),
            ));
        }
    }
    Ok(out)
}

/// Per-step rows and the failure table of the nonstationary experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct NonstationaryReport {
    pub steps: Vec<StepRow>,
    pub failures: Vec<FailureRow>,
    pub plots: Vec<(String, String)>,
}

impl NonstationaryReport {
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_csv_file(&self.steps, &dir.join("steps.csv"))?;
        write_csv_file(&self.failures, &dir.join("failures.csv"))?;
        write_plots(&self.plots, dir)
    }

    pub fn failure_row(&self, process: &str, m: Method) -> Option<&FailureRow> {
        self.failures.iter().find(|r| r.process == process && r.method == m.name())
    }
}

fn centroid(p: &StrategyParams) -> [f64; 2] {
    match p {
        StrategyParams::Probe(q) => q.centroid(),
        StrategyParams::Spiral(s) => s.center,
    }
}

/// Continuous loop for dpse variants, static params for the fixed grid and a
/// per-step GMM refit on the method's own recent executions.
pub fn run_nonstationary(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<NonstationaryReport> {
    if cfg.kind != ExperimentKind::ProbeNonstationary {
        return Err(Error::Config(format!("{} is not the nonstationary experiment", cfg.kind.name())));
    }
    cfg.validate()?;
    let needs_model = cfg.methods.iter().any(|m| m.is_dpse());
    let pre = if needs_model { Some(pretrained_model(cfg, ctx)?.0) } else { None };
    let hash = cfg.short_hash();
    let mut steps = Vec::new();
    let mut plots = Vec::new();
    let mut failures = Vec::new();
    for process in &cfg.processes {
        let per_seed = (0..cfg.m_test)
            .into_par_iter()
            .map(|i| {
                let mut rows = Vec::new();
                let mut plots = Vec::new();
                for &m in &cfg.methods {
                    let (r, frames) = nonstationary_run(cfg, &hash, pre.as_ref(), *process, m, i)?;
                    rows.extend(r);
                    if cfg.plots && i == 0 {
                        plots.push((
                            format!("strip_{}_{}.svg", process.name(), m.name()),
                            plot_pattern(&frames[0].mixture, &frames[0].params, &cfg.sim().region, &frames),
                        ));
                    }
                }
                Ok((rows, plots))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rows_here = Vec::new();
        for (r, p) in per_seed {
            rows_here.extend(r);
            plots.extend(p);
        }
        let mean_failures = |m: Method| -> f64 {
            let finals: Vec<usize> = rows_here
                .iter()
                .filter(|r| r.method == m.name() && r.t + 1 == cfg.horizon)
                .map(|r| r.cumulative_failures)
                .collect();
            finals.iter().sum::<usize>() as f64 / finals.len() as f64
        };
        let fixed = cfg.methods.contains(&Method::Fixed).then(|| mean_failures(Method::Fixed));
        for &m in &cfg.methods {
            let mf = mean_failures(m);
            failures.push(FailureRow {
                config_hash: hash.clone(),
                process: process.name().to_string(),
                method: m.name().to_string(),
                seeds: cfg.m_test,
                mean_failures: mf,
                failure_rate: mf / cfg.horizon as f64,
                reduction_vs_fixed: fixed.filter(|f| *f > 0.0).map(|f| 1.0 - mf / f),
            });
        }
        steps.extend(rows_here);
    }
    Ok(NonstationaryReport { steps, failures, plots })
}

fn nonstationary_run(
    cfg: &ExperimentConfig,
    hash: &str,
    pre: Option<&ShadowModel>,
    pk: dpse::env::ProcessKind,
    m: Method,
    i: usize,
) -> Result<(Vec<StepRow>, Vec<Frame>)> {
    let seed = test_seed(cfg, i);
    let sim = cfg.sim();
    let kind = cfg.strategy();
    let mix = sample_mixture(seed, cfg.mixture_spec())?;
    let x0 = baseline_fixed(kind, &sim.region);
    let mut process = HoleProcess::new(mix, pk, derive_seed(seed, 6))?;
    let mut rows = Vec::with_capacity(cfg.horizon);
    let mut frames = Vec::new();
    let frame_every = (cfg.horizon / 5).max(1);
    let mut failures = 0usize;

    let mut dpse_state = match m {
        Method::Dpse | Method::DpseLinit | Method::DpseCdist => {
            let pre = pre.expect("pretrained model exists for dpse methods").clone();
            Some((
                ContinuousState::new(pre, RingBuffer::new(cfg.n_test)?, x0.clone()),
                ContinuousConfig {
                    finetune: finetune_config(cfg, seed),
                    objective: cfg.objective(m.regularizer()),
                    inversion: inversion_config(&cfg.continuous_inversion, seed),
                    warmup: cfg.warmup,
                    sim,
                },
            ))
        }
        Method::Fixed | Method::Gmm => None,
        other => return Err(Error::Config(format!("{} is not a nonstationary method", other.name()))),
    };
    let mut gmm_params = x0.clone();
    let mut gmm_buffer = RingBuffer::new(cfg.n_test)?;

    for t in 0..cfg.horizon {
        let (executed, record) = match (&mut dpse_state, m) {
            (Some((state, ccfg)), _) => {
                let executed = state.params.clone();
                let rep = continuous_step(state, &mut process, ccfg)?;
                (executed, rep.record)
            }
            (None, Method::Fixed) => {
                process.advance();
                let r = simulate(&x0, process.sample_hole(), &sim);
                (x0.clone(), r)
            }
            (None, _) => {
                process.advance();
                let executed = gmm_params.clone();
                let r = simulate(&executed, process.sample_hole(), &sim);
                gmm_buffer.push(r.clone());
                let ds = TaskDataset {
                    kind,
                    mixture: None,
                    records: gmm_buffer.iter().cloned().collect(),
                };
                let gcfg = GmmConfig {
                    seed: derive_seed(seed, 7 + t as u64),
                    ..cfg.gmm
                };
                match baseline_gmm_probe(&ds, &sim.region, &gcfg) {
                    Ok(p) => gmm_params = StrategyParams::Probe(p),
                    Err(Error::InsufficientData(_)) => {}
                    Err(e) => return Err(e),
                }
                (executed, r)
            }
        };
        failures += (!record.success) as usize;
        let oracle = success_prob_oracle(
            &executed,
            process.current(),
            cfg.step_eval_samples,
            derive_seed(seed, 1000 + t as u64),
            &sim,
        )?;
        let c = centroid(&executed);
        let off = process.offset();
        rows.push(StepRow {
            config_hash: hash.to_string(),
            process: pk.name().to_string(),
            method: m.name().to_string(),
            seed,
            t,
            oracle_success: oracle.success_rate,
            executed_success: record.success,
            cumulative_failures: failures,
            centroid_x: c[0],
            centroid_y: c[1],
            offset_x: off[0],
            offset_y: off[1],
        });
        if t % frame_every == 0 || t + 1 == cfg.horizon {
            frames.push(Frame {
                mixture: process.current().clone(),
                params: executed,
                label: format!("t = {t}"),
            });
        }
    }
    Ok((rows, frames))
}

/// Held-out losses of every adapted predictor, with the source checksum.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaReport {
    pub rows: Vec<MetaRow>,
    pub summary: Vec<MetaSummaryRow>,
    pub source_checksum: String,
    /// Human-readable ordering checks.
    pub ordering: Vec<String>,
}

impl MetaReport {
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_csv_file(&self.rows, &dir.join("meta.csv"))?;
        write_csv_file(&self.summary, &dir.join("meta_summary.csv"))?;
        std::fs::write(dir.join("meta_ordering.txt"), self.ordering.join("\n") + "\n")?;
        Ok(())
    }

    pub fn mean_loss(&self, method: &str, n: usize) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.method == method && s.adapt_records == n)
            .map(|s| s.mean_heldout_loss)
    }
}

/// Trains pretrain+finetune, FOMAML and Reptile on one source dataset and
/// compares held-out prediction loss after adaptation on test tasks.
pub fn run_meta_comparison(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<MetaReport> {
    if cfg.kind != ExperimentKind::MetaComparison {
        return Err(Error::Config(format!("{} is not the meta comparison", cfg.kind.name())));
    }
    cfg.validate()?;
    let hash = cfg.short_hash();
    let source = source_dataset(cfg, ctx)?;
    let checksum = source_checksum(&source)?;
    log::info!("meta comparison source checksum {checksum}");
    let init = || ShadowModel::new(cfg.strategy(), cfg.shadow_config(), &cfg.sim());

    // (label, adaptation size, model)
    let mut models: Vec<(&'static str, usize, ShadowModel)> = Vec::new();
    for &m in &cfg.methods {
        match m {
            Method::Dpse => models.push(("dpse", cfg.n_test, pretrained_model(cfg, ctx)?.0)),
            Method::Fomaml => {
                for &n in &cfg.fomaml_sizes {
                    let tc = TrainConfig {
                        meta_test_size: n,
                        seed: trainer_seed(cfg, META, cfg.fomaml.seed),
                        ..cfg.fomaml.clone()
                    };
                    let key = model_key(cfg, "fomaml", &tc);
                    let model = ctx
                        .cache
                        .model_or(&key, ctx.no_train, || Ok(meta_train_fomaml(init()?, &source, &tc)?.model))?;
                    models.push(("fomaml", n, model));
                }
            }
            Method::Reptile => {
                let tc = TrainConfig {
                    seed: trainer_seed(cfg, META + 1, cfg.reptile.seed),
                    ..cfg.reptile.clone()
                };
                let key = model_key(cfg, "reptile", &tc);
                let model = ctx
                    .cache
                    .model_or(&key, ctx.no_train, || Ok(meta_train_reptile(init()?, &source, &tc)?.model))?;
                models.push(("reptile", cfg.n_test, model));
            }
            other => return Err(Error::Config(format!("{} is not a meta-comparison method", other.name()))),
        }
    }

    let max_adapt = models.iter().map(|m| m.1).max().unwrap_or(cfg.n_test);
    let sim = cfg.sim();
    let per_task = (0..cfg.m_test)
        .into_par_iter()
        .map(|i| {
            let seed = test_seed(cfg, i);
            let mix = sample_mixture(seed, cfg.mixture_spec())?;
            let collect = |n: usize, s: u64| {
                let mut process = HoleProcess::stationary(mix.clone(), s);
                let mut sampler = ParamSampler::uniform(cfg.strategy(), &sim.region, s);
                collect_task_dataset(&mut process, &mut sampler, n, &sim)
            };
            let adapt = collect(max_adapt, derive_seed(seed, 8))?;
            let held = collect(cfg.heldout, derive_seed(seed, 9))?;
            let held_refs: Vec<&ExecutionRecord> = held.records.iter().collect();
            models
                .iter()
                .map(|(label, n, model)| {
                    let refs: Vec<&ExecutionRecord> = adapt.records[..*n].iter().collect();
                    let tuned = finetune_records(model, &refs, &finetune_config(cfg, seed))?.model;
                    Ok(MetaRow {
                        config_hash: hash.clone(),
                        method: label.to_string(),
                        adapt_records: *n,
                        task_seed: seed,
                        heldout_loss: tuned.loss(&held_refs)?,
                        source_checksum: checksum.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<MetaRow> = per_task.into_iter().flatten().collect();
    let summary: Vec<MetaSummaryRow> = models
        .iter()
        .map(|(label, n, _)| {
            let sel: Vec<f64> = rows
                .iter()
                .filter(|r| r.method == *label && r.adapt_records == *n)
                .map(|r| r.heldout_loss)
                .collect();
            MetaSummaryRow {
                config_hash: hash.clone(),
                method: label.to_string(),
                adapt_records: *n,
                tasks: sel.len(),
                mean_heldout_loss: sel.iter().sum::<f64>() / sel.len() as f64,
            }
        })
        .collect();
    let mut report = MetaReport {
        rows,
        summary,
        source_checksum: checksum,
        ordering: Vec::new(),
    };
    report.ordering = meta_ordering(&report, cfg);
    Ok(report)
}

fn meta_ordering(r: &MetaReport, cfg: &ExperimentConfig) -> Vec<String> {
    let mut out = vec![format!(
        "config {} seed {} source {}",
        cfg.short_hash(),
        cfg.seed,
        &r.source_checksum[..16]
    )];
    let dpse = r.mean_loss("dpse", cfg.n_test);
    let mut check = |name: &str, a: Option<f64>, b: Option<f64>| {
        if let (Some(a), Some(b)) = (a, b) {
            out.push(format!("{name}: {} ({a:.5} vs {b:.5})", if a <= b { "holds" } else { "violated" }));
        }
    };
    check("pretrain+finetune <= fomaml(128)", dpse, r.mean_loss("fomaml", 128));
    check("pretrain+finetune <= reptile(128)", dpse, r.mean_loss("reptile", cfg.n_test));
    check("fomaml(128) <= fomaml(5)", r.mean_loss("fomaml", 128), r.mean_loss("fomaml", 5));
    out
}

/// Writes the resolved configuration next to the results.
pub fn write_config(cfg: &ExperimentConfig, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let p = dir.join("config.json");
    std::fs::write(&p, cfg.to_json() + "\n")?;
    Ok(p)
}
