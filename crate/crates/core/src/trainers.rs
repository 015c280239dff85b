//! Pretraining, ring-buffer finetuning, the continuous refit loop and the
//! first-order meta-learning alternatives.

use std::collections::VecDeque;

use adgraph::{sgd_step, Adam, AdamConfig, Tensor};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::HoleProcess;
use crate::inversion::{invert, InversionConfig, Objective};
use crate::params::{StrategyKind, StrategyParams};
use crate::rng::{stream_rng, Rng};
use crate::shadow::ShadowModel;
use crate::sim::{simulate, ExecutionRecord, SimConfig, TaskDataset};
use crate::{Error, Result};

/// Union of task datasets used for pretraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDataset {
    pub tasks: Vec<TaskDataset>,
}

impl SourceDataset {
    pub fn new(tasks: Vec<TaskDataset>) -> Result<Self> {
        let s = Self { tasks };
        s.kind()?;
        Ok(s)
    }

    /// Shared strategy kind; errors when empty or mixed.
    pub fn kind(&self) -> Result<StrategyKind> {
        let first = self
            .tasks
            .first()
            .ok_or_else(|| Error::Contract("source dataset has no tasks".into()))?;
        for t in &self.tasks {
            if t.kind != first.kind || t.records.iter().any(|r| r.kind() != first.kind) {
                return Err(Error::Contract("source dataset mixes strategy kinds".into()));
            }
        }
        Ok(first.kind)
    }

    pub fn records(&self) -> Vec<&ExecutionRecord> {
        self.tasks.iter().flat_map(|t| t.records.iter()).collect()
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

/// Fixed-capacity FIFO of the most recent executions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingBuffer {
    capacity: usize,
    records: VecDeque<ExecutionRecord>,
}

impl RingBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("ring buffer capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            records: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends, evicting and returning the oldest record when full.
    pub fn push(&mut self, r: ExecutionRecord) -> Option<ExecutionRecord> {
        let evicted = if self.records.len() == self.capacity {
            self.records.pop_front()
        } else {
            None
        };
        self.records.push_back(r);
        evicted
    }

    pub fn iter(&self) -> impl Iterator<Item = &ExecutionRecord> {
        self.records.iter()
    }

    pub fn records(&self) -> Vec<&ExecutionRecord> {
        self.records.iter().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainerKind {
    PretrainFinetune,
    Fomaml,
    Reptile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub trainer: TrainerKind,
    /// Passes over the data (pretrain/finetune) or over the tasks (meta).
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub inner_steps: usize,
    pub inner_lr: f64,
    pub meta_lr: f64,
    /// Tasks averaged per FOMAML meta-update.
    pub meta_batch: usize,
    /// Records per task available at adaptation time.
    pub meta_test_size: usize,
    pub query_size: usize,
    /// Reptile interpolation factor ε.
    pub reptile_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::pretrain()
    }
}

impl TrainConfig {
    pub fn pretrain() -> Self {
        Self {
            trainer: TrainerKind::PretrainFinetune,
            epochs: 20,
            batch_size: 64,
            lr: 1e-3,
            seed: 0,
            inner_steps: 5,
            inner_lr: 1e-2,
            meta_lr: 1e-3,
            meta_batch: 4,
            meta_test_size: 128,
            query_size: 32,
            reptile_epsilon: 0.1,
        }
    }

    pub fn finetune() -> Self {
        Self {
            epochs: 50,
            lr: 3e-4,
            ..Self::pretrain()
        }
    }

    pub fn fomaml(meta_test_size: usize) -> Self {
        Self {
            trainer: TrainerKind::Fomaml,
            meta_test_size,
            ..Self::pretrain()
        }
    }

    pub fn reptile() -> Self {
        Self {
            trainer: TrainerKind::Reptile,
            ..Self::pretrain()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Support split for FOMAML: the adaptation size, capped so the query
    /// split of a 128-record task stays intact (96/32 by default).
    pub fn support_size(&self, task_len: usize) -> usize {
        self.meta_test_size.min(task_len.saturating_sub(self.query_size)).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch size", self.batch_size as f64),
            ("learning rate", self.lr),
            ("meta batch", self.meta_batch as f64),
            ("meta-test size", self.meta_test_size as f64),
            ("query size", self.query_size as f64),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.inner_lr >= 0.0 && self.meta_lr > 0.0) {
            return Err(Error::Config("meta learning rates must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.reptile_epsilon) {
            return Err(Error::Config("reptile ε must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One line of the per-epoch loss log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: ShadowModel,
    pub log: Vec<LossRow>,
}

/// Mini-batch Adam on `records`; returns per-epoch mean training loss.
fn fit(model: &mut ShadowModel, records: &[&ExecutionRecord], cfg: &TrainConfig, rng: &mut Rng, split: &str) -> Result<Vec<LossRow>> {
    let mut weights = model.weights().to_vec();
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), &weights);
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&ExecutionRecord> = chunk.iter().map(|&i| records[i]).collect();
            let enc = model.encode(&batch)?;
            let (loss, grads) = model.loss_and_grad(&enc)?;
            adam.step(&mut weights, &grads)?;
            model.set_weights(weights.clone())?;
            total += loss * batch.len() as f64;
        }
        log.push(LossRow {
            epoch,
            split: split.to_string(),
            loss: total / records.len() as f64,
        });
    }
    Ok(log)
}

/// Trains `init` on the pooled source records.
pub fn pretrain(init: ShadowModel, source: &SourceDataset, cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    let kind = source.kind()?;
    if kind != init.kind() {
        return Err(Error::Contract("source kind differs from model kind".into()));
    }
    let records = source.records();
    if records.is_empty() {
        return Err(Error::Contract("source dataset has no records".into()));
    }
    let mut model = init;
    let mut rng = stream_rng(cfg.seed, 20);
    let log = fit(&mut model, &records, cfg, &mut rng, "pretrain")?;
    model.meta.tasks = source.len() as u64;
    model.meta.records_per_task = (records.len() / source.len()) as u64;
    model.meta.seed = cfg.seed;
    Ok(Trained { model, log })
}

/// Continues training a copy of `pretrained` on the buffer only.
pub fn finetune(pretrained: &ShadowModel, buffer: &RingBuffer, cfg: &TrainConfig) -> Result<Trained> {
    finetune_records(pretrained, &buffer.records(), cfg)
}

pub fn finetune_records(pretrained: &ShadowModel, records: &[&ExecutionRecord], cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::Contract("finetuning needs a non-empty buffer".into()));
    }
    let mut model = pretrained.clone();
    let mut rng = stream_rng(cfg.seed, 21);
    let log = fit(&mut model, records, cfg, &mut rng, "finetune")?;
    Ok(Trained { model, log })
}

/// State of the execute → refit → invert loop.
#[derive(Debug, Clone)]
pub struct ContinuousState {
    pub pretrained: ShadowModel,
    pub model: ShadowModel,
    pub buffer: RingBuffer,
    pub params: StrategyParams,
}

#[derive(Debug, Clone)]
pub struct ContinuousConfig {
    pub finetune: TrainConfig,
    pub objective: Objective,
    pub inversion: InversionConfig,
    pub warmup: usize,
    pub sim: SimConfig,
}

#[derive(Debug, Clone)]
pub struct StepReport {
    pub record: ExecutionRecord,
    /// Whether the model was refit and inverted this step.
    pub optimized: bool,
}

impl ContinuousState {
    pub fn new(pretrained: ShadowModel, buffer: RingBuffer, params: StrategyParams) -> Self {
        Self {
            model: pretrained.clone(),
            pretrained,
            buffer,
            params,
        }
    }
}

/// Advances the process, executes the current params once, appends the record,
/// refits from the original pretrained model and inverts for the next params.
pub fn continuous_step(state: &mut ContinuousState, process: &mut HoleProcess, cfg: &ContinuousConfig) -> Result<StepReport> {
    process.advance();
    let record = simulate(&state.params, process.sample_hole(), &cfg.sim);
    state.buffer.push(record.clone());
    if state.buffer.len() < cfg.warmup {
        return Ok(StepReport { record, optimized: false });
    }
    state.model = finetune(&state.pretrained, &state.buffer, &cfg.finetune)?.model;
    let result = invert(&state.model, &state.params, &cfg.objective, &cfg.inversion)?;
    state.params = result.params;
    Ok(StepReport { record, optimized: true })
}

fn check_meta(init: &ShadowModel, source: &SourceDataset, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if source.kind()? != init.kind() {
        return Err(Error::Contract("source kind differs from model kind".into()));
    }
    if source.len() < 2 {
        return Err(Error::Contract("meta-learning needs at least two tasks".into()));
    }
    Ok(())
}

/// Support and query record indices of one task within one meta-update.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDraw {
    pub task: usize,
    pub support: Vec<usize>,
    pub query: Vec<usize>,
}

/// The sequence of FOMAML meta-batches for `cfg`; each inner list is one
/// meta-update.
pub fn fomaml_schedule(source: &SourceDataset, cfg: &TrainConfig) -> Vec<Vec<TaskDraw>> {
    let mut rng = stream_rng(cfg.seed, 22);
    let m = source.len();
    let per_epoch = m.div_ceil(cfg.meta_batch);
    let mut out = Vec::with_capacity(cfg.epochs * per_epoch);
    for _ in 0..cfg.epochs {
        let mut tasks: Vec<usize> = (0..m).collect();
        tasks.shuffle(&mut rng);
        for group in tasks.chunks(cfg.meta_batch) {
            let draws = group
                .iter()
                .map(|&t| {
                    let n = source.tasks[t].len();
                    let s = cfg.support_size(n);
                    let mut idx: Vec<usize> = (0..n).collect();
                    idx.shuffle(&mut rng);
                    let q = cfg.query_size.min(n - s.min(n));
                    TaskDraw {
                        task: t,
                        support: idx[..s.min(n)].to_vec(),
                        query: idx[s.min(n)..s.min(n) + q].to_vec(),
                    }
                })
                .collect();
            out.push(draws);
        }
    }
    out
}

fn pick<'a>(task: &'a TaskDataset, idx: &[usize]) -> Vec<&'a ExecutionRecord> {
    idx.iter().map(|&i| &task.records[i]).collect()
}

/// First-order MAML: inner SGD on each task's support split, then the query
/// gradient at the adapted weights is applied to the initial weights.
pub fn meta_train_fomaml(init: ShadowModel, source: &SourceDataset, cfg: &TrainConfig) -> Result<Trained> {
    check_meta(&init, source, cfg)?;
    let mut model = init;
    let mut weights = model.weights().to_vec();
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.meta_lr), &weights);
    let schedule = fomaml_schedule(source, cfg);
    let per_epoch = source.len().div_ceil(cfg.meta_batch);
    let mut log = Vec::new();
    let mut epoch_loss = 0.0;
    for (step, draws) in schedule.iter().enumerate() {
        let mut acc: Vec<Tensor> = weights.iter().map(|w| Tensor::zeros(w.shape())).collect();
        let mut batch_loss = 0.0;
        for d in draws {
            let task = &source.tasks[d.task];
            let mut adapted = model.clone();
            if cfg.inner_steps > 0 && !d.support.is_empty() {
                let support = adapted.encode(&pick(task, &d.support))?;
                let mut aw = weights.clone();
                for _ in 0..cfg.inner_steps {
                    let (_, g) = adapted.loss_and_grad(&support)?;
                    sgd_step(&mut aw, &g, cfg.inner_lr)?;
                    adapted.set_weights(aw.clone())?;
                }
            }
            let query = adapted.encode(&pick(task, &d.query))?;
            let (loss, g) = adapted.loss_and_grad(&query)?;
            batch_loss += loss / draws.len() as f64;
            for (a, gi) in acc.iter_mut().zip(&g) {
                for (av, gv) in a.data_mut().iter_mut().zip(gi.data()) {
                    *av += gv / draws.len() as f64;
                }
            }
        }
        adam.step(&mut weights, &acc)?;
        model.set_weights(weights.clone())?;
        epoch_loss += batch_loss / per_epoch as f64;
        if (step + 1) % per_epoch == 0 {
            log.push(LossRow {
                epoch: step / per_epoch,
                split: "meta-query".into(),
                loss: epoch_loss,
            });
            epoch_loss = 0.0;
        }
    }
    model.meta.tasks = source.len() as u64;
    model.meta.records_per_task = source.tasks[0].len() as u64;
    model.meta.seed = cfg.seed;
    Ok(Trained { model, log })
}

/// One Reptile outer step: a task and its inner mini-batches.
#[derive(Debug, Clone, PartialEq)]
pub struct ReptileDraw {
    pub task: usize,
    pub batches: Vec<Vec<usize>>,
}

/// Outer steps: one per task per epoch, tasks visited in shuffled order.
pub fn reptile_schedule(source: &SourceDataset, cfg: &TrainConfig) -> Vec<ReptileDraw> {
    let mut rng = stream_rng(cfg.seed, 23);
    let m = source.len();
    let mut out = Vec::with_capacity(cfg.epochs * m);
    for _ in 0..cfg.epochs {
        let mut tasks: Vec<usize> = (0..m).collect();
        tasks.shuffle(&mut rng);
        for t in tasks {
            let n = source.tasks[t].len();
            let batches = (0..cfg.inner_steps)
                .map(|_| (0..cfg.batch_size.min(n)).map(|_| rng.random_range(0..n)).collect())
                .collect();
            out.push(ReptileDraw { task: t, batches });
        }
    }
    out
}

/// Plain SGD over the given mini-batches of one task.
pub fn sgd_on_batches(model: &mut ShadowModel, task: &TaskDataset, batches: &[Vec<usize>], lr: f64) -> Result<f64> {
    let mut w = model.weights().to_vec();
    let mut last = 0.0;
    for b in batches {
        let enc = model.encode(&pick(task, b))?;
        let (loss, g) = model.loss_and_grad(&enc)?;
        sgd_step(&mut w, &g, lr)?;
        model.set_weights(w.clone())?;
        last = loss;
    }
    Ok(last)
}

/// Reptile: adapt to one task with SGD, then move the initial weights a
/// fraction ε toward the adapted weights.
pub fn meta_train_reptile(init: ShadowModel, source: &SourceDataset, cfg: &TrainConfig) -> Result<Trained> {
    check_meta(&init, source, cfg)?;
    let mut model = init;
    let schedule = reptile_schedule(source, cfg);
    let m = source.len();
    let mut log = Vec::new();
    let mut epoch_loss = 0.0;
    for (step, d) in schedule.iter().enumerate() {
        let mut adapted = model.clone();
        epoch_loss += sgd_on_batches(&mut adapted, &source.tasks[d.task], &d.batches, cfg.inner_lr)? / m as f64;
        let eps = cfg.reptile_epsilon;
        let next: Vec<Tensor> = model
            .weights()
            .iter()
            .zip(adapted.weights())
            .map(|(w, a)| w.zip_map(a, |wv, av| wv + eps * (av - wv)))
            .collect();
        model.set_weights(next)?;
        if (step + 1) % m == 0 {
            log.push(LossRow {
                epoch: step / m,
                split: "inner".into(),
                loss: epoch_loss,
            });
            epoch_loss = 0.0;
        }
    }
    model.meta.tasks = source.len() as u64;
    model.meta.records_per_task = source.tasks[0].len() as u64;
    model.meta.seed = cfg.seed;
    Ok(Trained { model, log })
}

/// Writes a loss log as CSV with header `epoch,split,loss`.
pub fn write_loss_csv<W: std::io::Write>(log: &[LossRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["epoch", "split", "loss"]).map_err(|e| Error::Integrity(e.to_string()))?;
    for r in log {
        wr.write_record([r.epoch.to_string(), r.split.clone(), r.loss.to_string()])
            .map_err(|e| Error::Integrity(e.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}
