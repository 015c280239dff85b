#![allow(dead_code)]

use adgraph::{Tape, Tensor};
use dpse::env::{sample_mixture, GaussianMixture2D, HoleProcess, MixtureSpec};
use dpse::params::{SearchRegion, StrategyKind, StrategyParams};
use dpse::shadow::{Architecture, ShadowConfig, ShadowModel};
use dpse::sim::{collect_task_dataset, ExecutionRecord, ParamSampler, SimConfig, TaskDataset, Timing};
use dpse::trainers::SourceDataset;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn probe_sim() -> SimConfig {
    SimConfig {
        region: SearchRegion::new(10.0, 1.5).unwrap(),
        timing: Timing::default(),
    }
}

pub fn spiral_sim() -> SimConfig {
    SimConfig {
        region: SearchRegion::new(10.0, 0.5).unwrap(),
        timing: Timing::default(),
    }
}

pub fn sim_for(kind: StrategyKind) -> SimConfig {
    match kind {
        StrategyKind::Probe => probe_sim(),
        StrategyKind::Spiral => spiral_sim(),
    }
}

pub fn model(kind: StrategyKind, arch: Architecture, seed: u64) -> ShadowModel {
    let cfg = match arch {
        Architecture::Dense => ShadowConfig::dense(),
        Architecture::Field => ShadowConfig::field(),
    };
    ShadowModel::new(kind, cfg.with_seed(seed), &sim_for(kind)).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_u(rng: &mut ChaCha8Rng, dim: usize, lim: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-lim..lim)).collect()
}

pub fn uniform_task(kind: StrategyKind, mixture: GaussianMixture2D, n: usize, seed: u64) -> TaskDataset {
    let sim = sim_for(kind);
    let mut process = HoleProcess::stationary(mixture, seed);
    let mut sampler = ParamSampler::uniform(kind, &sim.region, seed);
    collect_task_dataset(&mut process, &mut sampler, n, &sim).unwrap()
}

pub fn passive_task(params: &StrategyParams, mixture: GaussianMixture2D, n: usize, seed: u64) -> TaskDataset {
    let sim = sim_for(params.kind());
    let mut process = HoleProcess::stationary(mixture, seed);
    let mut sampler = ParamSampler::Passive(params.clone());
    collect_task_dataset(&mut process, &mut sampler, n, &sim).unwrap()
}

pub fn preset(kind: StrategyKind) -> MixtureSpec {
    match kind {
        StrategyKind::Probe => MixtureSpec::probe_default(),
        StrategyKind::Spiral => MixtureSpec::spiral_default(),
    }
}

pub fn source(kind: StrategyKind, tasks: usize, n: usize, seed: u64) -> SourceDataset {
    let spec = preset(kind);
    SourceDataset::new(
        (0..tasks as u64)
            .map(|t| uniform_task(kind, sample_mixture(seed + t, &spec).unwrap(), n, seed + t))
            .collect(),
    )
    .unwrap()
}

pub fn refs(records: &[ExecutionRecord]) -> Vec<&ExecutionRecord> {
    records.iter().collect()
}

/// `P(fail)` of one normalized input row, forward pass only.
pub fn fail_at(m: &ShadowModel, u: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let w = m.bind(&mut tape, false);
    let uv = tape.constant(Tensor::from_rows(&[u.to_vec()]).unwrap());
    let f = m.forward(&mut tape, &w, uv).unwrap();
    let fail = m.fail_var(&mut tape, &f).unwrap();
    tape.value(fail).item()
}

/// Analytic `∂P(fail)/∂u` from the tape.
pub fn fail_grad(m: &ShadowModel, u: &[f64]) -> Vec<f64> {
    let mut tape = Tape::new();
    let w = m.bind(&mut tape, false);
    let uv = tape.leaf(Tensor::from_rows(&[u.to_vec()]).unwrap());
    let f = m.forward(&mut tape, &w, uv).unwrap();
    let fail = m.fail_var(&mut tape, &f).unwrap();
    tape.backward(fail).unwrap().wrt(uv).data().to_vec()
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
