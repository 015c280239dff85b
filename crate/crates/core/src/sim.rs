//! Scripted execution of search strategies against a sampled hole.
//!
//! Contact is a distance predicate: the strategy finds the hole when the tool
//! comes within the region's clearance of it. Timing follows fixed per-probe
//! costs (probe search) or a trapezoidal velocity profile along the spiral.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::env::{GaussianMixture2D, HolePose, HoleProcess};
use crate::params::{
    ParamBounds, ProbeParams, SearchRegion, SpiralParams, StrategyKind, StrategyParams, PROBE_POINTS,
};
use crate::rng::{stream_rng, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub t_setup: f64,
    pub t_probe: f64,
    pub t_fail: f64,
}

impl Default for Timing {
    fn default() -> Self {
        Self {
            t_setup: 0.5,
            t_probe: 0.8,
            t_fail: 1.0,
        }
    }
}

/// Everything the simulator needs besides params and hole.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SimConfig {
    pub region: SearchRegion,
    pub timing: Timing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub probed: bool,
    pub hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Probe {
        /// 0-based index of the probe that found the hole.
        hit_index: Option<usize>,
        probes: Vec<ProbeOutcome>,
    },
    Spiral {
        /// Spiral parameter θ* at first contact.
        contact_theta: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub params: StrategyParams,
    pub hole: HolePose,
    pub success: bool,
    /// Seconds, always positive.
    pub duration: f64,
    pub outcome: Outcome,
}

impl ExecutionRecord {
    pub fn kind(&self) -> StrategyKind {
        self.params.kind()
    }

    pub fn hit_index(&self) -> Option<usize> {
        match &self.outcome {
            Outcome::Probe { hit_index, .. } => *hit_index,
            Outcome::Spiral { .. } => None,
        }
    }

    pub fn contact_theta(&self) -> Option<f64> {
        match &self.outcome {
            Outcome::Spiral { contact_theta } => *contact_theta,
            Outcome::Probe { .. } => None,
        }
    }

    /// Checks the structural invariants of the record.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Integrity(format!("invalid execution record: {m}")));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration must be positive");
        }
        if !(self.hole.x.is_finite() && self.hole.y.is_finite()) {
            return bad("hole is not finite");
        }
        match (&self.params, &self.outcome) {
            (StrategyParams::Probe(_), Outcome::Probe { hit_index, probes }) => {
                if probes.len() != PROBE_POINTS {
                    return bad("probe outcome length");
                }
                if self.success != hit_index.is_some() {
                    return bad("success disagrees with hit index");
                }
                let last = hit_index.unwrap_or(PROBE_POINTS - 1);
                for (j, o) in probes.iter().enumerate() {
                    let expect_probed = j <= last;
                    let expect_hit = Some(j) == *hit_index;
                    if o.probed != expect_probed || o.hit != expect_hit {
                        return bad("per-probe outcomes inconsistent with first hit");
                    }
                }
                Ok(())
            }
            (StrategyParams::Spiral(_), Outcome::Spiral { contact_theta }) => {
                if self.success != contact_theta.is_some() {
                    return bad("success disagrees with contact parameter");
                }
                Ok(())
            }
            _ => bad("outcome kind differs from params kind"),
        }
    }
}

thread_local! {
    static EXECUTIONS: Cell<u64> = const { Cell::new(0) };
}

/// Number of simulated executions performed on the calling thread so far.
/// Callers charge budgets by differencing this counter.
pub fn executions_on_thread() -> u64 {
    EXECUTIONS.with(Cell::get)
}

fn count_execution() {
    EXECUTIONS.with(|c| c.set(c.get() + 1));
}

pub fn simulate_probe(params: &ProbeParams, hole: HolePose, cfg: &SimConfig) -> ExecutionRecord {
    count_execution();
    let c2 = cfg.region.clearance * cfg.region.clearance;
    let hit_index = params.points.iter().position(|p| {
        let dx = p[0] - hole.x;
        let dy = p[1] - hole.y;
        dx * dx + dy * dy <= c2
    });
    let t = &cfg.timing;
    let (duration, last) = match hit_index {
        Some(k) => (t.t_setup + (k + 1) as f64 * t.t_probe, k),
        None => (t.t_setup + PROBE_POINTS as f64 * t.t_probe + t.t_fail, PROBE_POINTS - 1),
    };
    let probes = (0..PROBE_POINTS)
        .map(|j| ProbeOutcome {
            probed: j <= last,
            hit: Some(j) == hit_index,
        })
        .collect();
    ExecutionRecord {
        params: StrategyParams::Probe(params.clone()),
        hole,
        success: hit_index.is_some(),
        duration,
        outcome: Outcome::Probe { hit_index, probes },
    }
}

/// Position along the spiral at parameter `theta`.
pub fn spiral_point(p: &SpiralParams, theta: f64) -> [f64; 2] {
    let scale = theta / (2.0 * std::f64::consts::PI * p.windings);
    let lx = p.extents[0] * scale * theta.cos();
    let ly = p.extents[1] * scale * theta.sin();
    let (s, c) = p.orientation.sin_cos();
    [p.center[0] + c * lx - s * ly, p.center[1] + s * lx + c * ly]
}

/// Discretized spiral with every segment no longer than the requested step.
#[derive(Debug, Clone)]
pub struct SpiralPath {
    pub theta: Vec<f64>,
    pub points: Vec<[f64; 2]>,
    /// Cumulative polyline length at each point.
    pub arc: Vec<f64>,
}

impl SpiralPath {
    pub fn new(p: &SpiralParams, max_step: f64) -> Self {
        let two_pi_n = 2.0 * std::f64::consts::PI * p.windings;
        let theta_end = two_pi_n;
        // |q'(θ)| ≤ m·√(1 + θ²).
        let m = p.extents[0].max(p.extents[1]) / two_pi_n;
        let mut theta = vec![0.0];
        let mut points = vec![spiral_point(p, 0.0)];
        let mut arc = vec![0.0];
        let mut t = 0.0f64;
        while t < theta_end {
            let d1 = max_step / (m * (1.0 + t * t).sqrt());
            let mut dt = max_step / (m * (1.0 + (t + d1) * (t + d1)).sqrt());
            if t + dt > theta_end {
                dt = theta_end - t;
            }
            t = if t + dt >= theta_end { theta_end } else { t + dt };
            let q = spiral_point(p, t);
            let prev = points[points.len() - 1];
            let seg = ((q[0] - prev[0]).powi(2) + (q[1] - prev[1]).powi(2)).sqrt();
            theta.push(t);
            points.push(q);
            arc.push(arc[arc.len() - 1] + seg);
        }
        Self { theta, points, arc }
    }

    /// Path used by the simulator for a given region.
    pub fn for_region(p: &SpiralParams, region: &SearchRegion) -> Self {
        Self::new(p, region.clearance / 4.0)
    }

    pub fn length(&self) -> f64 {
        self.arc[self.arc.len() - 1]
    }

    /// First point within `clearance` of `hole`.
    pub fn first_contact(&self, hole: HolePose, clearance: f64) -> Option<usize> {
        let c2 = clearance * clearance;
        self.points.iter().position(|q| {
            let dx = q[0] - hole.x;
            let dy = q[1] - hole.y;
            dx * dx + dy * dy <= c2
        })
    }
}

/// Time at which a move of total length `total` passes position `s` under a
/// trapezoidal velocity profile (triangular when the cruise speed is not
/// reached).
pub fn profile_time(s: f64, total: f64, v: f64, acc: f64) -> f64 {
    let s = s.clamp(0.0, total);
    let ramp = v * v / (2.0 * acc);
    if total >= 2.0 * ramp {
        let t_end = total / v + v / acc;
        if s <= ramp {
            (2.0 * s / acc).sqrt()
        } else if s <= total - ramp {
            v / acc + (s - ramp) / v
        } else {
            t_end - (2.0 * (total - s) / acc).sqrt()
        }
    } else {
        let t_end = 2.0 * (total / acc).sqrt();
        if s <= 0.5 * total {
            (2.0 * s / acc).sqrt()
        } else {
            t_end - (2.0 * (total - s) / acc).sqrt()
        }
    }
}

pub fn simulate_spiral(params: &SpiralParams, hole: HolePose, cfg: &SimConfig) -> ExecutionRecord {
    let path = SpiralPath::for_region(params, &cfg.region);
    simulate_spiral_on(&path, params, hole, cfg)
}

/// [`simulate_spiral`] on a precomputed path of the same params.
pub fn simulate_spiral_on(path: &SpiralPath, params: &SpiralParams, hole: HolePose, cfg: &SimConfig) -> ExecutionRecord {
    count_execution();
    let total = path.length();
    let t = &cfg.timing;
    let contact = path.first_contact(hole, cfg.region.clearance);
    let duration = match contact {
        Some(i) => t.t_setup + profile_time(path.arc[i], total, params.velocity, params.acceleration),
        None => t.t_setup + profile_time(total, total, params.velocity, params.acceleration) + t.t_fail,
    };
    ExecutionRecord {
        params: StrategyParams::Spiral(*params),
        hole,
        success: contact.is_some(),
        duration,
        outcome: Outcome::Spiral {
            contact_theta: contact.map(|i| path.theta[i]),
        },
    }
}

pub fn simulate(params: &StrategyParams, hole: HolePose, cfg: &SimConfig) -> ExecutionRecord {
    match params {
        StrategyParams::Probe(p) => simulate_probe(p, hole, cfg),
        StrategyParams::Spiral(p) => simulate_spiral(p, hole, cfg),
    }
}

/// Reusable simulator for one parameterization (caches the spiral path).
pub struct Executor<'a> {
    params: &'a StrategyParams,
    path: Option<SpiralPath>,
    cfg: SimConfig,
}

impl<'a> Executor<'a> {
    pub fn new(params: &'a StrategyParams, cfg: &SimConfig) -> Self {
        let path = params.as_spiral().map(|p| SpiralPath::for_region(p, &cfg.region));
        Self { params, path, cfg: *cfg }
    }

    pub fn run(&self, hole: HolePose) -> ExecutionRecord {
        match (self.params, &self.path) {
            (StrategyParams::Spiral(p), Some(path)) => simulate_spiral_on(path, p, hole, &self.cfg),
            (StrategyParams::Probe(p), _) => simulate_probe(p, hole, &self.cfg),
            _ => unreachable!("spiral executor always has a path"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimate {
    pub success_rate: f64,
    pub mean_duration: f64,
    pub n: usize,
}

impl OracleEstimate {
    pub fn failure_rate(&self) -> f64 {
        1.0 - self.success_rate
    }
}

/// Monte-Carlo success probability and mean duration of `params` under `mixture`.
pub fn success_prob_oracle(
    params: &StrategyParams,
    mixture: &GaussianMixture2D,
    n_samples: usize,
    seed: u64,
    cfg: &SimConfig,
) -> Result<OracleEstimate> {
    if n_samples == 0 {
        return Err(Error::Config("oracle needs at least one sample".into()));
    }
    let exec = Executor::new(params, cfg);
    let mut rng = stream_rng(seed, 3);
    let mut hits = 0usize;
    let mut dur = 0.0;
    for _ in 0..n_samples {
        let r = exec.run(mixture.sample(&mut rng));
        hits += r.success as usize;
        dur += r.duration;
    }
    Ok(OracleEstimate {
        success_rate: hits as f64 / n_samples as f64,
        mean_duration: dur / n_samples as f64,
        n: n_samples,
    })
}

/// Source of parameters for dataset collection.
pub enum ParamSampler {
    /// Uniform over the parameter box (pretraining data).
    Uniform { bounds: ParamBounds, rng: Rng },
    /// One fixed parameterization (passive finetuning data).
    Passive(StrategyParams),
}

impl ParamSampler {
    pub fn uniform(kind: StrategyKind, region: &SearchRegion, seed: u64) -> Self {
        ParamSampler::Uniform {
            bounds: ParamBounds::new(kind, region),
            rng: stream_rng(seed, 4),
        }
    }

    pub fn kind(&self) -> StrategyKind {
        match self {
            ParamSampler::Uniform { bounds, .. } => bounds.kind,
            ParamSampler::Passive(p) => p.kind(),
        }
    }

    pub fn next_params(&mut self) -> StrategyParams {
        match self {
            ParamSampler::Uniform { bounds, rng } => {
                let v = bounds.sample(rng);
                StrategyParams::from_slice(bounds.kind, &v).expect("bounds have the kind's dimension")
            }
            ParamSampler::Passive(p) => p.clone(),
        }
    }
}

/// Records of one task, with the task's initial hole distribution when known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub kind: StrategyKind,
    pub mixture: Option<GaussianMixture2D>,
    pub records: Vec<ExecutionRecord>,
}

impl TaskDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn successes(&self) -> usize {
        self.records.iter().filter(|r| r.success).count()
    }
}

/// Executes `n` strategies drawn from `sampler`; the process advances after each.
pub fn collect_task_dataset(
    process: &mut HoleProcess,
    sampler: &mut ParamSampler,
    n: usize,
    cfg: &SimConfig,
) -> Result<TaskDataset> {
    if n == 0 {
        return Err(Error::Config("dataset size must be at least 1".into()));
    }
    let mixture = Some(process.current().clone());
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let params = sampler.next_params();
        let hole = process.sample_hole();
        records.push(simulate(&params, hole, cfg));
        process.advance();
    }
    Ok(TaskDataset {
        kind: sampler.kind(),
        mixture,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_time_is_continuous_and_monotone() {
        for &(total, v, acc) in &[(100.0, 20.0, 200.0), (1.0, 20.0, 200.0), (2.0, 20.0, 200.0)] {
            let mut prev = -1.0;
            for i in 0..=1000 {
                let s = total * i as f64 / 1000.0;
                let t = profile_time(s, total, v, acc);
                assert!(t > prev - 1e-12);
                assert!(t - prev.max(0.0) < 0.05 || i == 0);
                prev = t;
            }
        }
    }

    #[test]
    fn spiral_path_steps_are_bounded() {
        let p = SpiralParams {
            center: [1.0, -1.0],
            orientation: 0.4,
            extents: [9.0, 3.0],
            windings: 7.5,
            velocity: 20.0,
            acceleration: 200.0,
        };
        let path = SpiralPath::new(&p, 0.125);
        for w in path.arc.windows(2) {
            assert!(w[1] - w[0] <= 0.125 + 1e-12);
        }
        let end = spiral_point(&p, 2.0 * std::f64::consts::PI * 7.5);
        assert_eq!(path.points[path.points.len() - 1], end);
    }
}
