//! Differentiable surrogate ("shadow") of a search strategy.
//!
//! The model maps normalized strategy parameters to conditional hit logits
//! `z_k`: `sigmoid(z_k)` is the probability that step `k` finds the hole given
//! that steps `1..k−1` did not. Failure probability and expected duration are
//! closed-form functions of those logits, so both are differentiable with
//! respect to weights (training) and inputs (inversion) on the same tape.
//!
//! Two architectures are available:
//!
//! * [`Architecture::Dense`]: tanh MLP from the parameter vector straight to
//!   the 16 probe logits, or to a success logit and a softplus duration for
//!   spiral search.
//! * [`Architecture::Field`]: a tanh MLP over the plane giving a log hit mass
//!   at a location, combined with the strategy's geometry. Probe steps are the
//!   touch points, with mass already covered by earlier disks removed through
//!   their overlap fraction. Spiral steps are path segments, with mass scaled
//!   by segment length and by winding overlap. Every step of every record
//!   shares the one field, so evidence gathered at fixed touch points informs
//!   predictions wherever the field is smooth.

use std::rc::Rc;

use adgraph::{Tape, Tensor, Var};
use log::warn;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::params::{ParamBounds, StrategyKind, StrategyParams, PROBE_POINTS};
use crate::rng::stream_rng;
use crate::sim::{ExecutionRecord, SimConfig, Timing};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Dense,
    Field,
}

impl Architecture {
    fn code(self) -> u8 {
        match self {
            Architecture::Dense => 1,
            Architecture::Field => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            1 => Some(Architecture::Dense),
            2 => Some(Architecture::Field),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShadowConfig {
    pub architecture: Architecture,
    pub hidden: usize,
    pub depth: usize,
    /// Path segments of the spiral field model.
    pub segments: usize,
    /// Weight of the duration term in the dense spiral loss.
    pub lambda_tau: f64,
    pub seed: u64,
}

impl Default for ShadowConfig {
    fn default() -> Self {
        Self::field()
    }
}

impl ShadowConfig {
    pub fn dense() -> Self {
        Self {
            architecture: Architecture::Dense,
            hidden: 128,
            depth: 3,
            segments: 192,
            lambda_tau: 0.1,
            seed: 0,
        }
    }

    pub fn field() -> Self {
        Self {
            architecture: Architecture::Field,
            hidden: 32,
            ..Self::dense()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Provenance stored in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub tasks: u64,
    pub records_per_task: u64,
    pub seed: u64,
}

/// Outcome statistics predicted for one parameterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutcomeStats {
    /// Conditional hit probability of each probe.
    Probe { q: Vec<f64> },
    /// Success probability and expected duration ignoring the failure penalty.
    Spiral { p_success: f64, tau_search: f64 },
}

pub fn derived_fail(stats: &OutcomeStats) -> f64 {
    match stats {
        OutcomeStats::Probe { q } => q.iter().map(|qk| 1.0 - qk).product(),
        OutcomeStats::Spiral { p_success, .. } => 1.0 - p_success,
    }
}

pub fn derived_cycle(stats: &OutcomeStats, timing: &Timing) -> f64 {
    match stats {
        OutcomeStats::Probe { q } => {
            let mut survive = 1.0;
            let mut t = timing.t_setup;
            for qk in q {
                t += timing.t_probe * survive;
                survive *= 1.0 - qk;
            }
            t + survive * timing.t_fail
        }
        OutcomeStats::Spiral { p_success, tau_search } => tau_search + (1.0 - p_success) * timing.t_fail,
    }
}

/// Tape handles produced by one forward pass over a batch of `B` inputs.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    /// Conditional hit logits `[B, K]`.
    pub logits: Var,
    /// Field spiral: time (s, from motion start) at which each segment is reached `[B, K]`.
    pub seg_time: Option<Var>,
    /// Field spiral: time to traverse the whole path `[B, 1]`.
    pub full_time: Option<Var>,
    /// Dense spiral: predicted search duration `[B, 1]`.
    pub tau: Option<Var>,
    pub batch: usize,
}

/// Training targets for a batch of records.
#[derive(Debug, Clone)]
pub struct Batch {
    /// Normalized parameters `[B, dim]`.
    pub inputs: Tensor,
    /// 1 where a step hit `[B, K]`.
    pub hit: Tensor,
    /// 1 where a step was executed and missed `[B, K]`.
    pub miss: Tensor,
    pub success: Tensor,
    pub duration: Tensor,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.inputs.dims2().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShadowModel {
    kind: StrategyKind,
    config: ShadowConfig,
    bounds: ParamBounds,
    sim: SimConfig,
    weights: Vec<Tensor>,
    pub meta: TrainingMeta,
}

const DIST_EPS: f64 = 1e-6;
/// Keeps `log(1 − overlap)` finite for coincident touch points.
const OVERLAP_CAP: f64 = 1.0 - 1e-6;
/// Initial log-mass per touch point (probe) and per millimetre of path
/// (spiral), so a fresh model starts with a total hit mass below one.
const FIELD_BIAS_INIT_PROBE: f64 = -3.0;
const FIELD_BIAS_INIT_SPIRAL: f64 = -6.0;

impl ShadowModel {
    pub fn new(kind: StrategyKind, config: ShadowConfig, sim: &SimConfig) -> Result<Self> {
        if config.hidden == 0 || config.depth == 0 {
            return Err(Error::Config("shadow model needs at least one hidden layer".into()));
        }
        if kind == StrategyKind::Spiral && config.architecture == Architecture::Field && config.segments < 2 {
            return Err(Error::Config("spiral field model needs at least 2 segments".into()));
        }
        sim.region.validate()?;
        let bounds = ParamBounds::new(kind, &sim.region);
        let (input, output) = match (config.architecture, kind) {
            (Architecture::Dense, StrategyKind::Probe) => (kind.dim(), PROBE_POINTS),
            (Architecture::Dense, StrategyKind::Spiral) => (kind.dim(), 2),
            (Architecture::Field, _) => (2, 1),
        };
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat_n(config.hidden, config.depth));
        sizes.push(output);
        let mut rng = stream_rng(config.seed, 10);
        let mut weights = Vec::new();
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let data = (0..w[0] * w[1]).map(|_| rng.random_range(-bound..bound)).collect();
            weights.push(Tensor::new(&[w[0], w[1]], data)?);
            weights.push(Tensor::zeros(&[1, w[1]]));
        }
        if config.architecture == Architecture::Field {
            let last = weights.len() - 1;
            let b = match kind {
                StrategyKind::Probe => FIELD_BIAS_INIT_PROBE,
                StrategyKind::Spiral => FIELD_BIAS_INIT_SPIRAL,
            };
            weights[last] = Tensor::full(&[1, 1], b);
        }
        Ok(Self {
            kind,
            config,
            bounds,
            sim: *sim,
            weights,
            meta: TrainingMeta::default(),
        })
    }

    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    pub fn config(&self) -> &ShadowConfig {
        &self.config
    }

    pub fn bounds(&self) -> &ParamBounds {
        &self.bounds
    }

    pub fn sim(&self) -> &SimConfig {
        &self.sim
    }

    pub fn timing(&self) -> &Timing {
        &self.sim.timing
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn num_parameters(&self) -> usize {
        self.weights.iter().map(Tensor::len).sum()
    }

    pub fn set_weights(&mut self, weights: Vec<Tensor>) -> Result<()> {
        if weights.len() != self.weights.len()
            || weights.iter().zip(&self.weights).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Contract("weight shapes do not match the architecture".into()));
        }
        if weights.iter().any(|w| !w.all_finite()) {
            return Err(Error::Numeric("non-finite weights".into()));
        }
        self.weights = weights;
        Ok(())
    }

    /// Number of chained steps `K` per prediction.
    pub fn steps(&self) -> usize {
        match (self.kind, self.config.architecture) {
            (StrategyKind::Probe, _) => PROBE_POINTS,
            (StrategyKind::Spiral, Architecture::Dense) => 1,
            (StrategyKind::Spiral, Architecture::Field) => self.config.segments,
        }
    }

    /// Weights as tape leaves (`trainable`) or constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.weights
            .iter()
            .map(|w| if trainable { tape.leaf(w.clone()) } else { tape.constant(w.clone()) })
            .collect()
    }

    fn mlp(&self, tape: &mut Tape, w: &[Var], input: Var) -> Result<Var> {
        let mut h = input;
        let n = w.len() / 2;
        for i in 0..n {
            h = tape.affine(h, w[2 * i], w[2 * i + 1])?;
            if i + 1 < n {
                h = tape.tanh(h)?;
            }
        }
        Ok(h)
    }

    /// Forward pass on normalized inputs `u` of shape `[B, dim]`.
    pub fn forward(&self, tape: &mut Tape, w: &[Var], u: Var) -> Result<Forward> {
        if w.len() != self.weights.len() {
            return Err(Error::Contract("wrong number of weight handles".into()));
        }
        let shape = tape.value(u).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.kind.dim() {
            return Err(Error::Contract(format!(
                "{} model expects inputs [B, {}], got {:?}",
                self.kind.name(),
                self.kind.dim(),
                shape
            )));
        }
        let batch = shape[0];
        let none = Forward {
            logits: u,
            seg_time: None,
            full_time: None,
            tau: None,
            batch,
        };
        match (self.config.architecture, self.kind) {
            (Architecture::Dense, StrategyKind::Probe) => {
                let logits = self.mlp(tape, w, u)?;
                Ok(Forward { logits, ..none })
            }
            (Architecture::Dense, StrategyKind::Spiral) => {
                let h = self.mlp(tape, w, u)?;
                let logits = tape.slice(h, 1, 0, 1)?;
                let raw = tape.slice(h, 1, 1, 1)?;
                let tau = tape.softplus(raw)?;
                Ok(Forward {
                    logits,
                    tau: Some(tau),
                    ..none
                })
            }
            (Architecture::Field, StrategyKind::Probe) => self.probe_field(tape, w, u, batch),
            (Architecture::Field, StrategyKind::Spiral) => self.spiral_field(tape, w, u, batch),
        }
    }

    fn probe_field(&self, tape: &mut Tape, w: &[Var], u: Var, batch: usize) -> Result<Forward> {
        let k = PROBE_POINTS;
        let h = self.sim.region.half_extent;
        let c = self.sim.region.clearance;
        // Probe bounds are the symmetric region box, so normalized inputs are
        // already coordinates scaled by 1/h.
        let pts = tape.reshape(u, &[batch * k, 2])?;
        let field = self.mlp(tape, w, pts)?;
        let (later, earlier) = pair_indices(batch, k);
        let a = tape.gather_rows(pts, later.clone())?;
        let b = tape.gather_rows(pts, earlier)?;
        let diff = tape.sub(a, b)?;
        let sq = tape.square(diff)?;
        let d2 = tape.sum_axis(sq, 1)?;
        let d2 = tape.scale(d2, h * h)?;
        let d2 = tape.add_scalar(d2, DIST_EPS * DIST_EPS)?;
        let d = tape.sqrt(d2)?;
        let t = tape.scale(d, 1.0 / (2.0 * c))?;
        let overlap = tape.disk_overlap(t)?;
        let keep = tape.scale(overlap, -OVERLAP_CAP)?;
        let keep = tape.add_scalar(keep, 1.0)?;
        let log_keep = tape.log(keep)?;
        let removed = tape.scatter_add_rows(log_keep, later, batch * k)?;
        let l = tape.add(field, removed)?;
        let l = tape.reshape(l, &[batch, k])?;
        let logits = tape.hazard_chain(l)?;
        Ok(Forward {
            logits,
            seg_time: None,
            full_time: None,
            tau: None,
            batch,
        })
    }

    fn spiral_field(&self, tape: &mut Tape, w: &[Var], u: Var, batch: usize) -> Result<Forward> {
        let k = self.config.segments;
        let h = self.sim.region.half_extent;
        let c = self.sim.region.clearance;
        let two_pi = 2.0 * std::f64::consts::PI;

        let hw = Tensor::from_rows(&vec![self.bounds.half_widths(); batch])?;
        let ctr = Tensor::from_rows(&vec![self.bounds.centers(); batch])?;
        let hw = tape.constant(hw);
        let ctr = tape.constant(ctr);
        let x = tape.mul(u, hw)?;
        let x = tape.add(x, ctr)?;
        let mut col = |i: usize| tape.slice(x, 1, i, 1);
        let (cx, cy, phi, a, b, n, v, acc) = (col(0)?, col(1)?, col(2)?, col(3)?, col(4)?, col(5)?, col(6)?, col(7)?);

        let frac: Vec<f64> = (0..=k).map(|i| i as f64 / k as f64).collect();
        let mid: Vec<f64> = (0..k).map(|i| (i as f64 + 0.5) / k as f64).collect();
        let row = |tape: &mut Tape, v: &[f64], s: f64| tape.constant(Tensor::row(&v.iter().map(|x| x * s).collect::<Vec<_>>()));
        let u_frac = row(tape, &frac, 1.0);
        let u_theta = row(tape, &frac, two_pi);
        let m_theta = row(tape, &mid, two_pi);
        let ones_b = tape.constant(Tensor::ones(&[1, k + 1]));
        let ones_k = tape.constant(Tensor::ones(&[1, k]));

        // Path vertices at the K + 1 segment boundaries.
        let theta = tape.matmul(n, u_theta)?;
        let ra = tape.matmul(a, u_frac)?;
        let rb = tape.matmul(b, u_frac)?;
        let ct = tape.cos(theta)?;
        let st = tape.sin(theta)?;
        let lx = tape.mul(ra, ct)?;
        let ly = tape.mul(rb, st)?;
        let cphi = tape.cos(phi)?;
        let sphi = tape.sin(phi)?;
        let cphi = tape.matmul(cphi, ones_b)?;
        let sphi = tape.matmul(sphi, ones_b)?;
        let cxb = tape.matmul(cx, ones_b)?;
        let cyb = tape.matmul(cy, ones_b)?;
        let t1 = tape.mul(cphi, lx)?;
        let t2 = tape.mul(sphi, ly)?;
        let xs = tape.sub(t1, t2)?;
        let xs = tape.add(xs, cxb)?;
        let t3 = tape.mul(sphi, lx)?;
        let t4 = tape.mul(cphi, ly)?;
        let ys = tape.add(t3, t4)?;
        let ys = tape.add(ys, cyb)?;

        let x0 = tape.slice(xs, 1, 0, k)?;
        let x1 = tape.slice(xs, 1, 1, k)?;
        let y0 = tape.slice(ys, 1, 0, k)?;
        let y1 = tape.slice(ys, 1, 1, k)?;
        let dx = tape.sub(x1, x0)?;
        let dy = tape.sub(y1, y0)?;
        let dx2 = tape.square(dx)?;
        let dy2 = tape.square(dy)?;
        let ds2 = tape.add(dx2, dy2)?;
        let ds2 = tape.add_scalar(ds2, DIST_EPS * DIST_EPS)?;
        let ds = tape.sqrt(ds2)?;

        // Field at segment midpoints.
        let xm = tape.add(x0, x1)?;
        let ym = tape.add(y0, y1)?;
        let xm = tape.scale(xm, 0.5 / h)?;
        let ym = tape.scale(ym, 0.5 / h)?;
        let xm = tape.reshape(xm, &[batch * k, 1])?;
        let ym = tape.reshape(ym, &[batch * k, 1])?;
        let pts = tape.concat(&[xm, ym], 1)?;
        let field = self.mlp(tape, w, pts)?;
        let field = tape.reshape(field, &[batch, k])?;

        // Fraction of a segment's swept band not already swept by the
        // previous winding: smooth version of min(1, pitch / 2c).
        let tm = tape.matmul(n, m_theta)?;
        let ak = tape.matmul(a, ones_k)?;
        let bk = tape.matmul(b, ones_k)?;
        let cm = tape.cos(tm)?;
        let sm = tape.sin(tm)?;
        let ac = tape.mul(ak, cm)?;
        let bs = tape.mul(bk, sm)?;
        let ac2 = tape.square(ac)?;
        let bs2 = tape.square(bs)?;
        let rho2 = tape.add(ac2, bs2)?;
        let rho2 = tape.add_scalar(rho2, DIST_EPS * DIST_EPS)?;
        let log_rho = tape.log(rho2)?;
        let log_rho = tape.scale(log_rho, 0.5)?;
        let log_n = tape.log(n)?;
        let log_n = tape.matmul(log_n, ones_k)?;
        let log_ratio = tape.sub(log_rho, log_n)?;
        let log_ratio = tape.add_scalar(log_ratio, -(2.0 * c).ln())?;
        let sp = tape.softplus(log_ratio)?;
        let log_cover = tape.sub(log_ratio, sp)?;

        let log_ds = tape.log(ds)?;
        let l = tape.add(field, log_ds)?;
        let l = tape.add(l, log_cover)?;
        let logits = tape.hazard_chain(l)?;

        // Cruise-phase arrival times t(s) = s/v + v/(2·acc); full path L/v + v/acc.
        let upper = tape.constant(upper_triangular(k));
        let s_end = tape.matmul(ds, upper)?;
        let half = tape.scale(ds, 0.5)?;
        let s_mid = tape.sub(s_end, half)?;
        let vk = tape.matmul(v, ones_k)?;
        let acck = tape.matmul(acc, ones_k)?;
        let travel = tape.div(s_mid, vk)?;
        let ramp = tape.div(vk, acck)?;
        let ramp = tape.scale(ramp, 0.5)?;
        let seg_time = tape.add(travel, ramp)?;
        let length = tape.sum_axis(ds, 1)?;
        let cruise = tape.div(length, v)?;
        let ramps = tape.div(v, acc)?;
        let full_time = tape.add(cruise, ramps)?;
        Ok(Forward {
            logits,
            seg_time: Some(seg_time),
            full_time: Some(full_time),
            tau: None,
            batch,
        })
    }

    /// Log-survival `log S_k` after each step, `[B, K]`.
    fn log_survival(&self, tape: &mut Tape, f: &Forward) -> Result<Var> {
        let k = tape.value(f.logits).dims2().1;
        let sp = tape.softplus(f.logits)?;
        let cum = if k == 1 {
            sp
        } else {
            let upper = tape.constant(upper_triangular(k));
            tape.matmul(sp, upper)?
        };
        Ok(tape.neg(cum)?)
    }

    /// Failure probability per row, `[B, 1]`.
    pub fn fail_var(&self, tape: &mut Tape, f: &Forward) -> Result<Var> {
        let k = tape.value(f.logits).dims2().1;
        let ls = self.log_survival(tape, f)?;
        let last = tape.slice(ls, 1, k - 1, 1)?;
        Ok(tape.exp(last)?)
    }

    /// Expected duration including the failure penalty, `[B, 1]`.
    pub fn cycle_var(&self, tape: &mut Tape, f: &Forward) -> Result<Var> {
        let t = self.sim.timing;
        let k = tape.value(f.logits).dims2().1;
        let ls = self.log_survival(tape, f)?;
        let surv = tape.exp(ls)?;
        let fail = tape.slice(surv, 1, k - 1, 1)?;
        let penalty = tape.scale(fail, t.t_fail)?;
        match (self.kind, f.tau, f.seg_time, f.full_time) {
            (StrategyKind::Probe, ..) => {
                let before = tape.slice(surv, 1, 0, k - 1)?;
                let probes = tape.sum_axis(before, 1)?;
                let probes = tape.add_scalar(probes, 1.0)?;
                let probes = tape.scale(probes, t.t_probe)?;
                let total = tape.add(probes, penalty)?;
                Ok(tape.add_scalar(total, t.t_setup)?)
            }
            (StrategyKind::Spiral, Some(tau), ..) => Ok(tape.add(tau, penalty)?),
            (StrategyKind::Spiral, None, Some(seg_time), Some(full_time)) => {
                let tau = self.field_tau(tape, surv, seg_time, full_time, f.batch, k)?;
                Ok(tape.add(tau, penalty)?)
            }
            _ => Err(Error::Contract("forward pass lacks timing outputs".into())),
        }
    }

    /// `t_setup + Σ_k P(hit at k)·t_k + S_K·T_full`.
    fn field_tau(&self, tape: &mut Tape, surv: Var, seg_time: Var, full_time: Var, batch: usize, k: usize) -> Result<Var> {
        let ones = tape.constant(Tensor::ones(&[batch, 1]));
        let head = tape.slice(surv, 1, 0, k - 1)?;
        let prev = tape.concat(&[ones, head], 1)?;
        let p_hit = tape.sub(prev, surv)?;
        let weighted = tape.mul(p_hit, seg_time)?;
        let hit_time = tape.sum_axis(weighted, 1)?;
        let fail = tape.slice(surv, 1, k - 1, 1)?;
        let fail_time = tape.mul(fail, full_time)?;
        let tau = tape.add(hit_time, fail_time)?;
        Ok(tape.add_scalar(tau, self.sim.timing.t_setup)?)
    }

    /// Converts physical parameters to normalized model inputs, clamping
    /// out-of-bounds values with a warning.
    pub fn normalize(&self, x: &StrategyParams) -> Result<Vec<f64>> {
        if x.kind() != self.kind {
            return Err(Error::Contract(format!(
                "{} parameters given to a {} model",
                x.kind().name(),
                self.kind.name()
            )));
        }
        let mut v = x.to_vec();
        if !self.bounds.contains(&v) {
            warn!("parameters outside bounds were clamped before prediction");
            self.bounds.clamp(&mut v);
        }
        self.bounds.normalize(&v)
    }

    /// Predicted statistics for normalized inputs, one per row.
    pub fn predict_normalized(&self, rows: &[Vec<f64>]) -> Result<Vec<OutcomeStats>> {
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let w = self.bind(&mut tape, false);
        let u = tape.constant(Tensor::from_rows(rows)?);
        let f = self.forward(&mut tape, &w, u)?;
        let fail = self.fail_var(&mut tape, &f)?;
        let cycle = self.cycle_var(&mut tape, &f)?;
        let logits = tape.value(f.logits).clone();
        let (b, k) = logits.dims2();
        Ok((0..b)
            .map(|i| match self.kind {
                StrategyKind::Probe => OutcomeStats::Probe {
                    q: (0..k).map(|j| sigmoid(logits.get2(i, j))).collect(),
                },
                StrategyKind::Spiral => {
                    let pf = tape.value(fail).data()[i];
                    let cyc = tape.value(cycle).data()[i];
                    OutcomeStats::Spiral {
                        p_success: 1.0 - pf,
                        tau_search: cyc - pf * self.sim.timing.t_fail,
                    }
                }
            })
            .collect())
    }

    pub fn predict(&self, x: &StrategyParams) -> Result<OutcomeStats> {
        let u = self.normalize(x)?;
        Ok(self.predict_normalized(&[u])?.remove(0))
    }

    /// Training targets for a homogeneous, non-empty set of records.
    pub fn encode(&self, records: &[&ExecutionRecord]) -> Result<Batch> {
        if records.is_empty() {
            return Err(Error::Contract("empty training batch".into()));
        }
        let k = self.steps();
        let b = records.len();
        let mut inputs = Vec::with_capacity(b);
        let mut hit = vec![0.0; b * k];
        let mut miss = vec![0.0; b * k];
        let mut success = Vec::with_capacity(b);
        let mut duration = Vec::with_capacity(b);
        for (i, r) in records.iter().enumerate() {
            if r.kind() != self.kind {
                return Err(Error::Contract("batch mixes strategy kinds".into()));
            }
            let mut v = r.params.to_vec();
            self.bounds.clamp(&mut v);
            inputs.push(self.bounds.normalize(&v)?);
            let step = match (self.kind, k) {
                (StrategyKind::Probe, _) => r.hit_index(),
                (StrategyKind::Spiral, 1) => r.success.then_some(0),
                (StrategyKind::Spiral, _) => {
                    let sp = r.params.as_spiral().expect("kind checked");
                    r.contact_theta().map(|th| {
                        let frac = th / (2.0 * std::f64::consts::PI * sp.windings);
                        ((frac * k as f64).floor() as usize).min(k - 1)
                    })
                }
            };
            match step {
                Some(s) => {
                    miss[i * k..i * k + s].iter_mut().for_each(|m| *m = 1.0);
                    hit[i * k + s] = 1.0;
                }
                None => miss[i * k..(i + 1) * k].iter_mut().for_each(|m| *m = 1.0),
            }
            success.push(r.success as u8 as f64);
            duration.push(r.duration);
        }
        Ok(Batch {
            inputs: Tensor::from_rows(&inputs)?,
            hit: Tensor::new(&[b, k], hit)?,
            miss: Tensor::new(&[b, k], miss)?,
            success: Tensor::column(&success),
            duration: Tensor::column(&duration),
        })
    }

    /// Mean per-record loss of `batch` on the tape.
    pub fn loss_var(&self, tape: &mut Tape, w: &[Var], batch: &Batch) -> Result<Var> {
        let b = batch.len();
        let u = tape.constant(batch.inputs.clone());
        let f = self.forward(tape, w, u)?;
        let hit = tape.constant(batch.hit.clone());
        let miss = tape.constant(batch.miss.clone());
        let neg = tape.neg(f.logits)?;
        let lp = tape.softplus(neg)?;
        let lm = tape.softplus(f.logits)?;
        let a = tape.mul(hit, lp)?;
        let m = tape.mul(miss, lm)?;
        let terms = tape.add(a, m)?;
        let total = tape.sum(terms)?;
        let mut loss = tape.scale(total, 1.0 / b as f64)?;
        if let Some(tau) = f.tau {
            let target = tape.constant(batch.duration.clone());
            let mask = tape.constant(batch.success.clone());
            let err = tape.sub(tau, target)?;
            let se = tape.square(err)?;
            let se = tape.mul(se, mask)?;
            let se = tape.sum(se)?;
            let se = tape.scale(se, self.config.lambda_tau / b as f64)?;
            loss = tape.add(loss, se)?;
        }
        Ok(loss)
    }

    /// Loss value and weight gradients for one batch.
    pub fn loss_and_grad(&self, batch: &Batch) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let w = self.bind(&mut tape, true);
        let loss = self.loss_var(&mut tape, &w, batch)?;
        let g = tape.backward(loss)?;
        Ok((tape.scalar_value(loss), w.iter().map(|v| g.wrt(*v)).collect()))
    }

    pub fn loss(&self, records: &[&ExecutionRecord]) -> Result<f64> {
        let batch = self.encode(records)?;
        let mut tape = Tape::new();
        let w = self.bind(&mut tape, false);
        let loss = self.loss_var(&mut tape, &w, &batch)?;
        Ok(tape.scalar_value(loss))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        checkpoint::encode(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        checkpoint::decode(bytes)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `U[j, k] = 1` for `j ≤ k`, so `x·U` is a running sum along rows.
fn upper_triangular(k: usize) -> Tensor {
    let mut data = vec![0.0; k * k];
    for j in 0..k {
        for i in j..k {
            data[j * k + i] = 1.0;
        }
    }
    Tensor::new(&[k, k], data).expect("square")
}

/// Row indices `(later, earlier)` of every ordered point pair within each record.
fn pair_indices(batch: usize, k: usize) -> (Rc<[usize]>, Rc<[usize]>) {
    let mut later = Vec::with_capacity(batch * k * (k - 1) / 2);
    let mut earlier = Vec::with_capacity(later.capacity());
    for b in 0..batch {
        for i in 1..k {
            for j in 0..i {
                later.push(b * k + i);
                earlier.push(b * k + j);
            }
        }
    }
    (later.into(), earlier.into())
}

mod checkpoint {
    //! Layout (little-endian): magic, version u32, kind u8, architecture u8,
    //! hidden u32, depth u32, segments u32, λ_τ f64, init seed u64,
    //! half-extent f64, clearance f64, t_setup f64, t_probe f64, t_fail f64,
    //! layer count u32 then (rows u32, cols u32) per tensor, parameter
    //! dimension u32 then lower and upper bounds, tasks u64, records per task
    //! u64, training seed u64, then every weight as f64.

    use super::*;
    use crate::params::SearchRegion;

    pub const MAGIC: &[u8; 8] = b"DPSESHDW";
    pub const VERSION: u32 = 1;

    pub fn encode(m: &ShadowModel) -> Vec<u8> {
        let mut out = Vec::new();
        let f = |out: &mut Vec<u8>, v: f64| out.extend_from_slice(&v.to_le_bytes());
        let u32_ = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(m.kind.code());
        out.push(m.config.architecture.code());
        u32_(&mut out, m.config.hidden);
        u32_(&mut out, m.config.depth);
        u32_(&mut out, m.config.segments);
        f(&mut out, m.config.lambda_tau);
        out.extend_from_slice(&m.config.seed.to_le_bytes());
        f(&mut out, m.sim.region.half_extent);
        f(&mut out, m.sim.region.clearance);
        f(&mut out, m.sim.timing.t_setup);
        f(&mut out, m.sim.timing.t_probe);
        f(&mut out, m.sim.timing.t_fail);
        u32_(&mut out, m.weights.len());
        for w in &m.weights {
            let (r, c) = w.dims2();
            u32_(&mut out, r);
            u32_(&mut out, c);
        }
        u32_(&mut out, m.bounds.dim());
        for v in m.bounds.lo.iter().chain(&m.bounds.hi) {
            f(&mut out, *v);
        }
        out.extend_from_slice(&m.meta.tasks.to_le_bytes());
        out.extend_from_slice(&m.meta.records_per_task.to_le_bytes());
        out.extend_from_slice(&m.meta.seed.to_le_bytes());
        for w in &m.weights {
            for v in w.data() {
                f(&mut out, *v);
            }
        }
        out
    }

    struct Reader<'a> {
        b: &'a [u8],
        pos: usize,
    }

    impl<'a> Reader<'a> {
        fn take(&mut self, n: usize) -> Result<&'a [u8]> {
            if self.pos + n > self.b.len() {
                return Err(Error::Integrity("checkpoint is truncated".into()));
            }
            let s = &self.b[self.pos..self.pos + n];
            self.pos += n;
            Ok(s)
        }
        fn u8(&mut self) -> Result<u8> {
            Ok(self.take(1)?[0])
        }
        fn u32(&mut self) -> Result<usize> {
            Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
        }
        fn u64(&mut self) -> Result<u64> {
            Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
        }
        fn f64(&mut self) -> Result<f64> {
            Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<ShadowModel> {
        let corrupt = |m: &str| Error::Integrity(format!("corrupt checkpoint: {m}"));
        let mut r = Reader { b: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Integrity("not a shadow checkpoint (bad magic)".into()));
        }
        let version = r.u32()? as u32;
        if version != VERSION {
            return Err(Error::Integrity(format!(
                "checkpoint version {version} is not supported (expected {VERSION})"
            )));
        }
        let kind = StrategyKind::from_code(r.u8()?).ok_or_else(|| corrupt("strategy kind"))?;
        let architecture = Architecture::from_code(r.u8()?).ok_or_else(|| corrupt("architecture"))?;
        let hidden = r.u32()?;
        let depth = r.u32()?;
        let segments = r.u32()?;
        let lambda_tau = r.f64()?;
        let seed = r.u64()?;
        let region = SearchRegion {
            half_extent: r.f64()?,
            clearance: r.f64()?,
        };
        let timing = Timing {
            t_setup: r.f64()?,
            t_probe: r.f64()?,
            t_fail: r.f64()?,
        };
        let config = ShadowConfig {
            architecture,
            hidden,
            depth,
            segments,
            lambda_tau,
            seed,
        };
        let mut model = ShadowModel::new(kind, config, &SimConfig { region, timing }).map_err(|e| corrupt(&e.to_string()))?;
        let n = r.u32()?;
        if n != model.weights.len() {
            return Err(corrupt("layer count"));
        }
        let mut shapes = Vec::with_capacity(n);
        for w in &model.weights {
            let shape = (r.u32()?, r.u32()?);
            if shape != w.dims2() {
                return Err(corrupt("layer shape"));
            }
            shapes.push(shape);
        }
        let dim = r.u32()?;
        if dim != model.bounds.dim() {
            return Err(corrupt("parameter dimension"));
        }
        for i in 0..2 * dim {
            let v = r.f64()?;
            let expect = if i < dim { model.bounds.lo[i] } else { model.bounds.hi[i - dim] };
            if v.to_bits() != expect.to_bits() {
                return Err(corrupt("normalization constants"));
            }
        }
        model.meta = TrainingMeta {
            tasks: r.u64()?,
            records_per_task: r.u64()?,
            seed: r.u64()?,
        };
        let mut weights = Vec::with_capacity(n);
        for (rows, cols) in shapes {
            let data = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            weights.push(Tensor::new(&[rows, cols], data)?);
        }
        if r.pos != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        model.set_weights(weights).map_err(|e| corrupt(&e.to_string()))?;
        Ok(model)
    }
}
