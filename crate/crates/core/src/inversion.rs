//! Gradient descent on strategy parameters through a frozen shadow model.

use std::rc::Rc;

use adgraph::{Adam, AdamConfig, Tape, Tensor, Var};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::params::{StrategyKind, StrategyParams, PROBE_POINTS};
use crate::rng::stream_rng;
use crate::shadow::ShadowModel;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularizer {
    None,
    /// `λ·‖u − u₀‖₁` in normalized coordinates.
    Init { lambda: f64 },
    /// `λ·max(0, d_target − smoothmin_τ pairwise touch-point distance)`.
    Cdist { lambda: f64, d_target: f64, tau: f64 },
}

impl Regularizer {
    pub fn init_default() -> Self {
        Regularizer::Init { lambda: 0.05 }
    }

    pub fn cdist_default() -> Self {
        Regularizer::Cdist {
            lambda: 0.5,
            d_target: 2.0,
            tau: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub alpha_cycle: f64,
    pub alpha_fail: f64,
    pub regularizer: Regularizer,
}

impl Default for Objective {
    fn default() -> Self {
        Self {
            alpha_cycle: 0.02,
            alpha_fail: 1.0,
            regularizer: Regularizer::None,
        }
    }
}

impl Objective {
    pub fn with_regularizer(mut self, r: Regularizer) -> Self {
        self.regularizer = r;
        self
    }

    pub fn validate(&self, kind: StrategyKind) -> Result<()> {
        if !(self.alpha_cycle >= 0.0 && self.alpha_fail >= 0.0) || self.alpha_cycle + self.alpha_fail <= 0.0 {
            return Err(Error::Config("objective weights must be nonnegative and not both zero".into()));
        }
        match self.regularizer {
            Regularizer::None => Ok(()),
            Regularizer::Init { lambda } if lambda >= 0.0 => Ok(()),
            Regularizer::Cdist { lambda, d_target, tau } if lambda >= 0.0 && d_target >= 0.0 && tau > 0.0 => {
                if kind != StrategyKind::Probe {
                    return Err(Error::Contract("the pairwise-distance regularizer applies to probe search only".into()));
                }
                Ok(())
            }
            r => Err(Error::Config(format!("invalid regularizer {r:?}"))),
        }
    }

    /// Scalarized loss of predicted metrics, without regularizer.
    pub fn scalarize(&self, fail: f64, cycle: f64) -> f64 {
        self.alpha_cycle * cycle + self.alpha_fail * fail
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InversionConfig {
    pub steps: usize,
    pub lr: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            steps: 400,
            lr: 0.01,
            restarts: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionResult {
    pub params: StrategyParams,
    /// Total loss of the chosen restart at every step (before each update).
    pub loss_trace: Vec<f64>,
    pub restart: usize,
    /// Best total loss reached by each restart.
    pub restart_losses: Vec<f64>,
    pub total_loss: f64,
    pub predicted_fail: f64,
    pub predicted_cycle: f64,
}

/// `‖x − x₀‖₁` in normalized coordinates.
pub fn reg_init(model: &ShadowModel, x: &StrategyParams, x0: &StrategyParams) -> Result<f64> {
    let u = model.bounds().normalize(&x.to_vec())?;
    let u0 = model.bounds().normalize(&x0.to_vec())?;
    Ok(u.iter().zip(&u0).map(|(a, b)| (a - b).abs()).sum())
}

/// Pairs `(later, earlier)` over 16 touch points.
fn point_pairs() -> (Rc<[usize]>, Rc<[usize]>) {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for i in 1..PROBE_POINTS {
        for j in 0..i {
            a.push(i);
            b.push(j);
        }
    }
    (a.into(), b.into())
}

/// `max(0, d_target − smoothmin_τ ‖p_j − p_k‖)` on the tape, for touch points
/// given as a `[16, 2]` tensor in millimetres.
pub fn reg_cdist_var(tape: &mut Tape, points: Var, d_target: f64, tau: f64) -> Result<Var> {
    let (a, b) = point_pairs();
    let pa = tape.gather_rows(points, a)?;
    let pb = tape.gather_rows(points, b)?;
    let d = tape.sub(pa, pb)?;
    let d = tape.square(d)?;
    let d = tape.sum_axis(d, 1)?;
    let d = tape.add_scalar(d, 1e-12)?;
    let d = tape.sqrt(d)?;
    let m = tape.smooth_min(d, tau)?;
    let gap = tape.neg(m)?;
    let gap = tape.add_scalar(gap, d_target)?;
    Ok(tape.clamp_min(gap, 0.0)?)
}

pub fn reg_cdist(x: &StrategyParams, d_target: f64, tau: f64) -> Result<f64> {
    let p = x
        .as_probe()
        .ok_or_else(|| Error::Contract("the pairwise-distance regularizer applies to probe search only".into()))?;
    let mut tape = Tape::new();
    let pts = tape.constant(Tensor::new(&[PROBE_POINTS, 2], p.to_vec())?);
    let r = reg_cdist_var(&mut tape, pts, d_target, tau)?;
    Ok(tape.scalar_value(r))
}

/// Smooth-min pairwise distance of a probe pattern (mm).
pub fn smooth_min_distance(x: &StrategyParams, tau: f64) -> Result<f64> {
    let p = x.as_probe().ok_or_else(|| Error::Contract("probe parameters required".into()))?;
    let mut d = Vec::new();
    for i in 1..PROBE_POINTS {
        for j in 0..i {
            d.push((p.points[i][0] - p.points[j][0]).hypot(p.points[i][1] - p.points[j][1]));
        }
    }
    let m = d.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(m - tau * d.iter().map(|v| (-(v - m) / tau).exp()).sum::<f64>().ln())
}

/// Per-row losses built on the tape for a batch of normalized inputs.
struct Evaluated {
    sum: Var,
    fail: Var,
    cycle: Var,
    reg: Vec<f64>,
}

fn evaluate(
    model: &ShadowModel,
    tape: &mut Tape,
    w: &[Var],
    u: Var,
    obj: &Objective,
    u0: &[f64],
) -> Result<Evaluated> {
    let rows = tape.value(u).dims2().0;
    let f = model.forward(tape, w, u)?;
    let fail = model.fail_var(tape, &f)?;
    let cycle = model.cycle_var(tape, &f)?;
    let cf = tape.scale(cycle, obj.alpha_cycle)?;
    let ff = tape.scale(fail, obj.alpha_fail)?;
    let both = tape.add(cf, ff)?;
    let mut sum = tape.sum(both)?;
    let mut reg = vec![0.0; rows];
    match obj.regularizer {
        Regularizer::None => {}
        Regularizer::Init { lambda } => {
            let anchor = Tensor::from_rows(&vec![u0.to_vec(); rows])?;
            let anchor = tape.constant(anchor);
            let d = tape.sub(u, anchor)?;
            let l1 = tape.l1_norm(d)?;
            let l1 = tape.scale(l1, lambda)?;
            sum = tape.add(sum, l1)?;
            let uv = tape.value(u).clone();
            for (r, slot) in reg.iter_mut().enumerate() {
                *slot = lambda * (0..uv.dims2().1).map(|c| (uv.get2(r, c) - u0[c]).abs()).sum::<f64>();
            }
        }
        Regularizer::Cdist { lambda, d_target, tau } => {
            let h = model.sim().region.half_extent;
            for (r, slot) in reg.iter_mut().enumerate() {
                let row = tape.slice(u, 0, r, 1)?;
                let pts = tape.reshape(row, &[PROBE_POINTS, 2])?;
                let pts = tape.scale(pts, h)?;
                let hinge = reg_cdist_var(tape, pts, d_target, tau)?;
                let hinge = tape.scale(hinge, lambda)?;
                *slot = tape.scalar_value(hinge);
                sum = tape.add(sum, hinge)?;
            }
        }
    }
    Ok(Evaluated { sum, fail, cycle, reg })
}

/// Predicted fail, cycle and total loss of `x` under `obj`.
pub fn evaluate_params(model: &ShadowModel, x: &StrategyParams, x0: &StrategyParams, obj: &Objective) -> Result<(f64, f64, f64)> {
    let u = model.normalize(x)?;
    let u0 = model.normalize(x0)?;
    let mut tape = Tape::new();
    let w = model.bind(&mut tape, false);
    let uv = tape.constant(Tensor::from_rows(&[u])?);
    let e = evaluate(model, &mut tape, &w, uv, obj, &u0)?;
    let fail = tape.value(e.fail).item();
    let cycle = tape.value(e.cycle).item();
    Ok((fail, cycle, obj.scalarize(fail, cycle) + e.reg[0]))
}

/// Total inversion loss and its gradient at normalized inputs `u`, with the
/// `L_init` anchor at normalized `u0`.
pub fn loss_and_input_grad(model: &ShadowModel, u: &[f64], u0: &[f64], obj: &Objective) -> Result<(f64, Vec<f64>)> {
    obj.validate(model.kind())?;
    let mut tape = Tape::new();
    let w = model.bind(&mut tape, false);
    let uv = tape.leaf(Tensor::from_rows(&[u.to_vec()])?);
    let e = evaluate(model, &mut tape, &w, uv, obj, u0)?;
    let total = tape.scalar_value(e.sum);
    let g = tape.backward(e.sum)?.wrt(uv);
    Ok((total, g.data().to_vec()))
}

pub fn invert(model: &ShadowModel, x_init: &StrategyParams, obj: &Objective, cfg: &InversionConfig) -> Result<InversionResult> {
    if x_init.kind() != model.kind() {
        return Err(Error::Contract(format!(
            "cannot invert a {} model from {} parameters",
            model.kind().name(),
            x_init.kind().name()
        )));
    }
    obj.validate(model.kind())?;
    if cfg.restarts == 0 {
        return Err(Error::Config("inversion needs at least one restart".into()));
    }
    if !(cfg.lr > 0.0) {
        return Err(Error::Config("inversion step size must be positive".into()));
    }
    let dim = model.kind().dim();
    let u0 = model.normalize(x_init)?;
    let mut rng = stream_rng(cfg.seed, 30);
    let mut rows = vec![u0.clone()];
    for _ in 1..cfg.restarts {
        rows.push((0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect());
    }
    let r = rows.len();
    let mut u = Tensor::from_rows(&rows)?;
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), [&u]);
    let mut traces = vec![Vec::with_capacity(cfg.steps); r];
    let mut best: Vec<(f64, Vec<f64>, f64, f64)> = vec![(f64::INFINITY, Vec::new(), 0.0, 0.0); r];

    for step in 0..=cfg.steps {
        let mut tape = Tape::new();
        let w = model.bind(&mut tape, false);
        let uv = tape.leaf(u.clone());
        let e = evaluate(model, &mut tape, &w, uv, obj, &u0)?;
        let fail = tape.value(e.fail).data().to_vec();
        let cycle = tape.value(e.cycle).data().to_vec();
        for i in 0..r {
            let total = obj.scalarize(fail[i], cycle[i]) + e.reg[i];
            if !total.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite inversion loss at step {step}, restart {i} (fail {}, cycle {})",
                    fail[i], cycle[i]
                )));
            }
            if step < cfg.steps {
                traces[i].push(total);
            }
            if total < best[i].0 {
                best[i] = (total, (0..dim).map(|c| u.get2(i, c)).collect(), fail[i], cycle[i]);
            }
        }
        if step == cfg.steps {
            break;
        }
        let g = tape.backward(e.sum)?.wrt(uv);
        let mut params = [u];
        adam.step(&mut params, &[g])?;
        let [mut next] = params;
        for v in next.data_mut() {
            *v = v.clamp(-1.0, 1.0);
        }
        u = next;
    }

    let (pick, _) = best
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, b)| if b.0 < acc.1 { (i, b.0) } else { acc });
    let (total, ub, fail, cycle) = best[pick].clone();
    let mut x = model.bounds().denormalize(&ub)?;
    model.bounds().clamp(&mut x);
    Ok(InversionResult {
        params: StrategyParams::from_slice(model.kind(), &x)?,
        loss_trace: std::mem::take(&mut traces[pick]),
        restart: pick,
        restart_losses: best.iter().map(|b| b.0).collect(),
        total_loss: total,
        predicted_fail: fail,
        predicted_cycle: cycle,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoEntry {
    pub alpha_cycle: f64,
    pub alpha_fail: f64,
    pub result: InversionResult,
}

/// One inversion per `(α_cycle, α_fail)` weighting, sorted by predicted fail.
pub fn pareto_report(
    model: &ShadowModel,
    x_init: &StrategyParams,
    weightings: &[(f64, f64)],
    regularizer: Regularizer,
    cfg: &InversionConfig,
) -> Result<Vec<ParetoEntry>> {
    if weightings.is_empty() {
        return Err(Error::Config("pareto report needs at least one weighting".into()));
    }
    let mut out = weightings
        .iter()
        .map(|&(alpha_cycle, alpha_fail)| {
            let obj = Objective {
                alpha_cycle,
                alpha_fail,
                regularizer,
            };
            invert(model, x_init, &obj, cfg).map(|result| ParetoEntry {
                alpha_cycle,
                alpha_fail,
                result,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.result.predicted_fail.total_cmp(&b.result.predicted_fail));
    Ok(out)
}

/// Entries not strictly dominated in (predicted fail, predicted cycle).
pub fn pareto_front(entries: &[ParetoEntry]) -> Vec<ParetoEntry> {
    let dominates = |a: &InversionResult, b: &InversionResult| {
        a.predicted_fail <= b.predicted_fail
            && a.predicted_cycle <= b.predicted_cycle
            && (a.predicted_fail < b.predicted_fail || a.predicted_cycle < b.predicted_cycle)
    };
    entries
        .iter()
        .filter(|e| !entries.iter().any(|o| dominates(&o.result, &e.result)))
        .cloned()
        .collect()
}
