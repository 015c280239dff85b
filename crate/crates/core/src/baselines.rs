//! Comparison methods: fixed parameterizations, the PCA spiral fit, the GMM
//! probe fit and μ+λ NSGA-II.

use std::cmp::Ordering;
use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::{HolePose, HoleProcess};
use crate::inversion::Objective;
use crate::params::{
    ParamBounds, ProbeParams, SearchRegion, SpiralParams, StrategyKind, StrategyParams, NOMINAL_ACCELERATION,
    NOMINAL_VELOCITY, PROBE_POINTS,
};
use crate::rng::{stream_rng, Rng};
use crate::sim::{Executor, SimConfig, TaskDataset};
use crate::{Error, Result};

/// Human-style default: a 4×4 grid inset by the clearance, or a centred
/// spiral covering 90% of the region.
pub fn baseline_fixed(kind: StrategyKind, region: &SearchRegion) -> StrategyParams {
    match kind {
        StrategyKind::Probe => {
            let e = region.half_extent - region.clearance;
            let step = 2.0 * e / 3.0;
            let mut pts = Vec::with_capacity(PROBE_POINTS);
            for row in 0..4 {
                for col in 0..4 {
                    pts.push([-e + step * col as f64, -e + step * row as f64]);
                }
            }
            StrategyParams::Probe(ProbeParams { points: pts })
        }
        StrategyKind::Spiral => StrategyParams::Spiral(SpiralParams {
            center: [0.0, 0.0],
            orientation: 0.0,
            extents: [0.9 * region.half_extent; 2],
            windings: 8.0,
            velocity: NOMINAL_VELOCITY,
            acceleration: NOMINAL_ACCELERATION,
        }),
    }
}

/// Sample mean and unbiased covariance of 2D points.
fn mean_cov(points: &[[f64; 2]]) -> ([f64; 2], [[f64; 2]; 2]) {
    let n = points.len() as f64;
    let m = points.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0] / n, a[1] + p[1] / n]);
    let mut c = [[0.0; 2]; 2];
    for p in points {
        let d = [p[0] - m[0], p[1] - m[1]];
        for i in 0..2 {
            for j in 0..2 {
                c[i][j] += d[i] * d[j] / (n - 1.0);
            }
        }
    }
    (m, c)
}

/// Eigenvalues (descending) and the angle of the leading eigenvector.
fn eig_sym2(c: &[[f64; 2]; 2]) -> (f64, f64, f64) {
    let (a, b, d) = (c[0][0], c[0][1], c[1][1]);
    let tr = 0.5 * (a + d);
    let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let angle = 0.5 * (2.0 * b).atan2(a - d);
    (tr + disc, (tr - disc).max(0.0), angle)
}

/// Spiral fitted to observed hole positions: centred on their mean, axes along
/// the principal components with semi-axes 2.5σ, and enough windings that the
/// pitch never exceeds the contact band width `2·clearance`.
pub fn baseline_pca_spiral(holes: &[HolePose], region: &SearchRegion) -> Result<SpiralParams> {
    if holes.len() < 2 {
        return Err(Error::Degenerate("PCA fit needs at least two hole positions".into()));
    }
    let pts: Vec<[f64; 2]> = holes.iter().map(HolePose::as_array).collect();
    let (m, c) = mean_cov(&pts);
    let (l1, l2, mut angle) = eig_sym2(&c);
    if !(l1 > 1e-12 * (1.0 + m[0] * m[0] + m[1] * m[1])) {
        return Err(Error::Degenerate("hole positions have zero covariance".into()));
    }
    if angle > FRAC_PI_2 {
        angle -= PI;
    } else if angle < -FRAC_PI_2 {
        angle += PI;
    }
    let bounds = ParamBounds::new(StrategyKind::Spiral, region);
    let a = (2.5 * l1.sqrt()).clamp(bounds.lo[3], bounds.hi[3]);
    let b = (2.5 * l2.sqrt()).clamp(bounds.lo[4], bounds.hi[4]);
    let windings = (a.max(b) / (2.0 * region.clearance)).ceil().clamp(bounds.lo[5], bounds.hi[5]);
    let h = region.half_extent;
    Ok(SpiralParams {
        center: [m[0].clamp(-h, h), m[1].clamp(-h, h)],
        orientation: angle,
        extents: [a, b],
        windings,
        velocity: NOMINAL_VELOCITY,
        acceleration: NOMINAL_ACCELERATION,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmConfig {
    pub components: usize,
    pub max_iter: usize,
    pub tol: f64,
    /// Scale matrix of the inverse-Wishart covariance prior (mm², isotropic).
    pub cov_floor: f64,
    pub seed: u64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            components: PROBE_POINTS,
            max_iter: 100,
            tol: 1e-6,
            cov_floor: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    pub weights: Vec<f64>,
    pub means: Vec<[f64; 2]>,
    pub covs: Vec<[[f64; 2]; 2]>,
    /// Penalized log-likelihood after every iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

fn log_normal2(p: [f64; 2], m: [f64; 2], c: &[[f64; 2]; 2]) -> f64 {
    let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
    let (dx, dy) = (p[0] - m[0], p[1] - m[1]);
    let q = (c[1][1] * dx * dx - 2.0 * c[0][1] * dx * dy + c[0][0] * dy * dy) / det;
    -(2.0 * PI).ln() - 0.5 * det.ln() - 0.5 * q
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// k-means++ seeding: first centre uniform, later ones with probability
/// proportional to squared distance to the nearest chosen centre.
fn kmeans_pp(points: &[[f64; 2]], k: usize, rng: &mut Rng) -> Vec<[f64; 2]> {
    let d2 = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    let mut near: Vec<f64> = points.iter().map(|p| d2(*p, centers[0])).collect();
    while centers.len() < k {
        let total: f64 = near.iter().sum();
        let idx = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, w) in near.iter().enumerate() {
                if u < *w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[idx];
        centers.push(c);
        for (n, p) in near.iter_mut().zip(points) {
            *n = n.min(d2(*p, c));
        }
    }
    centers
}

/// EM for a full-covariance Gaussian mixture with an inverse-Wishart prior on
/// each covariance (`Σ_k = (S_k + εI) / (N_k + 1)`), which keeps components
/// non-singular when points coincide. The penalized log-likelihood it
/// maximizes is non-decreasing across iterations; this is asserted.
pub fn fit_gmm(points: &[[f64; 2]], cfg: &GmmConfig) -> Result<GmmFit> {
    let k = cfg.components;
    if points.len() < k || k == 0 {
        return Err(Error::InsufficientData(format!(
            "GMM with {k} components needs at least {k} points, got {}",
            points.len()
        )));
    }
    let n = points.len();
    let eps = cfg.cov_floor;
    let mut rng = stream_rng(cfg.seed, 40);
    let mut means = kmeans_pp(points, k, &mut rng);
    let (_, global) = mean_cov(points);
    let init_var = 0.5 * (global[0][0] + global[1][1]) + eps;
    let mut covs = vec![[[init_var, 0.0], [0.0, init_var]]; k];
    let mut weights = vec![1.0 / k as f64; k];
    let mut trace: Vec<f64> = Vec::new();
    let mut resp = vec![0.0; n * k];
    let mut iterations = 0;

    // log p(Σ) up to a constant for the prior matching the M-step above.
    let log_prior = |covs: &[[[f64; 2]; 2]]| -> f64 {
        covs.iter()
            .map(|c| {
                let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
                let tr_inv = (c[0][0] + c[1][1]) / det;
                -0.5 * det.ln() - 0.5 * eps * tr_inv
            })
            .sum()
    };

    for it in 0..cfg.max_iter {
        // E-step.
        let mut ll = 0.0;
        let mut row = vec![0.0; k];
        for (i, p) in points.iter().enumerate() {
            for j in 0..k {
                row[j] = weights[j].ln() + log_normal2(*p, means[j], &covs[j]);
            }
            let lse = log_sum_exp(&row);
            ll += lse;
            for j in 0..k {
                resp[i * k + j] = (row[j] - lse).exp();
            }
        }
        let objective = ll + log_prior(&covs);
        if let Some(prev) = trace.last() {
            let slack = 1e-9 * prev.abs().max(1.0);
            assert!(
                objective >= prev - slack,
                "EM objective decreased from {prev} to {objective} at iteration {it}"
            );
        }
        trace.push(objective);
        iterations = trace.len();
        if trace.len() >= 2 && (objective - trace[trace.len() - 2]).abs() < cfg.tol {
            break;
        }
        // M-step.
        for j in 0..k {
            let nk: f64 = (0..n).map(|i| resp[i * k + j]).sum();
            weights[j] = nk / n as f64;
            if nk <= 0.0 {
                covs[j] = [[eps, 0.0], [0.0, eps]];
                continue;
            }
            let m = (0..n).fold([0.0, 0.0], |a, i| {
                let r = resp[i * k + j];
                [a[0] + r * points[i][0], a[1] + r * points[i][1]]
            });
            let m = [m[0] / nk, m[1] / nk];
            let mut s = [[eps, 0.0], [0.0, eps]];
            for (i, p) in points.iter().enumerate() {
                let r = resp[i * k + j];
                let d = [p[0] - m[0], p[1] - m[1]];
                for a in 0..2 {
                    for b in 0..2 {
                        s[a][b] += r * d[a] * d[b];
                    }
                }
            }
            for row in &mut s {
                for v in row.iter_mut() {
                    *v /= nk + 1.0;
                }
            }
            means[j] = m;
            covs[j] = s;
        }
        // Components that lost all responsibility keep zero weight; guard logs.
        for w in &mut weights {
            *w = w.max(1e-300);
        }
    }
    Ok(GmmFit {
        weights,
        means,
        covs,
        objective_trace: trace,
        iterations,
    })
}

/// Hole positions of the successful records (where the pins dropped).
pub fn success_locations(records: &TaskDataset) -> Vec<[f64; 2]> {
    records
        .records
        .iter()
        .filter(|r| r.success)
        .map(|r| r.hole.as_array())
        .collect()
}

/// Touch points at the means of a 16-component GMM fitted to the observed
/// contact locations of successful executions, probed in order of weight.
pub fn baseline_gmm_probe(records: &TaskDataset, region: &SearchRegion, cfg: &GmmConfig) -> Result<ProbeParams> {
    if records.kind != StrategyKind::Probe {
        return Err(Error::Contract("GMM heuristic needs probe-search records".into()));
    }
    let pts = success_locations(records);
    if pts.len() < PROBE_POINTS {
        return Err(Error::InsufficientData(format!(
            "GMM heuristic needs {PROBE_POINTS} successful executions, got {}",
            pts.len()
        )));
    }
    let fit = fit_gmm(&pts, &GmmConfig { components: PROBE_POINTS, ..*cfg })?;
    let mut order: Vec<usize> = (0..PROBE_POINTS).collect();
    order.sort_by(|&a, &b| fit.weights[b].total_cmp(&fit.weights[a]));
    let h = region.half_extent;
    ProbeParams::new(
        order
            .iter()
            .map(|&j| [fit.means[j][0].clamp(-h, h), fit.means[j][1].clamp(-h, h)])
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nsga2Config {
    pub mu: usize,
    pub lambda: usize,
    /// Total simulator executions allowed.
    pub budget: usize,
    pub evals_per_individual: usize,
    pub eta_c: f64,
    pub eta_m: f64,
    pub p_crossover: f64,
    pub seed: u64,
}

impl Nsga2Config {
    pub fn spiral_preset() -> Self {
        Self {
            mu: 25,
            lambda: 25,
            budget: 250,
            evals_per_individual: 1,
            eta_c: 15.0,
            eta_m: 20.0,
            p_crossover: 0.9,
            seed: 0,
        }
    }

    pub fn probe_preset() -> Self {
        Self {
            mu: 30,
            lambda: 30,
            budget: 300,
            ..Self::spiral_preset()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu < 2 || self.lambda < 2 || self.evals_per_individual == 0 {
            return Err(Error::Config("NSGA-II needs mu, lambda ≥ 2 and at least one evaluation".into()));
        }
        if self.budget < self.mu * self.evals_per_individual {
            return Err(Error::Config(format!(
                "budget {} cannot evaluate the initial population of {} ({} executions each)",
                self.budget, self.mu, self.evals_per_individual
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub params: Vec<f64>,
    /// `[fail estimate, cycle estimate]`.
    pub objectives: [f64; 2],
    pub rank: usize,
    pub crowding: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nsga2Result {
    pub best: Individual,
    pub front: Vec<Individual>,
    pub executions: usize,
    /// Best scalarized objective in the population after each generation.
    pub history: Vec<f64>,
}

impl Nsga2Result {
    pub fn best_params(&self, kind: StrategyKind) -> Result<StrategyParams> {
        StrategyParams::from_slice(kind, &self.best.params)
    }
}

pub fn dominates(a: &[f64; 2], b: &[f64; 2]) -> bool {
    a[0] <= b[0] && a[1] <= b[1] && (a[0] < b[0] || a[1] < b[1])
}

/// Fast non-dominated sorting; returns the rank (0 = first front) of each point.
pub fn non_dominated_sort(objs: &[[f64; 2]]) -> Vec<usize> {
    let n = objs.len();
    let mut dominated_by = vec![0usize; n];
    let mut dominating: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i != j && dominates(&objs[i], &objs[j]) {
                dominating[i].push(j);
            } else if i != j && dominates(&objs[j], &objs[i]) {
                dominated_by[i] += 1;
            }
        }
    }
    let mut rank = vec![0usize; n];
    let mut front: Vec<usize> = (0..n).filter(|&i| dominated_by[i] == 0).collect();
    let mut r = 0;
    while !front.is_empty() {
        let mut next = Vec::new();
        for &i in &front {
            rank[i] = r;
            for &j in &dominating[i] {
                dominated_by[j] -= 1;
                if dominated_by[j] == 0 {
                    next.push(j);
                }
            }
        }
        front = next;
        r += 1;
    }
    rank
}

/// Crowding distance of each member of one front; extremes get `+∞`.
pub fn crowding_distance(objs: &[[f64; 2]]) -> Vec<f64> {
    let n = objs.len();
    let mut d = vec![0.0; n];
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    for m in 0..2 {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| objs[a][m].total_cmp(&objs[b][m]));
        let (lo, hi) = (objs[idx[0]][m], objs[idx[n - 1]][m]);
        d[idx[0]] = f64::INFINITY;
        d[idx[n - 1]] = f64::INFINITY;
        if hi > lo {
            for w in 1..n - 1 {
                d[idx[w]] += (objs[idx[w + 1]][m] - objs[idx[w - 1]][m]) / (hi - lo);
            }
        }
    }
    d
}

fn assign_rank_crowding(pop: &mut [Individual]) {
    let objs: Vec<[f64; 2]> = pop.iter().map(|i| i.objectives).collect();
    let ranks = non_dominated_sort(&objs);
    let max_rank = ranks.iter().copied().max().unwrap_or(0);
    for r in 0..=max_rank {
        let members: Vec<usize> = (0..pop.len()).filter(|&i| ranks[i] == r).collect();
        let cd = crowding_distance(&members.iter().map(|&i| objs[i]).collect::<Vec<_>>());
        for (&i, c) in members.iter().zip(cd) {
            pop[i].rank = r;
            pop[i].crowding = c;
        }
    }
}

fn better(a: &Individual, b: &Individual) -> bool {
    a.rank < b.rank || (a.rank == b.rank && a.crowding > b.crowding)
}

/// μ+λ survivor selection by (rank, crowding). The individual with the best
/// scalarized objective is always retained.
fn select(mut pool: Vec<Individual>, mu: usize, obj: &Objective) -> Vec<Individual> {
    assign_rank_crowding(&mut pool);
    let score = |i: &Individual| obj.scalarize(i.objectives[0], i.objectives[1]);
    let elite = (0..pool.len())
        .min_by(|&a, &b| score(&pool[a]).total_cmp(&score(&pool[b])))
        .expect("non-empty pool");
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    idx.sort_by(|&a, &b| {
        pool[a]
            .rank
            .cmp(&pool[b].rank)
            .then(pool[b].crowding.partial_cmp(&pool[a].crowding).unwrap_or(Ordering::Equal))
            .then(a.cmp(&b))
    });
    let mut keep: Vec<usize> = idx.into_iter().take(mu).collect();
    if !keep.contains(&elite) {
        *keep.last_mut().expect("mu ≥ 2") = elite;
    }
    keep.sort_unstable();
    let mut out: Vec<Individual> = keep.into_iter().map(|i| pool[i].clone()).collect();
    assign_rank_crowding(&mut out);
    out
}

/// Simulated binary crossover of two parents within `[lo, hi]`.
pub fn sbx(p1: &[f64], p2: &[f64], lo: &[f64], hi: &[f64], eta: f64, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    let mut c1 = p1.to_vec();
    let mut c2 = p2.to_vec();
    for i in 0..p1.len() {
        if rng.random::<f64>() > 0.5 || (p1[i] - p2[i]).abs() < 1e-14 {
            continue;
        }
        let (y1, y2) = if p1[i] < p2[i] { (p1[i], p2[i]) } else { (p2[i], p1[i]) };
        let (l, u) = (lo[i], hi[i]);
        let r = rng.random::<f64>();
        let child = |beta: f64| -> f64 {
            let alpha = 2.0 - beta.powf(-(eta + 1.0));
            if r <= 1.0 / alpha {
                (r * alpha).powf(1.0 / (eta + 1.0))
            } else {
                (1.0 / (2.0 - r * alpha)).powf(1.0 / (eta + 1.0))
            }
        };
        let bq1 = child(1.0 + 2.0 * (y1 - l) / (y2 - y1));
        let a = (0.5 * ((y1 + y2) - bq1 * (y2 - y1))).clamp(l, u);
        let bq2 = child(1.0 + 2.0 * (u - y2) / (y2 - y1));
        let b = (0.5 * ((y1 + y2) + bq2 * (y2 - y1))).clamp(l, u);
        if rng.random::<f64>() < 0.5 {
            c1[i] = b;
            c2[i] = a;
        } else {
            c1[i] = a;
            c2[i] = b;
        }
    }
    (c1, c2)
}

/// Polynomial mutation with per-variable probability `p`.
pub fn polynomial_mutation(x: &mut [f64], lo: &[f64], hi: &[f64], eta: f64, p: f64, rng: &mut Rng) {
    for i in 0..x.len() {
        if rng.random::<f64>() >= p {
            continue;
        }
        let (l, u) = (lo[i], hi[i]);
        let span = u - l;
        let d1 = (x[i] - l) / span;
        let d2 = (u - x[i]) / span;
        let r = rng.random::<f64>();
        let pw = 1.0 / (eta + 1.0);
        let dq = if r < 0.5 {
            let v = 2.0 * r + (1.0 - 2.0 * r) * (1.0 - d1).powf(eta + 1.0);
            v.powf(pw) - 1.0
        } else {
            let v = 2.0 * (1.0 - r) + 2.0 * (r - 0.5) * (1.0 - d2).powf(eta + 1.0);
            1.0 - v.powf(pw)
        };
        x[i] = (x[i] + dq * span).clamp(l, u);
    }
}

/// μ+λ NSGA-II on (failure rate, mean duration) estimated from simulator
/// executions against `process`. Every execution counts against the budget.
pub fn nsga2_optimize(
    kind: StrategyKind,
    process: &mut HoleProcess,
    cfg: &Nsga2Config,
    sim: &SimConfig,
    obj: &Objective,
) -> Result<Nsga2Result> {
    cfg.validate()?;
    let bounds = ParamBounds::new(kind, &sim.region);
    let mut rng = stream_rng(cfg.seed, 50);
    let mut executions = 0usize;
    let evals = cfg.evals_per_individual;
    let evaluate = |x: &[f64], process: &mut HoleProcess, executions: &mut usize| -> Result<[f64; 2]> {
        let params = StrategyParams::from_slice(kind, x)?;
        let exec = Executor::new(&params, sim);
        let (mut fails, mut dur) = (0.0, 0.0);
        for _ in 0..evals {
            let r = exec.run(process.sample_hole());
            process.advance();
            *executions += 1;
            fails += (!r.success) as u8 as f64;
            dur += r.duration;
        }
        Ok([fails / evals as f64, dur / evals as f64])
    };
    let mut pop = Vec::with_capacity(cfg.mu);
    for _ in 0..cfg.mu {
        let x = bounds.sample(&mut rng);
        let objectives = evaluate(&x, process, &mut executions)?;
        pop.push(Individual {
            params: x,
            objectives,
            rank: 0,
            crowding: 0.0,
        });
    }
    assign_rank_crowding(&mut pop);
    let score = |i: &Individual| obj.scalarize(i.objectives[0], i.objectives[1]);
    let best_score = |pop: &[Individual]| pop.iter().map(score).fold(f64::INFINITY, f64::min);
    let mut history = vec![best_score(&pop)];
    let p_mut = 1.0 / bounds.dim() as f64;

    while executions + evals <= cfg.budget {
        let room = (cfg.budget - executions) / evals;
        let n_off = cfg.lambda.min(room);
        let mut offspring = Vec::with_capacity(n_off);
        while offspring.len() < n_off {
            let mut tournament = || {
                let a = &pop[rng.random_range(0..pop.len())];
                let b = &pop[rng.random_range(0..pop.len())];
                if better(b, a) { b.clone() } else { a.clone() }
            };
            let (pa, pb) = (tournament(), tournament());
            let (mut c1, mut c2) = if rng.random::<f64>() < cfg.p_crossover {
                sbx(&pa.params, &pb.params, &bounds.lo, &bounds.hi, cfg.eta_c, &mut rng)
            } else {
                (pa.params.clone(), pb.params.clone())
            };
            polynomial_mutation(&mut c1, &bounds.lo, &bounds.hi, cfg.eta_m, p_mut, &mut rng);
            polynomial_mutation(&mut c2, &bounds.lo, &bounds.hi, cfg.eta_m, p_mut, &mut rng);
            for c in [c1, c2] {
                if offspring.len() < n_off {
                    let objectives = evaluate(&c, process, &mut executions)?;
                    offspring.push(Individual {
                        params: c,
                        objectives,
                        rank: 0,
                        crowding: 0.0,
                    });
                }
            }
        }
        let mut pool = pop;
        pool.extend(offspring);
        pop = select(pool, cfg.mu, obj);
        history.push(best_score(&pop));
    }

    let best = pop
        .iter()
        .min_by(|a, b| score(a).total_cmp(&score(b)))
        .cloned()
        .expect("population is non-empty");
    let front = pop.iter().filter(|i| i.rank == 0).cloned().collect();
    Ok(Nsga2Result {
        best,
        front,
        executions,
        history,
    })
}
