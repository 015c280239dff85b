//! Hole-pose distributions and the processes that move them over time.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::{stream_rng, Rng};
use crate::{Error, Result};

/// A realized hole position in the XY-plane (mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolePose {
    pub x: f64,
    pub y: f64,
}

impl HolePose {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

/// Lower-triangular factor `[l11, l21, l22]` of a 2×2 SPD matrix.
fn cholesky(cov: &[[f64; 2]; 2]) -> Option<[f64; 3]> {
    let a = cov[0][0];
    if !(a > 0.0) || !a.is_finite() {
        return None;
    }
    let l11 = a.sqrt();
    let l21 = cov[1][0] / l11;
    let d = cov[1][1] - l21 * l21;
    if !(d > 0.0) || !d.is_finite() {
        return None;
    }
    Some([l11, l21, d.sqrt()])
}

/// Weighted sum of bivariate normals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Component>", into = "Vec<Component>")]
pub struct GaussianMixture2D {
    components: Vec<Component>,
    #[serde(skip)]
    chol: Vec<[f64; 3]>,
}

impl TryFrom<Vec<Component>> for GaussianMixture2D {
    type Error = Error;
    fn try_from(c: Vec<Component>) -> Result<Self> {
        Self::new(c)
    }
}

impl From<GaussianMixture2D> for Vec<Component> {
    fn from(m: GaussianMixture2D) -> Self {
        m.components
    }
}

impl GaussianMixture2D {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if components.iter().any(|c| !(c.weight >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("mixture weights must be nonnegative and sum to 1 (sum {total})")));
        }
        let mut chol = Vec::with_capacity(components.len());
        for (i, c) in components.iter().enumerate() {
            if !c.mean.iter().all(|v| v.is_finite()) {
                return Err(Error::Config(format!("component {i} has a non-finite mean")));
            }
            if c.cov[0][1] != c.cov[1][0] {
                return Err(Error::Config(format!("component {i} covariance is not symmetric")));
            }
            chol.push(cholesky(&c.cov).ok_or_else(|| {
                Error::Config(format!("component {i} covariance is not positive definite"))
            })?);
        }
        Ok(Self { components, chol })
    }

    /// Single isotropic-or-not normal.
    pub fn single(mean: [f64; 2], cov: [[f64; 2]; 2]) -> Result<Self> {
        Self::new(vec![Component { weight: 1.0, mean, cov }])
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Every mean shifted by `offset`; weights and covariances untouched.
    pub fn translated(&self, offset: [f64; 2]) -> Self {
        let mut out = self.clone();
        for c in &mut out.components {
            c.mean[0] += offset[0];
            c.mean[1] += offset[1];
        }
        out
    }

    /// Mixture mean.
    pub fn mean(&self) -> [f64; 2] {
        self.components.iter().fold([0.0, 0.0], |acc, c| {
            [acc[0] + c.weight * c.mean[0], acc[1] + c.weight * c.mean[1]]
        })
    }

    /// Mixture covariance (law of total covariance).
    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let m = self.mean();
        let mut s = [[0.0; 2]; 2];
        for c in &self.components {
            let d = [c.mean[0] - m[0], c.mean[1] - m[1]];
            for i in 0..2 {
                for j in 0..2 {
                    s[i][j] += c.weight * (c.cov[i][j] + d[i] * d[j]);
                }
            }
        }
        s
    }

    pub fn sample(&self, rng: &mut Rng) -> HolePose {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.components.len() - 1;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                pick = i;
                break;
            }
        }
        let c = &self.components[pick];
        let l = self.chol[pick];
        let z0: f64 = StandardNormal.sample(rng);
        let z1: f64 = StandardNormal.sample(rng);
        HolePose::new(c.mean[0] + l[0] * z0, c.mean[1] + l[1] * z0 + l[2] * z1)
    }

    pub fn log_density(&self, point: [f64; 2]) -> f64 {
        let terms: Vec<f64> = self
            .components
            .iter()
            .zip(&self.chol)
            .filter(|(c, _)| c.weight > 0.0)
            .map(|(c, l)| {
                let dx = point[0] - c.mean[0];
                let dy = point[1] - c.mean[1];
                // Solve L·u = d.
                let u0 = dx / l[0];
                let u1 = (dy - l[1] * u0) / l[2];
                let log_det = 2.0 * (l[0].ln() + l[2].ln());
                c.weight.ln() - (2.0 * PI).ln() - 0.5 * log_det - 0.5 * (u0 * u0 + u1 * u1)
            })
            .collect();
        let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return m;
        }
        m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
    }
}

pub fn log_density(mixture: &GaussianMixture2D, point: [f64; 2]) -> f64 {
    mixture.log_density(point)
}

/// Bounds for random mixture generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    /// Inclusive component-count range.
    pub count: [usize; 2],
    /// Each mean coordinate is uniform in this interval (mm).
    pub mean_bounds: [f64; 2],
    /// Covariance eigenvalues are log-uniform in this interval (mm²).
    pub eigen_bounds: [f64; 2],
}

impl MixtureSpec {
    /// Multimodal probe-task preset.
    pub fn probe_default() -> Self {
        Self {
            count: [2, 4],
            mean_bounds: [-7.0, 7.0],
            eigen_bounds: [0.5, 4.0],
        }
    }

    /// Six-component spiral-task preset.
    pub fn spiral_default() -> Self {
        Self {
            count: [6, 6],
            mean_bounds: [-5.0, 5.0],
            eigen_bounds: [0.1, 2.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count[0] == 0 || self.count[0] > self.count[1] {
            return Err(Error::Config(format!("invalid component count range {:?}", self.count)));
        }
        let [lo, hi] = self.mean_bounds;
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Config(format!("invalid mean bounds {:?}", self.mean_bounds)));
        }
        let [lo, hi] = self.eigen_bounds;
        if !(lo > 0.0 && lo <= hi) || !hi.is_finite() {
            return Err(Error::Config(format!("invalid eigenvalue bounds {:?}", self.eigen_bounds)));
        }
        Ok(())
    }
}

pub fn sample_mixture(seed: u64, spec: &MixtureSpec) -> Result<GaussianMixture2D> {
    spec.validate()?;
    let mut rng = stream_rng(seed, 0);
    let count = rng.random_range(spec.count[0]..=spec.count[1]);
    let uniform = |rng: &mut Rng, [lo, hi]: [f64; 2]| lo + (hi - lo) * rng.random::<f64>();
    let log_eig = [spec.eigen_bounds[0].ln(), spec.eigen_bounds[1].ln()];
    let mut raw_weights = Vec::with_capacity(count);
    let mut parts = Vec::with_capacity(count);
    for _ in 0..count {
        raw_weights.push(0.5 + rng.random::<f64>());
        let mean = [uniform(&mut rng, spec.mean_bounds), uniform(&mut rng, spec.mean_bounds)];
        let l1 = uniform(&mut rng, log_eig).exp();
        let l2 = uniform(&mut rng, log_eig).exp();
        let angle = PI * rng.random::<f64>();
        // λ2·I + (λ1 − λ2)·uuᵀ keeps equal eigenvalues exactly isotropic.
        let (s, c) = angle.sin_cos();
        let d = l1 - l2;
        let off = d * c * s;
        let cov = [[l2 + d * c * c, off], [off, l2 + d * s * s]];
        parts.push((mean, cov));
    }
    let total: f64 = raw_weights.iter().sum();
    let mut components: Vec<Component> = parts
        .into_iter()
        .zip(&raw_weights)
        .map(|((mean, cov), w)| Component { weight: w / total, mean, cov })
        .collect();
    if count == 1 {
        components[0].weight = 1.0;
    }
    GaussianMixture2D::new(components)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProcessKind {
    Stationary,
    Drift { offset: [f64; 2] },
    Brownian { step_stddev: f64 },
    Shift { p_shift: f64, max_offset: f64 },
}

impl ProcessKind {
    pub fn drift_default() -> Self {
        ProcessKind::Drift { offset: [0.05, 0.0] }
    }

    pub fn brownian_default() -> Self {
        ProcessKind::Brownian { step_stddev: 0.05 }
    }

    pub fn shift_default() -> Self {
        ProcessKind::Shift { p_shift: 0.05, max_offset: 2.0 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProcessKind::Stationary => "stationary",
            ProcessKind::Drift { .. } => "drift",
            ProcessKind::Brownian { .. } => "brownian",
            ProcessKind::Shift { .. } => "shift",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ProcessKind::Stationary => Ok(()),
            ProcessKind::Drift { offset } if offset.iter().all(|v| v.is_finite()) => Ok(()),
            ProcessKind::Brownian { step_stddev } if step_stddev >= 0.0 && step_stddev.is_finite() => Ok(()),
            ProcessKind::Shift { p_shift, max_offset }
                if (0.0..=1.0).contains(&p_shift) && max_offset >= 0.0 && max_offset.is_finite() =>
            {
                Ok(())
            }
            other => Err(Error::Config(format!("invalid process parameters {other:?}"))),
        }
    }
}

/// Serializable description of a process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessConfig {
    pub mixture: GaussianMixture2D,
    pub process: ProcessKind,
    pub seed: u64,
}

/// Hole distribution evolving in discrete steps. The current distribution is
/// always `base` rigidly translated by the accumulated offset.
#[derive(Debug, Clone)]
pub struct HoleProcess {
    base: GaussianMixture2D,
    kind: ProcessKind,
    timestep: u64,
    offset: [f64; 2],
    current: GaussianMixture2D,
    hole_rng: Rng,
    motion_rng: Rng,
}

impl HoleProcess {
    pub fn new(base: GaussianMixture2D, kind: ProcessKind, seed: u64) -> Result<Self> {
        kind.validate()?;
        Ok(Self {
            current: base.clone(),
            base,
            kind,
            timestep: 0,
            offset: [0.0, 0.0],
            hole_rng: stream_rng(seed, 1),
            motion_rng: stream_rng(seed, 2),
        })
    }

    pub fn stationary(base: GaussianMixture2D, seed: u64) -> Self {
        Self::new(base, ProcessKind::Stationary, seed).expect("stationary is always valid")
    }

    pub fn from_config(cfg: &ProcessConfig) -> Result<Self> {
        Self::new(cfg.mixture.clone(), cfg.process, cfg.seed)
    }

    pub fn base(&self) -> &GaussianMixture2D {
        &self.base
    }

    pub fn kind(&self) -> ProcessKind {
        self.kind
    }

    pub fn timestep(&self) -> u64 {
        self.timestep
    }

    /// Accumulated translation of the base mixture.
    pub fn offset(&self) -> [f64; 2] {
        self.offset
    }

    pub fn current(&self) -> &GaussianMixture2D {
        &self.current
    }

    pub fn sample_hole(&mut self) -> HolePose {
        self.current.sample(&mut self.hole_rng)
    }

    /// Moves to the next timestep and returns the translation applied in it.
    pub fn advance(&mut self) -> [f64; 2] {
        self.timestep += 1;
        let step = match self.kind {
            ProcessKind::Stationary => return [0.0, 0.0],
            ProcessKind::Drift { offset } => {
                // Closed form so t single steps equal one translation by t·offset.
                let t = self.timestep as f64;
                let next = [t * offset[0], t * offset[1]];
                let step = [next[0] - self.offset[0], next[1] - self.offset[1]];
                self.offset = next;
                self.current = self.base.translated(self.offset);
                return step;
            }
            ProcessKind::Brownian { step_stddev } => {
                let z0: f64 = StandardNormal.sample(&mut self.motion_rng);
                let z1: f64 = StandardNormal.sample(&mut self.motion_rng);
                [step_stddev * z0, step_stddev * z1]
            }
            ProcessKind::Shift { p_shift, max_offset } => {
                let u: f64 = self.motion_rng.random();
                let dx = self.motion_rng.random_range(-1.0..=1.0) * max_offset;
                let dy = self.motion_rng.random_range(-1.0..=1.0) * max_offset;
                if u < p_shift {
                    [dx, dy]
                } else {
                    return [0.0, 0.0];
                }
            }
        };
        self.offset = [self.offset[0] + step[0], self.offset[1] + step[1]];
        self.current = self.base.translated(self.offset);
        step
    }
}
