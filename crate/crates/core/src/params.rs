//! Strategy parameterizations and their box bounds.

use std::f64::consts::FRAC_PI_2;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::{Error, Result};

pub const PROBE_POINTS: usize = 16;
pub const PROBE_DIM: usize = 2 * PROBE_POINTS;
pub const SPIRAL_DIM: usize = 8;

/// Square search region centred at the origin and the hole clearance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchRegion {
    pub half_extent: f64,
    pub clearance: f64,
}

impl Default for SearchRegion {
    fn default() -> Self {
        Self {
            half_extent: 10.0,
            clearance: 0.5,
        }
    }
}

impl SearchRegion {
    pub fn new(half_extent: f64, clearance: f64) -> Result<Self> {
        let r = Self { half_extent, clearance };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.half_extent > 0.0 && self.half_extent.is_finite()) {
            return Err(Error::Config(format!("half-extent must be positive, got {}", self.half_extent)));
        }
        if !(self.clearance > 0.0 && self.clearance < self.half_extent) {
            return Err(Error::Config(format!(
                "clearance must lie in (0, half-extent), got {}",
                self.clearance
            )));
        }
        Ok(())
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0].abs() <= self.half_extent && p[1].abs() <= self.half_extent
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Spiral,
    Probe,
}

impl StrategyKind {
    pub fn dim(self) -> usize {
        match self {
            StrategyKind::Spiral => SPIRAL_DIM,
            StrategyKind::Probe => PROBE_DIM,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            StrategyKind::Spiral => 1,
            StrategyKind::Probe => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(StrategyKind::Spiral),
            2 => Some(StrategyKind::Probe),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Spiral => "spiral",
            StrategyKind::Probe => "probe",
        }
    }
}

/// Elliptical Archimedean spiral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpiralParams {
    pub center: [f64; 2],
    /// Rotation of the ellipse axes (rad).
    pub orientation: f64,
    /// Semi-axes `(a, b)` reached at the end of the last winding (mm).
    pub extents: [f64; 2],
    pub windings: f64,
    /// Cruise velocity (mm/s).
    pub velocity: f64,
    /// Acceleration and deceleration magnitude (mm/s²).
    pub acceleration: f64,
}

pub const NOMINAL_VELOCITY: f64 = 20.0;
pub const NOMINAL_ACCELERATION: f64 = 200.0;

impl SpiralParams {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.center[0],
            self.center[1],
            self.orientation,
            self.extents[0],
            self.extents[1],
            self.windings,
            self.velocity,
            self.acceleration,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != SPIRAL_DIM {
            return Err(Error::Contract(format!("spiral params need {SPIRAL_DIM} values, got {}", v.len())));
        }
        Ok(Self {
            center: [v[0], v[1]],
            orientation: v[2],
            extents: [v[3], v[4]],
            windings: v[5],
            velocity: v[6],
            acceleration: v[7],
        })
    }
}

/// Ordered touch points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeParams {
    pub points: Vec<[f64; 2]>,
}

impl ProbeParams {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() != PROBE_POINTS {
            return Err(Error::Contract(format!("probe search needs {PROBE_POINTS} points, got {}", points.len())));
        }
        Ok(Self { points })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| p.iter().copied()).collect()
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != PROBE_DIM {
            return Err(Error::Contract(format!("probe params need {PROBE_DIM} values, got {}", v.len())));
        }
        Self::new(v.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
    }

    pub fn centroid(&self) -> [f64; 2] {
        let n = self.points.len() as f64;
        let s = self.points.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
        [s[0] / n, s[1] / n]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategyParams {
    Spiral(SpiralParams),
    Probe(ProbeParams),
}

impl StrategyParams {
    pub fn kind(&self) -> StrategyKind {
        match self {
            StrategyParams::Spiral(_) => StrategyKind::Spiral,
            StrategyParams::Probe(_) => StrategyKind::Probe,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            StrategyParams::Spiral(p) => p.to_vec(),
            StrategyParams::Probe(p) => p.to_vec(),
        }
    }

    pub fn from_slice(kind: StrategyKind, v: &[f64]) -> Result<Self> {
        Ok(match kind {
            StrategyKind::Spiral => StrategyParams::Spiral(SpiralParams::from_slice(v)?),
            StrategyKind::Probe => StrategyParams::Probe(ProbeParams::from_slice(v)?),
        })
    }

    pub fn as_probe(&self) -> Option<&ProbeParams> {
        match self {
            StrategyParams::Probe(p) => Some(p),
            _ => None,
        }
    }

    pub fn as_spiral(&self) -> Option<&SpiralParams> {
        match self {
            StrategyParams::Spiral(p) => Some(p),
            _ => None,
        }
    }
}

/// Per-dimension box bounds of a strategy's parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub kind: StrategyKind,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ParamBounds {
    pub fn new(kind: StrategyKind, region: &SearchRegion) -> Self {
        let h = region.half_extent;
        let (lo, hi) = match kind {
            StrategyKind::Spiral => (
                vec![-h, -h, -FRAC_PI_2, 0.5, 0.5, 1.0, 5.0, 50.0],
                vec![h, h, FRAC_PI_2, h, h, 12.0, 40.0, 500.0],
            ),
            StrategyKind::Probe => (vec![-h; PROBE_DIM], vec![h; PROBE_DIM]),
        };
        Self { kind, lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Contract(format!("expected {} values, got {}", self.dim(), x.len())));
        }
        Ok(())
    }

    /// Maps the box to `[-1, 1]` per dimension.
    pub fn normalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (l, h))| 2.0 * (v - l) / (h - l) - 1.0)
            .collect())
    }

    pub fn denormalize(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check(u)?;
        Ok(u.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (l, h))| l + (v + 1.0) * 0.5 * (h - l))
            .collect())
    }

    /// Half-widths `(hi − lo) / 2`, the scale from normalized to physical units.
    pub fn half_widths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (h - l)).collect()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (h + l)).collect()
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (l, h)) in x.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *v = v.clamp(*l, *h);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| l + (h - l) * rng.random::<f64>())
            .collect()
    }

    pub fn clamp_params(&self, p: &StrategyParams) -> Result<StrategyParams> {
        let mut v = p.to_vec();
        self.check(&v)?;
        self.clamp(&mut v);
        StrategyParams::from_slice(self.kind, &v)
    }
}
