//! Binary and CSV persistence of task datasets.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! magic     8 bytes  "DPSEDSET"
//! version   u32
//! kind      u8       1 = spiral, 2 = probe
//! n         u64      record count
//! dim       u32      parameter dimension
//! mixtures  u32      component count of the stored mixture (0 = none)
//! mixture   7×f64 per component: weight, mean x, mean y, cov xx, xy, yx, yy
//! records   n × (dim×f64 params, 2×f64 hole, f64 duration, u8 success,
//!                i8 hit index or −1, f64 contact θ or NaN)
//! ```

use std::io::{Read, Write};

use crate::env::{Component, GaussianMixture2D, HolePose};
use crate::params::{StrategyKind, StrategyParams, PROBE_POINTS};
use crate::sim::{ExecutionRecord, Outcome, ProbeOutcome, TaskDataset};
use crate::{Error, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"DPSEDSET";
pub const DATASET_VERSION: u32 = 1;

fn probe_outcomes(hit: Option<usize>) -> Vec<ProbeOutcome> {
    let last = hit.unwrap_or(PROBE_POINTS - 1);
    (0..PROBE_POINTS)
        .map(|j| ProbeOutcome {
            probed: j <= last,
            hit: Some(j) == hit,
        })
        .collect()
}

pub fn record_from_parts(
    kind: StrategyKind,
    params: &[f64],
    hole: HolePose,
    duration: f64,
    success: bool,
    hit_index: Option<usize>,
    contact_theta: Option<f64>,
) -> Result<ExecutionRecord> {
    let params = StrategyParams::from_slice(kind, params)?;
    let outcome = match kind {
        StrategyKind::Probe => Outcome::Probe {
            hit_index,
            probes: probe_outcomes(hit_index),
        },
        StrategyKind::Spiral => Outcome::Spiral { contact_theta },
    };
    let r = ExecutionRecord {
        params,
        hole,
        success,
        duration,
        outcome,
    };
    r.validate()?;
    Ok(r)
}

pub fn write_dataset<W: Write>(ds: &TaskDataset, mut w: W) -> Result<()> {
    let dim = ds.kind.dim();
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&DATASET_VERSION.to_le_bytes())?;
    w.write_all(&[ds.kind.code()])?;
    w.write_all(&(ds.records.len() as u64).to_le_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    let comps = ds.mixture.as_ref().map_or(&[][..], |m| m.components());
    w.write_all(&(comps.len() as u32).to_le_bytes())?;
    for c in comps {
        for v in [c.weight, c.mean[0], c.mean[1], c.cov[0][0], c.cov[0][1], c.cov[1][0], c.cov[1][1]] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    let mut buf = Vec::with_capacity(dim * 8 + 34);
    for r in &ds.records {
        if r.kind() != ds.kind {
            return Err(Error::Contract("dataset mixes strategy kinds".into()));
        }
        buf.clear();
        for v in r.params.to_vec() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&r.hole.x.to_le_bytes());
        buf.extend_from_slice(&r.hole.y.to_le_bytes());
        buf.extend_from_slice(&r.duration.to_le_bytes());
        buf.push(r.success as u8);
        buf.push(r.hit_index().map_or(-1i8, |k| k as i8) as u8);
        buf.extend_from_slice(&r.contact_theta().unwrap_or(f64::NAN).to_le_bytes());
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn dataset_to_bytes(ds: &TaskDataset) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_dataset(ds, &mut out)?;
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Integrity("dataset file is truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<TaskDataset> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != DATASET_MAGIC {
        return Err(Error::Integrity("not a dataset file (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != DATASET_VERSION {
        return Err(Error::Integrity(format!(
            "dataset version {version} is not supported (expected {DATASET_VERSION})"
        )));
    }
    let code = c.u8()?;
    let kind = StrategyKind::from_code(code).ok_or_else(|| Error::Integrity(format!("unknown strategy kind {code}")))?;
    let n = c.u64()? as usize;
    let dim = c.u32()? as usize;
    if dim != kind.dim() {
        return Err(Error::Integrity(format!("dimension {dim} does not match {}", kind.name())));
    }
    let m = c.u32()? as usize;
    let mixture = if m == 0 {
        None
    } else {
        let mut comps = Vec::with_capacity(m);
        for _ in 0..m {
            let v: Vec<f64> = (0..7).map(|_| c.f64()).collect::<Result<_>>()?;
            comps.push(Component {
                weight: v[0],
                mean: [v[1], v[2]],
                cov: [[v[3], v[4]], [v[5], v[6]]],
            });
        }
        Some(GaussianMixture2D::new(comps).map_err(|e| Error::Integrity(e.to_string()))?)
    };
    let width = dim * 8 + 16 + 8 + 2 + 8;
    if bytes.len() - c.pos != n * width {
        return Err(Error::Integrity(format!(
            "expected {} record bytes, found {}",
            n * width,
            bytes.len() - c.pos
        )));
    }
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let params: Vec<f64> = (0..dim).map(|_| c.f64()).collect::<Result<_>>()?;
        let hole = HolePose::new(c.f64()?, c.f64()?);
        let duration = c.f64()?;
        let success = match c.u8()? {
            0 => false,
            1 => true,
            b => return Err(Error::Integrity(format!("bad success byte {b}"))),
        };
        let hit = c.u8()? as i8;
        let theta = c.f64()?;
        let hit_index = (hit >= 0).then_some(hit as usize);
        let contact_theta = (!theta.is_nan()).then_some(theta);
        records.push(record_from_parts(kind, &params, hole, duration, success, hit_index, contact_theta)?);
    }
    Ok(TaskDataset { kind, mixture, records })
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<TaskDataset> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    dataset_from_bytes(&bytes)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Integrity(format!("csv: {e}"))
}

/// One row per record. Floats use the shortest representation that parses
/// back to the same value, so the export is lossless.
pub fn write_dataset_csv<W: Write>(ds: &TaskDataset, w: W) -> Result<()> {
    let dim = ds.kind.dim();
    let mut wr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    header.extend(
        ["hole_x", "hole_y", "success", "duration", "hit_index", "contact_theta"]
            .iter()
            .map(|s| s.to_string()),
    );
    wr.write_record(&header).map_err(csv_err)?;
    for r in &ds.records {
        let mut row: Vec<String> = r.params.to_vec().iter().map(|v| v.to_string()).collect();
        row.push(r.hole.x.to_string());
        row.push(r.hole.y.to_string());
        row.push((r.success as u8).to_string());
        row.push(r.duration.to_string());
        row.push(r.hit_index().map_or(String::new(), |k| k.to_string()));
        row.push(r.contact_theta().map_or(String::new(), |t| t.to_string()));
        wr.write_record(&row).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_dataset_csv<R: Read>(kind: StrategyKind, r: R) -> Result<TaskDataset> {
    let dim = kind.dim();
    let mut rd = csv::Reader::from_reader(r);
    let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Integrity(format!("bad number {s:?}"))) };
    let mut records = Vec::new();
    for row in rd.records() {
        let row = row.map_err(csv_err)?;
        if row.len() != dim + 6 {
            return Err(Error::Integrity(format!("row has {} fields, expected {}", row.len(), dim + 6)));
        }
        let params: Vec<f64> = (0..dim).map(|i| num(&row[i])).collect::<Result<_>>()?;
        let hole = HolePose::new(num(&row[dim])?, num(&row[dim + 1])?);
        let success = &row[dim + 2] == "1";
        let duration = num(&row[dim + 3])?;
        let hit_index = match &row[dim + 4] {
            "" => None,
            s => Some(s.parse().map_err(|_| Error::Integrity(format!("bad index {s:?}")))?),
        };
        let contact_theta = match &row[dim + 5] {
            "" => None,
            s => Some(num(s)?),
        };
        records.push(record_from_parts(kind, &params, hole, duration, success, hit_index, contact_theta)?);
    }
    Ok(TaskDataset {
        kind,
        mixture: None,
        records,
    })
}
