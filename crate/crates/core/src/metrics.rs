//! End-point error statistics over masked pixels.
//!
//! Every statistic over an empty mask is `None` rather than zero.

use std::fmt::Write as _;

use crate::error::{dim_err, Result};
use crate::events::EventStream;
use crate::flow::FlowField;

/// Thresholds reported by [`MetricReport`] as `{M}pe`.
pub const NPE_THRESHOLDS: [u32; 3] = [1, 2, 3];

fn check(pred: &FlowField, gt: &FlowField, mask: &[bool]) -> Result<()> {
    if pred.values.shape() != gt.values.shape() {
        return dim_err(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.values.shape(),
            gt.values.shape()
        ));
    }
    if mask.len() != gt.valid.len() {
        return dim_err(format!("mask has {} entries for {} pixels", mask.len(), gt.valid.len()));
    }
    Ok(())
}

/// Per-pixel end-point errors and ground-truth magnitudes of masked pixels.
fn masked_errors<'a>(pred: &'a FlowField, gt: &'a FlowField, mask: &'a [bool]) -> impl Iterator<Item = (f64, f64)> + 'a {
    let plane = mask.len();
    let (p, g) = (pred.values.data(), gt.values.data());
    (0..plane).filter(move |&i| mask[i]).map(move |i| {
        let du = p[i] as f64 - g[i] as f64;
        let dv = p[plane + i] as f64 - g[plane + i] as f64;
        (du.hypot(dv), (g[i] as f64).hypot(g[plane + i] as f64))
    })
}

fn percentage(hits: usize, count: usize) -> Option<f64> {
    (count > 0).then(|| 100.0 * hits as f64 / count as f64)
}

/// Mean end-point error in pixels.
pub fn epe(pred: &FlowField, gt: &FlowField, mask: &[bool]) -> Result<Option<f64>> {
    check(pred, gt, mask)?;
    let (sum, n) = masked_errors(pred, gt, mask).fold((0.0, 0usize), |(s, n), (e, _)| (s + e, n + 1));
    Ok((n > 0).then(|| sum / n as f64))
}

/// Percentage of masked pixels whose end-point error is strictly above `m`.
pub fn npe(pred: &FlowField, gt: &FlowField, mask: &[bool], m: f64) -> Result<Option<f64>> {
    check(pred, gt, mask)?;
    if !(m > 0.0) {
        return Err(crate::Error::Usage(format!("npe threshold must be positive, got {m}")));
    }
    let (hits, n) = masked_errors(pred, gt, mask).fold((0, 0), |(h, n), (e, _)| (h + usize::from(e > m), n + 1));
    Ok(percentage(hits, n))
}

/// Percentage of masked pixels with error above 3 px and above 5% of the
/// ground-truth magnitude.
pub fn outlier_pct(pred: &FlowField, gt: &FlowField, mask: &[bool]) -> Result<Option<f64>> {
    check(pred, gt, mask)?;
    let (hits, n) = masked_errors(pred, gt, mask).fold((0, 0), |(h, n), (e, mag)| (h + usize::from(is_outlier(e, mag)), n + 1));
    Ok(percentage(hits, n))
}

fn is_outlier(err: f64, gt_mag: f64) -> bool {
    err > 3.0 && err > 0.05 * gt_mag
}

/// Pixels with at least one event in `[window.0, window.1)`.
pub fn event_mask(stream: &EventStream, window: (u64, u64), height: usize, width: usize) -> Vec<bool> {
    let mut mask = vec![false; height * width];
    for e in stream.window(window.0, window.1) {
        let (x, y) = (e.x as usize, e.y as usize);
        if x < width && y < height {
            mask[y * width + x] = true;
        }
    }
    mask
}

/// Pixel-pooled statistics over one or more flow pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricAccumulator {
    epe_sum: f64,
    count: usize,
    above: [usize; NPE_THRESHOLDS.len()],
    outliers: usize,
}

impl MetricAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, pred: &FlowField, gt: &FlowField, mask: &[bool]) -> Result<()> {
        check(pred, gt, mask)?;
        for (e, mag) in masked_errors(pred, gt, mask) {
            self.epe_sum += e;
            self.count += 1;
            for (a, &m) in self.above.iter_mut().zip(&NPE_THRESHOLDS) {
                *a += usize::from(e > m as f64);
            }
            self.outliers += usize::from(is_outlier(e, mag));
        }
        Ok(())
    }

    /// Combines partial results; addition order is the caller's.
    pub fn merge(&mut self, other: &MetricAccumulator) {
        self.epe_sum += other.epe_sum;
        self.count += other.count;
        for (a, b) in self.above.iter_mut().zip(other.above) {
            *a += b;
        }
        self.outliers += other.outliers;
    }

    pub fn report(&self) -> MetricReport {
        MetricReport {
            epe: (self.count > 0).then(|| self.epe_sum / self.count as f64),
            npe: NPE_THRESHOLDS
                .iter()
                .zip(self.above)
                .map(|(&m, a)| (m, percentage(a, self.count)))
                .collect(),
            outlier_pct: percentage(self.outliers, self.count),
            valid_count: self.count,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub epe: Option<f64>,
    /// `(M, percentage above M)`.
    pub npe: Vec<(u32, Option<f64>)>,
    pub outlier_pct: Option<f64>,
    pub valid_count: usize,
}

impl MetricReport {
    pub fn compute(pred: &FlowField, gt: &FlowField, mask: &[bool]) -> Result<Self> {
        let mut acc = MetricAccumulator::new();
        acc.add(pred, gt, mask)?;
        Ok(acc.report())
    }

    pub fn npe_at(&self, m: u32) -> Option<f64> {
        self.npe.iter().find(|(k, _)| *k == m).and_then(|(_, v)| *v)
    }

    /// `key=value` lines; undefined statistics print as `undefined`.
    pub fn to_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.6}"));
        let mut s = String::new();
        let _ = writeln!(s, "epe={}", fmt(self.epe));
        for &(m, v) in &self.npe {
            let _ = writeln!(s, "{m}pe={}", fmt(v));
        }
        let _ = writeln!(s, "outlier_pct={}", fmt(self.outlier_pct));
        let _ = writeln!(s, "valid_count={}", self.valid_count);
        s
    }
}
