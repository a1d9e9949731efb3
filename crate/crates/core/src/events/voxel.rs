use super::Event;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Signed, temporally bilinear accumulation of one event window.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    /// `bins × height × width`.
    pub values: Tensor<f32>,
    pub bins: usize,
    pub window: (u64, u64),
}

impl VoxelGrid {
    pub fn zeros(bins: usize, height: usize, width: usize, window: (u64, u64)) -> Self {
        Self {
            values: Tensor::zeros(&[bins, height, width]),
            bins,
            window,
        }
    }

    pub fn height(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[2]
    }
}

/// Maps each timestamp onto `[0, bins - 1]` relative to the first and last
/// event of the slice. A slice whose events share one timestamp maps to 0.
pub fn normalize_timestamps(events: &[Event], bins: usize) -> Vec<f64> {
    let (Some(first), Some(last)) = (events.first(), events.last()) else {
        return Vec::new();
    };
    normalize_with_range(events, bins, first.t, last.t)
}

fn normalize_with_range(events: &[Event], bins: usize, t_first: u64, t_last: u64) -> Vec<f64> {
    let span = t_last.saturating_sub(t_first);
    if span == 0 {
        return vec![0.0; events.len()];
    }
    let scale = (bins.saturating_sub(1)) as f64 / span as f64;
    events
        .iter()
        .map(|e| (e.t.saturating_sub(t_first)) as f64 * scale)
        .collect()
}

/// Voxelizes a window with per-window timestamp normalization.
pub fn build_voxel_grid(
    events: &[Event],
    bins: usize,
    height: usize,
    width: usize,
    window: (u64, u64),
) -> Result<VoxelGrid> {
    let (first, last) = match (events.first(), events.last()) {
        (Some(a), Some(b)) => (a.t, b.t),
        _ => (0, 0),
    };
    voxelize_with_range(events, bins, height, width, window, (first, last))
}

/// Voxelizes with an explicit `(t_first, t_last)` normalization range.
///
/// Deposits happen in event order, one cell per temporal tap.
pub fn voxelize_with_range(
    events: &[Event],
    bins: usize,
    height: usize,
    width: usize,
    window: (u64, u64),
    range: (u64, u64),
) -> Result<VoxelGrid> {
    if bins == 0 || height == 0 || width == 0 {
        return Err(Error::Dimension(format!(
            "voxel grid needs positive dims, got {bins}×{height}×{width}"
        )));
    }
    let mut grid = VoxelGrid::zeros(bins, height, width, window);
    let tstar = normalize_with_range(events, bins, range.0, range.1);
    let plane = height * width;
    let values = grid.values.data_mut();
    for (e, &ts) in events.iter().zip(&tstar) {
        let (x, y) = (e.x as usize, e.y as usize);
        if x >= width || y >= height {
            return Err(Error::Usage(format!(
                "event at ({x}, {y}) outside {width}×{height} grid"
            )));
        }
        let p = e.p as f64;
        let lower = ts.floor();
        for b in [lower, lower + 1.0] {
            let weight = (1.0 - (b - ts).abs()).max(0.0);
            if weight == 0.0 || b < 0.0 || b >= bins as f64 {
                continue;
            }
            values[b as usize * plane + y * width + x] += (p * weight) as f32;
        }
    }
    Ok(grid)
}
