//! From an event stream to network inputs.

use crate::error::Result;
use crate::events::{build_voxel_grid, split_events, EventStream, VoxelGrid};
use crate::flow::FlowField;
use crate::par::{self, Execution};
use crate::synth::LabeledSample;

/// Auxiliary grid followed by `segments` grids for `[t0, t1)`, each
/// normalized over its own events.
pub fn voxelize_split(
    stream: &EventStream,
    t0: u64,
    t1: u64,
    segments: usize,
    bins: usize,
    exec: Execution,
) -> Result<Vec<VoxelGrid>> {
    let split = split_events(stream, t0, t1, segments)?;
    let (h, w) = (stream.height() as usize, stream.width() as usize);
    let jobs: Vec<(&[crate::events::Event], (u64, u64))> =
        split.slices.iter().copied().zip(split.windows.windows.iter().copied()).collect();
    par::map(exec, &jobs, |&(events, window)| build_voxel_grid(events, bins, h, w, window))
        .into_iter()
        .collect()
}

/// A sample ready for the network.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSample {
    pub grids: Vec<VoxelGrid>,
    pub gt: FlowField,
}

pub fn prepare_sample(sample: &LabeledSample, segments: usize, bins: usize) -> Result<PreparedSample> {
    Ok(PreparedSample {
        grids: voxelize_split(&sample.stream, sample.t0, sample.t1, segments, bins, Execution::Sequential)?,
        gt: sample.gt_flow.clone(),
    })
}

/// Prepares samples concurrently, preserving order.
pub fn prepare_all(samples: &[LabeledSample], segments: usize, bins: usize, exec: Execution) -> Result<Vec<PreparedSample>> {
    par::map(exec, samples, |s| prepare_sample(s, segments, bins))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, SceneConfig};

    #[test]
    fn one_grid_per_window() {
        let s = generate_scene(&SceneConfig::default()).unwrap();
        let p = prepare_sample(&s, 5, 3).unwrap();
        assert_eq!(p.grids.len(), 6);
        assert!(p.grids.iter().all(|g| g.values.shape() == [3, 64, 64]));
        let seq = voxelize_split(&s.stream, s.t0, s.t1, 5, 3, Execution::Sequential).unwrap();
        let par = voxelize_split(&s.stream, s.t0, s.t1, 5, 3, Execution::Parallel).unwrap();
        assert_eq!(seq, par);
    }
}
