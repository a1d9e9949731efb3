use rand::Rng;

use super::layers::{Conv, Init};
use crate::error::Result;
use crate::tensor::{Float, ParamStore, Tape, Var};

/// Shared two-branch encoder turning one sampled correlation map plus the
/// current flow into a motion feature.
///
/// Correlation branch: 1×1 conv. Flow branch: 7×7 then 3×3 conv. The
/// branches are fused by a 3×3 conv to `dim - 2` channels and the raw flow is
/// appended, giving `dim` channels.
#[derive(Clone, Debug)]
pub struct MotionEncoder {
    corr: Conv,
    flow1: Conv,
    flow2: Conv,
    fuse: Conv,
}

impl MotionEncoder {
    pub fn new<T: Float>(store: &mut ParamStore<T>, rng: &mut impl Rng, corr_channels: usize, dim: usize) -> Self {
        assert!(dim > 2, "motion feature dim must exceed the 2 flow channels");
        let corr_w = dim;
        let flow_w = (dim / 2).max(2);
        let corr = Conv::new(store, rng, "menc.corr", corr_channels, corr_w, 1, 1, Init::He);
        let flow1 = Conv::new(store, rng, "menc.flow1", 2, flow_w, 7, 1, Init::He);
        let flow2 = Conv::new(store, rng, "menc.flow2", flow_w, flow_w / 2, 3, 1, Init::He);
        let fuse = Conv::new(store, rng, "menc.fuse", corr_w + flow_w / 2, dim - 2, 3, 1, Init::He);
        Self {
            corr,
            flow1,
            flow2,
            fuse,
        }
    }

    /// `corr` is `K×H×W`, `flow` is `2×H×W`; returns `dim×H×W`.
    pub fn forward<T: Float>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, corr: Var, flow: Var) -> Result<Var> {
        let c = self.corr.forward_relu(tape, store, corr)?;
        let f = self.flow1.forward_relu(tape, store, flow)?;
        let f = self.flow2.forward_relu(tape, store, f)?;
        let cf = tape.concat(&[c, f], 0)?;
        let m = self.fuse.forward_relu(tape, store, cf)?;
        tape.concat(&[m, flow], 0)
    }
}
