//! Classic two-frame recurrent flow path with one correlation volume.
//!
//! Used as the reference a single-segment model must reproduce.

use super::{ForwardOutput, TmaModel};
use crate::correlation::lookup_coords;
use crate::error::{dim_err, Result};
use crate::tensor::{Float, Tape, Tensor, Var};

/// Runs `model`'s weights on an `(anchor, target)` voxel grid pair using a
/// single all-pairs volume, sampled at `x + u`.
pub fn forward_pair<T: Float>(model: &TmaModel<T>, tape: &mut Tape<T>, anchor: Var, target: Var) -> Result<ForwardOutput<T>> {
    let cfg = &model.config;
    if cfg.segments != 1 {
        return dim_err(format!("pair baseline needs one segment, model has {}", cfg.segments));
    }
    let s = tape.shape(anchor).to_vec();
    if s.len() != 3 || tape.shape(target) != s.as_slice() {
        return dim_err("anchor and target grids must share a C×H×W shape");
    }
    cfg.check_input(s[1], s[2])?;

    let f1 = model.feature_encoder.forward(tape, &model.params, anchor)?;
    let f2 = model.feature_encoder.forward(tape, &model.params, target)?;
    let (context, mut hidden) = model.extract_context(tape, anchor)?;

    let fs = tape.shape(f1).to_vec();
    let (d, h, w) = (fs[0], fs[1], fs[2]);
    let p = h * w;
    let a = tape.reshape(f1, &[d, p])?;
    let b = tape.reshape(f2, &[d, p])?;
    let corr = tape.matmul_t(a, true, b, false)?;
    let corr = tape.scale(corr, T::one() / T::from_usize(d).expect("dim fits").sqrt())?;
    let mut pyramid = vec![tape.reshape(corr, &[p, h, w])?];
    for _ in 1..cfg.levels {
        let last = pyramid[pyramid.len() - 1];
        pyramid.push(tape.avg_pool2(last)?);
    }

    let channels = cfg.lookup().channels();
    let mut flow = Tensor::<T>::zeros(&[2, h, w]);
    let mut out = ForwardOutput {
        flows: Vec::with_capacity(cfg.iterations),
        low_res: Vec::with_capacity(cfg.iterations),
        detached: Vec::with_capacity(cfg.iterations),
    };
    for _ in 0..cfg.iterations {
        let flow_var = tape.constant(flow.clone());
        out.detached.push(flow.clone());
        let mut sampled = Vec::with_capacity(cfg.levels);
        for (level, &vol) in pyramid.iter().enumerate() {
            let coords = tape.constant(lookup_coords(&flow, 1.0, level, cfg.radius));
            sampled.push(tape.sample_rows(vol, coords)?);
        }
        let sampled = if sampled.len() == 1 {
            sampled[0]
        } else {
            tape.concat(&sampled, 1)?
        };
        let sampled = tape.transpose(sampled)?;
        let sampled = tape.reshape(sampled, &[channels, h, w])?;
        let motion = model.motion_encoder.forward(tape, &model.params, sampled, flow_var)?;
        let (h_next, delta) = model.update.forward(tape, &model.params, hidden, context, motion)?;
        hidden = h_next;
        let next = tape.add(flow_var, delta)?;
        out.flows.push(model.upsample_flow(tape, next)?);
        out.low_res.push(next);
        flow = tape.value(next).clone();
    }
    Ok(out)
}
