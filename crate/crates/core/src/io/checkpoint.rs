use std::collections::HashSet;
use std::fs;
use std::path::Path;

use super::bytes::Reader;
use super::config::{model_config_text, parse_model_config};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TmaModel};
use crate::tensor::{AdamW, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TMAC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Optimizer slots saved alongside the weights, in parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: Vec<Tensor<f32>>,
    pub second_moment: Vec<Tensor<f32>>,
}

impl OptimizerState {
    pub fn from_adamw(opt: &AdamW<f32>) -> Self {
        Self {
            step: opt.step,
            first_moment: opt.first_moment.clone(),
            second_moment: opt.second_moment.clone(),
        }
    }

    pub fn restore_into(&self, opt: &mut AdamW<f32>) -> Result<()> {
        let shapes = |v: &[Tensor<f32>]| v.iter().map(|t| t.shape().to_vec()).collect::<Vec<_>>();
        if shapes(&self.first_moment) != shapes(&opt.first_moment) {
            return Err(Error::Config("optimizer state does not match the model".into()));
        }
        opt.step = self.step;
        opt.first_moment = self.first_moment.clone();
        opt.second_moment = self.second_moment.clone();
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor_body(out: &mut Vec<u8>, t: &Tensor<f32>) {
    put_u32(out, t.rank() as u32);
    for &d in t.shape() {
        put_u32(out, d as u32);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_tensor_body(r: &mut Reader<'_>) -> Result<Tensor<f32>> {
    let at = r.offset();
    let rank = r.u32("rank")? as usize;
    if rank == 0 || rank > 8 {
        return Err(Reader::error_at(at, format!("unsupported rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u32("dim")? as usize);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .filter(|n| n.checked_mul(4).is_some_and(|b| b <= r.remaining()));
    let Some(n) = n else {
        return Err(r.error(format!("tensor {shape:?} exceeds remaining {} bytes", r.remaining())));
    };
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(r.f32("tensor value")?);
    }
    Tensor::new(&shape, data).map_err(|e| Reader::error_at(at, e.to_string()))
}

/// Serializes weights and, optionally, optimizer state.
pub fn encode_checkpoint(model: &TmaModel<f32>, optimizer: Option<&OptimizerState>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    let cfg = model_config_text(&model.config);
    put_u32(&mut out, cfg.len() as u32);
    out.extend_from_slice(cfg.as_bytes());
    put_u32(&mut out, model.params.len() as u32);
    for (name, t) in model.params.iter() {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_tensor_body(&mut out, t);
    }
    match optimizer {
        None => out.push(0),
        Some(o) => {
            out.push(1);
            out.extend_from_slice(&o.step.to_le_bytes());
            for t in o.first_moment.iter().chain(&o.second_moment) {
                put_tensor_body(&mut out, t);
            }
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(TmaModel<f32>, Option<OptimizerState>)> {
    let mut r = Reader::new(bytes);
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let at = r.offset();
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Reader::error_at(at, format!("unsupported version {version}")));
    }
    let at = r.offset();
    let len = r.u32("config length")? as usize;
    let text = std::str::from_utf8(r.take(len, "config")?)
        .map_err(|_| Reader::error_at(at + 4, "config is not UTF-8"))?;
    let config: ModelConfig = parse_model_config(text).map_err(|e| Reader::error_at(at + 4, e.to_string()))?;

    let mut model = TmaModel::<f32>::new(config, 0)?;
    let count = r.u32("tensor count")? as usize;
    if count != model.params.len() {
        return Err(r.error(format!("{count} tensors for a model with {} parameters", model.params.len())));
    }
    let mut seen = HashSet::new();
    for _ in 0..count {
        let at = r.offset();
        let n = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(n, "name")?)
            .map_err(|_| Reader::error_at(at, "tensor name is not UTF-8"))?
            .to_string();
        let t = read_tensor_body(&mut r)?;
        let id = model
            .params
            .id(&name)
            .ok_or_else(|| Reader::error_at(at, format!("unknown parameter {name}")))?;
        if !seen.insert(name.clone()) {
            return Err(Reader::error_at(at, format!("parameter {name} appears twice")));
        }
        let slot = model.params.get_mut(id);
        if slot.shape() != t.shape() {
            return Err(Reader::error_at(at, format!("parameter {name}: {:?} vs {:?}", t.shape(), slot.shape())));
        }
        slot.data_mut().copy_from_slice(t.data());
    }

    let at = r.offset();
    let optimizer = match r.u8("optimizer flag")? {
        0 => None,
        1 => {
            let step = r.u64("optimizer step")?;
            let shapes: Vec<Vec<usize>> = model.params.iter().map(|(_, t)| t.shape().to_vec()).collect();
            let read_set = |r: &mut Reader<'_>| -> Result<Vec<Tensor<f32>>> {
                shapes
                    .iter()
                    .map(|s| {
                        let at = r.offset();
                        let t = read_tensor_body(r)?;
                        if t.shape() != s.as_slice() {
                            return Err(Reader::error_at(at, format!("optimizer slot {:?} vs {s:?}", t.shape())));
                        }
                        Ok(t)
                    })
                    .collect()
            };
            let first_moment = read_set(&mut r)?;
            let second_moment = read_set(&mut r)?;
            Some(OptimizerState {
                step,
                first_moment,
                second_moment,
            })
        }
        f => return Err(Reader::error_at(at, format!("bad optimizer flag {f}"))),
    };
    r.finish()?;
    Ok((model, optimizer))
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &TmaModel<f32>, optimizer: Option<&OptimizerState>) -> Result<()> {
    fs::write(path, encode_checkpoint(model, optimizer))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(TmaModel<f32>, Option<OptimizerState>)> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ValueProjection;
    use crate::tensor::{AdamWConfig, OneCycle};

    fn small() -> ModelConfig {
        ModelConfig {
            segments: 2,
            bins: 2,
            feature_dim: 4,
            downsample: 2,
            iterations: 1,
            radius: 1,
            levels: 1,
            context_dim: 2,
            hidden_dim: 2,
            motion_dim: 4,
            encoder_width: 2,
            value_projection: ValueProjection::Learned,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn weights_and_optimizer_round_trip() {
        use rand::SeedableRng;
        let mut model = TmaModel::<f32>::new(small(), 3).unwrap();
        model.params.perturb(&mut rand_chacha::ChaCha8Rng::seed_from_u64(1), 0.5);
        let mut opt = AdamW::new(&model.params, AdamWConfig::default(), OneCycle::new(1e-3, 10));
        opt.step = 7;
        opt.first_moment[0].data_mut()[0] = 0.25;
        let state = OptimizerState::from_adamw(&opt);
        let bytes = encode_checkpoint(&model, Some(&state));
        let (back, st) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.config, model.config);
        assert_eq!(back.params, model.params);
        assert_eq!(st.unwrap(), state);
        assert_eq!(encode_checkpoint(&back, Some(&state)), bytes);

        let plain = encode_checkpoint(&model, None);
        assert!(decode_checkpoint(&plain).unwrap().1.is_none());
    }

    #[test]
    fn corruption_rejected() {
        let model = TmaModel::<f32>::new(small(), 3).unwrap();
        let bytes = encode_checkpoint(&model, None);
        let mut b = bytes.clone();
        b[1] = b'X';
        assert!(matches!(decode_checkpoint(&b), Err(Error::Format { offset: 0, .. })));
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        let mut b = bytes;
        b.push(9);
        assert!(decode_checkpoint(&b).is_err());
    }
}
