use rand::Rng;

use super::layers::{Conv, Init, ResidualBlock};
use crate::error::{dim_err, Result};
use crate::tensor::{Float, ParamStore, Tape, Var};

/// Convolutional encoder reducing resolution by `2^stages`.
///
/// A unit-stride stem, then per stage one strided and one plain residual
/// block, then a 1×1 projection to `out_dim` channels.
#[derive(Clone, Debug)]
pub struct Encoder {
    stem: Conv,
    blocks: Vec<ResidualBlock>,
    proj: Conv,
    factor: usize,
}

impl Encoder {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        in_channels: usize,
        width: usize,
        factor: usize,
        out_dim: usize,
    ) -> Self {
        let stages = factor.trailing_zeros() as usize;
        let stem = Conv::new(store, rng, &format!("{name}.stem"), in_channels, width, 3, 1, Init::He);
        let mut blocks = Vec::with_capacity(2 * stages);
        let mut c = width;
        for s in 0..stages {
            let next = width * (s + 2) / 2;
            blocks.push(ResidualBlock::new(store, rng, &format!("{name}.stage{s}.down"), c, next, 2));
            blocks.push(ResidualBlock::new(store, rng, &format!("{name}.stage{s}.res"), next, next, 1));
            c = next;
        }
        let proj = Conv::new(store, rng, &format!("{name}.proj"), c, out_dim, 1, 1, Init::He);
        Self {
            stem,
            blocks,
            proj,
            factor,
        }
    }

    /// Encodes a `C×H×W` grid into `out_dim × H/f × W/f`.
    pub fn forward<T: Float>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let s = tape.shape(x);
        if s.len() != 3 || s[1] % self.factor != 0 || s[2] % self.factor != 0 {
            return dim_err(format!("input {s:?} not divisible by downsample factor {}", self.factor));
        }
        let mut y = self.stem.forward_relu(tape, store, x)?;
        for b in &self.blocks {
            y = b.forward(tape, store, y)?;
        }
        self.proj.forward(tape, store, y)
    }
}
