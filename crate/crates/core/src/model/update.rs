use rand::Rng;

use super::layers::{Conv, Init};
use crate::error::Result;
use crate::tensor::{Float, ParamStore, Tape, Var};

/// Convolutional GRU:
///
/// ```text
/// z = σ(conv_z([h, x]))   r = σ(conv_r([h, x]))
/// q = tanh(conv_q([r ⊙ h, x]))
/// h' = h + z ⊙ (q - h)
/// ```
#[derive(Clone, Debug)]
pub struct ConvGru {
    conv_z: Conv,
    conv_r: Conv,
    conv_q: Conv,
}

impl ConvGru {
    pub fn new<T: Float>(store: &mut ParamStore<T>, rng: &mut impl Rng, hidden: usize, input: usize) -> Self {
        let c_in = hidden + input;
        Self {
            conv_z: Conv::new(store, rng, "gru.z", c_in, hidden, 3, 1, Init::Small),
            conv_r: Conv::new(store, rng, "gru.r", c_in, hidden, 3, 1, Init::Small),
            conv_q: Conv::new(store, rng, "gru.q", c_in, hidden, 3, 1, Init::Small),
        }
    }

    pub fn forward<T: Float>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, h: Var, x: Var) -> Result<Var> {
        let hx = tape.concat(&[h, x], 0)?;
        let z = self.conv_z.forward(tape, store, hx)?;
        let z = tape.sigmoid(z)?;
        let r = self.conv_r.forward(tape, store, hx)?;
        let r = tape.sigmoid(r)?;
        let rh = tape.mul(r, h)?;
        let rhx = tape.concat(&[rh, x], 0)?;
        let q = self.conv_q.forward(tape, store, rhx)?;
        let q = tape.tanh(q)?;
        let step = tape.sub(q, h)?;
        let step = tape.mul(z, step)?;
        tape.add(h, step)
    }
}

/// Two 3×3 convolutions from the hidden state to a flow increment; the last
/// one starts at zero.
#[derive(Clone, Debug)]
pub struct FlowHead {
    conv1: Conv,
    conv2: Conv,
}

impl FlowHead {
    pub fn new<T: Float>(store: &mut ParamStore<T>, rng: &mut impl Rng, hidden: usize, width: usize) -> Self {
        Self {
            conv1: Conv::new(store, rng, "flow_head.conv1", hidden, width, 3, 1, Init::He),
            conv2: Conv::new(store, rng, "flow_head.conv2", width, 2, 3, 1, Init::Zero),
        }
    }

    pub fn forward<T: Float>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, h: Var) -> Result<Var> {
        let y = self.conv1.forward_relu(tape, store, h)?;
        self.conv2.forward(tape, store, y)
    }
}

/// Recurrent cell plus flow head.
#[derive(Clone, Debug)]
pub struct UpdateBlock {
    pub gru: ConvGru,
    pub head: FlowHead,
}

impl UpdateBlock {
    pub fn new<T: Float>(store: &mut ParamStore<T>, rng: &mut impl Rng, hidden: usize, input: usize) -> Self {
        Self {
            gru: ConvGru::new(store, rng, hidden, input),
            head: FlowHead::new(store, rng, hidden, 2 * hidden),
        }
    }

    /// Consumes `[context, motion features]` and returns `(h', Δflow)`.
    pub fn forward<T: Float>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        hidden: Var,
        context: Var,
        motion: Var,
    ) -> Result<(Var, Var)> {
        let x = tape.concat(&[context, motion], 0)?;
        let h = self.gru.forward(tape, store, hidden, x)?;
        let delta = self.head.forward(tape, store, h)?;
        Ok((h, delta))
    }
}
