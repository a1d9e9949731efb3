//! Parameterized building blocks shared by the network components.

use rand::Rng;

use crate::error::Result;
use crate::tensor::{Float, ParamId, ParamStore, Tape, Tensor, Var};

/// He-uniform init bound for a layer with `fan_in` inputs.
fn he_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

fn uniform<T: Float>(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::from_f64(shape, &data).expect("init shape")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    He,
    /// He scaled down, for layers feeding a saturating nonlinearity.
    Small,
    Zero,
}

#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        init: Init,
    ) -> Self {
        let shape = [c_out, c_in, k, k];
        let weight = match init {
            Init::He => uniform(rng, &shape, he_bound(c_in * k * k)),
            Init::Small => uniform(rng, &shape, 0.25 * he_bound(c_in * k * k)),
            Init::Zero => Tensor::zeros(&shape),
        };
        Self {
            weight: store.add(format!("{name}.weight"), weight),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[c_out])),
            stride,
            padding: k / 2,
        }
    }

    pub fn forward<T: Float>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.conv2d(x, w, self.stride, self.padding)?;
        tape.add_bias(y, b, 0)
    }

    pub fn forward_relu<T: Float>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = self.forward(tape, store, x)?;
        tape.relu(y)
    }
}

/// Row-vector affine map: `x·W + b` on `R×in` inputs.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        init: Init,
    ) -> Self {
        let shape = [d_in, d_out];
        let weight = match init {
            Init::He => uniform(rng, &shape, he_bound(d_in)),
            Init::Small => uniform(rng, &shape, (1.0 / d_in as f64).sqrt()),
            Init::Zero => Tensor::zeros(&shape),
        };
        Self {
            weight: store.add(format!("{name}.weight"), weight),
            bias: bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[d_out]))),
        }
    }

    pub fn forward<T: Float>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_bias(y, b, 1)
            }
            None => Ok(y),
        }
    }
}

/// Per-row normalization with a learned affine.
#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[dim], T::one())),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward<T: Float>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layer_norm(x, g, b)
    }
}

/// Two 3×3 convolutions with a skip path; the first may stride.
#[derive(Clone, Copy, Debug)]
pub struct ResidualBlock {
    conv1: Conv,
    conv2: Conv,
    shortcut: Option<Conv>,
}

impl ResidualBlock {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
    ) -> Self {
        let conv1 = Conv::new(store, rng, &format!("{name}.conv1"), c_in, c_out, 3, stride, Init::He);
        let conv2 = Conv::new(store, rng, &format!("{name}.conv2"), c_out, c_out, 3, 1, Init::He);
        let shortcut = (stride != 1 || c_in != c_out)
            .then(|| Conv::new(store, rng, &format!("{name}.shortcut"), c_in, c_out, 1, stride, Init::He));
        Self { conv1, conv2, shortcut }
    }

    pub fn forward<T: Float>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = self.conv1.forward_relu(tape, store, x)?;
        let y = self.conv2.forward(tape, store, y)?;
        let skip = match &self.shortcut {
            Some(s) => s.forward(tape, store, x)?,
            None => x,
        };
        let sum = tape.add(y, skip)?;
        tape.relu(sum)
    }
}
