use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

/// Dense per-pixel displacement (x component first) with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    /// `2 × height × width`, in pixels.
    pub values: Tensor<f32>,
    /// Row-major `height × width`.
    pub valid: Vec<bool>,
}

impl FlowField {
    pub fn new(values: Tensor<f32>, valid: Vec<bool>) -> Result<Self> {
        let s = values.shape();
        if s.len() != 3 || s[0] != 2 {
            return dim_err(format!("flow must be 2×H×W, got {s:?}"));
        }
        if valid.len() != s[1] * s[2] {
            return dim_err(format!("mask has {} entries for {}×{} flow", valid.len(), s[1], s[2]));
        }
        Ok(Self { values, valid })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::constant(height, width, 0.0, 0.0)
    }

    pub fn constant(height: usize, width: usize, u: f32, v: f32) -> Self {
        let plane = height * width;
        let mut data = vec![u; 2 * plane];
        data[plane..].fill(v);
        Self {
            values: Tensor::new(&[2, height, width], data).expect("valid flow shape"),
            valid: vec![true; plane],
        }
    }

    pub fn height(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let plane = self.height() * self.width();
        let i = y * self.width() + x;
        (self.values.data()[i], self.values.data()[plane + i])
    }

    pub fn with_valid(mut self, valid: Vec<bool>) -> Result<Self> {
        if valid.len() != self.valid.len() {
            return dim_err("mask size mismatch");
        }
        self.valid = valid;
        Ok(self)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Mask expanded over both components as 0/1 values.
    pub fn mask_tensor<T: crate::tensor::Float>(&self) -> Tensor<T> {
        let m: Vec<T> = self
            .valid
            .iter()
            .map(|&v| if v { T::one() } else { T::zero() })
            .collect();
        let mut data = m.clone();
        data.extend_from_slice(&m);
        Tensor::new(self.values.shape(), data).expect("mask shape")
    }
}
