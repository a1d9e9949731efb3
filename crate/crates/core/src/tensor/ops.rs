//! Forward kernels for the differentiable op set, usable without a tape.
//!
//! The [`Tape`](super::Tape) records these same kernels and pairs each with
//! its backward rule.

use super::{split_axis, Float, Tensor};
use crate::error::{dim_err, Result};

pub fn matmul<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k, n) = matmul_dims(a.shape(), false, b.shape(), false)?;
    let mut out = vec![T::zero(); m * n];
    T::gemm(m, k, n, a.data(), false, b.data(), false, &mut out, false);
    Tensor::new(&[m, n], out)
}

/// `(m, k, n)` of `op(a)·op(b)` for 2-D operands.
pub(crate) fn matmul_dims(
    a: &[usize],
    ta: bool,
    b: &[usize],
    tb: bool,
) -> Result<(usize, usize, usize)> {
    if a.len() != 2 || b.len() != 2 {
        return dim_err(format!("matmul needs 2-D operands, got {a:?} and {b:?}"));
    }
    let (m, ka) = if ta { (a[1], a[0]) } else { (a[0], a[1]) };
    let (kb, n) = if tb { (b[1], b[0]) } else { (b[0], b[1]) };
    if ka != kb {
        return dim_err(format!("matmul inner dims differ: {a:?} · {b:?}"));
    }
    Ok((m, ka, n))
}

/// Geometry of a square-kernel 2-D convolution over a `C×H×W` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, padding: usize) -> Result<Self> {
        if input.len() != 3 || kernel.len() != 4 {
            return dim_err(format!(
                "conv2d expects C×H×W input and O×C×k×k kernel, got {input:?} and {kernel:?}"
            ));
        }
        let (c_in, h, w) = (input[0], input[1], input[2]);
        let (c_out, kc, k, k2) = (kernel[0], kernel[1], kernel[2], kernel[3]);
        if kc != c_in || k != k2 {
            return dim_err(format!("kernel {kernel:?} incompatible with input {input:?}"));
        }
        if k % 2 == 0 {
            return dim_err(format!("kernel size {k} must be odd"));
        }
        if stride == 0 {
            return dim_err("stride must be positive");
        }
        let span_h = (h + 2 * padding) as isize - k as isize;
        let span_w = (w + 2 * padding) as isize - k as isize;
        if span_h < 0 || span_w < 0 {
            return dim_err(format!(
                "conv2d output empty: {h}×{w} input, k={k}, padding={padding}"
            ));
        }
        Ok(Self {
            c_in,
            h,
            w,
            c_out,
            k,
            stride,
            padding,
            h_out: span_h as usize / stride + 1,
            w_out: span_w as usize / stride + 1,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    pub fn out_pixels(&self) -> usize {
        self.h_out * self.w_out
    }

    /// Unfolds the input into a `(C·k·k) × (H'·W')` matrix.
    pub fn im2col<T: Float>(&self, input: &[T]) -> Vec<T> {
        let p = self.out_pixels();
        let mut cols = vec![T::zero(); self.patch_len() * p];
        let pad = self.padding as isize;
        for c in 0..self.c_in {
            let plane = &input[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.h_out {
                        let iy = (oy * self.stride + ky) as isize - pad;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let drow = &mut dst[oy * self.w_out..(oy + 1) * self.w_out];
                        let (lo, hi) = self.valid_columns(kx);
                        if self.stride == 1 {
                            let ix0 = (lo + kx) as isize - pad;
                            drow[lo..hi].copy_from_slice(&src[ix0 as usize..ix0 as usize + hi - lo]);
                        } else {
                            for ox in lo..hi {
                                drow[ox] = src[((ox * self.stride + kx) as isize - pad) as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters-and-adds columns back.
    pub fn col2im<T: Float>(&self, cols: &[T], grad_input: &mut [T]) {
        let p = self.out_pixels();
        let pad = self.padding as isize;
        for c in 0..self.c_in {
            let plane = &mut grad_input[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.h_out {
                        let iy = (oy * self.stride + ky) as isize - pad;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let srow = &src[oy * self.w_out..(oy + 1) * self.w_out];
                        let (lo, hi) = self.valid_columns(kx);
                        if self.stride == 1 {
                            let ix0 = ((lo + kx) as isize - pad) as usize;
                            for (d, &g) in dst[ix0..ix0 + hi - lo].iter_mut().zip(&srow[lo..hi]) {
                                *d += g;
                            }
                        } else {
                            for ox in lo..hi {
                                dst[((ox * self.stride + kx) as isize - pad) as usize] += srow[ox];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Output columns `lo..hi` whose input column for kernel tap `kx` lies
    /// inside the image.
    fn valid_columns(&self, kx: usize) -> (usize, usize) {
        let pad = self.padding as isize;
        let first = pad - kx as isize;
        let lo = if first <= 0 { 0 } else { (first as usize).div_ceil(self.stride) };
        let last = self.w as isize - 1 + pad - kx as isize;
        let hi = if last < 0 { 0 } else { (last as usize / self.stride + 1).min(self.w_out) };
        (lo.min(hi), hi)
    }
}

/// Cross-correlation with zero padding; kernel is `O×C×k×k`.
pub fn conv2d<T: Float>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let geom = ConvGeom::new(input.shape(), kernel.shape(), stride, padding)?;
    let (out, _) = conv2d_forward(&geom, input.data(), kernel.data());
    Tensor::new(&[geom.c_out, geom.h_out, geom.w_out], out)
}

pub(crate) fn conv2d_forward<T: Float>(geom: &ConvGeom, input: &[T], kernel: &[T]) -> (Vec<T>, Vec<T>) {
    let p = geom.out_pixels();
    let mut out = vec![T::zero(); geom.c_out * p];
    if geom.k == 1 && geom.stride == 1 && geom.padding == 0 {
        // a 1×1 unit-stride convolution is a plain matmul over the input itself
        T::gemm(geom.c_out, geom.c_in, p, kernel, false, input, false, &mut out, false);
        return (out, Vec::new());
    }
    let cols = geom.im2col(input);
    T::gemm(geom.c_out, geom.patch_len(), p, kernel, false, &cols, false, &mut out, false);
    (out, cols)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply<T: Float>(self, v: T) -> T {
        match self {
            Activation::Relu => v.max(T::zero()),
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => T::one() / (T::one() + (-v).exp()),
        }
    }

    /// Derivative expressed through the forward output `y`.
    pub(crate) fn derivative_from_output<T: Float>(self, y: T) -> T {
        match self {
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}

pub fn activation<T: Float>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    let data = x.data().iter().map(|&v| kind.apply(v)).collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

pub fn softmax<T: Float>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return dim_err(format!("softmax axis {axis} out of range for {:?}", x.shape()));
    }
    let mut out = x.data().to_vec();
    softmax_in_place(&mut out, x.shape(), axis);
    Tensor::new(x.shape(), out)
}

pub(crate) fn softmax_in_place<T: Float>(data: &mut [T], shape: &[usize], axis: usize) {
    let (outer, len, inner) = split_axis(shape, axis);
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = T::neg_infinity();
            for j in 0..len {
                max = max.max(data[base + j * inner]);
            }
            let mut total = T::zero();
            for j in 0..len {
                let e = (data[base + j * inner] - max).exp();
                data[base + j * inner] = e;
                total += e;
            }
            for j in 0..len {
                data[base + j * inner] /= total;
            }
        }
    }
}

pub fn concat<T: Float>(tensors: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let shapes: Vec<&[usize]> = tensors.iter().map(|t| t.shape()).collect();
    let shape = concat_shape(&shapes, axis)?;
    let (outer, _, inner) = split_axis(&shape, axis);
    let mut out = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for t in tensors {
            let block = t.shape()[axis] * inner;
            out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
        }
    }
    Tensor::new(&shape, out)
}

pub(crate) fn concat_shape(shapes: &[&[usize]], axis: usize) -> Result<Vec<usize>> {
    let Some(first) = shapes.first() else {
        return dim_err("concat of zero tensors");
    };
    if axis >= first.len() {
        return dim_err(format!("concat axis {axis} out of range for {first:?}"));
    }
    let mut shape = first.to_vec();
    shape[axis] = 0;
    for s in shapes {
        let same_rank = s.len() == first.len();
        let same_rest = same_rank
            && s.iter()
                .zip(first.iter())
                .enumerate()
                .all(|(d, (a, b))| d == axis || a == b);
        if !same_rest {
            return dim_err(format!("concat shape mismatch: {first:?} vs {s:?} on axis {axis}"));
        }
        shape[axis] += s[axis];
    }
    Ok(shape)
}

/// Four bilinear taps of a continuous `(x, y)` location on an `h×w` grid.
///
/// Corners outside the grid get `index = None` and contribute zero.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Taps<T> {
    pub index: [Option<usize>; 4],
    pub weight: [T; 4],
    pub dweight_dx: [T; 4],
    pub dweight_dy: [T; 4],
}

pub(crate) fn bilinear_taps<T: Float>(x: T, y: T, h: usize, w: usize) -> Taps<T> {
    let zero = T::zero();
    let one = T::one();
    if !x.is_finite() || !y.is_finite() {
        return Taps {
            index: [None; 4],
            weight: [zero; 4],
            dweight_dx: [zero; 4],
            dweight_dy: [zero; 4],
        };
    }
    let x0f = x.floor();
    let y0f = y.floor();
    let fx = x - x0f;
    let fy = y - y0f;
    let x0 = x0f.to_f64_lossy() as i64;
    let y0 = y0f.to_f64_lossy() as i64;
    let corner = |cx: i64, cy: i64| {
        (cx >= 0 && cy >= 0 && cx < w as i64 && cy < h as i64).then(|| cy as usize * w + cx as usize)
    };
    Taps {
        index: [
            corner(x0, y0),
            corner(x0 + 1, y0),
            corner(x0, y0 + 1),
            corner(x0 + 1, y0 + 1),
        ],
        weight: [
            (one - fx) * (one - fy),
            fx * (one - fy),
            (one - fx) * fy,
            fx * fy,
        ],
        dweight_dx: [-(one - fy), one - fy, -fy, fy],
        dweight_dy: [-(one - fx), -fx, one - fx, fx],
    }
}

impl<T: Float> Taps<T> {
    pub fn sample(&self, plane: &[T]) -> T {
        let mut v = T::zero();
        for c in 0..4 {
            if let Some(i) = self.index[c] {
                v += self.weight[c] * plane[i];
            }
        }
        v
    }
}

/// Bilinear sampling of a `C×H×W` map at `N` continuous `(x, y)` pixel
/// coordinates, producing `N×C`. Corners outside the map read as zero.
pub fn grid_sample_bilinear<T: Float>(map: &Tensor<T>, coords: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w, n) = grid_sample_dims(map.shape(), coords.shape())?;
    let mut out = vec![T::zero(); n * c];
    let cd = coords.data();
    for i in 0..n {
        let taps = bilinear_taps(cd[2 * i], cd[2 * i + 1], h, w);
        for ch in 0..c {
            out[i * c + ch] = taps.sample(&map.data()[ch * h * w..(ch + 1) * h * w]);
        }
    }
    Tensor::new(&[n, c], out)
}

pub(crate) fn grid_sample_dims(map: &[usize], coords: &[usize]) -> Result<(usize, usize, usize, usize)> {
    if map.len() != 3 || coords.len() != 2 || coords[1] != 2 {
        return dim_err(format!(
            "grid_sample expects C×H×W map and N×2 coords, got {map:?} and {coords:?}"
        ));
    }
    Ok((map[0], map[1], map[2], coords[0]))
}

/// Row-wise bilinear sampling: row `r` of an `R×H×W` stack is sampled at its
/// own `K` coordinates from an `R×K×2` tensor, producing `R×K`.
pub fn sample_rows_bilinear<T: Float>(volume: &Tensor<T>, coords: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, h, w, k) = sample_rows_dims(volume.shape(), coords.shape())?;
    let mut out = vec![T::zero(); r * k];
    let cd = coords.data();
    for row in 0..r {
        let plane = &volume.data()[row * h * w..(row + 1) * h * w];
        for j in 0..k {
            let c = (row * k + j) * 2;
            out[row * k + j] = bilinear_taps(cd[c], cd[c + 1], h, w).sample(plane);
        }
    }
    Tensor::new(&[r, k], out)
}

pub(crate) fn sample_rows_dims(volume: &[usize], coords: &[usize]) -> Result<(usize, usize, usize, usize)> {
    if volume.len() != 3 || coords.len() != 3 || coords[2] != 2 || coords[0] != volume[0] {
        return dim_err(format!(
            "sample_rows expects R×H×W volume and R×K×2 coords, got {volume:?} and {coords:?}"
        ));
    }
    Ok((volume[0], volume[1], volume[2], coords[1]))
}

/// 2×2 mean pooling (stride 2) over the last two dims; odd trailing
/// rows/columns are dropped.
pub fn avg_pool2<T: Float>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = pool_shape(x.shape())?;
    Tensor::new(&shape, avg_pool2_forward(x.data(), x.shape()))
}

pub(crate) fn pool_shape(shape: &[usize]) -> Result<Vec<usize>> {
    let r = shape.len();
    if r < 2 || shape[r - 2] < 2 || shape[r - 1] < 2 {
        return dim_err(format!("cannot 2×2-pool shape {shape:?}"));
    }
    let mut out = shape.to_vec();
    out[r - 2] /= 2;
    out[r - 1] /= 2;
    Ok(out)
}

pub(crate) fn avg_pool2_forward<T: Float>(data: &[T], shape: &[usize]) -> Vec<T> {
    let r = shape.len();
    let (h, w) = (shape[r - 2], shape[r - 1]);
    let (ho, wo) = (h / 2, w / 2);
    let planes = data.len() / (h * w);
    let quarter = T::from_f64_lossy(0.25);
    let mut out = vec![T::zero(); planes * ho * wo];
    for p in 0..planes {
        let src = &data[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for y in 0..ho {
            for x in 0..wo {
                let a = src[2 * y * w + 2 * x];
                let b = src[2 * y * w + 2 * x + 1];
                let c = src[(2 * y + 1) * w + 2 * x];
                let d = src[(2 * y + 1) * w + 2 * x + 1];
                dst[y * wo + x] = (a + b + c + d) * quarter;
            }
        }
    }
    out
}

/// Interpolation matrix `out×inp` for align-corners linear resampling.
pub(crate) fn linear_resample_matrix<T: Float>(inp: usize, out: usize) -> Vec<T> {
    let mut m = vec![T::zero(); out * inp];
    for o in 0..out {
        let src = if out > 1 {
            o as f64 * (inp - 1) as f64 / (out - 1) as f64
        } else {
            0.0
        };
        let i0 = (src.floor() as usize).min(inp - 1);
        let i1 = (i0 + 1).min(inp - 1);
        let f = src - i0 as f64;
        m[o * inp + i0] += T::from_f64_lossy(1.0 - f);
        if f > 0.0 {
            m[o * inp + i1] += T::from_f64_lossy(f);
        }
    }
    m
}

/// Bilinear (align-corners) upsampling of `C×h×w` to `C×(f·h)×(f·w)`.
pub fn upsample_bilinear<T: Float>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (shape, uh, uw) = upsample_plan(x.shape(), factor)?;
    Tensor::new(&shape, upsample_forward(x.data(), x.shape(), &uh, &uw))
}

pub(crate) type UpsamplePlan<T> = (Vec<usize>, Vec<T>, Vec<T>);

pub(crate) fn upsample_plan<T: Float>(shape: &[usize], factor: usize) -> Result<UpsamplePlan<T>> {
    if shape.len() != 3 || factor == 0 {
        return dim_err(format!("upsample expects C×h×w and factor ≥ 1, got {shape:?}, {factor}"));
    }
    let (h, w) = (shape[1], shape[2]);
    let out = vec![shape[0], h * factor, w * factor];
    Ok((
        out,
        linear_resample_matrix(h, h * factor),
        linear_resample_matrix(w, w * factor),
    ))
}

pub(crate) fn upsample_forward<T: Float>(data: &[T], shape: &[usize], uh: &[T], uw: &[T]) -> Vec<T> {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let (hh, ww) = (uh.len() / h, uw.len() / w);
    let mut out = vec![T::zero(); c * hh * ww];
    let mut tmp = vec![T::zero(); h * ww];
    for ch in 0..c {
        // tmp = x · Uwᵀ, out = Uh · tmp
        T::gemm(h, w, ww, &data[ch * h * w..(ch + 1) * h * w], false, uw, true, &mut tmp, false);
        T::gemm(hh, h, ww, uh, false, &tmp, false, &mut out[ch * hh * ww..(ch + 1) * hh * ww], false);
    }
    out
}

/// Masked mean of `|pred − target|`; zero when the mask is empty.
pub fn l1_loss<T: Float>(pred: &Tensor<T>, target: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    if pred.shape() != target.shape() || pred.shape() != mask.shape() {
        return dim_err(format!(
            "l1_loss shapes differ: {:?}, {:?}, {:?}",
            pred.shape(),
            target.shape(),
            mask.shape()
        ));
    }
    let (total, count) = masked_abs_sum(pred.data(), target.data(), mask.data());
    let value = if count == 0 {
        T::zero()
    } else {
        total / T::from_usize(count).expect("count fits")
    };
    Ok(Tensor::scalar(value))
}

pub(crate) fn masked_abs_sum<T: Float>(pred: &[T], target: &[T], mask: &[T]) -> (T, usize) {
    let mut total = T::zero();
    let mut count = 0;
    for ((&p, &t), &m) in pred.iter().zip(target).zip(mask) {
        if m != T::zero() {
            total += (p - t).abs();
            count += 1;
        }
    }
    (total, count)
}

pub fn transpose<T: Float>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 2 {
        return dim_err(format!("transpose needs a 2-D tensor, got {:?}", x.shape()));
    }
    let (r, c) = (x.shape()[0], x.shape()[1]);
    Tensor::new(&[c, r], transpose_data(x.data(), r, c))
}

pub(crate) fn transpose_data<T: Float>(data: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

/// Normalizes each row of an `R×D` tensor to zero mean and unit variance,
/// then applies the per-feature affine `gamma`, `beta`.
pub fn layer_norm<T: Float>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<Tensor<T>> {
    let (out, _, _) = layer_norm_forward(x, gamma, beta)?;
    Tensor::new(x.shape(), out)
}

pub(crate) fn layer_norm_forward<T: Float>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    if x.rank() != 2 || gamma.len() != x.shape()[1] || beta.len() != x.shape()[1] {
        return dim_err(format!(
            "layer_norm expects R×D input with D-length affine, got {:?}, {:?}, {:?}",
            x.shape(),
            gamma.shape(),
            beta.shape()
        ));
    }
    let (rows, d) = (x.shape()[0], x.shape()[1]);
    let dn = T::from_usize(d).expect("d fits");
    let eps = T::from_f64_lossy(LAYER_NORM_EPS);
    let mut out = vec![T::zero(); rows * d];
    let mut xhat = vec![T::zero(); rows * d];
    let mut rstd = vec![T::zero(); rows];
    for r in 0..rows {
        let row = &x.data()[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let s = T::one() / (var + eps).sqrt();
        rstd[r] = s;
        for j in 0..d {
            let xh = (row[j] - mean) * s;
            xhat[r * d + j] = xh;
            out[r * d + j] = xh * gamma.data()[j] + beta.data()[j];
        }
    }
    Ok((out, xhat, rstd))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn conv_matches_direct_loop() {
        let (c, h, w, o) = (2, 7, 6, 3);
        let input: Vec<f64> = (0..c * h * w).map(|i| ((i * 37 % 11) as f64) - 5.0).collect();
        for (k, stride, padding) in [(3, 1, 1), (3, 2, 1), (5, 1, 2), (5, 2, 0), (1, 2, 0), (3, 3, 2)] {
            let kernel: Vec<f64> = (0..o * c * k * k).map(|i| ((i * 13 % 7) as f64) - 3.0).collect();
            let out = conv2d(&t(&[c, h, w], &input), &t(&[o, c, k, k], &kernel), stride, padding).unwrap();
            let (ho, wo) = (out.shape()[1], out.shape()[2]);
            for oc in 0..o {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut want = 0.0;
                        for ic in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - padding as isize;
                                    let ix = (ox * stride + kx) as isize - padding as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        want += input[(ic * h + iy as usize) * w + ix as usize]
                                            * kernel[((oc * c + ic) * k + ky) * k + kx];
                                    }
                                }
                            }
                        }
                        assert_eq!(out.data()[(oc * ho + oy) * wo + ox], want, "k={k} s={stride} p={padding}");
                    }
                }
            }
        }
    }

    #[test]
    fn matmul_identity_and_known_product() {
        let x = t(&[2, 2], &[3.0, -1.0, 0.5, 2.0]);
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(matmul(&eye, &x).unwrap(), x);
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2, 3]);
        assert!(matches!(matmul(&a, &b), Err(crate::Error::Dimension(_))));
    }

    #[test]
    fn conv_identity_and_constant_cases() {
        let x = t(&[1, 3, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let one = t(&[1, 1, 1, 1], &[1.0]);
        assert_eq!(conv2d(&x, &one, 1, 0).unwrap(), x);

        let c = Tensor::<f64>::full(&[1, 5, 5], 1.5);
        let ones = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&c, &ones, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 5, 5]);
        assert_eq!(y.at(&[0, 2, 2]), 13.5);
        // corners only see a 2×2 patch
        assert_eq!(y.at(&[0, 0, 0]), 6.0);
    }

    #[test]
    fn conv_rejects_empty_output_and_even_kernel() {
        let x = Tensor::<f32>::zeros(&[1, 2, 2]);
        assert!(conv2d(&x, &Tensor::zeros(&[1, 1, 5, 5]), 1, 0).is_err());
        assert!(conv2d(&x, &Tensor::zeros(&[1, 1, 2, 2]), 1, 0).is_err());
    }

    #[test]
    fn strided_conv_output_dims() {
        let x = Tensor::<f32>::zeros(&[2, 9, 8]);
        let k = Tensor::<f32>::zeros(&[3, 2, 3, 3]);
        assert_eq!(conv2d(&x, &k, 2, 1).unwrap().shape(), &[3, 5, 4]);
    }

    #[test]
    fn softmax_cases() {
        let u = softmax(&t(&[4], &[0.3; 4]), 0).unwrap();
        assert!(u.data().iter().all(|&v| (v - 0.25).abs() < 1e-12));
        let big = softmax(&t(&[2], &[1000.0, 0.0]), 0).unwrap();
        assert!((big.data()[0] - 1.0).abs() < 1e-12 && big.data()[1] < 1e-300 + 1e-12);
        assert!(big.all_finite());
        let x = t(&[2, 3], &[0.1, -2.0, 3.0, 0.5, 0.5, -1.0]);
        let shifted = t(&[2, 3], &x.data().iter().map(|v| v + 7.25).collect::<Vec<_>>());
        let a = softmax(&x, 1).unwrap();
        assert!(a.max_abs_diff(&softmax(&shifted, 1).unwrap()) < 1e-6);
        let cols = softmax(&x, 0).unwrap();
        for c in 0..3 {
            assert!((cols.at(&[0, c]) + cols.at(&[1, c]) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_sample_cases() {
        let map = t(&[1, 2, 2], &[2.0, 4.0, 6.0, 8.0]);
        let coords = t(&[4, 2], &[1.0, 1.0, 0.5, 0.0, -10.0, -10.0, 0.0, 1.0]);
        let s = grid_sample_bilinear(&map, &coords).unwrap();
        assert_eq!(s.data(), &[8.0, 3.0, 0.0, 6.0]);
    }

    #[test]
    fn grid_sample_partially_outside_reads_zero_corners() {
        let map = t(&[1, 1, 2], &[2.0, 4.0]);
        // halfway past the right edge: 0.5·4 + 0.5·0
        let s = grid_sample_bilinear(&map, &t(&[1, 2], &[1.5, 0.0])).unwrap();
        assert_eq!(s.data(), &[2.0]);
    }

    #[test]
    fn activation_cases() {
        let x = t(&[1], &[-3.0]);
        assert_eq!(activation(&x, Activation::Relu).data(), &[0.0]);
        let z = t(&[1], &[0.0]);
        assert_eq!(activation(&z, Activation::Tanh).data(), &[0.0]);
        assert_eq!(activation(&z, Activation::Sigmoid).data(), &[0.5]);
    }

    #[test]
    fn concat_cases() {
        let a = Tensor::<f32>::full(&[2, 3], 1.0);
        let b = Tensor::<f32>::full(&[2, 5], 2.0);
        assert_eq!(concat(&[&a], 1).unwrap(), a);
        let c = concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 8]);
        assert_eq!(c.at(&[1, 2]), 1.0);
        assert_eq!(c.at(&[1, 3]), 2.0);
        assert!(concat(&[&a, &b], 0).is_err());
    }

    #[test]
    fn l1_cases() {
        let p = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let full = Tensor::<f64>::full(&[2, 2], 1.0);
        assert_eq!(l1_loss(&p, &p, &full).unwrap().item(), 0.0);
        let q = t(&[2, 2], &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(l1_loss(&p, &q, &full).unwrap().item(), 1.0);
        // errors {0, 2}; only the erring half is valid
        let r = t(&[2, 2], &[1.0, 0.0, 3.0, 2.0]);
        let half = t(&[2, 2], &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(l1_loss(&p, &r, &half).unwrap().item(), 2.0);
        let none = Tensor::<f64>::zeros(&[2, 2]);
        assert_eq!(l1_loss(&p, &q, &none).unwrap().item(), 0.0);
    }

    #[test]
    fn pool_and_upsample() {
        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(avg_pool2(&x).unwrap().data(), &[2.5]);
        let flow = Tensor::<f64>::full(&[2, 2, 3], 1.0);
        let up = upsample_bilinear(&flow, 4).unwrap();
        assert_eq!(up.shape(), &[2, 8, 12]);
        assert!(up.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let ramp = t(&[1, 1, 2], &[0.0, 3.0]);
        let up = upsample_bilinear(&ramp, 2).unwrap();
        assert_eq!(up.data(), &[0.0, 1.0, 2.0, 3.0, 0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let x = t(&[2, 4], &[1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 5.0, 2.0]);
        let g = Tensor::<f64>::full(&[4], 1.0);
        let b = Tensor::<f64>::zeros(&[4]);
        let y = layer_norm(&x, &g, &b).unwrap();
        for r in 0..2 {
            let row = &y.data()[r * 4..(r + 1) * 4];
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }
}
