use super::ops::{self, ConvGeom};
use super::params::{ParamId, ParamStore};
use super::{split_axis, Float, Tensor};
use crate::error::{dim_err, Error, Result};

pub use super::ops::Activation;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul { a: usize, b: usize, ta: bool, tb: bool, m: usize, k: usize, n: usize },
    Conv2d { input: usize, kernel: usize, geom: ConvGeom, cols: Vec<T> },
    AddBias { x: usize, bias: usize, axis: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Act(usize, Activation),
    Softmax { x: usize, axis: usize },
    Concat { inputs: Vec<usize>, axis: usize },
    Slice { x: usize, axis: usize, start: usize },
    Reshape(usize),
    Transpose { x: usize, rows: usize, cols: usize },
    GridSample { map: usize, coords: usize },
    SampleRows { volume: usize, coords: usize },
    AvgPool2(usize),
    Upsample { x: usize, uh: Vec<T>, uw: Vec<T> },
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<T>, rstd: Vec<T> },
    L1 { pred: usize, target: usize, mask: Vec<T>, count: usize },
    Sum(usize),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// Records one forward pass for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and backward is a single reverse sweep. A tape is built
/// fresh per forward pass.
#[derive(Debug, Default)]
pub struct Tape<T: Float = f32> {
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
}

/// Gradients of a scalar loss with respect to every leaf on the tape.
#[derive(Debug)]
pub struct Gradients<T> {
    leaves: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Float> Gradients<T> {
    /// Gradient of a leaf; `None` when the leaf did not require one.
    pub fn get(&self, var: Var) -> Option<Tensor<T>> {
        let g = self.leaves.get(var.0)?.as_ref()?;
        Some(Tensor::new(&self.shapes[var.0], g.clone()).expect("grad shape"))
    }

    /// Per-parameter gradients aligned with `store`; unused parameters get zeros.
    pub fn for_params(&self, store: &ParamStore<T>) -> Vec<Tensor<T>> {
        let mut out: Vec<Tensor<T>> = store.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        for &(pid, node) in &self.params {
            if let Some(g) = &self.leaves[node] {
                for (o, &v) in out[pid.index()].data_mut().iter_mut().zip(g) {
                    *o += v;
                }
            }
        }
        out
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_vars: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    /// Records an input. It is differentiated iff `tensor.requires_grad`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs_grad = tensor.requires_grad;
        self.push_node(tensor, Op::Leaf, needs_grad, None)
    }

    /// Records a non-differentiated input.
    pub fn constant(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.requires_grad = false;
        self.leaf(tensor)
    }

    /// Places a trainable parameter on the tape; repeated calls reuse the node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(Some(v)) = self.param_vars.get(id.index()) {
            return *v;
        }
        let var = self.push_node(store.get(id).clone(), Op::Leaf, true, Some(id));
        if self.param_vars.len() <= id.index() {
            self.param_vars.resize(id.index() + 1, None);
        }
        self.param_vars[id.index()] = Some(var);
        var
    }

    /// A non-differentiated copy of `var`'s current value.
    pub fn detach(&mut self, var: Var) -> Var {
        let v = self.nodes[var.0].value.clone();
        self.constant(v)
    }

    fn push_node(&mut self, mut value: Tensor<T>, op: Op<T>, needs_grad: bool, param: Option<ParamId>) -> Var {
        value.requires_grad = needs_grad;
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, shape: &[usize], data: Vec<T>, op: Op<T>, inputs: &[usize]) -> Result<Var> {
        let needs = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        let value = Tensor::new(shape, data)?;
        Ok(self.push_node(value, op, needs, None))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a)·op(b)` where `op` optionally transposes a 2-D operand.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let (m, k, n) = ops::matmul_dims(self.shape(a), ta, self.shape(b), tb)?;
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.value(a).data(), ta, self.value(b).data(), tb, &mut out, false);
        self.push(&[m, n], out, Op::MatMul { a: a.0, b: b.0, ta, tb, m, k, n }, &[a.0, b.0])
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(input), self.shape(kernel), stride, padding)?;
        let (out, cols) = ops::conv2d_forward(&geom, self.value(input).data(), self.value(kernel).data());
        self.push(
            &[geom.c_out, geom.h_out, geom.w_out],
            out,
            Op::Conv2d { input: input.0, kernel: kernel.0, geom, cols },
            &[input.0, kernel.0],
        )
    }

    /// Adds a 1-D `bias` broadcast along `axis` of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || self.value(bias).len() != shape[axis] {
            return dim_err(format!(
                "bias {:?} does not match axis {axis} of {shape:?}",
                self.shape(bias)
            ));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for o in 0..outer {
            for (j, &bj) in b.iter().enumerate().take(len) {
                let base = (o * len + j) * inner;
                for v in &mut out[base..base + inner] {
                    *v += bj;
                }
            }
        }
        self.push(&shape, out, Op::AddBias { x: x.0, bias: bias.0, axis }, &[x.0, bias.0])
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return dim_err(format!(
                "elementwise shapes differ: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            ));
        }
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(&shape, out, op, &[a.0, b.0])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        let out = self.value(x).data().iter().map(|&v| v * s).collect();
        let shape = self.shape(x).to_vec();
        self.push(&shape, out, Op::Scale(x.0, s), &[x.0])
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let out = ops::activation(self.value(x), kind).into_data();
        let shape = self.shape(x).to_vec();
        self.push(&shape, out, Op::Act(x.0, kind), &[x.0])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let out = ops::softmax(self.value(x), axis)?.into_data();
        let shape = self.shape(x).to_vec();
        self.push(&shape, out, Op::Softmax { x: x.0, axis }, &[x.0])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = ops::concat(&tensors, axis)?;
        let ids: Vec<usize> = inputs.iter().map(|v| v.0).collect();
        let shape = out.shape().to_vec();
        self.push(&shape, out.into_data(), Op::Concat { inputs: ids.clone(), axis }, &ids)
    }

    /// `len` entries of `x` along `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return dim_err(format!("slice [{start}, {}) out of axis {axis} of {shape:?}", start + len));
        }
        let (outer, alen, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * alen + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        self.push(&new_shape, out, Op::Slice { x: x.0, axis, start }, &[x.0])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?.into_data();
        self.push(shape, out, Op::Reshape(x.0), &[x.0])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = ops::transpose(self.value(x))?;
        let (rows, cols) = (out.shape()[1], out.shape()[0]);
        self.push(&[cols, rows], out.into_data(), Op::Transpose { x: x.0, rows, cols }, &[x.0])
    }

    pub fn grid_sample(&mut self, map: Var, coords: Var) -> Result<Var> {
        let out = ops::grid_sample_bilinear(self.value(map), self.value(coords))?;
        let shape = out.shape().to_vec();
        self.push(&shape, out.into_data(), Op::GridSample { map: map.0, coords: coords.0 }, &[map.0, coords.0])
    }

    pub fn sample_rows(&mut self, volume: Var, coords: Var) -> Result<Var> {
        let out = ops::sample_rows_bilinear(self.value(volume), self.value(coords))?;
        let shape = out.shape().to_vec();
        self.push(
            &shape,
            out.into_data(),
            Op::SampleRows { volume: volume.0, coords: coords.0 },
            &[volume.0, coords.0],
        )
    }

    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let out = ops::avg_pool2(self.value(x))?;
        let shape = out.shape().to_vec();
        self.push(&shape, out.into_data(), Op::AvgPool2(x.0), &[x.0])
    }

    pub fn upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        let (shape, uh, uw) = ops::upsample_plan::<T>(self.shape(x), factor)?;
        let out = ops::upsample_forward(self.value(x).data(), self.shape(x), &uh, &uw);
        self.push(&shape, out, Op::Upsample { x: x.0, uh, uw }, &[x.0])
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (out, xhat, rstd) = ops::layer_norm_forward(self.value(x), self.value(gamma), self.value(beta))?;
        let shape = self.shape(x).to_vec();
        self.push(
            &shape,
            out,
            Op::LayerNorm { x: x.0, gamma: gamma.0, beta: beta.0, xhat, rstd },
            &[x.0, gamma.0, beta.0],
        )
    }

    /// Masked mean absolute error against `target`; `mask` is not differentiated.
    pub fn l1_loss(&mut self, pred: Var, target: Var, mask: &Tensor<T>) -> Result<Var> {
        let value = ops::l1_loss(self.value(pred), self.value(target), mask)?.item();
        let (_, count) = ops::masked_abs_sum(self.value(pred).data(), self.value(target).data(), mask.data());
        self.push(
            &[1],
            vec![value],
            Op::L1 { pred: pred.0, target: target.0, mask: mask.data().to_vec(), count },
            &[pred.0, target.0],
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push(&[1], vec![s], Op::Sum(x.0), &[x.0])
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaves: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaves[i] = Some(g);
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, nd)| nd.param.map(|p| (p, i)))
            .collect();
        Ok(Gradients {
            leaves,
            shapes: self.nodes.iter().map(|nd| nd.value.shape().to_vec()).collect(),
            params,
        })
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb, m, k, n } => {
                let (a, b, ta, tb, m, k, n) = (*a, *b, *ta, *tb, *m, *k, *n);
                let av = self.nodes[a].value.data();
                let bv = self.nodes[b].value.data();
                if self.wants(a) {
                    // d op(a) = g · op(b)ᵀ ; when a is transposed, da = op(b) · gᵀ
                    let ga = acc(grads, a, m * k);
                    if ta {
                        T::gemm(k, n, m, bv, tb, g, true, ga, true);
                    } else {
                        T::gemm(m, n, k, g, false, bv, !tb, ga, true);
                    }
                }
                if self.wants(b) {
                    let gb = acc(grads, b, k * n);
                    if tb {
                        T::gemm(n, m, k, g, true, av, ta, gb, true);
                    } else {
                        T::gemm(k, m, n, av, !ta, g, false, gb, true);
                    }
                }
            }
            Op::Conv2d { input, kernel, geom, cols } => {
                let (input, kernel) = (*input, *kernel);
                let p = geom.out_pixels();
                let kl = geom.patch_len();
                let unfolded: &[T] = if cols.is_empty() {
                    self.nodes[input].value.data()
                } else {
                    cols
                };
                if self.wants(kernel) {
                    let gk = acc(grads, kernel, geom.c_out * kl);
                    T::gemm(geom.c_out, p, kl, g, false, unfolded, true, gk, true);
                }
                if self.wants(input) {
                    let kv = self.nodes[kernel].value.data();
                    let n_in = geom.c_in * geom.h * geom.w;
                    if cols.is_empty() {
                        let gi = acc(grads, input, n_in);
                        T::gemm(kl, geom.c_out, p, kv, true, g, false, gi, true);
                    } else {
                        let mut dcols = vec![T::zero(); kl * p];
                        T::gemm(kl, geom.c_out, p, kv, true, g, false, &mut dcols, false);
                        let gi = acc(grads, input, n_in);
                        geom.col2im(&dcols, gi);
                    }
                }
            }
            Op::AddBias { x, bias, axis } => {
                if self.wants(*x) {
                    add_assign(acc(grads, *x, g.len()), g);
                }
                if self.wants(*bias) {
                    let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                    let gb = acc(grads, *bias, len);
                    for o in 0..outer {
                        for (j, gbj) in gb.iter_mut().enumerate() {
                            let base = (o * len + j) * inner;
                            *gbj += g[base..base + inner].iter().copied().sum::<T>();
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for &v in [a, b] {
                    if self.wants(v) {
                        add_assign(acc(grads, v, g.len()), g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    add_assign(acc(grads, *a, g.len()), g);
                }
                if self.wants(*b) {
                    for (o, &v) in acc(grads, *b, g.len()).iter_mut().zip(g) {
                        *o -= v;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.wants(a) {
                    let bv = self.nodes[b].value.data();
                    for ((o, &gv), &y) in acc(grads, a, g.len()).iter_mut().zip(g).zip(bv) {
                        *o += gv * y;
                    }
                }
                if self.wants(b) {
                    let av = self.nodes[a].value.data();
                    for ((o, &gv), &x) in acc(grads, b, g.len()).iter_mut().zip(g).zip(av) {
                        *o += gv * x;
                    }
                }
            }
            Op::Scale(x, s) => {
                if self.wants(*x) {
                    for (o, &gv) in acc(grads, *x, g.len()).iter_mut().zip(g) {
                        *o += gv * *s;
                    }
                }
            }
            Op::Act(x, kind) => {
                if self.wants(*x) {
                    let y = node.value.data();
                    for ((o, &gv), &yv) in acc(grads, *x, g.len()).iter_mut().zip(g).zip(y) {
                        *o += gv * kind.derivative_from_output(yv);
                    }
                }
            }
            Op::Softmax { x, axis } => {
                if self.wants(*x) {
                    let y = node.value.data();
                    let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                    let gx = acc(grads, *x, g.len());
                    for o in 0..outer {
                        for q in 0..inner {
                            let base = o * len * inner + q;
                            let mut dot = T::zero();
                            for j in 0..len {
                                dot += g[base + j * inner] * y[base + j * inner];
                            }
                            for j in 0..len {
                                let idx = base + j * inner;
                                gx[idx] += y[idx] * (g[idx] - dot);
                            }
                        }
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &inp in inputs {
                    let len = self.nodes[inp].value.shape()[*axis];
                    if self.wants(inp) {
                        let gi = acc(grads, inp, outer * len * inner);
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            add_assign(&mut gi[o * len * inner..(o + 1) * len * inner], &g[src..src + len * inner]);
                        }
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                if self.wants(*x) {
                    let src_shape = self.nodes[*x].value.shape();
                    let (outer, alen, inner) = split_axis(src_shape, *axis);
                    let len = node.value.shape()[*axis];
                    let gx = acc(grads, *x, outer * alen * inner);
                    for o in 0..outer {
                        let base = (o * alen + start) * inner;
                        add_assign(&mut gx[base..base + len * inner], &g[o * len * inner..(o + 1) * len * inner]);
                    }
                }
            }
            Op::Reshape(x) => {
                if self.wants(*x) {
                    add_assign(acc(grads, *x, g.len()), g);
                }
            }
            Op::Transpose { x, rows, cols } => {
                if self.wants(*x) {
                    // output is cols×rows; gradient transposes back
                    let back = ops::transpose_data(g, *cols, *rows);
                    add_assign(acc(grads, *x, g.len()), &back);
                }
            }
            Op::GridSample { map, coords } => {
                let (map, coords) = (*map, *coords);
                let mshape = self.nodes[map].value.shape();
                let (c, h, w) = (mshape[0], mshape[1], mshape[2]);
                let mv = self.nodes[map].value.data();
                let cv = self.nodes[coords].value.data();
                let npts = cv.len() / 2;
                let want_map = self.wants(map);
                let want_coords = self.wants(coords);
                let mut gmap = want_map.then(|| vec![T::zero(); c * h * w]);
                let mut gcoords = want_coords.then(|| vec![T::zero(); npts * 2]);
                for pt in 0..npts {
                    let taps = ops::bilinear_taps(cv[2 * pt], cv[2 * pt + 1], h, w);
                    for ch in 0..c {
                        let gv = g[pt * c + ch];
                        for corner in 0..4 {
                            let Some(idx) = taps.index[corner] else { continue };
                            if let Some(gm) = gmap.as_mut() {
                                gm[ch * h * w + idx] += gv * taps.weight[corner];
                            }
                            if let Some(gc) = gcoords.as_mut() {
                                let v = mv[ch * h * w + idx];
                                gc[2 * pt] += gv * taps.dweight_dx[corner] * v;
                                gc[2 * pt + 1] += gv * taps.dweight_dy[corner] * v;
                            }
                        }
                    }
                }
                if let Some(gm) = gmap {
                    add_assign(acc(grads, map, gm.len()), &gm);
                }
                if let Some(gc) = gcoords {
                    add_assign(acc(grads, coords, gc.len()), &gc);
                }
            }
            Op::SampleRows { volume, coords } => {
                let (volume, coords) = (*volume, *coords);
                let vshape = self.nodes[volume].value.shape();
                let (r, h, w) = (vshape[0], vshape[1], vshape[2]);
                let k = node.value.shape()[1];
                let vv = self.nodes[volume].value.data();
                let cv = self.nodes[coords].value.data();
                let want_vol = self.wants(volume);
                let want_coords = self.wants(coords);
                let mut gcoords = want_coords.then(|| vec![T::zero(); r * k * 2]);
                let mut gvol = want_vol.then(|| acc(grads, volume, r * h * w));
                for row in 0..r {
                    for j in 0..k {
                        let gv = g[row * k + j];
                        if gv == T::zero() {
                            continue;
                        }
                        let ci = (row * k + j) * 2;
                        let taps = ops::bilinear_taps(cv[ci], cv[ci + 1], h, w);
                        for corner in 0..4 {
                            let Some(idx) = taps.index[corner] else { continue };
                            if let Some(gm) = gvol.as_mut() {
                                gm[row * h * w + idx] += gv * taps.weight[corner];
                            }
                            if let Some(gc) = gcoords.as_mut() {
                                let v = vv[row * h * w + idx];
                                gc[ci] += gv * taps.dweight_dx[corner] * v;
                                gc[ci + 1] += gv * taps.dweight_dy[corner] * v;
                            }
                        }
                    }
                }
                if let Some(gc) = gcoords {
                    add_assign(acc(grads, coords, gc.len()), &gc);
                }
            }
            Op::AvgPool2(x) => {
                if self.wants(*x) {
                    let src_shape = self.nodes[*x].value.shape();
                    let rk = src_shape.len();
                    let (h, w) = (src_shape[rk - 2], src_shape[rk - 1]);
                    let (ho, wo) = (h / 2, w / 2);
                    let planes = g.len() / (ho * wo);
                    let quarter = T::from_f64_lossy(0.25);
                    let gx = acc(grads, *x, planes * h * w);
                    for p in 0..planes {
                        for y in 0..ho {
                            for xx in 0..wo {
                                let gv = g[p * ho * wo + y * wo + xx] * quarter;
                                let base = p * h * w;
                                gx[base + 2 * y * w + 2 * xx] += gv;
                                gx[base + 2 * y * w + 2 * xx + 1] += gv;
                                gx[base + (2 * y + 1) * w + 2 * xx] += gv;
                                gx[base + (2 * y + 1) * w + 2 * xx + 1] += gv;
                            }
                        }
                    }
                }
            }
            Op::Upsample { x, uh, uw } => {
                if self.wants(*x) {
                    let s = self.nodes[*x].value.shape();
                    let (c, h, w) = (s[0], s[1], s[2]);
                    let (hh, ww) = (uh.len() / h, uw.len() / w);
                    let mut tmp = vec![T::zero(); h * ww];
                    let gx = acc(grads, *x, c * h * w);
                    for ch in 0..c {
                        // dtmp = Uhᵀ · g ; dx = dtmp · Uw
                        T::gemm(h, hh, ww, uh, true, &g[ch * hh * ww..(ch + 1) * hh * ww], false, &mut tmp, false);
                        T::gemm(h, ww, w, &tmp, false, uw, false, &mut gx[ch * h * w..(ch + 1) * h * w], true);
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let d = self.nodes[*gamma].value.len();
                let rows = rstd.len();
                let gam = self.nodes[*gamma].value.data();
                if self.wants(*gamma) {
                    let gg = acc(grads, *gamma, d);
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if self.wants(*beta) {
                    let gb = acc(grads, *beta, d);
                    for r in 0..rows {
                        add_assign(gb, &g[r * d..(r + 1) * d]);
                    }
                }
                if self.wants(*x) {
                    let dn = T::from_usize(d).expect("d fits");
                    let gx = acc(grads, *x, rows * d);
                    let mut dxhat = vec![T::zero(); d];
                    for r in 0..rows {
                        let mut mean_d = T::zero();
                        let mut mean_dx = T::zero();
                        for j in 0..d {
                            dxhat[j] = g[r * d + j] * gam[j];
                            mean_d += dxhat[j];
                            mean_dx += dxhat[j] * xhat[r * d + j];
                        }
                        mean_d /= dn;
                        mean_dx /= dn;
                        for j in 0..d {
                            gx[r * d + j] += rstd[r] * (dxhat[j] - mean_d - xhat[r * d + j] * mean_dx);
                        }
                    }
                }
            }
            Op::L1 { pred, target, mask, count } => {
                if *count == 0 {
                    return;
                }
                let scale = g[0] / T::from_usize(*count).expect("count fits");
                let pv = self.nodes[*pred].value.data();
                let tv = self.nodes[*target].value.data();
                let signs: Vec<T> = pv
                    .iter()
                    .zip(tv)
                    .zip(mask)
                    .map(|((&p, &t), &m)| {
                        if m == T::zero() || p == t {
                            T::zero()
                        } else if p > t {
                            scale
                        } else {
                            -scale
                        }
                    })
                    .collect();
                if self.wants(*pred) {
                    add_assign(acc(grads, *pred, signs.len()), &signs);
                }
                if self.wants(*target) {
                    for (o, &s) in acc(grads, *target, signs.len()).iter_mut().zip(&signs) {
                        *o -= s;
                    }
                }
            }
            Op::Sum(x) => {
                if self.wants(*x) {
                    for o in acc(grads, *x, self.nodes[*x].value.len()).iter_mut() {
                        *o += g[0];
                    }
                }
            }
        }
    }
}

fn acc<T: Float>(grads: &mut [Option<Vec<T>>], idx: usize, len: usize) -> &mut [T] {
    grads[idx].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_assign<T: Float>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap().with_grad());
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap().get(x).unwrap();
        assert_eq!(g.data(), &[1.0; 6]);
    }

    #[test]
    fn relu_gradient_is_zero_for_negative_inputs() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64(&[3], &[-2.0, -0.1, 4.0]).unwrap().with_grad());
        let y = tape.relu(x).unwrap();
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap().get(x).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros(&[2]).with_grad());
        assert!(matches!(tape.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f32>::new();
        let c = tape.constant(Tensor::full(&[2], 3.0));
        let x = tape.leaf(Tensor::full(&[2], 1.0).with_grad());
        let y = tape.mul(c, x).unwrap();
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn params_are_recorded_once_and_accumulate() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::full(&[2], 2.0));
        let mut tape = Tape::new();
        let a = tape.param(&store, w);
        let b = tape.param(&store, w);
        assert_eq!(a, b);
        let y = tape.mul(a, b).unwrap();
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap().for_params(&store);
        assert_eq!(g[0].data(), &[4.0, 4.0]);
    }
}
