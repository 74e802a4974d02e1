use std::sync::Arc;

use super::kernels::{matmul_acc, matmul_at_acc, matmul_bt_acc};
use super::{axis_split, Real, Rng, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Sigmoid,
    Relu,
}

impl Unary {
    #[inline]
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => {
                if x >= T::zero() {
                    T::one() / (T::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (T::one() + e)
                }
            }
            Unary::Relu => x.max(T::zero()),
        }
    }

    /// Derivative expressed through the forward output `y`.
    #[inline]
    fn derivative<T: Real>(self, y: T) -> T {
        match self {
            Unary::Tanh => T::one() - y * y,
            Unary::Sigmoid => y * (T::one() - y),
            Unary::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

enum Op<T> {
    Leaf,
    Param(usize),
    MatMul { a: Var, b: Var, b_transposed: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias { x: Var, bias: Var },
    Affine { x: Var, scale: T },
    Unary { x: Var, kind: Unary },
    Softmax { x: Var, axis: usize },
    MaskedSoftmax { x: Var },
    L2Normalize { x: Var, axis: usize, norms: Vec<T>, eps: T },
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Reshape { x: Var },
    SumAll(Var),
    SumSquares(Var),
    GatherRows { table: Var, indices: Vec<usize> },
    Tile { x: Var },
    AddBroadcastMid { x: Var, y: Var },
    ScalePositions { values: Var, weights: Var },
    WeightedSum { weights: Var, values: Var },
    GatherPositions { x: Var, positions: Vec<usize> },
    SelectRows { when_true: Var, when_false: Var, mask: Vec<bool> },
    MulConst { x: Var, factor: Tensor<T> },
    CrossEntropy { logits: Var, targets: Vec<usize>, weights: Vec<T>, probs: Vec<T> },
}

struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Define-by-run computation record. Build a fresh tape for every step.
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(usize, Var)>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for the parameter registered under `param_index`, if reachable.
    pub fn param(&self, param_index: usize) -> Option<&Tensor<T>> {
        self.params
            .iter()
            .find(|(i, _)| *i == param_index)
            .and_then(|(_, v)| self.get(*v))
    }

    /// `(param index, gradient)` for every registered parameter; unreachable
    /// parameters are reported as zeros of the right shape.
    pub fn into_param_grads(mut self, shapes: &[&[usize]]) -> Vec<Tensor<T>> {
        let mut out: Vec<Tensor<T>> = shapes.iter().map(|s| Tensor::zeros(s)).collect();
        for &(i, v) in &self.params {
            if let Some(g) = self.grads[v.0].take() {
                out[i] = g;
            }
        }
        out
    }
}

fn same_shape(op: &'static str, a: &Tensor<impl Real>, b: &Tensor<impl Real>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, shape: &[usize], f: impl FnOnce(&mut [T])) {
    let g = slot.get_or_insert_with(|| Tensor::zeros(shape));
    f(g.data_mut());
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf that is not a model parameter.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Register model parameter `index`; storage is shared, not copied.
    pub fn param(&mut self, index: usize, value: Arc<Tensor<T>>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Param(index),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, b_transposed: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 {
            return Err(Error::dim("matmul", av.shape(), bv.shape()));
        }
        let (m, k) = (av.shape()[0], av.shape()[1]);
        let (kb, n) = if b_transposed {
            (bv.shape()[1], bv.shape()[0])
        } else {
            (bv.shape()[0], bv.shape()[1])
        };
        if k != kb {
            return Err(Error::dim("matmul", av.shape(), bv.shape()));
        }
        let mut out = vec![T::zero(); m * n];
        if b_transposed {
            matmul_bt_acc(av.data(), bv.data(), &mut out, m, k, n);
        } else {
            matmul_acc(av.data(), bv.data(), &mut out, m, k, n);
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul { a, b, b_transposed }, rg))
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(op, av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// `x + bias`, with `bias` broadcast over every leading index.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let n = bv.numel();
        if bv.rank() != 1 || xv.shape().last() != Some(&n) {
            return Err(Error::dim("add_bias", xv.shape(), bv.shape()));
        }
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(n) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let out = Tensor::new(xv.shape(), out)?;
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, Op::AddBias { x, bias }, rg))
    }

    /// `scale · x + shift`
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| scale * v + shift).collect();
        let out = Tensor::new(xv.shape(), data).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(out, Op::Affine { x, scale }, rg)
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        self.affine(x, factor, T::zero())
    }

    pub fn unary(&mut self, kind: Unary, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| kind.apply(v)).collect();
        let out = Tensor::new(xv.shape(), data).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(out, Op::Unary { x, kind }, rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(Unary::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(Unary::Relu, x)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.rank() {
            return Err(Error::Contract(format!("softmax axis {axis} on rank {}", xv.rank())));
        }
        let (outer, n, inner) = axis_split(xv.shape(), axis);
        let src = xv.data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| src[idx(j)]).fold(T::neg_infinity(), T::max);
                let mut sum = T::zero();
                for j in 0..n {
                    let e = (src[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    sum += e;
                }
                for j in 0..n {
                    out[idx(j)] /= sum;
                }
            }
        }
        let out = Tensor::new(xv.shape(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Softmax { x, axis }, rg))
    }

    /// Softmax over the last axis restricted to positions where `mask` is true;
    /// masked positions receive exactly zero. Fails if a row is fully masked.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let xv = self.value(x);
        if mask.len() != xv.numel() || xv.rank() == 0 {
            return Err(Error::dim("masked_softmax", xv.shape(), &[mask.len()]));
        }
        let n = *xv.shape().last().unwrap();
        let mut out = vec![T::zero(); xv.numel()];
        for ((row, m), o) in xv.data().chunks(n).zip(mask.chunks(n)).zip(out.chunks_mut(n)) {
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &keep)| keep)
                .map(|(&v, _)| v)
                .fold(T::neg_infinity(), T::max);
            if max == T::neg_infinity() {
                return Err(Error::Contract("attention over a fully masked row".into()));
            }
            let mut sum = T::zero();
            for j in 0..n {
                if m[j] {
                    let e = (row[j] - max).exp();
                    o[j] = e;
                    sum += e;
                }
            }
            for v in o.iter_mut() {
                *v /= sum;
            }
        }
        let out = Tensor::new(xv.shape(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::MaskedSoftmax { x }, rg))
    }

    /// Divide every slice along `axis` by `max(‖slice‖₂, eps)`.
    pub fn l2_normalize(&mut self, x: Var, axis: usize, eps: T) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.rank() {
            return Err(Error::Contract(format!("l2_normalize axis {axis} on rank {}", xv.rank())));
        }
        let (out, norms) = l2_normalize_data(xv, axis, eps);
        let out = Tensor::new(xv.shape(), out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::L2Normalize { x, axis, norms, eps }, rg))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        if inputs.len() == 1 {
            return Ok(first);
        }
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::Contract(format!("concat axis {axis} on rank {}", base.len())));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let out = Tensor::new(&shape, out)?;
        let rg = self.rg(inputs);
        Ok(self.push(out, Op::Concat { inputs: inputs.to_vec(), axis }, rg))
    }

    /// `len` consecutive entries along `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.rank() || start + len > xv.shape()[axis] {
            return Err(Error::dim("slice", xv.shape(), &[axis, start, len]));
        }
        let (outer, n, inner) = axis_split(xv.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&xv.data()[base..base + len * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = len;
        let out = Tensor::new(&shape, out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Slice { x, axis, start }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = (*self.nodes[x.0].value).clone().reshaped(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Reshape { x }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).sum_squares();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::SumSquares(x), rg)
    }

    /// Embedding lookup: rows of a `[V, d]` table.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.rank() != 2 {
            return Err(Error::dim("gather_rows", tv.shape(), &[]));
        }
        let (rows, d) = (tv.shape()[0], tv.shape()[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Contract(format!("index {bad} out of range for table of {rows} rows")));
        }
        let out = tv.select_rows(indices);
        let out = out.reshaped(&[indices.len(), d])?;
        let rg = self.rg(&[table]);
        Ok(self.push(out, Op::GatherRows { table, indices: indices.to_vec() }, rg))
    }

    /// `[B, D] -> [B, P, D]` by repeating each row `reps` times.
    pub fn tile(&mut self, x: Var, reps: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(Error::dim("tile", xv.shape(), &[reps]));
        }
        let (b, d) = (xv.shape()[0], xv.shape()[1]);
        let mut out = Vec::with_capacity(b * reps * d);
        for row in xv.data().chunks(d) {
            for _ in 0..reps {
                out.extend_from_slice(row);
            }
        }
        let out = Tensor::new(&[b, reps, d], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Tile { x }, rg))
    }

    /// `x[b, p, :] + y[b, :]`
    pub fn add_broadcast_mid(&mut self, x: Var, y: Var) -> Result<Var> {
        let (xv, yv) = (self.value(x), self.value(y));
        let ok = xv.rank() == 3 && yv.rank() == 2 && xv.shape()[0] == yv.shape()[0] && xv.shape()[2] == yv.shape()[1];
        if !ok {
            return Err(Error::dim("add_broadcast_mid", xv.shape(), yv.shape()));
        }
        let (b, p, d) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let mut out = xv.data().to_vec();
        for bi in 0..b {
            let yr = &yv.data()[bi * d..(bi + 1) * d];
            for pi in 0..p {
                let base = (bi * p + pi) * d;
                for (o, &yy) in out[base..base + d].iter_mut().zip(yr) {
                    *o += yy;
                }
            }
        }
        let out = Tensor::new(xv.shape(), out)?;
        let rg = self.rg(&[x, y]);
        Ok(self.push(out, Op::AddBroadcastMid { x, y }, rg))
    }

    /// `values[b, p, :] * weights[b, p]`
    pub fn scale_positions(&mut self, values: Var, weights: Var) -> Result<Var> {
        let (vv, wv) = (self.value(values), self.value(weights));
        if vv.rank() != 3 || wv.shape() != &vv.shape()[..2] {
            return Err(Error::dim("scale_positions", vv.shape(), wv.shape()));
        }
        let d = vv.shape()[2];
        let mut out = vv.data().to_vec();
        for (row, &w) in out.chunks_mut(d).zip(wv.data()) {
            for o in row {
                *o *= w;
            }
        }
        let out = Tensor::new(vv.shape(), out)?;
        let rg = self.rg(&[values, weights]);
        Ok(self.push(out, Op::ScalePositions { values, weights }, rg))
    }

    /// `Σ_p weights[b, p] · values[b, p, :]`
    pub fn weighted_sum(&mut self, weights: Var, values: Var) -> Result<Var> {
        let (wv, vv) = (self.value(weights), self.value(values));
        if vv.rank() != 3 || wv.shape() != &vv.shape()[..2] {
            return Err(Error::dim("weighted_sum", wv.shape(), vv.shape()));
        }
        let (b, p, d) = (vv.shape()[0], vv.shape()[1], vv.shape()[2]);
        let mut out = vec![T::zero(); b * d];
        for bi in 0..b {
            let o = &mut out[bi * d..(bi + 1) * d];
            for pi in 0..p {
                let w = wv.data()[bi * p + pi];
                if w == T::zero() {
                    continue;
                }
                let base = (bi * p + pi) * d;
                for (acc, &v) in o.iter_mut().zip(&vv.data()[base..base + d]) {
                    *acc += w * v;
                }
            }
        }
        let out = Tensor::new(&[b, d], out)?;
        let rg = self.rg(&[weights, values]);
        Ok(self.push(out, Op::WeightedSum { weights, values }, rg))
    }

    /// `x[b, positions[b], :]` for `x: [B, S, D]`.
    pub fn gather_positions(&mut self, x: Var, positions: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 3 || positions.len() != xv.shape()[0] || positions.iter().any(|&p| p >= xv.shape()[1]) {
            return Err(Error::dim("gather_positions", xv.shape(), &[positions.len()]));
        }
        let (s, d) = (xv.shape()[1], xv.shape()[2]);
        let mut out = Vec::with_capacity(positions.len() * d);
        for (bi, &p) in positions.iter().enumerate() {
            let base = (bi * s + p) * d;
            out.extend_from_slice(&xv.data()[base..base + d]);
        }
        let out = Tensor::new(&[positions.len(), d], out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::GatherPositions { x, positions: positions.to_vec() }, rg))
    }

    /// Row-wise choice between two equally shaped tensors.
    pub fn select_rows(&mut self, mask: &[bool], when_true: Var, when_false: Var) -> Result<Var> {
        let (tv, fv) = (self.value(when_true), self.value(when_false));
        same_shape("select_rows", tv, fv)?;
        if tv.rank() == 0 || tv.shape()[0] != mask.len() {
            return Err(Error::dim("select_rows", tv.shape(), &[mask.len()]));
        }
        let d = tv.numel() / mask.len();
        let mut out = Vec::with_capacity(tv.numel());
        for (i, &m) in mask.iter().enumerate() {
            let src = if m { tv } else { fv };
            out.extend_from_slice(&src.data()[i * d..(i + 1) * d]);
        }
        let out = Tensor::new(tv.shape(), out)?;
        let rg = self.rg(&[when_true, when_false]);
        Ok(self.push(out, Op::SelectRows { when_true, when_false, mask: mask.to_vec() }, rg))
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(&mut self, x: Var, factor: Tensor<T>) -> Result<Var> {
        let xv = self.value(x);
        same_shape("mul_const", xv, &factor)?;
        let data = xv.data().iter().zip(factor.data()).map(|(&a, &b)| a * b).collect();
        let out = Tensor::new(xv.shape(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::MulConst { x, factor }, rg))
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)`; identity when not training.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut Rng, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - p));
        let shape = self.shape(x).to_vec();
        let n: usize = shape.iter().product();
        let mask = (0..n)
            .map(|_| if rng.bernoulli(p) { T::zero() } else { keep })
            .collect();
        self.mul_const(x, Tensor::new(&shape, mask)?)
    }

    /// `Σ_b weights[b] · (−log softmax(logits[b])[targets[b]])` as a scalar.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[T]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() != 2 || lv.shape()[0] != targets.len() || targets.len() != weights.len() {
            return Err(Error::dim("cross_entropy", lv.shape(), &[targets.len(), weights.len()]));
        }
        let v = lv.shape()[1];
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::Contract(format!("target {bad} outside vocabulary of {v}")));
        }
        let mut probs = vec![T::zero(); lv.numel()];
        let mut total = T::zero();
        for (b, row) in lv.data().chunks(v).enumerate() {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for (p, &x) in probs[b * v..(b + 1) * v].iter_mut().zip(row) {
                *p = (x - max).exp();
                sum += *p;
            }
            for p in &mut probs[b * v..(b + 1) * v] {
                *p /= sum;
            }
            if weights[b] != T::zero() {
                let log_z = max + sum.ln();
                total += weights[b] * (log_z - row[targets[b]]);
            }
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(total),
            Op::CrossEntropy { logits, targets: targets.to_vec(), weights: weights.to_vec(), probs },
            rg,
        ))
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Contract(format!("backward from non-scalar of shape {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(p) => Some((p, Var(i))),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        let y = &*node.value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul { a, b, b_transposed } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = y.shape()[1];
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], av.shape(), |ga| {
                        if *b_transposed {
                            // b: [n, k]; ga += g · b
                            matmul_acc(gd, bv.data(), ga, m, n, k);
                        } else {
                            // b: [k, n]; ga += g · bᵀ
                            matmul_bt_acc(gd, bv.data(), ga, m, n, k);
                        }
                    });
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], bv.shape(), |gb| {
                        if *b_transposed {
                            // gb[n, k] += gᵀ · a
                            matmul_at_acc(gd, av.data(), gb, m, n, k);
                        } else {
                            matmul_at_acc(av.data(), gd, gb, m, k, n);
                        }
                    });
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.wants(*v) {
                        accumulate(&mut grads[v.0], y.shape(), |gv| add_into(gv, gd));
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], y.shape(), |gv| add_into(gv, gd));
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], y.shape(), |gv| {
                        for (o, &x) in gv.iter_mut().zip(gd) {
                            *o -= x;
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], y.shape(), |gv| {
                        for ((o, &x), &w) in gv.iter_mut().zip(gd).zip(bv.data()) {
                            *o += x * w;
                        }
                    });
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], y.shape(), |gv| {
                        for ((o, &x), &w) in gv.iter_mut().zip(gd).zip(av.data()) {
                            *o += x * w;
                        }
                    });
                }
            }
            Op::AddBias { x, bias } => {
                if self.wants(*x) {
                    accumulate(&mut grads[x.0], y.shape(), |gv| add_into(gv, gd));
                }
                if self.wants(*bias) {
                    let n = self.value(*bias).numel();
                    accumulate(&mut grads[bias.0], &[n], |gb| {
                        for row in gd.chunks(n) {
                            add_into(gb, row);
                        }
                    });
                }
            }
            Op::Affine { x, scale } => {
                if self.wants(*x) {
                    accumulate(&mut grads[x.0], y.shape(), |gv| {
                        for (o, &v) in gv.iter_mut().zip(gd) {
                            *o += *scale * v;
                        }
                    });
                }
            }
            Op::Unary { x, kind } => {
                if self.wants(*x) {
                    accumulate(&mut grads[x.0], y.shape(), |gv| {
                        for ((o, &v), &out) in gv.iter_mut().zip(gd).zip(y.data()) {
                            *o += v * kind.derivative(out);
                        }
                    });
                }
            }
            Op::Softmax { x, axis } => {
                if self.wants(*x) {
                    let (outer, n, inner) = axis_split(y.shape(), *axis);
                    let yd = y.data();
                    accumulate(&mut grads[x.0], y.shape(), |gv| {
                        for o in 0..outer {
                            for i in 0..inner {
                                let idx = |j: usize| (o * n + j) * inner + i;
                                let dot: T = (0..n).map(|j| gd[idx(j)] * yd[idx(j)]).sum();
                                for j in 0..n {
                                    gv[idx(j)] += yd[idx(j)] * (gd[idx(j)] - dot);
                                }
                            }
                        }
                    });
                }
            }
            Op::MaskedSoftmax { x } => {
                if self.wants(*x) {
                    let n = *y.shape().last().unwrap();
                    accumulate(&mut grads[x.0], y.shape(), |gv| {
                        for ((grow, yrow), orow) in gd.chunks(n).zip(y.data().chunks(n)).zip(gv.chunks_mut(n)) {
                            let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                            for j in 0..n {
                                orow[j] += yrow[j] * (grow[j] - dot);
                            }
                        }
                    });
                }
            }
            Op::L2Normalize { x, axis, norms, eps } => {
                if self.wants(*x) {
                    let (outer, n, inner) = axis_split(y.shape(), *axis);
                    let yd = y.data();
                    accumulate(&mut grads[x.0], y.shape(), |gv| {
                        for o in 0..outer {
                            for i in 0..inner {
                                let idx = |j: usize| (o * n + j) * inner + i;
                                let norm = norms[o * inner + i];
                                if norm > *eps {
                                    let dot: T = (0..n).map(|j| gd[idx(j)] * yd[idx(j)]).sum();
                                    for j in 0..n {
                                        gv[idx(j)] += (gd[idx(j)] - yd[idx(j)] * dot) / norm;
                                    }
                                } else {
                                    for j in 0..n {
                                        gv[idx(j)] += gd[idx(j)] / *eps;
                                    }
                                }
                            }
                        }
                    });
                }
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = axis_split(y.shape(), *axis);
                let mut offset = 0;
                for v in inputs {
                    let shape = self.shape(*v);
                    let width = shape[*axis] * inner;
                    if self.wants(*v) {
                        accumulate(&mut grads[v.0], shape, |gv| {
                            for o in 0..outer {
                                let src = &gd[o * total * inner + offset..][..width];
                                add_into(&mut gv[o * width..(o + 1) * width], src);
                            }
                        });
                    }
                    offset += width;
                }
            }
            Op::Slice { x, axis, start } => {
                if self.wants(*x) {
                    let xs = self.shape(*x);
                    let (outer, n, inner) = axis_split(xs, *axis);
                    let len = y.shape()[*axis];
                    accumulate(&mut grads[x.0], xs, |gv| {
                        for o in 0..outer {
                            let base = (o * n + start) * inner;
                            add_into(&mut gv[base..base + len * inner], &gd[o * len * inner..(o + 1) * len * inner]);
                        }
                    });
                }
            }
            Op::Reshape { x } => {
                if self.wants(*x) {
                    accumulate(&mut grads[x.0], self.shape(*x), |gv| add_into(gv, gd));
                }
            }
            Op::SumAll(x) => {
                if self.wants(*x) {
                    let s = gd[0];
                    accumulate(&mut grads[x.0], self.shape(*x), |gv| {
                        for o in gv {
                            *o += s;
                        }
                    });
                }
            }
            Op::SumSquares(x) => {
                if self.wants(*x) {
                    let s = gd[0] + gd[0];
                    let xv = self.value(*x);
                    accumulate(&mut grads[x.0], xv.shape(), |gv| {
                        for (o, &v) in gv.iter_mut().zip(xv.data()) {
                            *o += s * v;
                        }
                    });
                }
            }
            Op::GatherRows { table, indices } => {
                if self.wants(*table) {
                    let ts = self.shape(*table);
                    let d = ts[1];
                    accumulate(&mut grads[table.0], ts, |gt| {
                        for (row, &i) in gd.chunks(d).zip(indices) {
                            add_into(&mut gt[i * d..(i + 1) * d], row);
                        }
                    });
                }
            }
            Op::Tile { x } => {
                if self.wants(*x) {
                    let (p, d) = (y.shape()[1], y.shape()[2]);
                    accumulate(&mut grads[x.0], self.shape(*x), |gv| {
                        for (bi, out) in gv.chunks_mut(d).enumerate() {
                            for pi in 0..p {
                                add_into(out, &gd[(bi * p + pi) * d..][..d]);
                            }
                        }
                    });
                }
            }
            Op::AddBroadcastMid { x, y: yb } => {
                if self.wants(*x) {
                    accumulate(&mut grads[x.0], y.shape(), |gv| add_into(gv, gd));
                }
                if self.wants(*yb) {
                    let (p, d) = (y.shape()[1], y.shape()[2]);
                    accumulate(&mut grads[yb.0], self.shape(*yb), |gv| {
                        for (bi, out) in gv.chunks_mut(d).enumerate() {
                            for pi in 0..p {
                                add_into(out, &gd[(bi * p + pi) * d..][..d]);
                            }
                        }
                    });
                }
            }
            Op::ScalePositions { values, weights } => {
                let d = y.shape()[2];
                let (vv, wv) = (self.value(*values), self.value(*weights));
                if self.wants(*values) {
                    accumulate(&mut grads[values.0], y.shape(), |gv| {
                        for ((out, grow), &w) in gv.chunks_mut(d).zip(gd.chunks(d)).zip(wv.data()) {
                            for (o, &x) in out.iter_mut().zip(grow) {
                                *o += w * x;
                            }
                        }
                    });
                }
                if self.wants(*weights) {
                    accumulate(&mut grads[weights.0], wv.shape(), |gw| {
                        for ((o, grow), vrow) in gw.iter_mut().zip(gd.chunks(d)).zip(vv.data().chunks(d)) {
                            *o += grow.iter().zip(vrow).map(|(&a, &b)| a * b).sum();
                        }
                    });
                }
            }
            Op::WeightedSum { weights, values } => {
                let (wv, vv) = (self.value(*weights), self.value(*values));
                let (p, d) = (vv.shape()[1], vv.shape()[2]);
                if self.wants(*weights) {
                    accumulate(&mut grads[weights.0], wv.shape(), |gw| {
                        for (i, o) in gw.iter_mut().enumerate() {
                            let bi = i / p;
                            let grow = &gd[bi * d..(bi + 1) * d];
                            let vrow = &vv.data()[i * d..(i + 1) * d];
                            *o += grow.iter().zip(vrow).map(|(&a, &b)| a * b).sum();
                        }
                    });
                }
                if self.wants(*values) {
                    accumulate(&mut grads[values.0], vv.shape(), |gvals| {
                        for (i, out) in gvals.chunks_mut(d).enumerate() {
                            let w = wv.data()[i];
                            let bi = i / p;
                            for (o, &x) in out.iter_mut().zip(&gd[bi * d..(bi + 1) * d]) {
                                *o += w * x;
                            }
                        }
                    });
                }
            }
            Op::GatherPositions { x, positions } => {
                if self.wants(*x) {
                    let xs = self.shape(*x);
                    let (s, d) = (xs[1], xs[2]);
                    accumulate(&mut grads[x.0], xs, |gv| {
                        for (bi, &p) in positions.iter().enumerate() {
                            add_into(&mut gv[(bi * s + p) * d..][..d], &gd[bi * d..(bi + 1) * d]);
                        }
                    });
                }
            }
            Op::SelectRows { when_true, when_false, mask } => {
                let d = y.numel() / mask.len();
                for (v, pick) in [(when_true, true), (when_false, false)] {
                    if self.wants(*v) {
                        accumulate(&mut grads[v.0], y.shape(), |gv| {
                            for (i, &m) in mask.iter().enumerate() {
                                if m == pick {
                                    add_into(&mut gv[i * d..(i + 1) * d], &gd[i * d..(i + 1) * d]);
                                }
                            }
                        });
                    }
                }
            }
            Op::MulConst { x, factor } => {
                if self.wants(*x) {
                    accumulate(&mut grads[x.0], y.shape(), |gv| {
                        for ((o, &v), &f) in gv.iter_mut().zip(gd).zip(factor.data()) {
                            *o += v * f;
                        }
                    });
                }
            }
            Op::CrossEntropy { logits, targets, weights, probs } => {
                if self.wants(*logits) {
                    let s = gd[0];
                    let ls = self.shape(*logits);
                    let v = ls[1];
                    accumulate(&mut grads[logits.0], ls, |gl| {
                        for (b, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                            if w == T::zero() {
                                continue;
                            }
                            let row = &mut gl[b * v..(b + 1) * v];
                            for (o, &p) in row.iter_mut().zip(&probs[b * v..(b + 1) * v]) {
                                *o += s * w * p;
                            }
                            row[t] -= s * w;
                        }
                    });
                }
            }
        }
    }
}

#[inline]
fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Shared kernel for the tape op and for feature-store normalization.
pub(crate) fn l2_normalize_data<T: Real>(x: &Tensor<T>, axis: usize, eps: T) -> (Vec<T>, Vec<T>) {
    let (outer, n, inner) = axis_split(x.shape(), axis);
    let src = x.data();
    let mut out = vec![T::zero(); src.len()];
    let mut norms = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * n + j) * inner + i;
            let norm = (0..n).map(|j| src[idx(j)] * src[idx(j)]).sum::<T>().sqrt();
            let denom = norm.max(eps);
            for j in 0..n {
                out[idx(j)] = src[idx(j)] / denom;
            }
            norms.push(norm);
        }
    }
    (out, norms)
}
