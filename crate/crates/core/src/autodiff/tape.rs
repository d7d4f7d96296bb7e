//! Wengert-style tape: every primitive appends a node holding its output
//! value and whatever it needs for the vector-Jacobian product. Nodes only
//! reference earlier nodes, so reverse index order is a reverse topological
//! order.

use std::collections::HashMap;

use crate::autodiff::param::{ParamId, ParamStore};
use crate::error::TensorError;
use crate::tensor::{
    broadcast_index_map, broadcast_shape, gemm_nn, gemm_nt, gemm_tn, reduced_shape, reduction_groups,
    split_batch, validate_axes, DenseArray, Scalar,
};

/// Epsilon added to the variance in [`Tape::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate corruption of the backward pass, used to confirm that the
/// finite-difference checker actually catches broken gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackwardFault {
    FlipReluGrad,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param,
    MatMul { a: Var, b: Var },
    TransposeLast2(Var),
    Reshape(Var),
    Permute { x: Var, perm: Vec<usize> },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: T },
    Relu(Var),
    Square(Var),
    Sum { x: Var, axes: Vec<usize> },
    Softmax { x: Var, axes: Vec<usize> },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, inv_std: Vec<T> },
    DepthwiseConv { x: Var, kernel: Var, bias: Var, side: usize },
    Stack { inputs: Vec<Var>, axis: usize },
    CrossEntropy { logits: Var, target: usize, probs: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: DenseArray<T>,
    op: Op<T>,
}

/// Record of primitive operations for one forward pass.
///
/// A tape is built and consumed on one thread; parameters enter through
/// [`Tape::param`] as snapshots, and [`Tape::backward`] hands back gradients
/// that the caller accumulates into its [`ParamStore`].
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
    fault: Option<BackwardFault>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            fault: None,
        }
    }

    pub fn inject_fault(&mut self, fault: BackwardFault) {
        self.fault = Some(fault);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &DenseArray<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: DenseArray<T>, op: Op<T>, name: &'static str) -> Result<Var, TensorError> {
        let node = self.nodes.len();
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: name, node });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(node))
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: DenseArray<T>) -> Result<Var, TensorError> {
        self.push(value, Op::Leaf, "constant")
    }

    /// Differentiable parameter leaf. Repeated calls for the same id return
    /// the same node, so every use site feeds one adjoint.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Result<Var, TensorError> {
        if let Some(&v) = self.param_vars.get(&id) {
            return Ok(v);
        }
        let v = self.push(store.get(id).value.clone(), Op::Param, "param")?;
        self.param_vars.insert(id, v);
        Ok(v)
    }

    /// Matrix product. Supports `[m,k]·[k,n]`, batched `[b,m,k]·[b,k,n]`, and
    /// `[b,m,k]·[k,n]` with the right operand shared across the batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = matmul_forward(self.value(a), self.value(b))?;
        self.push(value, Op::MatMul { a, b }, "matmul")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let value = self.value(x).transpose_last2()?;
        self.push(value, Op::TransposeLast2(x), "transpose")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(x).clone().reshape(shape)?;
        self.push(value, Op::Reshape(x), "reshape")
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(x).permute(perm)?;
        self.push(
            value,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            "permute",
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.binary(a, b, "add", |x, y| x + y)?;
        self.push(value, Op::Add { a, b }, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.binary(a, b, "sub", |x, y| x - y)?;
        self.push(value, Op::Sub { a, b }, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.binary(a, b, "mul", |x, y| x * y)?;
        self.push(value, Op::Mul { a, b }, "mul")
    }

    pub fn mul_scalar(&mut self, x: Var, factor: T) -> Result<Var, TensorError> {
        let value = self.value(x).map(|v| v * factor);
        self.push(value, Op::Scale { x, factor }, "mul_scalar")
    }

    pub fn neg(&mut self, x: Var) -> Result<Var, TensorError> {
        self.mul_scalar(x, -T::one())
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(value, Op::Relu(x), "relu")
    }

    pub fn square(&mut self, x: Var) -> Result<Var, TensorError> {
        let value = self.value(x).map(|v| v * v);
        self.push(value, Op::Square(x), "square")
    }

    /// Sum over `axes`, removing them. Summing every axis yields a rank-0 scalar.
    pub fn sum(&mut self, x: Var, axes: &[usize]) -> Result<Var, TensorError> {
        let axes = validate_axes(self.shape(x), axes)?;
        let value = reduce_sum(self.value(x), &axes);
        self.push(value, Op::Sum { x, axes }, "sum")
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var, TensorError> {
        let axes: Vec<usize> = (0..self.shape(x).len()).collect();
        if axes.is_empty() {
            return Ok(x);
        }
        self.sum(x, &axes)
    }

    pub fn mean(&mut self, x: Var, axes: &[usize]) -> Result<Var, TensorError> {
        let axes = validate_axes(self.shape(x), axes)?;
        let count: usize = axes.iter().map(|&a| self.shape(x)[a]).product();
        let s = self.sum(x, &axes)?;
        self.mul_scalar(s, T::one() / T::from_count(count))
    }

    /// Softmax over the joint group formed by `axes`; the per-group maximum is
    /// subtracted before exponentiation.
    pub fn softmax(&mut self, x: Var, axes: &[usize]) -> Result<Var, TensorError> {
        let axes = validate_axes(self.shape(x), axes)?;
        if axes.iter().any(|&a| self.shape(x)[a] == 0) {
            return Err(TensorError::Shape {
                op: "softmax",
                detail: format!("empty reduction group over axes {axes:?} of {:?}", self.shape(x)),
            });
        }
        let value = softmax_forward(self.value(x), &axes);
        self.push(value, Op::Softmax { x, axes }, "softmax")
    }

    /// Layer normalization over the last axis with affine `gain` and `bias`
    /// (both shaped like the last axis).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().ok_or(TensorError::Rank {
            op: "layer_norm",
            expected: ">= 1",
            shape: shape.clone(),
        })?;
        for p in [gain, bias] {
            if self.shape(p) != [n] {
                return Err(TensorError::Shape {
                    op: "layer_norm",
                    detail: format!("affine shape {:?} does not match last axis {n}", self.shape(p)),
                });
            }
        }
        let eps = T::from_f64_lossy(LAYER_NORM_EPS);
        let nt = T::from_count(n);
        let xv = self.value(x).data();
        let g = self.value(gain).data();
        let bb = self.value(bias).data();
        let rows = xv.len() / n;
        let mut xhat = Vec::with_capacity(xv.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xv.len());
        for r in 0..rows {
            let row = &xv[r * n..(r + 1) * n];
            let mean = row.iter().fold(T::zero(), |s, &v| s + v) / nt;
            let var = row.iter().fold(T::zero(), |s, &v| s + (v - mean) * (v - mean)) / nt;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(h * g[j] + bb[j]);
            }
        }
        let value = DenseArray::new(shape, out)?;
        self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            "layer_norm",
        )
    }

    /// Depthwise 3×3 zero-padded convolution over a `side × side` patch grid.
    ///
    /// `x` is `[n, side², channels]` (or `[side², channels]`), `kernel` is
    /// `[3, 3, channels]`, `bias` is `[channels]`. Patches are laid out
    /// row-major on the grid. The result is the convolution plus bias, without
    /// a residual.
    pub fn depthwise_conv3x3(&mut self, x: Var, kernel: Var, bias: Var, side: usize) -> Result<Var, TensorError> {
        let value = depthwise_forward(self.value(x), self.value(kernel), self.value(bias), side)?;
        self.push(
            value,
            Op::DepthwiseConv {
                x,
                kernel,
                bias,
                side,
            },
            "depthwise_conv3x3",
        )
    }

    /// Stack equally shaped arrays along a new axis inserted at `axis`.
    pub fn stack(&mut self, inputs: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = *inputs.first().ok_or(TensorError::Shape {
            op: "stack",
            detail: "no inputs".into(),
        })?;
        let base = self.shape(first).to_vec();
        if axis > base.len() {
            return Err(TensorError::InvalidAxes {
                shape: base,
                axes: vec![axis],
            });
        }
        for &v in inputs {
            if self.shape(v) != base.as_slice() {
                return Err(TensorError::Shape {
                    op: "stack",
                    detail: format!("input shape {:?} differs from {:?}", self.shape(v), base),
                });
            }
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis..].iter().product();
        let mut out = Vec::with_capacity(outer * inner * inputs.len());
        for o in 0..outer {
            for &v in inputs {
                out.extend_from_slice(&self.value(v).data()[o * inner..(o + 1) * inner]);
            }
        }
        let mut shape = base;
        shape.insert(axis, inputs.len());
        let value = DenseArray::new(shape, out)?;
        self.push(
            value,
            Op::Stack {
                inputs: inputs.to_vec(),
                axis,
            },
            "stack",
        )
    }

    /// Cross-entropy of `softmax(logits)` against `target` for a rank-1 logit
    /// vector, evaluated through log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var, TensorError> {
        let lv = self.value(logits);
        if lv.rank() != 1 || target >= lv.len() {
            return Err(TensorError::Shape {
                op: "cross_entropy",
                detail: format!("logits {:?} with target {target}", lv.shape()),
            });
        }
        let d = lv.data();
        let max = d.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let exps: Vec<T> = d.iter().map(|&v| (v - max).exp()).collect();
        let z = exps.iter().fold(T::zero(), |s, &e| s + e);
        let loss = z.ln() + max - d[target];
        let probs = exps.into_iter().map(|e| e / z).collect();
        self.push(
            DenseArray::scalar(loss),
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
            "cross_entropy",
        )
    }

    fn binary(&self, a: Var, b: Var, op: &'static str, f: impl Fn(T, T) -> T) -> Result<DenseArray<T>, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() == bv.shape() {
            let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
            return DenseArray::new(av.shape().to_vec(), data);
        }
        let shape = broadcast_shape(av.shape(), bv.shape(), op)?;
        let am = broadcast_index_map(av.shape(), &shape);
        let bm = broadcast_index_map(bv.shape(), &shape);
        let data = am
            .iter()
            .zip(&bm)
            .map(|(&i, &j)| f(av.data()[i], bv.data()[j]))
            .collect();
        DenseArray::new(shape, data)
    }

    /// Reverse pass from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NotScalar {
                shape: lv.shape().to_vec(),
            });
        }
        let mut adj: Vec<Option<DenseArray<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(DenseArray::ones(lv.shape()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf | Op::Param => {}
                Op::MatMul { a, b } => {
                    let (ga, gb) = matmul_backward(self.value(*a), self.value(*b), &g)?;
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::TransposeLast2(x) => {
                    accumulate(&mut adj, *x, g.transpose_last2()?);
                }
                Op::Reshape(x) => {
                    let shape = self.shape(*x).to_vec();
                    accumulate(&mut adj, *x, g.clone().reshape(&shape)?);
                }
                Op::Permute { x, perm } => {
                    let mut inverse = vec![0; perm.len()];
                    for (j, &p) in perm.iter().enumerate() {
                        inverse[p] = j;
                    }
                    accumulate(&mut adj, *x, g.permute(&inverse)?);
                }
                Op::Add { a, b } => {
                    accumulate(&mut adj, *a, unbroadcast(&g, self.shape(*a)));
                    accumulate(&mut adj, *b, unbroadcast(&g, self.shape(*b)));
                }
                Op::Sub { a, b } => {
                    accumulate(&mut adj, *a, unbroadcast(&g, self.shape(*a)));
                    accumulate(&mut adj, *b, unbroadcast(&g.map(|v| -v), self.shape(*b)));
                }
                Op::Mul { a, b } => {
                    let out_shape = g.shape().to_vec();
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let am = broadcast_index_map(av.shape(), &out_shape);
                    let bm = broadcast_index_map(bv.shape(), &out_shape);
                    let ga: Vec<T> = g.data().iter().zip(&bm).map(|(&gv, &j)| gv * bv.data()[j]).collect();
                    let gb: Vec<T> = g.data().iter().zip(&am).map(|(&gv, &i)| gv * av.data()[i]).collect();
                    let ga = DenseArray::new(out_shape.clone(), ga)?;
                    let gb = DenseArray::new(out_shape, gb)?;
                    accumulate(&mut adj, *a, unbroadcast(&ga, av.shape()));
                    accumulate(&mut adj, *b, unbroadcast(&gb, bv.shape()));
                }
                Op::Scale { x, factor } => {
                    let f = *factor;
                    accumulate(&mut adj, *x, g.map(|v| v * f));
                }
                Op::Relu(x) => {
                    let sign = match self.fault {
                        Some(BackwardFault::FlipReluGrad) => -T::one(),
                        None => T::one(),
                    };
                    let xv = self.value(*x);
                    let data = g
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(&gv, &v)| if v > T::zero() { sign * gv } else { T::zero() })
                        .collect();
                    accumulate(&mut adj, *x, DenseArray::new(xv.shape().to_vec(), data)?);
                }
                Op::Square(x) => {
                    let xv = self.value(*x);
                    let two = T::one() + T::one();
                    let data = g.data().iter().zip(xv.data()).map(|(&gv, &v)| two * v * gv).collect();
                    accumulate(&mut adj, *x, DenseArray::new(xv.shape().to_vec(), data)?);
                }
                Op::Sum { x, axes } => {
                    let xs = self.shape(*x).to_vec();
                    let (groups, _) = reduction_groups(&xs, axes);
                    let data = groups.iter().map(|&gi| g.data()[gi]).collect();
                    accumulate(&mut adj, *x, DenseArray::new(xs, data)?);
                }
                Op::Softmax { x, axes } => {
                    let y = &node.value;
                    let (groups, n_groups) = reduction_groups(y.shape(), axes);
                    let mut dot = vec![T::zero(); n_groups];
                    for ((&gi, &gv), &yv) in groups.iter().zip(g.data()).zip(y.data()) {
                        dot[gi] = dot[gi] + gv * yv;
                    }
                    let data = groups
                        .iter()
                        .zip(g.data())
                        .zip(y.data())
                        .map(|((&gi, &gv), &yv)| yv * (gv - dot[gi]))
                        .collect();
                    accumulate(&mut adj, *x, DenseArray::new(y.shape().to_vec(), data)?);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let shape = self.shape(*x).to_vec();
                    let n = *shape.last().expect("validated in forward");
                    let nt = T::from_count(n);
                    let gain_v = self.value(*gain).data();
                    let mut dx = Vec::with_capacity(xhat.len());
                    let mut dgain = vec![T::zero(); n];
                    let mut dbias = vec![T::zero(); n];
                    for (r, &is) in inv_std.iter().enumerate() {
                        let gr = &g.data()[r * n..(r + 1) * n];
                        let hr = &xhat[r * n..(r + 1) * n];
                        let mut sum_d = T::zero();
                        let mut sum_dh = T::zero();
                        for j in 0..n {
                            let d = gr[j] * gain_v[j];
                            sum_d = sum_d + d;
                            sum_dh = sum_dh + d * hr[j];
                            dgain[j] = dgain[j] + gr[j] * hr[j];
                            dbias[j] = dbias[j] + gr[j];
                        }
                        for j in 0..n {
                            let d = gr[j] * gain_v[j];
                            dx.push(is / nt * (nt * d - sum_d - hr[j] * sum_dh));
                        }
                    }
                    accumulate(&mut adj, *x, DenseArray::new(shape, dx)?);
                    accumulate(&mut adj, *gain, DenseArray::new(vec![n], dgain)?);
                    accumulate(&mut adj, *bias, DenseArray::new(vec![n], dbias)?);
                }
                Op::DepthwiseConv { x, kernel, bias, side } => {
                    let (gx, gk, gb) =
                        depthwise_backward(self.value(*x), self.value(*kernel), &g, *side);
                    accumulate(&mut adj, *x, gx);
                    accumulate(&mut adj, *kernel, gk);
                    accumulate(&mut adj, *bias, gb);
                }
                Op::Stack { inputs, axis } => {
                    let base = self.shape(inputs[0]).to_vec();
                    let outer: usize = base[..*axis].iter().product();
                    let inner: usize = base[*axis..].iter().product();
                    let n = inputs.len();
                    for (j, &v) in inputs.iter().enumerate() {
                        let mut part = Vec::with_capacity(outer * inner);
                        for o in 0..outer {
                            let start = (o * n + j) * inner;
                            part.extend_from_slice(&g.data()[start..start + inner]);
                        }
                        accumulate(&mut adj, v, DenseArray::new(base.clone(), part)?);
                    }
                }
                Op::CrossEntropy { logits, target, probs } => {
                    let gv = g.data()[0];
                    let data = probs
                        .iter()
                        .enumerate()
                        .map(|(c, &p)| gv * if c == *target { p - T::one() } else { p })
                        .collect();
                    accumulate(&mut adj, *logits, DenseArray::new(vec![probs.len()], data)?);
                }
            }
            adj[idx] = Some(g);
        }

        let params = self.param_vars.iter().map(|(&id, &v)| (id, v)).collect();
        Ok(Gradients {
            adjoints: adj,
            params,
        })
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    adjoints: Vec<Option<DenseArray<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Scalar> Gradients<T> {
    /// dLoss/dv, or `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&DenseArray<T>> {
        self.adjoints.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&DenseArray<T>> {
        self.params
            .iter()
            .find(|(pid, _)| *pid == id)
            .and_then(|&(_, v)| self.get(v))
    }

    /// Add every parameter gradient into `store`'s `grad` buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) {
        for &(id, v) in &self.params {
            if let Some(g) = self.get(v) {
                let p = store.get_mut(id);
                for (acc, &d) in p.grad.data_mut().iter_mut().zip(g.data()) {
                    *acc = *acc + d;
                }
            }
        }
    }
}

fn accumulate<T: Scalar>(adj: &mut [Option<DenseArray<T>>], v: Var, g: DenseArray<T>) {
    match &mut adj[v.0] {
        Some(existing) => {
            for (e, &d) in existing.data_mut().iter_mut().zip(g.data()) {
                *e = *e + d;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn unbroadcast<T: Scalar>(g: &DenseArray<T>, target: &[usize]) -> DenseArray<T> {
    if g.shape() == target {
        return g.clone();
    }
    let map = broadcast_index_map(target, g.shape());
    let mut out = DenseArray::zeros(target);
    let data = out.data_mut();
    for (&i, &gv) in map.iter().zip(g.data()) {
        data[i] = data[i] + gv;
    }
    out
}

fn reduce_sum<T: Scalar>(x: &DenseArray<T>, axes: &[usize]) -> DenseArray<T> {
    let (groups, n_groups) = reduction_groups(x.shape(), axes);
    let mut out = vec![T::zero(); n_groups];
    for (&gi, &v) in groups.iter().zip(x.data()) {
        out[gi] = out[gi] + v;
    }
    DenseArray::new(reduced_shape(x.shape(), axes), out).expect("reduced shape matches group count")
}

fn softmax_forward<T: Scalar>(x: &DenseArray<T>, axes: &[usize]) -> DenseArray<T> {
    let (groups, n_groups) = reduction_groups(x.shape(), axes);
    let mut max = vec![T::neg_infinity(); n_groups];
    for (&gi, &v) in groups.iter().zip(x.data()) {
        max[gi] = max[gi].max(v);
    }
    let exps: Vec<T> = groups.iter().zip(x.data()).map(|(&gi, &v)| (v - max[gi]).exp()).collect();
    let mut sums = vec![T::zero(); n_groups];
    for (&gi, &e) in groups.iter().zip(&exps) {
        sums[gi] = sums[gi] + e;
    }
    let data = groups.iter().zip(exps).map(|(&gi, e)| e / sums[gi]).collect();
    DenseArray::new(x.shape().to_vec(), data).expect("same shape")
}

fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize, usize, bool), TensorError> {
    let err = || TensorError::MatMul {
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    match (a, b) {
        ([m, k], [k2, n]) if k == k2 => Ok((1, *m, *k, *n, false)),
        ([bt, m, k], [bt2, k2, n]) if bt == bt2 && k == k2 => Ok((*bt, *m, *k, *n, false)),
        ([bt, m, k], [k2, n]) if k == k2 => Ok((*bt, *m, *k, *n, true)),
        ([_, _] | [_, _, _], [_, _] | [_, _, _]) => Err(err()),
        _ => Err(TensorError::Rank {
            op: "matmul",
            expected: "2 or 3",
            shape: if a.len() == 2 || a.len() == 3 { b.to_vec() } else { a.to_vec() },
        }),
    }
}

pub(crate) fn matmul_forward<T: Scalar>(a: &DenseArray<T>, b: &DenseArray<T>) -> Result<DenseArray<T>, TensorError> {
    let (batch, m, k, n, shared_rhs) = matmul_dims(a.shape(), b.shape())?;
    let mut out = vec![T::zero(); batch * m * n];
    if shared_rhs {
        gemm_nn(a.data(), b.data(), &mut out, batch * m, k, n);
    } else {
        for bi in 0..batch {
            gemm_nn(
                &a.data()[bi * m * k..(bi + 1) * m * k],
                &b.data()[bi * k * n..(bi + 1) * k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
    }
    let shape = if a.rank() == 3 { vec![batch, m, n] } else { vec![m, n] };
    DenseArray::new(shape, out)
}

fn matmul_backward<T: Scalar>(
    a: &DenseArray<T>,
    b: &DenseArray<T>,
    g: &DenseArray<T>,
) -> Result<(DenseArray<T>, DenseArray<T>), TensorError> {
    let (batch, m, k, n, shared_rhs) = matmul_dims(a.shape(), b.shape())?;
    let mut ga = vec![T::zero(); a.len()];
    let mut gb = vec![T::zero(); b.len()];
    if shared_rhs {
        gemm_nt(g.data(), b.data(), &mut ga, batch * m, n, k);
        gemm_tn(a.data(), g.data(), &mut gb, k, batch * m, n);
    } else {
        for bi in 0..batch {
            let gs = &g.data()[bi * m * n..(bi + 1) * m * n];
            gemm_nt(gs, &b.data()[bi * k * n..(bi + 1) * k * n], &mut ga[bi * m * k..(bi + 1) * m * k], m, n, k);
            gemm_tn(&a.data()[bi * m * k..(bi + 1) * m * k], gs, &mut gb[bi * k * n..(bi + 1) * k * n], k, m, n);
        }
    }
    Ok((
        DenseArray::new(a.shape().to_vec(), ga)?,
        DenseArray::new(b.shape().to_vec(), gb)?,
    ))
}

fn conv_dims(x: &[usize], side: usize) -> Result<(usize, usize), TensorError> {
    let (n, s, d) = split_batch(x, "depthwise_conv3x3")?;
    if side * side != s {
        return Err(TensorError::Shape {
            op: "depthwise_conv3x3",
            detail: format!("{s} patches do not form a {side}x{side} grid"),
        });
    }
    Ok((n, d))
}

fn depthwise_forward<T: Scalar>(
    x: &DenseArray<T>,
    kernel: &DenseArray<T>,
    bias: &DenseArray<T>,
    side: usize,
) -> Result<DenseArray<T>, TensorError> {
    let (n, d) = conv_dims(x.shape(), side)?;
    if kernel.shape() != [3, 3, d] || bias.shape() != [d] {
        return Err(TensorError::Shape {
            op: "depthwise_conv3x3",
            detail: format!("kernel {:?} / bias {:?} for {d} channels", kernel.shape(), bias.shape()),
        });
    }
    let (xv, kv, bv) = (x.data(), kernel.data(), bias.data());
    let s = side * side;
    let mut out = Vec::with_capacity(x.len());
    for f in 0..n {
        for r in 0..side {
            for c in 0..side {
                for ch in 0..d {
                    let mut acc = bv[ch];
                    for (tap_r, rr) in neighbours(r, side) {
                        for (tap_c, cc) in neighbours(c, side) {
                            acc = acc + kv[(tap_r * 3 + tap_c) * d + ch] * xv[(f * s + rr * side + cc) * d + ch];
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    DenseArray::new(x.shape().to_vec(), out)
}

fn depthwise_backward<T: Scalar>(
    x: &DenseArray<T>,
    kernel: &DenseArray<T>,
    g: &DenseArray<T>,
    side: usize,
) -> (DenseArray<T>, DenseArray<T>, DenseArray<T>) {
    let (n, d) = conv_dims(x.shape(), side).expect("validated in forward");
    let s = side * side;
    let (xv, kv, gv) = (x.data(), kernel.data(), g.data());
    let mut gx = vec![T::zero(); x.len()];
    let mut gk = vec![T::zero(); kernel.len()];
    let mut gb = vec![T::zero(); d];
    for f in 0..n {
        for r in 0..side {
            for c in 0..side {
                for ch in 0..d {
                    let go = gv[(f * s + r * side + c) * d + ch];
                    gb[ch] = gb[ch] + go;
                    for (tap_r, rr) in neighbours(r, side) {
                        for (tap_c, cc) in neighbours(c, side) {
                            let xi = (f * s + rr * side + cc) * d + ch;
                            let ki = (tap_r * 3 + tap_c) * d + ch;
                            gx[xi] = gx[xi] + kv[ki] * go;
                            gk[ki] = gk[ki] + xv[xi] * go;
                        }
                    }
                }
            }
        }
    }
    (
        DenseArray::new(x.shape().to_vec(), gx).expect("same shape"),
        DenseArray::new(kernel.shape().to_vec(), gk).expect("same shape"),
        DenseArray::new(vec![d], gb).expect("same shape"),
    )
}

/// In-bounds neighbours of `pos` along one grid axis, as `(tap index, coordinate)`.
fn neighbours(pos: usize, side: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..3usize).filter_map(move |tap| {
        let coord = pos as isize + tap as isize - 1;
        (coord >= 0 && (coord as usize) < side).then_some((tap, coord as usize))
    })
}
