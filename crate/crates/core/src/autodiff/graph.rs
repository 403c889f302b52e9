//! Define-by-run reverse-mode differentiation graph.
//!
//! Each operation evaluates eagerly when it is recorded. `backward` walks the
//! nodes in reverse insertion order, which is a valid topological order, and
//! accumulates vector-Jacobian products into the inputs. All reductions run
//! sequentially in index order so results are bit-reproducible.

use super::einsum::EinsumSpec;
use super::fft;
use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};
use crate::scalar::{cst, Scalar};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    Einsum,
    Reshape,
    Permute,
    Slice,
    Concat,
    Sum,
    Mean,
    WeightedMean,
    LayerNorm,
    Gelu,
    Softmax,
    SoftShrink,
    Rfft,
    Irfft,
    Cfft,
    ComplexMul,
    Embedding,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Add => "add",
            OpKind::Sub => "subtract",
            OpKind::Mul => "multiply",
            OpKind::Scale => "scalar-scale",
            OpKind::Einsum => "linear-contraction",
            OpKind::Reshape => "reshape",
            OpKind::Permute => "permute-axes",
            OpKind::Slice => "slice",
            OpKind::Concat => "concat",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::WeightedMean => "weighted-mean",
            OpKind::LayerNorm => "layer-normalization",
            OpKind::Gelu => "gelu",
            OpKind::Softmax => "softmax",
            OpKind::SoftShrink => "soft-shrinkage",
            OpKind::Rfft => "real-fft-1d",
            OpKind::Irfft => "inverse-real-fft-1d",
            OpKind::Cfft => "complex-fft-1d",
            OpKind::ComplexMul => "complex-pointwise-multiply",
            OpKind::Embedding => "embedding-lookup",
        }
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale(T),
    Einsum(EinsumSpec),
    Reshape,
    Permute(Vec<usize>),
    Slice { axis: usize, start: usize },
    Concat { axis: usize },
    Sum,
    Mean,
    WeightedMean { weights: Vec<T> },
    LayerNorm { rstd: Vec<T> },
    Gelu,
    Softmax,
    SoftShrink(T),
    Rfft { n: usize },
    Irfft { n: usize },
    Cfft { inverse: bool },
    ComplexMul,
    Embedding { indices: Vec<usize> },
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Add => OpKind::Add,
            Op::Sub => OpKind::Sub,
            Op::Mul => OpKind::Mul,
            Op::Scale(_) => OpKind::Scale,
            Op::Einsum(_) => OpKind::Einsum,
            Op::Reshape => OpKind::Reshape,
            Op::Permute(_) => OpKind::Permute,
            Op::Slice { .. } => OpKind::Slice,
            Op::Concat { .. } => OpKind::Concat,
            Op::Sum => OpKind::Sum,
            Op::Mean => OpKind::Mean,
            Op::WeightedMean { .. } => OpKind::WeightedMean,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Gelu => OpKind::Gelu,
            Op::Softmax => OpKind::Softmax,
            Op::SoftShrink(_) => OpKind::SoftShrink,
            Op::Rfft { .. } => OpKind::Rfft,
            Op::Irfft { .. } => OpKind::Irfft,
            Op::Cfft { .. } => OpKind::Cfft,
            Op::ComplexMul => OpKind::ComplexMul,
            Op::Embedding { .. } => OpKind::Embedding,
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    inputs: Vec<usize>,
    requires_grad: bool,
}

const LN_EPS: f64 = 1e-5;

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    trap_nonfinite: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf that requires grad; `None` if it did not influence
    /// the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Is `suffix` a trailing sub-shape of `shape`?
fn is_suffix(shape: &[usize], suffix: &[usize]) -> bool {
    suffix.len() <= shape.len() && shape[shape.len() - suffix.len()..] == *suffix
}

fn gelu<T: Scalar>(x: T) -> (T, T) {
    let c = cst::<T>((2.0 / std::f64::consts::PI).sqrt());
    let k = cst::<T>(0.044715);
    let half = cst::<T>(0.5);
    let three = cst::<T>(3.0);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let y = half * x * (T::one() + t);
    let du = c * (T::one() + three * k * x * x);
    let dy = half * (T::one() + t) + half * x * (T::one() - t * t) * du;
    (y, dy)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            trap_nonfinite: false,
        }
    }

    /// Makes every op fail with [`Error::NonFinite`] as soon as it produces a
    /// NaN or infinity.
    pub fn with_nonfinite_trap(mut self, on: bool) -> Self {
        self.trap_nonfinite = on;
        self
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

    pub fn op_kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: Vec<usize>) -> Result<Var> {
        let id = self.nodes.len();
        if self.trap_nonfinite && !value.all_finite() {
            return Err(Error::NonFinite {
                op: op.kind().name(),
                node: id,
            });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            inputs,
            requires_grad,
        });
        Ok(Var(id))
    }

    /// Differentiable leaf (a parameter or an input under test).
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            inputs: vec![],
            requires_grad,
        });
        Var(id)
    }

    fn binary_bcast(
        &mut self,
        a: Var,
        b: Var,
        op: Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if !is_suffix(va.shape(), vb.shape()) {
            return Err(shape_err(
                op.kind().name(),
                format!("{:?} vs {:?} (rhs must match trailing axes)", va.shape(), vb.shape()),
            ));
        }
        let nb = vb.numel().max(1);
        let data: Vec<T> = va
            .data()
            .chunks_exact(nb)
            .flat_map(|row| row.iter().zip(vb.data()).map(|(&x, &y)| f(x, y)))
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push(out, op, vec![a.0, b.0])
    }

    /// `a + b`; `b` may broadcast over the leading axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_bcast(a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_bcast(a, b, Op::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_bcast(a, b, Op::Mul, |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        let data = v.data().iter().map(|&x| x * s).collect();
        let out = Tensor::new(v.shape().to_vec(), data)?;
        self.push(out, Op::Scale(s), vec![a.0])
    }

    pub fn einsum(&mut self, spec: &str, a: Var, b: Var) -> Result<Var> {
        let spec = EinsumSpec::parse(spec)?;
        self.einsum_spec(spec, a, b)
    }

    pub fn einsum_spec(&mut self, spec: EinsumSpec, a: Var, b: Var) -> Result<Var> {
        let out = spec.apply(&self.nodes[a.0].value, &self.nodes[b.0].value)?;
        self.push(out, Op::Einsum(spec), vec![a.0, b.0])
    }

    /// `[m, k] x [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.einsum("ik,kj->ij", a, b)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.nodes[a.0].value.clone().reshaped(shape.to_vec())?;
        self.push(out, Op::Reshape, vec![a.0])
    }

    /// Output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        if perm.len() != v.ndim() || sorted.iter().enumerate().any(|(i, &p)| i != p) {
            return Err(shape_err("permute-axes", format!("{:?} on {:?}", perm, v.shape())));
        }
        let out = v.permuted(perm);
        self.push(out, Op::Permute(perm.to_vec()), vec![a.0])
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        if axis >= v.ndim() || start + len > v.shape()[axis] {
            return Err(shape_err(
                "slice",
                format!("axis {axis} [{start}, {}) of {:?}", start + len, v.shape()),
            ));
        }
        let outer: usize = v.shape()[..axis].iter().product();
        let inner: usize = v.shape()[axis + 1..].iter().product();
        let n = v.shape()[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner;
            data.extend_from_slice(&v.data()[base + start * inner..base + (start + len) * inner]);
        }
        let mut shape = v.shape().to_vec();
        shape[axis] = len;
        let out = Tensor::new(shape, data)?;
        self.push(out, Op::Slice { axis, start }, vec![a.0])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .nodes
            .get(parts.first().map(|p| p.0).unwrap_or(usize::MAX))
            .ok_or_else(|| shape_err("concat", "no inputs"))?;
        let base = first.value.shape().to_vec();
        if axis >= base.len() {
            return Err(shape_err("concat", format!("axis {axis} of {:?}", base)));
        }
        let mut total = 0;
        for p in parts {
            let s = self.nodes[p.0].value.shape();
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !ok {
                return Err(shape_err("concat", format!("{:?} vs {:?}", s, base)));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let v = &self.nodes[p.0].value;
                let n = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * n..(o + 1) * n]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let out = Tensor::new(shape, data)?;
        self.push(out, Op::Concat { axis }, parts.iter().map(|p| p.0).collect())
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.nodes[a.0].value.data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum, vec![a.0])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        let n = T::from_usize(v.numel()).unwrap();
        let s = v.data().iter().copied().sum::<T>() / n;
        self.push(Tensor::scalar(s), Op::Mean, vec![a.0])
    }

    /// `(1/numel) Σ a_h x[..., h, w]` with latitude weights on the
    /// second-to-last axis.
    pub fn weighted_mean(&mut self, a: Var, weights: &[T]) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        let nd = v.ndim();
        if nd < 2 || v.shape()[nd - 2] != weights.len() {
            return Err(shape_err(
                "weighted-mean",
                format!("{:?} with {} latitude weights", v.shape(), weights.len()),
            ));
        }
        let w = v.shape()[nd - 1];
        let h = weights.len();
        let mut acc = T::zero();
        for (r, row) in v.data().chunks_exact(w).enumerate() {
            let s: T = row.iter().copied().sum();
            acc = acc + weights[r % h] * s;
        }
        let out = Tensor::scalar(acc / T::from_usize(v.numel()).unwrap());
        self.push(
            out,
            Op::WeightedMean {
                weights: weights.to_vec(),
            },
            vec![a.0],
        )
    }

    /// Normalizes over the last axis (no affine part).
    pub fn layer_norm(&mut self, a: Var) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        let d = *v
            .shape()
            .last()
            .ok_or_else(|| shape_err("layer-normalization", "scalar input"))?;
        let dn = T::from_usize(d).unwrap();
        let eps = cst::<T>(LN_EPS);
        let mut data = Vec::with_capacity(v.numel());
        let mut rstd = Vec::with_capacity(v.numel() / d.max(1));
        for row in v.data().chunks_exact(d) {
            let mu = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&x| (x - mu) * (x - mu)).sum::<T>() / dn;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            data.extend(row.iter().map(|&x| (x - mu) * r));
        }
        let out = Tensor::new(v.shape().to_vec(), data)?;
        self.push(out, Op::LayerNorm { rstd }, vec![a.0])
    }

    /// tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        let data = v.data().iter().map(|&x| gelu(x).0).collect();
        let out = Tensor::new(v.shape().to_vec(), data)?;
        self.push(out, Op::Gelu, vec![a.0])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        let d = *v.shape().last().ok_or_else(|| shape_err("softmax", "scalar input"))?;
        let mut data = Vec::with_capacity(v.numel());
        for row in v.data().chunks_exact(d) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let start = data.len();
            let mut s = T::zero();
            for &x in row {
                let e = (x - mx).exp();
                s = s + e;
                data.push(e);
            }
            for e in &mut data[start..] {
                *e = *e / s;
            }
        }
        let out = Tensor::new(v.shape().to_vec(), data)?;
        self.push(out, Op::Softmax, vec![a.0])
    }

    /// `sign(x) max(|x| - lambda, 0)`.
    pub fn soft_shrink(&mut self, a: Var, lambda: T) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        let data = v
            .data()
            .iter()
            .map(|&x| {
                if x > lambda {
                    x - lambda
                } else if x < -lambda {
                    x + lambda
                } else {
                    T::zero()
                }
            })
            .collect();
        let out = Tensor::new(v.shape().to_vec(), data)?;
        self.push(out, Op::SoftShrink(lambda), vec![a.0])
    }

    /// Real FFT along the last axis: `[..., n] -> [..., n/2+1, 2]`.
    pub fn rfft(&mut self, a: Var) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        let n = *v.shape().last().ok_or_else(|| shape_err("real-fft-1d", "scalar input"))?;
        let data = fft::rfft_rows(v.data(), n);
        let mut shape = v.shape().to_vec();
        *shape.last_mut().unwrap() = n / 2 + 1;
        shape.push(2);
        let out = Tensor::new(shape, data)?;
        self.push(out, Op::Rfft { n }, vec![a.0])
    }

    /// Inverse of [`Graph::rfft`] for real signals of length `n`.
    pub fn irfft(&mut self, a: Var, n: usize) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        let s = v.shape();
        if s.len() < 2 || s[s.len() - 1] != 2 || s[s.len() - 2] != n / 2 + 1 {
            return Err(shape_err(
                "inverse-real-fft-1d",
                format!("{:?} is not a half spectrum of length {n}", s),
            ));
        }
        let data = fft::irfft_rows(v.data(), n);
        let mut shape = s[..s.len() - 1].to_vec();
        *shape.last_mut().unwrap() = n;
        let out = Tensor::new(shape, data)?;
        self.push(out, Op::Irfft { n }, vec![a.0])
    }

    /// Complex FFT over the second-to-last axis of `[..., n, 2]`; the inverse
    /// is normalized by `1/n`.
    pub fn cfft(&mut self, a: Var, inverse: bool) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        let s = v.shape();
        if s.len() < 2 || s[s.len() - 1] != 2 {
            return Err(shape_err("complex-fft-1d", format!("{:?} lacks a complex axis", s)));
        }
        let n = s[s.len() - 2];
        let data = fft::cfft_rows(v.data(), n, inverse);
        let out = Tensor::new(s.to_vec(), data)?;
        self.push(out, Op::Cfft { inverse }, vec![a.0])
    }

    /// Element-wise complex product on `[..., 2]`; `b` may broadcast over
    /// leading axes.
    pub fn complex_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if va.shape().last() != Some(&2) || vb.shape().last() != Some(&2) || !is_suffix(va.shape(), vb.shape()) {
            return Err(shape_err(
                "complex-pointwise-multiply",
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let nb = vb.numel();
        let mut data = Vec::with_capacity(va.numel());
        for row in va.data().chunks_exact(nb) {
            for (x, y) in row.chunks_exact(2).zip(vb.data().chunks_exact(2)) {
                data.push(x[0] * y[0] - x[1] * y[1]);
                data.push(x[0] * y[1] + x[1] * y[0]);
            }
        }
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push(out, Op::ComplexMul, vec![a.0, b.0])
    }

    /// Rows of a `[V, D]` table selected by `indices`.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let v = &self.nodes[table.0].value;
        if v.ndim() != 2 || indices.iter().any(|&i| i >= v.shape()[0]) {
            return Err(shape_err(
                "embedding-lookup",
                format!("indices {:?} into {:?}", indices, v.shape()),
            ));
        }
        let d = v.shape()[1];
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&v.data()[i * d..(i + 1) * d]);
        }
        let out = Tensor::new(vec![indices.len(), d], data)?;
        self.push(
            out,
            Op::Embedding {
                indices: indices.to_vec(),
            },
            vec![table.0],
        )
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(shape_err(
                "backward",
                format!("loss must be scalar, got shape {:?}", root.value.shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.vjp(id, &g, &mut grads)?;
        }
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                let n = &self.nodes[i];
                match (g, &n.op) {
                    (Some(g), Op::Leaf) if n.requires_grad => {
                        Some(Tensor::new(n.value.shape().to_vec(), g).expect("grad shape"))
                    }
                    _ => None,
                }
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn vjp(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[id];
        let inputs = &node.inputs;
        let val = |i: usize| &self.nodes[inputs[i]].value;
        let wants = |i: usize| self.nodes[inputs[i]].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add | Op::Sub => {
                if wants(0) {
                    accumulate(grads, inputs[0], g);
                }
                if wants(1) {
                    let nb = val(1).numel();
                    let mut gb = reduce_leading(g, nb);
                    if matches!(node.op, Op::Sub) {
                        gb.iter_mut().for_each(|x| *x = -*x);
                    }
                    accumulate(grads, inputs[1], &gb);
                }
            }
            Op::Mul => {
                let (a, b) = (val(0).data(), val(1).data());
                let nb = b.len();
                if wants(0) {
                    let ga: Vec<T> = g
                        .chunks_exact(nb)
                        .flat_map(|r| r.iter().zip(b).map(|(&x, &y)| x * y))
                        .collect();
                    accumulate(grads, inputs[0], &ga);
                }
                if wants(1) {
                    let prod: Vec<T> = g.iter().zip(a).map(|(&x, &y)| x * y).collect();
                    accumulate(grads, inputs[1], &reduce_leading(&prod, nb));
                }
            }
            Op::Scale(s) => {
                let ga: Vec<T> = g.iter().map(|&x| x * *s).collect();
                accumulate(grads, inputs[0], &ga);
            }
            Op::Einsum(spec) => {
                let out_shape = node.value.shape();
                if wants(0) {
                    let (_, ga) =
                        spec.grad_a()
                            .apply_raw(out_shape, g, val(1).shape(), val(1).data())?;
                    accumulate(grads, inputs[0], &ga);
                }
                if wants(1) {
                    let (_, gb) =
                        spec.grad_b()
                            .apply_raw(val(0).shape(), val(0).data(), out_shape, g)?;
                    accumulate(grads, inputs[1], &gb);
                }
            }
            Op::Reshape => accumulate(grads, inputs[0], g),
            Op::Permute(perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let ga = super::tensor::permute_data(g, node.value.shape(), &inv);
                accumulate(grads, inputs[0], &ga);
            }
            Op::Slice { axis, start } => {
                let s = val(0).shape();
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let n = s[*axis];
                let len = node.value.shape()[*axis];
                let ga = grads[inputs[0]].get_or_insert_with(|| vec![T::zero(); outer * n * inner]);
                for o in 0..outer {
                    let dst = o * n * inner + start * inner;
                    let src = o * len * inner;
                    for i in 0..len * inner {
                        ga[dst + i] = ga[dst + i] + g[src + i];
                    }
                }
            }
            Op::Concat { axis } => {
                let s = node.value.shape();
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let total = s[*axis] * inner;
                let mut offset = 0;
                for (k, &inp) in inputs.iter().enumerate() {
                    let n = val(k).shape()[*axis] * inner;
                    if self.nodes[inp].requires_grad {
                        let mut part = Vec::with_capacity(outer * n);
                        for o in 0..outer {
                            part.extend_from_slice(&g[o * total + offset..o * total + offset + n]);
                        }
                        accumulate(grads, inp, &part);
                    }
                    offset += n;
                }
            }
            Op::Sum => {
                let ga = vec![g[0]; val(0).numel()];
                accumulate(grads, inputs[0], &ga);
            }
            Op::Mean => {
                let n = val(0).numel();
                let ga = vec![g[0] / T::from_usize(n).unwrap(); n];
                accumulate(grads, inputs[0], &ga);
            }
            Op::WeightedMean { weights } => {
                let v = val(0);
                let w = *v.shape().last().unwrap();
                let h = weights.len();
                let scale = g[0] / T::from_usize(v.numel()).unwrap();
                let mut ga = Vec::with_capacity(v.numel());
                for r in 0..v.numel() / w {
                    let a = weights[r % h] * scale;
                    ga.extend(std::iter::repeat(a).take(w));
                }
                accumulate(grads, inputs[0], &ga);
            }
            Op::LayerNorm { rstd } => {
                let y = node.value.data();
                let d = *node.value.shape().last().unwrap();
                let dn = T::from_usize(d).unwrap();
                let mut ga = Vec::with_capacity(y.len());
                for ((gr, yr), &r) in g.chunks_exact(d).zip(y.chunks_exact(d)).zip(rstd) {
                    let mg = gr.iter().copied().sum::<T>() / dn;
                    let mgy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() / dn;
                    ga.extend(gr.iter().zip(yr).map(|(&a, &b)| r * (a - mg - b * mgy)));
                }
                accumulate(grads, inputs[0], &ga);
            }
            Op::Gelu => {
                let ga: Vec<T> = g
                    .iter()
                    .zip(val(0).data())
                    .map(|(&gi, &x)| gi * gelu(x).1)
                    .collect();
                accumulate(grads, inputs[0], &ga);
            }
            Op::Softmax => {
                let y = node.value.data();
                let d = *node.value.shape().last().unwrap();
                let mut ga = Vec::with_capacity(y.len());
                for (gr, yr) in g.chunks_exact(d).zip(y.chunks_exact(d)) {
                    let dot = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>();
                    ga.extend(gr.iter().zip(yr).map(|(&a, &b)| b * (a - dot)));
                }
                accumulate(grads, inputs[0], &ga);
            }
            Op::SoftShrink(lambda) => {
                let ga: Vec<T> = g
                    .iter()
                    .zip(val(0).data())
                    .map(|(&gi, &x)| if x.abs() > *lambda { gi } else { T::zero() })
                    .collect();
                accumulate(grads, inputs[0], &ga);
            }
            Op::Rfft { n } => accumulate(grads, inputs[0], &fft::rfft_vjp(g, *n)),
            Op::Irfft { n } => accumulate(grads, inputs[0], &fft::irfft_vjp(g, *n)),
            Op::Cfft { inverse } => {
                let s = node.value.shape();
                let n = s[s.len() - 2];
                accumulate(grads, inputs[0], &fft::cfft_vjp(g, n, *inverse));
            }
            Op::ComplexMul => {
                let (a, b) = (val(0).data(), val(1).data());
                let nb = b.len();
                if wants(0) {
                    // g * conj(b)
                    let mut ga = Vec::with_capacity(a.len());
                    for gr in g.chunks_exact(nb) {
                        for (gc, bc) in gr.chunks_exact(2).zip(b.chunks_exact(2)) {
                            ga.push(gc[0] * bc[0] + gc[1] * bc[1]);
                            ga.push(gc[1] * bc[0] - gc[0] * bc[1]);
                        }
                    }
                    accumulate(grads, inputs[0], &ga);
                }
                if wants(1) {
                    // g * conj(a), summed over broadcast rows
                    let mut gb = vec![T::zero(); nb];
                    for (gr, ar) in g.chunks_exact(nb).zip(a.chunks_exact(nb)) {
                        for ((acc, gc), ac) in gb
                            .chunks_exact_mut(2)
                            .zip(gr.chunks_exact(2))
                            .zip(ar.chunks_exact(2))
                        {
                            acc[0] = acc[0] + gc[0] * ac[0] + gc[1] * ac[1];
                            acc[1] = acc[1] + gc[1] * ac[0] - gc[0] * ac[1];
                        }
                    }
                    accumulate(grads, inputs[1], &gb);
                }
            }
            Op::Embedding { indices } => {
                let t = val(0);
                let d = t.shape()[1];
                let ga = grads[inputs[0]].get_or_insert_with(|| vec![T::zero(); t.numel()]);
                for (r, &i) in indices.iter().enumerate() {
                    for j in 0..d {
                        ga[i * d + j] = ga[i * d + j] + g[r * d + j];
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], id: usize, g: &[T]) {
    match &mut grads[id] {
        Some(acc) => {
            for (a, &b) in acc.iter_mut().zip(g) {
                *a = *a + b;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

/// Sums consecutive blocks of length `nb` (gradient of a suffix broadcast).
fn reduce_leading<T: Scalar>(g: &[T], nb: usize) -> Vec<T> {
    let nb = nb.max(1);
    let mut out = vec![T::zero(); nb];
    for row in g.chunks_exact(nb) {
        for (o, &x) in out.iter_mut().zip(row) {
            *o = *o + x;
        }
    }
    out
}
