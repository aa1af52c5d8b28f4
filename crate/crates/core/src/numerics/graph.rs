//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation of one forward pass. Values are
//! computed eagerly; [`Graph::backward`] walks the tape in reverse and
//! accumulates `∂loss/∂param` into the [`ParameterSet`] the parameters were
//! bound from. Gradients accumulate across calls until
//! [`ParameterSet::zero_grads`] is invoked.
//!
//! ```
//! use stylepad::numerics::{Graph, ParameterSet, Tensor};
//!
//! let mut ps = ParameterSet::<f64>::new();
//! let id = ps.add("p", Tensor::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap()).unwrap();
//! let mut g = Graph::new();
//! let p = g.param(&ps, id);
//! let sq = g.mul(p, p).unwrap();
//! let loss = g.sum(sq);
//! g.backward(loss, &mut ps).unwrap();
//! assert_eq!(ps.grad(id).unwrap().data(), &[2.0, -4.0, 1.0]);
//! ```

use crate::error::{Error, Result};
use crate::numerics::kernels::{self, ConvDims};
use crate::numerics::params::{ParamId, ParameterSet};
use crate::numerics::tensor::Tensor;
use crate::scalar::Scalar;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const NORM_EPS: f64 = 1e-5;
/// Smallest divisor used by `normalize_rows`.
const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, T),
    Relu(Var),
    Silu(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    BroadcastLast(Var),
    MeanLast(Var),
    Bmm {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        dims: ConvDims,
    },
    ConvTranspose1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        dims: ConvDims,
    },
    MaxPool1d {
        x: Var,
        argmax: Vec<usize>,
    },
    Norm {
        x: Var,
        gamma: Var,
        beta: Var,
        kind: NormKind,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    ChannelAffine {
        x: Var,
        scale: Vec<T>,
    },
    SoftmaxLast(Var),
    NormalizeRows {
        x: Var,
        /// Divisor per row; `None` where the norm was below the floor.
        norms: Vec<Option<T>>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Mse {
        pred: Var,
        target: Vec<T>,
    },
}

#[derive(Debug, Clone, Copy)]
enum NormKind {
    /// `[B, C, L]`, statistics per (sample, group).
    Group { groups: usize },
    /// `[B, C, L]` or `[B, C]`, statistics per channel over batch and length.
    Batch,
    /// Statistics over the last axis.
    Layer,
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording of one forward pass.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
    buffer_updates: Vec<(ParamId, Tensor<T>)>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Shape of `[.., C, L]` as (outer, C, L) with L = 1 for rank-2 inputs.
fn bcl(shape: &[usize]) -> (usize, usize, usize) {
    match shape.len() {
        2 => (shape[0], shape[1], 1),
        _ => (shape[0], shape[1], shape[2..].iter().product()),
    }
}

type SegmentFn = Box<dyn Fn(usize) -> Vec<(usize, usize)>>;

fn norm_segments(kind: NormKind, shape: &[usize]) -> (usize, SegmentFn) {
    match kind {
        NormKind::Group { groups } => {
            let (b, c, l) = bcl(shape);
            let span = c / groups * l;
            (
                b * groups,
                Box::new(move |g| vec![(g * span, span)]),
            )
        }
        NormKind::Batch => {
            let (b, c, l) = bcl(shape);
            (
                c,
                Box::new(move |ch| (0..b).map(|i| ((i * c + ch) * l, l)).collect()),
            )
        }
        NormKind::Layer => {
            let d = *shape.last().unwrap_or(&1);
            let n = shape.iter().product::<usize>() / d.max(1);
            (n, Box::new(move |r| vec![(r * d, d)]))
        }
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Scalar> Graph<T> {
    /// Graph that records gradients for trainable parameters.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
            buffer_updates: Vec::new(),
        }
    }

    /// Graph whose parameters are treated as constants.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
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
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn param(&mut self, ps: &ParameterSet<T>, id: ParamId) -> Var {
        let p = ps.get(id);
        let rg = self.grad_enabled && p.trainable();
        self.push(p.value.clone(), Op::Param(id), rg)
    }

    pub(crate) fn record_buffer_update(&mut self, id: ParamId, value: Tensor<T>) {
        if self.grad_enabled {
            self.buffer_updates.push((id, value));
        }
    }

    /// Running-statistic updates produced by training-mode normalization.
    pub fn take_buffer_updates(&mut self) -> Vec<(ParamId, Tensor<T>)> {
        std::mem::take(&mut self.buffer_updates)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape(), data).expect("same shape");
        let rg = self.rg(&[a, b]);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// `scale * x + shift` with scalar constants.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let value = self.value(x).map(|v| scale * v + shift);
        let rg = self.rg(&[x]);
        self.push(value, Op::Affine(x, scale), rg)
    }

    pub fn scale(&mut self, x: Var, scale: T) -> Var {
        self.affine(x, scale, T::zero())
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()));
        let rg = self.rg(&[x]);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * sigmoid(v));
        let rg = self.rg(&[x]);
        self.push(value, Op::Silu(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::scalar(t.sum() / T::c(t.numel() as f64));
        let rg = self.rg(&[x]);
        self.push(value, Op::Mean(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let src = self.value(x);
        let rank = src.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape(
                "permute",
                format!("permutation {perm:?} for shape {:?}", src.shape()),
            ));
        }
        let value = permute_tensor(src, perm);
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Permute(x, perm.to_vec()), rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", format!("axis {axis} for {first:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape(
                    "concat",
                    format!("axis {axis}: {s:?} vs {first:?}"),
                ));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let block = t.dim(axis) * inner;
                data.extend_from_slice(&t.data()[o * block..][..block]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let value = Tensor::new(&shape, data)?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::Concat(parts.to_vec(), axis), rg))
    }

    /// Indices `[start, end)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let src = self.value(x);
        if axis >= src.rank() || start >= end || end > src.dim(axis) {
            return Err(Error::shape(
                "slice",
                format!("[{start}, {end}) on axis {axis} of {:?}", src.shape()),
            ));
        }
        let outer: usize = src.shape()[..axis].iter().product();
        let inner: usize = src.shape()[axis + 1..].iter().product();
        let n = src.dim(axis);
        let mut data = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            data.extend_from_slice(&src.data()[(o * n + start) * inner..(o * n + end) * inner]);
        }
        let mut shape = src.shape().to_vec();
        shape[axis] = end - start;
        let value = Tensor::new(&shape, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Slice { x, axis, start }, rg))
    }

    /// Repeats `x: [.., C]` along a new trailing axis of length `n`.
    pub fn broadcast_last(&mut self, x: Var, n: usize) -> Var {
        let src = self.value(x);
        let mut data = Vec::with_capacity(src.numel() * n);
        for &v in src.data() {
            data.extend(std::iter::repeat_n(v, n));
        }
        let mut shape = src.shape().to_vec();
        shape.push(n);
        let value = Tensor::new(&shape, data).expect("broadcast shape");
        let rg = self.rg(&[x]);
        self.push(value, Op::BroadcastLast(x), rg)
    }

    /// Mean over the last axis, dropping it.
    pub fn mean_last(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        let n = *src.shape().last().ok_or_else(|| Error::shape("mean_last", "rank 0"))?;
        let inv = T::one() / T::c(n as f64);
        let data = src.data().chunks(n).map(|c| c.iter().copied().sum::<T>() * inv).collect();
        let shape = &src.shape()[..src.rank() - 1];
        let value = Tensor::new(shape, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::MeanLast(x), rg))
    }

    /// 2-D product `a · b` (or `a · bᵀ` when `trans_b`).
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let a3 = self.reshape(a, &[1, sa[0], sa[1]])?;
        let b3 = self.reshape(b, &[1, sb[0], sb[1]])?;
        let out = self.bmm(a3, b3, trans_b)?;
        let n = self.shape(out)[2];
        self.reshape(out, &[sa[0], n])
    }

    /// Batched `[B, M, K] · [B, K, N]` (or `[B, N, K]` transposed).
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let bad = || Error::shape("bmm", format!("{sa:?} x {sb:?} (trans_b={trans_b})"));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(bad());
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(bad());
        }
        let data = kernels::bmm(
            self.value(a).data(),
            self.value(b).data(),
            batch,
            m,
            k,
            n,
            false,
            trans_b,
        );
        let value = Tensor::new(&[batch, m, n], data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Bmm { a, b, trans_b }, rg))
    }

    /// `x: [N, In]`, `w: [Out, In]`, `b: [Out]` → `x · wᵀ + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] {
            return Err(Error::shape("linear", format!("input {sx:?}, weight {sw:?}")));
        }
        let (n, din, dout) = (sx[0], sx[1], sw[0]);
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(Error::shape(
                    "linear",
                    format!("bias {:?}, expected [{dout}]", self.shape(b)),
                ));
            }
        }
        let mut out = vec![T::zero(); n * dout];
        T::gemm(
            n,
            din,
            dout,
            T::one(),
            self.value(x).data(),
            din as isize,
            1,
            self.value(w).data(),
            1,
            din as isize,
            T::zero(),
            &mut out,
            dout as isize,
            1,
        );
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(dout) {
                for (o, &bv) in row.iter_mut().zip(bias) {
                    *o += bv;
                }
            }
        }
        let value = Tensor::new(&[n, dout], out)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(value, Op::Linear { x, w, b }, rg))
    }

    fn conv_dims(
        &self,
        op: &'static str,
        x: Var,
        w: Var,
        b: Option<Var>,
        transpose: bool,
    ) -> Result<(usize, usize, usize, usize, usize)> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 3 || sw.len() != 3 {
            return Err(Error::shape(op, format!("input {sx:?}, weight {sw:?}")));
        }
        let (batch, c_in, len) = (sx[0], sx[1], sx[2]);
        let (w_in, c_out) = if transpose { (sw[0], sw[1]) } else { (sw[1], sw[0]) };
        if w_in != c_in {
            return Err(Error::shape(
                op,
                format!("input channels (axis 1 of {sx:?}) != weight input channels of {sw:?}"),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(Error::shape(
                    op,
                    format!("bias {:?}, expected [{c_out}]", self.shape(b)),
                ));
            }
        }
        Ok((batch, c_in, c_out, len, sw[2]))
    }

    /// `x: [B, Cin, L]`, `w: [Cout, Cin, k]`, `b: [Cout]`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (batch, c_in, c_out, len_in, k) = self.conv_dims("conv1d", x, w, b, false)?;
        let len_out = kernels::conv_out_len(len_in, k, stride, padding).ok_or_else(|| {
            Error::shape(
                "conv1d",
                format!("kernel {k} with stride {stride} does not fit length {len_in} + 2*{padding}"),
            )
        })?;
        let dims = ConvDims {
            batch,
            c_in,
            c_out,
            len_in,
            len_out,
            k,
            stride,
            padding,
        };
        let data = kernels::conv1d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            dims,
        );
        let value = Tensor::new(&[batch, c_out, len_out], data)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(value, Op::Conv1d { x, w, b, dims }, rg))
    }

    /// `x: [B, Cin, L]`, `w: [Cin, Cout, k]`, `b: [Cout]`.
    pub fn conv_transpose1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Var> {
        let (batch, c_in, c_out, len_in, k) = self.conv_dims("conv_transpose1d", x, w, b, true)?;
        if stride == 0 || output_padding >= stride {
            return Err(Error::invalid(format!(
                "conv_transpose1d: output_padding {output_padding} must be < stride {stride}"
            )));
        }
        let len_out = kernels::conv_transpose_out_len(len_in, k, stride, padding, output_padding)
            .ok_or_else(|| Error::shape("conv_transpose1d", "empty output"))?;
        let dims = ConvDims {
            batch,
            c_in,
            c_out,
            len_in,
            len_out,
            k,
            stride,
            padding,
        };
        let data = kernels::conv_transpose1d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            dims,
        );
        let value = Tensor::new(&[batch, c_out, len_out], data)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(value, Op::ConvTranspose1d { x, w, b, dims }, rg))
    }

    /// Non-overlapping-or-strided max pooling over the last axis of `[B, C, L]`.
    pub fn max_pool1d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::shape("max_pool1d", format!("{s:?}")));
        }
        let len_out = kernels::conv_out_len(s[2], k, stride, 0)
            .ok_or_else(|| Error::shape("max_pool1d", format!("window {k} on {s:?}")))?;
        let src = self.value(x).data();
        let rows = s[0] * s[1];
        let mut data = Vec::with_capacity(rows * len_out);
        let mut argmax = Vec::with_capacity(rows * len_out);
        for r in 0..rows {
            let row = &src[r * s[2]..][..s[2]];
            for o in 0..len_out {
                let start = o * stride;
                let mut best = start;
                for i in start + 1..start + k {
                    if row[i] > row[best] {
                        best = i;
                    }
                }
                data.push(row[best]);
                argmax.push(r * s[2] + best);
            }
        }
        let value = Tensor::new(&[s[0], s[1], len_out], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::MaxPool1d { x, argmax }, rg))
    }

    fn norm(&mut self, x: Var, gamma: Var, beta: Var, kind: NormKind) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let channels = match kind {
            NormKind::Layer => *shape.last().unwrap_or(&0),
            _ => shape.get(1).copied().unwrap_or(0),
        };
        if self.shape(gamma) != [channels] || self.shape(beta) != [channels] {
            return Err(Error::shape(
                "norm",
                format!(
                    "affine {:?}/{:?} for input {shape:?}",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        let (groups, segs) = norm_segments(kind, &shape);
        let (xhat, inv_std) =
            kernels::normalize_groups(self.value(x).data(), groups, T::c(NORM_EPS), segs);
        let value = self.channel_scale_shift(&shape, &xhat, gamma, beta, kind);
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            value,
            Op::Norm {
                x,
                gamma,
                beta,
                kind,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    fn channel_scale_shift(
        &self,
        shape: &[usize],
        xhat: &[T],
        gamma: Var,
        beta: Var,
        kind: NormKind,
    ) -> Tensor<T> {
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let data = match kind {
            NormKind::Layer => {
                let d = g.len();
                xhat.iter()
                    .enumerate()
                    .map(|(i, &v)| v * g[i % d] + b[i % d])
                    .collect()
            }
            _ => {
                let (_, c, l) = bcl(shape);
                xhat.iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let ch = (i / l) % c;
                        v * g[ch] + b[ch]
                    })
                    .collect()
            }
        };
        Tensor::new(shape, data).expect("norm output shape")
    }

    /// Group normalization of `[B, C, L]` with per-channel affine.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Result<Var> {
        let c = self.shape(x).get(1).copied().unwrap_or(0);
        if self.shape(x).len() != 3 || groups == 0 || c % groups != 0 {
            return Err(Error::shape(
                "group_norm",
                format!("{groups} groups for {:?}", self.shape(x)),
            ));
        }
        self.norm(x, gamma, beta, NormKind::Group { groups })
    }

    /// Batch normalization with batch statistics. Returns the output and the
    /// per-channel (mean, biased variance) used.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
    ) -> Result<(Var, Vec<T>, Vec<T>)> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::shape("batch_norm", format!("{shape:?}")));
        }
        let (b, c, l) = bcl(&shape);
        let n = T::c((b * l) as f64);
        let data = self.value(x).data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for i in 0..b {
                s += data[(i * c + ch) * l..][..l].iter().copied().sum::<T>();
            }
            mean[ch] = s / n;
            let mut v = T::zero();
            for i in 0..b {
                v += data[(i * c + ch) * l..][..l]
                    .iter()
                    .map(|&x| (x - mean[ch]) * (x - mean[ch]))
                    .sum::<T>();
            }
            var[ch] = v / n;
        }
        let out = self.norm(x, gamma, beta, NormKind::Batch)?;
        Ok((out, mean, var))
    }

    /// `x * scale[c] + shift[c]` with constant per-channel vectors (inference
    /// batch norm).
    pub fn channel_affine(&mut self, x: Var, scale: Vec<T>, shift: &[T]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (_, c, l) = bcl(&shape);
        if shape.len() < 2 || scale.len() != c || shift.len() != c {
            return Err(Error::shape("channel_affine", format!("{shape:?} with {} channels", scale.len())));
        }
        let data = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let ch = (i / l) % c;
                v * scale[ch] + shift[ch]
            })
            .collect();
        let value = Tensor::new(&shape, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::ChannelAffine { x, scale }, rg))
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        self.norm(x, gamma, beta, NormKind::Layer)
    }

    /// Softmax over the last axis.
    pub fn softmax_last(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        let n = *src.shape().last().ok_or_else(|| Error::shape("softmax", "rank 0"))?;
        let mut data = src.data().to_vec();
        for row in data.chunks_mut(n) {
            softmax_in_place(row);
        }
        let value = Tensor::new(src.shape(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::SoftmaxLast(x), rg))
    }

    /// L2-normalizes each row of a `[N, D]` tensor. Rows with norm below
    /// `1e-12` are divided by `1e-12` instead.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::shape("normalize_rows", format!("{s:?}")));
        }
        let src = self.value(x).data();
        let mut norms = Vec::with_capacity(s[0]);
        let mut data = Vec::with_capacity(src.len());
        for row in src.chunks(s[1]) {
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            let floored = norm < T::c(NORM_FLOOR);
            let div = if floored { T::c(NORM_FLOOR) } else { norm };
            data.extend(row.iter().map(|&v| v / div));
            norms.push((!floored).then_some(norm));
        }
        let value = Tensor::new(&s, data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::NormalizeRows { x, norms }, rg))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() || s[0] == 0 {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("logits {s:?} with {} labels", labels.len()),
            ));
        }
        let m = s[1];
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= m) {
            return Err(Error::invalid(format!(
                "softmax_cross_entropy: label {y} at index {i} out of range [0, {m})"
            )));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = T::zero();
        for (row, &y) in probs.chunks_mut(m).zip(labels) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            loss += lse - row[y];
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
        }
        let value = Tensor::scalar(loss / T::c(s[0] as f64));
        let rg = self.rg(&[logits]);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        if self.shape(pred) != target.shape() {
            return Err(Error::shape(
                "mse",
                format!("{:?} vs {:?}", self.shape(pred), target.shape()),
            ));
        }
        let n = T::c(target.numel() as f64);
        let loss = self
            .value(pred)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum::<T>()
            / n;
        let rg = self.rg(&[pred]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: target.data().to_vec(),
            },
            rg,
        ))
    }

    /// Accumulates `∂loss/∂param` into `ps` for every trainable parameter
    /// reachable from `loss`. Unreachable parameters are left untouched.
    pub fn backward(&self, loss: Var, ps: &mut ParameterSet<T>) -> Result<()> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", lv.shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(node, &g, &mut grads, ps);
        }
        Ok(())
    }

    fn buf<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }

    fn acc(&self, grads: &mut [Option<Vec<T>>], v: Var, delta: impl IntoIterator<Item = T>) {
        if let Some(b) = self.buf(grads, v) {
            for (a, d) in b.iter_mut().zip(delta) {
                *a += d;
            }
        }
    }

    fn backprop_node(
        &self,
        node: &Node<T>,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
        ps: &mut ParameterSet<T>,
    ) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => ps.accumulate_grad(*id, g),
            Op::Add(a, b) => {
                self.acc(grads, *a, g.iter().copied());
                self.acc(grads, *b, g.iter().copied());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.iter().copied());
                self.acc(grads, *b, g.iter().map(|&v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                self.acc(grads, *a, g.iter().zip(vb).map(|(&d, &y)| d * y));
                self.acc(grads, *b, g.iter().zip(va).map(|(&d, &x)| d * x));
            }
            Op::Affine(x, s) => self.acc(grads, *x, g.iter().map(|&d| d * *s)),
            Op::Relu(x) => {
                let vx = val(*x);
                self.acc(
                    grads,
                    *x,
                    g.iter().zip(vx).map(|(&d, &v)| if v > T::zero() { d } else { T::zero() }),
                );
            }
            Op::Silu(x) => {
                let vx = val(*x);
                self.acc(
                    grads,
                    *x,
                    g.iter().zip(vx).map(|(&d, &v)| {
                        let s = sigmoid(v);
                        d * s * (T::one() + v * (T::one() - s))
                    }),
                );
            }
            Op::Sum(x) => {
                let n = self.nodes[x.0].value.numel();
                self.acc(grads, *x, std::iter::repeat_n(g[0], n));
            }
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.numel();
                let d = g[0] / T::c(n as f64);
                self.acc(grads, *x, std::iter::repeat_n(d, n));
            }
            Op::Reshape(x) => self.acc(grads, *x, g.iter().copied()),
            Op::Permute(x, perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let gt = Tensor::new(node.value.shape(), g.to_vec()).expect("grad shape");
                let back = permute_tensor(&gt, &inv);
                self.acc(grads, *x, back.into_data());
            }
            Op::Concat(parts, axis) => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis];
                let mut offset = 0;
                for &p in parts {
                    let n = self.nodes[p.0].value.dim(*axis);
                    if rg(p) {
                        let mut d = Vec::with_capacity(outer * n * inner);
                        for o in 0..outer {
                            d.extend_from_slice(&g[(o * total + offset) * inner..][..n * inner]);
                        }
                        self.acc(grads, p, d);
                    }
                    offset += n;
                }
            }
            Op::Slice { x, axis, start } => {
                let src_shape = self.nodes[x.0].value.shape();
                let outer: usize = src_shape[..*axis].iter().product();
                let inner: usize = src_shape[axis + 1..].iter().product();
                let n = src_shape[*axis];
                let len = node.value.dim(*axis);
                if let Some(b) = self.buf(grads, *x) {
                    for o in 0..outer {
                        let dst = &mut b[(o * n + start) * inner..][..len * inner];
                        for (a, &d) in dst.iter_mut().zip(&g[o * len * inner..][..len * inner]) {
                            *a += d;
                        }
                    }
                }
            }
            Op::BroadcastLast(x) => {
                let n = *node.value.shape().last().unwrap_or(&1);
                self.acc(grads, *x, g.chunks(n).map(|c| c.iter().copied().sum::<T>()));
            }
            Op::MeanLast(x) => {
                let n = *self.nodes[x.0].value.shape().last().unwrap_or(&1);
                let inv = T::one() / T::c(n as f64);
                self.acc(
                    grads,
                    *x,
                    g.iter().flat_map(|&d| std::iter::repeat_n(d * inv, n)),
                );
            }
            Op::Bmm { a, b, trans_b } => {
                let sa = self.nodes[a.0].value.shape();
                let (batch, m, k) = (sa[0], sa[1], sa[2]);
                let n = node.value.dim(2);
                if rg(*a) {
                    // dA = dY · op(B)ᵀ
                    let da = kernels::bmm(g, val(*b), batch, m, n, k, false, !trans_b);
                    self.acc(grads, *a, da);
                }
                if rg(*b) {
                    let db = if *trans_b {
                        // B is [N, K]: dB = dYᵀ · A
                        kernels::bmm(g, val(*a), batch, n, m, k, true, false)
                    } else {
                        // B is [K, N]: dB = Aᵀ · dY
                        kernels::bmm(val(*a), g, batch, k, m, n, true, false)
                    };
                    self.acc(grads, *b, db);
                }
            }
            Op::Linear { x, w, b } => {
                let sx = self.nodes[x.0].value.shape();
                let (n, din) = (sx[0], sx[1]);
                let dout = node.value.dim(1);
                if rg(*x) {
                    let mut dx = vec![T::zero(); n * din];
                    T::gemm(
                        n,
                        dout,
                        din,
                        T::one(),
                        g,
                        dout as isize,
                        1,
                        val(*w),
                        din as isize,
                        1,
                        T::zero(),
                        &mut dx,
                        din as isize,
                        1,
                    );
                    self.acc(grads, *x, dx);
                }
                if rg(*w) {
                    let mut dw = vec![T::zero(); dout * din];
                    T::gemm(
                        dout,
                        n,
                        din,
                        T::one(),
                        g,
                        1,
                        dout as isize,
                        val(*x),
                        din as isize,
                        1,
                        T::zero(),
                        &mut dw,
                        din as isize,
                        1,
                    );
                    self.acc(grads, *w, dw);
                }
                if let Some(b) = b {
                    if rg(*b) {
                        let mut db = vec![T::zero(); dout];
                        for row in g.chunks(dout) {
                            for (a, &d) in db.iter_mut().zip(row) {
                                *a += d;
                            }
                        }
                        self.acc(grads, *b, db);
                    }
                }
            }
            Op::Conv1d { x, w, b, dims } | Op::ConvTranspose1d { x, w, b, dims } => {
                let need = (rg(*x), rg(*w), b.is_some_and(&rg));
                let cg = if matches!(node.op, Op::Conv1d { .. }) {
                    kernels::conv1d_backward(val(*x), val(*w), g, *dims, need)
                } else {
                    kernels::conv_transpose1d_backward(val(*x), val(*w), g, *dims, need)
                };
                if let Some(dx) = cg.dx {
                    self.acc(grads, *x, dx);
                }
                if let Some(dw) = cg.dw {
                    self.acc(grads, *w, dw);
                }
                if let (Some(b), Some(db)) = (b, cg.db) {
                    self.acc(grads, *b, db);
                }
            }
            Op::MaxPool1d { x, argmax } => {
                if let Some(buf) = self.buf(grads, *x) {
                    for (&i, &d) in argmax.iter().zip(g) {
                        buf[i] += d;
                    }
                }
            }
            Op::Norm {
                x,
                gamma,
                beta,
                kind,
                xhat,
                inv_std,
            } => {
                let shape = node.value.shape();
                let gam = val(*gamma);
                let c = gam.len();
                let channel_of = |i: usize| -> usize {
                    match kind {
                        NormKind::Layer => i % c,
                        _ => {
                            let (_, cc, l) = bcl(shape);
                            (i / l) % cc
                        }
                    }
                };
                if rg(*gamma) {
                    let mut dg = vec![T::zero(); c];
                    for (i, (&d, &xh)) in g.iter().zip(xhat).enumerate() {
                        dg[channel_of(i)] += d * xh;
                    }
                    self.acc(grads, *gamma, dg);
                }
                if rg(*beta) {
                    let mut db = vec![T::zero(); c];
                    for (i, &d) in g.iter().enumerate() {
                        db[channel_of(i)] += d;
                    }
                    self.acc(grads, *beta, db);
                }
                if rg(*x) {
                    let dxhat: Vec<T> =
                        g.iter().enumerate().map(|(i, &d)| d * gam[channel_of(i)]).collect();
                    let (_, segs) = norm_segments(*kind, shape);
                    let dx = kernels::normalize_groups_backward(xhat, inv_std, &dxhat, segs);
                    self.acc(grads, *x, dx);
                }
            }
            Op::ChannelAffine { x, scale } => {
                let (_, c, l) = bcl(node.value.shape());
                self.acc(
                    grads,
                    *x,
                    g.iter().enumerate().map(|(i, &d)| d * scale[(i / l) % c]),
                );
            }
            Op::SoftmaxLast(x) => {
                let y = node.value.data();
                let n = *node.value.shape().last().unwrap_or(&1);
                let mut dx = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks(n).zip(g.chunks(n)) {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    dx.extend(yr.iter().zip(gr).map(|(&yy, &dd)| yy * (dd - dot)));
                }
                self.acc(grads, *x, dx);
            }
            Op::NormalizeRows { x, norms } => {
                let y = node.value.data();
                let d = node.value.dim(1);
                let mut dx = Vec::with_capacity(y.len());
                for ((yr, gr), nrm) in y.chunks(d).zip(g.chunks(d)).zip(norms) {
                    match *nrm {
                        Some(nrm) => {
                            let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                            dx.extend(yr.iter().zip(gr).map(|(&yy, &dd)| (dd - yy * dot) / nrm));
                        }
                        None => dx.extend(gr.iter().map(|&dd| dd / T::c(NORM_FLOOR))),
                    }
                }
                self.acc(grads, *x, dx);
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let m = probs.len() / labels.len();
                let scale = g[0] / T::c(labels.len() as f64);
                let mut d: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (r, &y) in labels.iter().enumerate() {
                    d[r * m + y] -= scale;
                }
                self.acc(grads, *logits, d);
            }
            Op::Mse { pred, target } => {
                let vp = val(*pred);
                let s = T::c(2.0) * g[0] / T::c(target.len() as f64);
                self.acc(grads, *pred, vp.iter().zip(target).map(|(&p, &t)| s * (p - t)));
            }
        }
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn permute_tensor<T: Scalar>(src: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let shape = src.shape();
    let rank = shape.len();
    let mut strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let out_strides: Vec<usize> = perm.iter().map(|&p| strides[p]).collect();
    let n = src.numel();
    let mut data = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let s = src.data();
    for _ in 0..n {
        let off: usize = idx.iter().zip(&out_strides).map(|(i, st)| i * st).sum();
        data.push(s[off]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Tensor::new(&out_shape, data).expect("permute shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(values: &[f64]) -> (ParameterSet<f64>, ParamId) {
        let mut ps = ParameterSet::new();
        let id = ps
            .add("p", Tensor::from_f64(&[values.len()], values).unwrap())
            .unwrap();
        (ps, id)
    }

    #[test]
    fn sum_gradient_is_ones() {
        let (mut ps, id) = setup(&[0.3, -1.0, 2.0]);
        let mut g = Graph::new();
        let p = g.param(&ps, id);
        let loss = g.sum(p);
        g.backward(loss, &mut ps).unwrap();
        assert_eq!(ps.grad(id).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gradient_is_twice_value() {
        let vals = [0.3, -1.0, 2.0];
        let (mut ps, id) = setup(&vals);
        let mut g = Graph::new();
        let p = g.param(&ps, id);
        let sq = g.mul(p, p).unwrap();
        let loss = g.sum(sq);
        g.backward(loss, &mut ps).unwrap();
        for (gv, v) in ps.grad(id).unwrap().data().iter().zip(vals) {
            assert_eq!(*gv, 2.0 * v);
        }
    }

    #[test]
    fn backward_accumulates_until_zeroed() {
        let (mut ps, id) = setup(&[1.0]);
        for _ in 0..2 {
            let mut g = Graph::new();
            let p = g.param(&ps, id);
            let loss = g.sum(p);
            g.backward(loss, &mut ps).unwrap();
        }
        assert_eq!(ps.grad(id).unwrap().data(), &[2.0]);
        ps.zero_grads();
        assert_eq!(ps.grad(id).unwrap().data(), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let (mut ps, id) = setup(&[1.0, 2.0]);
        let mut g = Graph::new();
        let p = g.param(&ps, id);
        assert!(g.backward(p, &mut ps).is_err());
    }

    #[test]
    fn disconnected_parameter_gets_zero_gradient() {
        let mut ps = ParameterSet::<f64>::new();
        let a = ps.add("a", Tensor::ones(&[2])).unwrap();
        let b = ps.add("b", Tensor::ones(&[2])).unwrap();
        let mut g = Graph::new();
        let pa = g.param(&ps, a);
        let _pb = g.param(&ps, b);
        let loss = g.sum(pa);
        g.backward(loss, &mut ps).unwrap();
        assert_eq!(ps.grad(b).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn inference_graph_records_no_gradients() {
        let (ps, id) = setup(&[1.0]);
        let mut g = Graph::inference();
        let p = g.param(&ps, id);
        assert!(!g.requires_grad(p));
    }

    #[test]
    fn permute_round_trips() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[2, 3, 4], |i| i as f64));
        let y = g.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(g.shape(y), &[4, 2, 3]);
        let z = g.permute(y, &[1, 2, 0]).unwrap();
        assert_eq!(g.value(z), g.value(x));
        assert!(g.permute(x, &[0, 0, 1]).is_err());
    }

    #[test]
    fn cross_entropy_reference_value() {
        let mut g = Graph::<f64>::new();
        let logits = g.constant(Tensor::from_f64(&[1, 3], &[1.0, 2.0, 3.0]).unwrap());
        let loss = g.softmax_cross_entropy(logits, &[2]).unwrap();
        // -log(e^3 / (e^1 + e^2 + e^3))
        let expected = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln() - 3.0;
        assert!((g.value(loss).item() - expected).abs() < 1e-14);
        assert!((expected - 0.40760596).abs() < 1e-8);
    }

    #[test]
    fn cross_entropy_uniform_logits_is_log_m() {
        let mut g = Graph::<f64>::new();
        let logits = g.constant(Tensor::zeros(&[4, 7]));
        let loss = g.softmax_cross_entropy(logits, &[0, 1, 2, 6]).unwrap();
        assert!((g.value(loss).item() - 7f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn cross_entropy_confident_logit_goes_to_zero() {
        let mut g = Graph::<f64>::new();
        let logits = g.constant(Tensor::from_f64(&[1, 3], &[0.0, 0.0, 1e3]).unwrap());
        let loss = g.softmax_cross_entropy(logits, &[2]).unwrap();
        assert!(g.value(loss).item() < 1e-12);
    }

    #[test]
    fn cross_entropy_label_out_of_range_names_index() {
        let mut g = Graph::<f64>::new();
        let logits = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.softmax_cross_entropy(logits, &[0, 3]).unwrap_err().to_string();
        assert!(err.contains("index 1"), "{err}");
    }

    #[test]
    fn conv_zero_input_yields_bias() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[2, 3, 8]));
        let w = g.constant(Tensor::from_fn(&[4, 3, 3], |i| i as f64 * 0.1));
        let b = g.constant(Tensor::from_f64(&[4], &[1.0, -2.0, 0.5, 3.0]).unwrap());
        let y = g.conv1d(x, w, Some(b), 1, 1).unwrap();
        let out = g.value(y);
        assert_eq!(out.shape(), &[2, 4, 8]);
        for (i, &v) in out.data().iter().enumerate() {
            let ch = (i / 8) % 4;
            assert_eq!(v, [1.0, -2.0, 0.5, 3.0][ch]);
        }
    }

    #[test]
    fn conv_identity_kernel_is_identity() {
        let mut g = Graph::<f64>::new();
        let xt = Tensor::from_fn(&[2, 3, 5], |i| (i as f64).sin());
        let x = g.constant(xt.clone());
        let w = g.constant(Tensor::from_fn(&[3, 3, 1], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 }));
        let y = g.conv1d(x, w, None, 1, 0).unwrap();
        assert_eq!(g.value(y), &xt);
    }

    #[test]
    fn conv_reports_offending_axes() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 8]));
        let w = g.constant(Tensor::zeros(&[4, 3, 3]));
        let err = g.conv1d(x, w, None, 1, 0).unwrap_err().to_string();
        assert!(err.contains("axis 1"), "{err}");
        let w = g.constant(Tensor::zeros(&[4, 2, 11]));
        assert!(g.conv1d(x, w, None, 1, 1).is_err());
    }

    #[test]
    fn softmax_cross_entropy_shift_invariant() {
        let base = [0.3, -1.2, 2.5, 0.0];
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::from_f64(&[1, 4], &base).unwrap());
        let shifted: Vec<f64> = base.iter().map(|v| v + 17.25).collect();
        let b = g.constant(Tensor::from_f64(&[1, 4], &shifted).unwrap());
        let la = g.softmax_cross_entropy(a, &[1]).unwrap();
        let lb = g.softmax_cross_entropy(b, &[1]).unwrap();
        assert!((g.value(la).item() - g.value(lb).item()).abs() < 1e-12);
    }
}
