//! Forward operations and their vector-Jacobian products.

use std::sync::Arc;

use super::{numel, strict_mode, CsrPattern, Element, Result, Tensor, TensorError};

pub(crate) enum Op<T: Element> {
    Add(Tensor<T>, Tensor<T>),
    Sub(Tensor<T>, Tensor<T>),
    Mul(Tensor<T>, Tensor<T>),
    Div(Tensor<T>, Tensor<T>),
    Scale(Tensor<T>, T),
    MatMul(Tensor<T>, Tensor<T>),
    Conv2d {
        input: Tensor<T>,
        weight: Tensor<T>,
        bias: Option<Tensor<T>>,
        stride: usize,
        pad: usize,
    },
    Relu(Tensor<T>),
    Abs(Tensor<T>),
    GlobalAvgPool(Tensor<T>),
    Concat {
        inputs: Vec<Tensor<T>>,
        axis: usize,
    },
    Narrow {
        input: Tensor<T>,
        axis: usize,
        start: usize,
    },
    Sum(Tensor<T>),
    SumAxis(Tensor<T>, usize),
    L1Norm(Tensor<T>, usize),
    L2Norm(Tensor<T>, usize),
    Dot(Tensor<T>, Tensor<T>),
    Softmax(Tensor<T>, usize),
    SegmentSoftmax(Tensor<T>, Arc<CsrPattern>),
    Spmm {
        values: Tensor<T>,
        pattern: Arc<CsrPattern>,
        dense: Tensor<T>,
    },
    IndexSelect(Tensor<T>, Arc<[usize]>),
    Reshape(Tensor<T>),
    Transpose(Tensor<T>),
}

/// `(outer, len, inner)` split of a shape around `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn without_axis(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s.remove(axis);
    s
}

fn check_finite<T: Element>(op: &'static str, inputs: &[&Tensor<T>]) -> Result<()> {
    if strict_mode() && inputs.iter().any(|t| t.data().iter().any(|v| !v.is_finite())) {
        return Err(TensorError::NonFinite { op });
    }
    Ok(())
}

fn check_axis<T: Element>(op: &'static str, t: &Tensor<T>, axis: usize) -> Result<()> {
    if axis >= t.rank() {
        return Err(TensorError::Invalid {
            op,
            msg: format!("axis {axis} out of range for shape {:?}", t.shape()),
        });
    }
    Ok(())
}

/// Result shape of a broadcasting binary op: equal shapes, or one shape a
/// suffix of the other (trailing-axis expansion).
fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a == b {
        return Ok(a.to_vec());
    }
    if a.len() > b.len() && a.ends_with(b) && numel(b) > 0 {
        return Ok(a.to_vec());
    }
    if b.len() > a.len() && b.ends_with(a) && numel(a) > 0 {
        return Ok(b.to_vec());
    }
    Err(TensorError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    })
}

fn needs<T: Element>(t: &Tensor<T>) -> bool {
    t.requires_grad()
}

impl<T: Element> Tensor<T> {
    fn from_op(shape: Vec<usize>, data: Vec<T>, op: Op<T>) -> Self {
        let rg = op.parents().iter().any(|p| p.requires_grad());
        Tensor::build(shape, data, rg, rg.then_some(op))
    }

    fn binary(&self, other: &Tensor<T>, name: &'static str, f: impl Fn(T, T) -> T) -> Result<(Vec<usize>, Vec<T>)> {
        check_finite(name, &[self, other])?;
        let shape = broadcast_shape(name, self.shape(), other.shape())?;
        let (a, b) = (self.data(), other.data());
        let (na, nb) = (a.len(), b.len());
        let data = (0..numel(&shape)).map(|i| f(a[i % na], b[i % nb])).collect();
        Ok((shape, data))
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (s, d) = self.binary(other, "add", |x, y| x + y)?;
        Ok(Self::from_op(s, d, Op::Add(self.clone(), other.clone())))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (s, d) = self.binary(other, "sub", |x, y| x - y)?;
        Ok(Self::from_op(s, d, Op::Sub(self.clone(), other.clone())))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (s, d) = self.binary(other, "mul", |x, y| x * y)?;
        Ok(Self::from_op(s, d, Op::Mul(self.clone(), other.clone())))
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (s, d) = self.binary(other, "div", |x, y| x / y)?;
        Ok(Self::from_op(s, d, Op::Div(self.clone(), other.clone())))
    }

    pub fn scale(&self, s: T) -> Tensor<T> {
        let d = self.data().iter().map(|&v| v * s).collect();
        Self::from_op(self.shape().to_vec(), d, Op::Scale(self.clone(), s))
    }

    pub fn neg(&self) -> Tensor<T> {
        self.scale(-T::one())
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        check_finite("matmul", &[self, other])?;
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        mm_nn(self.data(), other.data(), &mut out, m, k, n);
        Ok(Self::from_op(vec![m, n], out, Op::MatMul(self.clone(), other.clone())))
    }

    /// 2-D convolution of a `[C, H, W]` map with `[O, C, KH, KW]` kernels and zero padding.
    pub fn conv2d(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>, stride: usize, pad: usize) -> Result<Tensor<T>> {
        let mut ins = vec![self, weight];
        if let Some(b) = bias {
            ins.push(b);
        }
        check_finite("conv2d", &ins)?;
        let (si, sw) = (self.shape(), weight.shape());
        if si.len() != 3 || sw.len() != 4 || si[0] != sw[1] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: si.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        if let Some(b) = bias {
            if b.shape() != [sw[0]] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: sw.to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
        }
        if stride == 0 {
            return Err(TensorError::Invalid {
                op: "conv2d",
                msg: "stride must be positive".into(),
            });
        }
        let geo = ConvGeom::new(si, sw, stride, pad).ok_or_else(|| TensorError::Invalid {
            op: "conv2d",
            msg: format!("kernel {sw:?} larger than padded input {si:?}"),
        })?;
        let mut out = vec![T::zero(); geo.o * geo.ho * geo.wo];
        if let Some(b) = bias {
            for (o, &bv) in b.data().iter().enumerate() {
                out[o * geo.ho * geo.wo..(o + 1) * geo.ho * geo.wo].fill(bv);
            }
        }
        geo.forward(self.data(), weight.data(), &mut out);
        Ok(Self::from_op(
            vec![geo.o, geo.ho, geo.wo],
            out,
            Op::Conv2d {
                input: self.clone(),
                weight: weight.clone(),
                bias: bias.cloned(),
                stride,
                pad,
            },
        ))
    }

    pub fn relu(&self) -> Tensor<T> {
        let d = self.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        Self::from_op(self.shape().to_vec(), d, Op::Relu(self.clone()))
    }

    pub fn abs(&self) -> Tensor<T> {
        let d = self.data().iter().map(|v| v.abs()).collect();
        Self::from_op(self.shape().to_vec(), d, Op::Abs(self.clone()))
    }

    /// Mean over the spatial axes of a `[C, H, W]` map, giving `[C]`.
    pub fn global_avg_pool(&self) -> Result<Tensor<T>> {
        check_finite("global_avg_pool", &[self])?;
        let s = self.shape();
        if s.len() != 3 || s[1] * s[2] == 0 {
            return Err(TensorError::Invalid {
                op: "global_avg_pool",
                msg: format!("expected a non-empty [C, H, W] map, got {s:?}"),
            });
        }
        let hw = s[1] * s[2];
        let inv = T::from_f64(1.0 / hw as f64);
        let d = self.data().chunks(hw).map(|c| c.iter().copied().sum::<T>() * inv).collect();
        Ok(Self::from_op(vec![s[0]], d, Op::GlobalAvgPool(self.clone())))
    }

    pub fn concat(inputs: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = inputs.first().ok_or_else(|| TensorError::Invalid {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        check_finite("concat", inputs)?;
        check_axis("concat", first, axis)?;
        let mut shape = first.shape().to_vec();
        shape[axis] = 0;
        for t in inputs {
            let s = t.shape();
            if s.len() != shape.len() || s.iter().enumerate().any(|(i, &e)| i != axis && e != first.shape()[i]) {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: s.to_vec(),
                });
            }
            shape[axis] += s[axis];
        }
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for t in inputs {
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        Ok(Self::from_op(
            shape,
            data,
            Op::Concat {
                inputs: inputs.iter().map(|&t| t.clone()).collect(),
                axis,
            },
        ))
    }

    /// Sub-range `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        check_axis("narrow", self, axis)?;
        if start + len > self.shape()[axis] {
            return Err(TensorError::Invalid {
                op: "narrow",
                msg: format!("range {start}..{} exceeds extent {}", start + len, self.shape()[axis]),
            });
        }
        let (outer, full, inner) = axis_split(self.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&self.data()[base..base + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Self::from_op(
            shape,
            data,
            Op::Narrow {
                input: self.clone(),
                axis,
                start,
            },
        ))
    }

    /// Splits along `axis` into consecutive pieces of the given sizes.
    pub fn split(&self, axis: usize, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
        check_axis("split", self, axis)?;
        if sizes.iter().sum::<usize>() != self.shape()[axis] {
            return Err(TensorError::Invalid {
                op: "split",
                msg: format!("sizes {sizes:?} do not cover extent {}", self.shape()[axis]),
            });
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&n| {
                let t = self.narrow(axis, start, n);
                start += n;
                t
            })
            .collect()
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&self) -> Tensor<T> {
        let s = self.data().iter().copied().sum();
        Self::from_op(Vec::new(), vec![s], Op::Sum(self.clone()))
    }

    pub fn mean(&self) -> Tensor<T> {
        self.sum().scale(T::from_f64(1.0 / self.len().max(1) as f64))
    }

    fn reduce_axis(&self, op: &'static str, axis: usize, f: impl Fn(&mut dyn Iterator<Item = T>) -> T) -> Result<(Vec<usize>, Vec<T>)> {
        check_finite(op, &[self])?;
        check_axis(op, self, axis)?;
        let (outer, len, inner) = axis_split(self.shape(), axis);
        let d = self.data();
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut it = (0..len).map(|l| d[(o * len + l) * inner + i]);
                out.push(f(&mut it));
            }
        }
        Ok((without_axis(self.shape(), axis), out))
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Tensor<T>> {
        let (s, d) = self.reduce_axis("sum_axis", axis, |it| it.sum())?;
        Ok(Self::from_op(s, d, Op::SumAxis(self.clone(), axis)))
    }

    /// Sum of absolute values along `axis`.
    pub fn l1_norm(&self, axis: usize) -> Result<Tensor<T>> {
        let (s, d) = self.reduce_axis("l1_norm", axis, |it| it.map(|v| v.abs()).sum())?;
        Ok(Self::from_op(s, d, Op::L1Norm(self.clone(), axis)))
    }

    /// Euclidean norm along `axis`.
    pub fn l2_norm(&self, axis: usize) -> Result<Tensor<T>> {
        let (s, d) = self.reduce_axis("l2_norm", axis, |it| it.map(|v| v * v).sum::<T>().sqrt())?;
        Ok(Self::from_op(s, d, Op::L2Norm(self.clone(), axis)))
    }

    pub fn dot(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        check_finite("dot", &[self, other])?;
        if self.rank() != 1 || self.shape() != other.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "dot",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let v = self.data().iter().zip(other.data()).map(|(&a, &b)| a * b).sum();
        Ok(Self::from_op(Vec::new(), vec![v], Op::Dot(self.clone(), other.clone())))
    }

    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        check_finite("softmax", &[self])?;
        check_axis("softmax", self, axis)?;
        let (outer, len, inner) = axis_split(self.shape(), axis);
        let d = self.data();
        let mut out = vec![T::zero(); d.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |l: usize| (o * len + l) * inner + i;
                let m = (0..len).map(|l| d[idx(l)]).fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for l in 0..len {
                    let e = (d[idx(l)] - m).exp();
                    out[idx(l)] = e;
                    z = z + e;
                }
                for l in 0..len {
                    out[idx(l)] = out[idx(l)] / z;
                }
            }
        }
        Ok(Self::from_op(self.shape().to_vec(), out, Op::Softmax(self.clone(), axis)))
    }

    /// Softmax of a `[nnz]` vector within each row of a sparse pattern.
    pub fn segment_softmax(&self, pattern: &Arc<CsrPattern>) -> Result<Tensor<T>> {
        check_finite("segment_softmax", &[self])?;
        if self.shape() != [pattern.nnz()] {
            return Err(TensorError::ShapeMismatch {
                op: "segment_softmax",
                lhs: self.shape().to_vec(),
                rhs: vec![pattern.nnz()],
            });
        }
        let d = self.data();
        let mut out = vec![T::zero(); d.len()];
        for r in 0..pattern.rows() {
            let range = pattern.row(r);
            if range.is_empty() {
                continue;
            }
            let m = d[range.clone()].iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for e in range.clone() {
                out[e] = (d[e] - m).exp();
                z = z + out[e];
            }
            for e in range {
                out[e] = out[e] / z;
            }
        }
        Ok(Self::from_op(
            self.shape().to_vec(),
            out,
            Op::SegmentSoftmax(self.clone(), Arc::clone(pattern)),
        ))
    }

    /// Sparse-dense product: `values` (`[nnz]`) laid out on `pattern` times
    /// `dense` (`[cols, C]`), giving `[rows, C]`.
    pub fn spmm(values: &Tensor<T>, pattern: &Arc<CsrPattern>, dense: &Tensor<T>) -> Result<Tensor<T>> {
        check_finite("spmm", &[values, dense])?;
        if values.shape() != [pattern.nnz()] {
            return Err(TensorError::ShapeMismatch {
                op: "spmm values",
                lhs: values.shape().to_vec(),
                rhs: vec![pattern.nnz()],
            });
        }
        if dense.rank() != 2 || dense.shape()[0] != pattern.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "spmm",
                lhs: vec![pattern.rows(), pattern.cols()],
                rhs: dense.shape().to_vec(),
            });
        }
        let c = dense.shape()[1];
        let (v, x, cols) = (values.data(), dense.data(), pattern.col_idx());
        let mut out = vec![T::zero(); pattern.rows() * c];
        for r in 0..pattern.rows() {
            let orow = &mut out[r * c..(r + 1) * c];
            for e in pattern.row(r) {
                let w = v[e];
                let xrow = &x[cols[e] * c..(cols[e] + 1) * c];
                for (o, &xv) in orow.iter_mut().zip(xrow) {
                    *o = *o + w * xv;
                }
            }
        }
        Ok(Self::from_op(
            vec![pattern.rows(), c],
            out,
            Op::Spmm {
                values: values.clone(),
                pattern: Arc::clone(pattern),
                dense: dense.clone(),
            },
        ))
    }

    /// Gathers slices along axis 0.
    pub fn index_select(&self, indices: &[usize]) -> Result<Tensor<T>> {
        if self.rank() == 0 {
            return Err(TensorError::Invalid {
                op: "index_select",
                msg: "cannot index a rank-0 tensor".into(),
            });
        }
        let n = self.shape()[0];
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(TensorError::Invalid {
                op: "index_select",
                msg: format!("index {bad} out of range for extent {n}"),
            });
        }
        let inner: usize = self.shape()[1..].iter().product();
        let mut data = Vec::with_capacity(indices.len() * inner);
        for &i in indices {
            data.extend_from_slice(&self.data()[i * inner..(i + 1) * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[0] = indices.len();
        Ok(Self::from_op(shape, data, Op::IndexSelect(self.clone(), indices.into())))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Self::from_op(shape.to_vec(), self.to_vec(), Op::Reshape(self.clone())))
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Tensor<T>> {
        if self.rank() != 2 {
            return Err(TensorError::Invalid {
                op: "transpose",
                msg: format!("expected rank 2, got {:?}", self.shape()),
            });
        }
        let (r, c) = (self.shape()[0], self.shape()[1]);
        let d = self.data();
        let mut out = vec![T::zero(); d.len()];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        Ok(Self::from_op(vec![c, r], out, Op::Transpose(self.clone())))
    }
}

fn mm_nn<T: Element>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o = *o + av * bv;
            }
        }
    }
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn new(si: &[usize], sw: &[usize], stride: usize, pad: usize) -> Option<Self> {
        let (c, h, w) = (si[0], si[1], si[2]);
        let (o, kh, kw) = (sw[0], sw[2], sw[3]);
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return None;
        }
        Some(ConvGeom {
            c,
            h,
            w,
            o,
            kh,
            kw,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
            stride,
            pad,
        })
    }

    /// Calls `f(in_index, weight_index, out_index)` for every contributing triple.
    #[inline]
    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        for o in 0..self.o {
            for c in 0..self.c {
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let wi = ((o * self.c + c) * self.kh + ky) * self.kw + kx;
                        for oy in 0..self.ho {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= self.h as isize {
                                continue;
                            }
                            let in_row = (c * self.h + iy as usize) * self.w;
                            let out_row = (o * self.ho + oy) * self.wo;
                            for ox in 0..self.wo {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix < 0 || ix >= self.w as isize {
                                    continue;
                                }
                                f(in_row + ix as usize, wi, out_row + ox);
                            }
                        }
                    }
                }
            }
        }
    }

    fn forward<T: Element>(&self, input: &[T], weight: &[T], out: &mut [T]) {
        self.for_each(|ii, wi, oi| out[oi] = out[oi] + weight[wi] * input[ii]);
    }
}

impl<T: Element> Op<T> {
    pub(crate) fn parents(&self) -> Vec<&Tensor<T>> {
        match self {
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b) | Op::Dot(a, b) => {
                vec![a, b]
            }
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Abs(a)
            | Op::GlobalAvgPool(a)
            | Op::Sum(a)
            | Op::SumAxis(a, _)
            | Op::L1Norm(a, _)
            | Op::L2Norm(a, _)
            | Op::Softmax(a, _)
            | Op::SegmentSoftmax(a, _)
            | Op::IndexSelect(a, _)
            | Op::Reshape(a)
            | Op::Transpose(a) => vec![a],
            Op::Narrow { input, .. } => vec![input],
            Op::Conv2d { input, weight, bias, .. } => {
                let mut v = vec![input, weight];
                if let Some(b) = bias {
                    v.push(b);
                }
                v
            }
            Op::Concat { inputs, .. } => inputs.iter().collect(),
            Op::Spmm { values, dense, .. } => vec![values, dense],
        }
    }

    /// Gradients for each parent (aligned with [`Op::parents`]), given the
    /// output tensor and its incoming gradient. `None` for parents that do not
    /// require gradients.
    pub(crate) fn vjp(&self, out: &Tensor<T>, g: &[T]) -> Vec<Option<Vec<T>>> {
        let zero = T::zero();
        match self {
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(self, Op::Sub(..)) { -T::one() } else { T::one() };
                let ga = needs(a).then(|| reduce_broadcast(g, a.len(), |_| T::one()));
                let gb = needs(b).then(|| reduce_broadcast(g, b.len(), |_| sign));
                vec![ga, gb]
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (a.data(), b.data());
                let ga = needs(a).then(|| reduce_broadcast(g, a.len(), |i| bd[i % bd.len()]));
                let gb = needs(b).then(|| reduce_broadcast(g, b.len(), |i| ad[i % ad.len()]));
                vec![ga, gb]
            }
            Op::Div(a, b) => {
                let (ad, bd) = (a.data(), b.data());
                let ga = needs(a).then(|| reduce_broadcast(g, a.len(), |i| T::one() / bd[i % bd.len()]));
                let gb = needs(b).then(|| {
                    reduce_broadcast(g, b.len(), |i| {
                        let bv = bd[i % bd.len()];
                        -ad[i % ad.len()] / (bv * bv)
                    })
                });
                vec![ga, gb]
            }
            Op::Scale(_, s) => vec![Some(g.iter().map(|&v| v * *s).collect())],
            Op::MatMul(a, b) => {
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                let ga = needs(a).then(|| {
                    // dA = G B^T
                    let bd = b.data();
                    let mut ga = vec![zero; m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            ga[i * k + p] = grow.iter().zip(&bd[p * n..(p + 1) * n]).map(|(&x, &y)| x * y).sum();
                        }
                    }
                    ga
                });
                let gb = needs(b).then(|| {
                    // dB = A^T G
                    let ad = a.data();
                    let mut gb = vec![zero; k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = ad[i * k + p];
                            if av == zero {
                                continue;
                            }
                            for (o, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o = *o + av * gv;
                            }
                        }
                    }
                    gb
                });
                vec![ga, gb]
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            } => {
                let geo = ConvGeom::new(input.shape(), weight.shape(), *stride, *pad).expect("validated in forward");
                let (id, wd) = (input.data(), weight.data());
                let mut gi = needs(input).then(|| vec![zero; id.len()]);
                let mut gw = needs(weight).then(|| vec![zero; wd.len()]);
                geo.for_each(|ii, wi, oi| {
                    if let Some(gi) = gi.as_mut() {
                        gi[ii] = gi[ii] + wd[wi] * g[oi];
                    }
                    if let Some(gw) = gw.as_mut() {
                        gw[wi] = gw[wi] + id[ii] * g[oi];
                    }
                });
                let mut res = vec![gi, gw];
                if let Some(b) = bias {
                    let hw = geo.ho * geo.wo;
                    res.push(needs(b).then(|| g.chunks(hw).map(|c| c.iter().copied().sum()).collect()));
                }
                res
            }
            Op::Relu(a) => vec![Some(
                a.data().iter().zip(g).map(|(&x, &gv)| if x > zero { gv } else { zero }).collect(),
            )],
            Op::Abs(a) => vec![Some(a.data().iter().zip(g).map(|(&x, &gv)| sign(x) * gv).collect())],
            Op::GlobalAvgPool(a) => {
                let hw = a.shape()[1] * a.shape()[2];
                let inv = T::from_f64(1.0 / hw as f64);
                let mut ga = Vec::with_capacity(a.len());
                for &gv in g {
                    ga.extend(std::iter::repeat_n(gv * inv, hw));
                }
                vec![Some(ga)]
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = axis_split(out.shape(), *axis);
                let mut offset = 0;
                inputs
                    .iter()
                    .map(|t| {
                        let len = t.shape()[*axis];
                        let r = needs(t).then(|| {
                            let mut v = Vec::with_capacity(t.len());
                            for o in 0..outer {
                                let base = (o * total + offset) * inner;
                                v.extend_from_slice(&g[base..base + len * inner]);
                            }
                            v
                        });
                        offset += len;
                        r
                    })
                    .collect()
            }
            Op::Narrow { input, axis, start } => {
                let (outer, full, inner) = axis_split(input.shape(), *axis);
                let len = out.shape()[*axis];
                let mut gi = vec![zero; input.len()];
                for o in 0..outer {
                    let dst = (o * full + start) * inner;
                    gi[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gi)]
            }
            Op::Sum(a) => vec![Some(vec![g[0]; a.len()])],
            Op::SumAxis(a, axis) => vec![Some(expand_axis(a.shape(), *axis, |_, oi| g[oi]))],
            Op::L1Norm(a, axis) => {
                let d = a.data();
                vec![Some(expand_axis(a.shape(), *axis, |ii, oi| sign(d[ii]) * g[oi]))]
            }
            Op::L2Norm(a, axis) => {
                let (d, n) = (a.data(), out.data());
                vec![Some(expand_axis(a.shape(), *axis, |ii, oi| {
                    if n[oi] > zero {
                        d[ii] / n[oi] * g[oi]
                    } else {
                        zero
                    }
                }))]
            }
            Op::Dot(a, b) => {
                let ga = needs(a).then(|| b.data().iter().map(|&v| v * g[0]).collect());
                let gb = needs(b).then(|| a.data().iter().map(|&v| v * g[0]).collect());
                vec![ga, gb]
            }
            Op::Softmax(a, axis) => {
                let (outer, len, inner) = axis_split(a.shape(), *axis);
                let y = out.data();
                let mut ga = vec![zero; a.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |l: usize| (o * len + l) * inner + i;
                        let s: T = (0..len).map(|l| g[idx(l)] * y[idx(l)]).sum();
                        for l in 0..len {
                            ga[idx(l)] = y[idx(l)] * (g[idx(l)] - s);
                        }
                    }
                }
                vec![Some(ga)]
            }
            Op::SegmentSoftmax(a, pattern) => {
                let y = out.data();
                let mut ga = vec![zero; a.len()];
                for r in 0..pattern.rows() {
                    let range = pattern.row(r);
                    let s: T = range.clone().map(|e| g[e] * y[e]).sum();
                    for e in range {
                        ga[e] = y[e] * (g[e] - s);
                    }
                }
                vec![Some(ga)]
            }
            Op::Spmm { values, pattern, dense } => {
                let c = dense.shape()[1];
                let (v, x, cols) = (values.data(), dense.data(), pattern.col_idx());
                let mut gv = needs(values).then(|| vec![zero; v.len()]);
                let mut gx = needs(dense).then(|| vec![zero; x.len()]);
                for r in 0..pattern.rows() {
                    let grow = &g[r * c..(r + 1) * c];
                    for e in pattern.row(r) {
                        let j = cols[e];
                        if let Some(gv) = gv.as_mut() {
                            gv[e] = grow.iter().zip(&x[j * c..(j + 1) * c]).map(|(&a, &b)| a * b).sum();
                        }
                        if let Some(gx) = gx.as_mut() {
                            for (o, &gg) in gx[j * c..(j + 1) * c].iter_mut().zip(grow) {
                                *o = *o + v[e] * gg;
                            }
                        }
                    }
                }
                vec![gv, gx]
            }
            Op::IndexSelect(a, idx) => {
                let inner: usize = a.shape()[1..].iter().product();
                let mut ga = vec![zero; a.len()];
                for (m, &i) in idx.iter().enumerate() {
                    for (o, &gv) in ga[i * inner..(i + 1) * inner].iter_mut().zip(&g[m * inner..(m + 1) * inner]) {
                        *o = *o + gv;
                    }
                }
                vec![Some(ga)]
            }
            Op::Reshape(_) => vec![Some(g.to_vec())],
            Op::Transpose(a) => {
                let (r, c) = (a.shape()[0], a.shape()[1]);
                let mut ga = vec![zero; a.len()];
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] = g[j * r + i];
                    }
                }
                vec![Some(ga)]
            }
        }
    }
}

fn sign<T: Element>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Sums `g[i] * factor(i)` into a buffer of length `n` by index `i % n`.
fn reduce_broadcast<T: Element>(g: &[T], n: usize, factor: impl Fn(usize) -> T) -> Vec<T> {
    let mut out = vec![T::zero(); n];
    for (i, &gv) in g.iter().enumerate() {
        out[i % n] = out[i % n] + gv * factor(i);
    }
    out
}

/// Builds a full-shape buffer from `f(input_index, reduced_index)`.
fn expand_axis<T: Element>(shape: &[usize], axis: usize, f: impl Fn(usize, usize) -> T) -> Vec<T> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut out = vec![T::zero(); numel(shape)];
    for o in 0..outer {
        for l in 0..len {
            for i in 0..inner {
                let ii = (o * len + l) * inner + i;
                out[ii] = f(ii, o * inner + i);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn matmul_all_ones() {
        let a = Tensor::<f64>::ones(&[2, 3]);
        let b = Tensor::<f64>::ones(&[3, 1]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[3.0, 3.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = Tensor::<f64>::ones(&[2, 3]).matmul(&Tensor::ones(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn relu_definition() {
        assert_eq!(t(&[3], &[-1.0, 0.0, 2.0]).relu().data(), &[0.0, 0.0, 2.0]);
    }

    /// Direct summation over the 3x3 window clipped to the map.
    fn conv_oracle(h: usize, w: usize, y: usize, x: usize) -> f64 {
        let mut s = 0.0;
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                if yy >= 0 && xx >= 0 && yy < h as i64 && xx < w as i64 {
                    s += 1.0;
                }
            }
        }
        s
    }

    #[test]
    fn conv2d_ones_center_and_corner() {
        let img = Tensor::<f64>::ones(&[1, 5, 5]);
        let k = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        let out = img.conv2d(&k, None, 1, 1).unwrap();
        assert_eq!(out.shape(), &[1, 5, 5]);
        for y in 0..5 {
            for x in 0..5 {
                assert_eq!(out.data()[y * 5 + x], conv_oracle(5, 5, y, x));
            }
        }
        assert_eq!(out.data()[12], 9.0);
        assert_eq!(out.data()[0], 4.0);
    }

    #[test]
    fn conv2d_stride_two_shape() {
        let img = Tensor::<f64>::ones(&[3, 56, 56]);
        let k = Tensor::<f64>::ones(&[8, 3, 3, 3]);
        assert_eq!(img.conv2d(&k, None, 2, 1).unwrap().shape(), &[8, 28, 28]);
        let k = Tensor::<f64>::ones(&[8, 4, 3, 3]);
        assert!(img.conv2d(&k, None, 2, 1).is_err());
    }

    #[test]
    fn broadcast_trailing_only() {
        let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = t(&[3], &[10.0, 20.0, 30.0]);
        assert_eq!(a.add(&b).unwrap().data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        assert_eq!(b.add(&a).unwrap().shape(), &[2, 3]);
        let c = t(&[2], &[1.0, 1.0]);
        assert!(a.add(&c).is_err());
    }

    #[test]
    fn strict_mode_rejects_nan() {
        let a = t(&[2], &[1.0, f64::NAN]);
        assert!(a.add(&a).is_ok());
        let _g = crate::tensor::StrictGuard::enable();
        assert!(matches!(a.add(&a), Err(TensorError::NonFinite { .. })));
    }

    #[test]
    fn norms_along_axis() {
        let a = t(&[2, 2], &[3.0, -4.0, 0.0, 1.0]);
        assert_eq!(a.l2_norm(1).unwrap().data(), &[5.0, 1.0]);
        assert_eq!(a.l1_norm(1).unwrap().data(), &[7.0, 1.0]);
        assert_eq!(a.l1_norm(0).unwrap().data(), &[3.0, 5.0]);
    }

    #[test]
    fn l2_norm_gradient_at_zero_is_zero() {
        let x = Tensor::<f64>::parameter(&[1, 3], vec![0.0; 3]).unwrap();
        let g = x.l2_norm(1).unwrap().sum().backward().unwrap();
        assert_eq!(g.get(&x).unwrap(), &[0.0; 3]);
    }

    #[test]
    fn segment_softmax_uniform_rows() {
        let p = Arc::new(CsrPattern::from_rows(3, &[vec![0, 1, 2], vec![1]]).unwrap());
        let s = Tensor::<f64>::zeros(&[4]).segment_softmax(&p).unwrap();
        for v in &s.data()[..3] {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(s.data()[3], 1.0);
    }

    #[test]
    fn spmm_matches_dense() {
        let p = Arc::new(CsrPattern::from_rows(3, &[vec![0, 2], vec![1]]).unwrap());
        let v = t(&[3], &[2.0, -1.0, 0.5]);
        let x = t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = Tensor::spmm(&v, &p, &x).unwrap();
        assert_eq!(y.data(), &[2.0 - 5.0, 4.0 - 6.0, 1.5, 2.0]);
    }

    #[test]
    fn narrow_and_index_select() {
        let a = t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(a.narrow(1, 1, 1).unwrap().data(), &[2.0, 4.0, 6.0]);
        assert_eq!(a.index_select(&[2, 0, 2]).unwrap().data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        assert!(a.index_select(&[3]).is_err());
    }
}
