//! Primitive tensor operations and their reverse-mode rules.
//!
//! Every backward rule is written in terms of the primitives themselves, so
//! gradients computed with `create_graph` are ordinary graph nodes and can be
//! differentiated again.

use super::tensor::Tensor;
use crate::{Error, Result};

/// Temporal im2col layout shared by [`Tensor::unfold_time`] and its adjoint.
///
/// Input rows are `(batch, t)` pairs in `[batch * time_in, channels]`; output
/// rows are `(batch, t')` in `[batch * time_out, channels * kernel]`, with
/// column `c * kernel + k` holding `x[b, t' + k * dilation - pad_left, c]`
/// (zero outside the sequence).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UnfoldSpec {
    pub batch: usize,
    pub time_in: usize,
    pub channels: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub pad_left: usize,
    pub time_out: usize,
}

/// Padding mode for dilated convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// No padding: `T' = T - (K - 1) * dilation`.
    Valid,
    /// Left zero-padding by `(K - 1) * dilation`: `T' = T`.
    Causal,
}

impl UnfoldSpec {
    pub fn new(
        batch: usize,
        time_in: usize,
        channels: usize,
        kernel: usize,
        dilation: usize,
        padding: Padding,
    ) -> Result<Self> {
        if kernel == 0 || dilation == 0 {
            return Err(Error::shape(
                "conv1d",
                format!("kernel ({kernel}) and dilation ({dilation}) must be >= 1"),
            ));
        }
        let span = (kernel - 1) * dilation;
        let (pad_left, time_out) = match padding {
            Padding::Causal => (span, time_in),
            Padding::Valid => {
                if time_in <= span {
                    return Err(Error::shape(
                        "conv1d",
                        format!("input length {time_in} too short for receptive field {}", span + 1),
                    ));
                }
                (0, time_in - span)
            }
        };
        Ok(Self {
            batch,
            time_in,
            channels,
            kernel,
            dilation,
            pad_left,
            time_out,
        })
    }

    fn source(&self, t_out: usize, k: usize) -> Option<usize> {
        let pos = t_out + k * self.dilation;
        pos.checked_sub(self.pad_left).filter(|&p| p < self.time_in)
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Neg,
    Scale(f64),
    AddScalar,
    MatMul,
    /// `a * b^T`
    MatMulNT,
    /// `a^T * b`
    MatMulTN,
    Transpose,
    Tanh,
    Relu,
    Exp,
    Log,
    Recip,
    Sigmoid,
    Softplus,
    Concat {
        axis: usize,
    },
    Slice {
        axis: usize,
        start: usize,
    },
    Pad {
        axis: usize,
        start: usize,
    },
    Reshape,
    Sum,
    Mean,
    Expand,
    Unfold(UnfoldSpec),
    Fold(UnfoldSpec),
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Row-major `C[m,n] = op(A) * op(B)` with the inner dimension `k`; a
/// transposed operand is read through swapped strides.
fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: `a` holds m*k and `b` k*n values laid out per the strides above,
    // `c` is m*n row-major.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

impl Tensor {
    fn map(&self, op: Op, f: impl Fn(f64) -> f64) -> Tensor {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Tensor::record(op, &[self], self.shape.to_vec(), data)
    }

    fn zip(&self, other: &Tensor, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        same_shape(name, self, other)?;
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor::record(op, &[self, other], self.shape.to_vec(), data))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, Op::Add, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, Op::Sub, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, Op::Mul, "mul", |a, b| a * b)
    }

    pub fn neg(&self) -> Tensor {
        self.map(Op::Neg, |v| -v)
    }

    /// Multiplication by a constant scalar.
    pub fn scale(&self, c: f64) -> Tensor {
        self.map(Op::Scale(c), |v| c * v)
    }

    /// Addition of a constant scalar.
    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.map(Op::AddScalar, |v| v + c)
    }

    pub fn square(&self) -> Tensor {
        self.mul(self).expect("same tensor")
    }

    pub fn tanh(&self) -> Tensor {
        self.map(Op::Tanh, f64::tanh)
    }

    pub fn relu(&self) -> Tensor {
        self.map(Op::Relu, |v| v.max(0.0))
    }

    pub fn exp(&self) -> Tensor {
        self.map(Op::Exp, f64::exp)
    }

    pub fn ln(&self) -> Tensor {
        self.map(Op::Log, f64::ln)
    }

    pub fn recip(&self) -> Tensor {
        self.map(Op::Recip, |v| 1.0 / v)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(Op::Sigmoid, sigmoid)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&self) -> Tensor {
        self.map(Op::Softplus, softplus)
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.shape(), other.shape());
        if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
            return Err(Error::shape("matmul", format!("{a:?} x {b:?}")));
        }
        let (m, k, n) = (a[0], a[1], b[1]);
        let data = gemm(m, k, n, &self.data, false, &other.data, false);
        Ok(Tensor::record(Op::MatMul, &[self, other], vec![m, n], data))
    }

    /// `self * other^T` without materializing the transpose.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.shape(), other.shape());
        if a.len() != 2 || b.len() != 2 || a[1] != b[1] {
            return Err(Error::shape("matmul_nt", format!("{a:?} x {b:?}^T")));
        }
        let (m, k, n) = (a[0], a[1], b[0]);
        let data = gemm(m, k, n, &self.data, false, &other.data, true);
        Ok(Tensor::record(Op::MatMulNT, &[self, other], vec![m, n], data))
    }

    /// `self^T * other` without materializing the transpose.
    pub fn matmul_tn(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.shape(), other.shape());
        if a.len() != 2 || b.len() != 2 || a[0] != b[0] {
            return Err(Error::shape("matmul_tn", format!("{a:?}^T x {b:?}")));
        }
        let (m, k, n) = (a[1], a[0], b[1]);
        let data = gemm(m, k, n, &self.data, true, &other.data, false);
        Ok(Tensor::record(Op::MatMulTN, &[self, other], vec![m, n], data))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::shape("transpose", format!("expected rank 2, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor::record(Op::Transpose, &[self], vec![c, r], data))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(Error::shape("reshape", format!("{:?} -> {:?}", self.shape(), shape)));
        }
        Ok(Tensor::record(Op::Reshape, &[self], shape.to_vec(), self.to_vec()))
    }

    pub fn sum(&self) -> Tensor {
        let s = self.data.iter().sum();
        Tensor::record(Op::Sum, &[self], Vec::new(), vec![s])
    }

    pub fn mean(&self) -> Tensor {
        let s: f64 = self.data.iter().sum();
        let m = s / self.numel() as f64;
        Tensor::record(Op::Mean, &[self], Vec::new(), vec![m])
    }

    /// Broadcasts a one-element tensor to `shape`.
    pub fn expand(&self, shape: &[usize]) -> Result<Tensor> {
        if self.numel() != 1 {
            return Err(Error::shape(
                "expand",
                format!("only one-element tensors broadcast, got {:?}", self.shape()),
            ));
        }
        let n = shape.iter().product();
        Ok(Tensor::record(
            Op::Expand,
            &[self],
            shape.to_vec(),
            vec![self.data[0]; n],
        ))
    }

    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let rank = first.shape().len();
        if axis >= rank {
            return Err(Error::shape(
                "concat",
                format!("axis {axis} out of range for rank {rank}"),
            ));
        }
        for p in parts {
            let ok = p.shape().len() == rank
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} vs {:?} along axis {axis}", first.shape(), p.shape()),
                ));
            }
        }
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let len = p.shape()[axis] * inner;
                data.extend_from_slice(&p.data[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let refs: Vec<&Tensor> = parts.iter().collect();
        Ok(Tensor::record(Op::Concat { axis }, &refs, shape, data))
    }

    /// Elements `start..start + len` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let s = self.shape();
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::shape(
                "slice",
                format!("{start}..{} along axis {axis} of {s:?}", start + len),
            ));
        }
        let (outer, dim, inner) = split_axis(s, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = s.to_vec();
        shape[axis] = len;
        Ok(Tensor::record(Op::Slice { axis, start }, &[self], shape, data))
    }

    /// Adjoint of [`Tensor::slice`]: embeds `self` into zeros of length `full` along `axis`.
    pub fn pad(&self, axis: usize, start: usize, full: usize) -> Result<Tensor> {
        let s = self.shape();
        if axis >= s.len() || start + s[axis] > full {
            return Err(Error::shape(
                "pad",
                format!("{s:?} at {start} into length {full} along axis {axis}"),
            ));
        }
        let (outer, dim, inner) = split_axis(s, axis);
        let mut data = vec![0.0; outer * full * inner];
        for o in 0..outer {
            let dst = o * full * inner + start * inner;
            data[dst..dst + dim * inner].copy_from_slice(&self.data[o * dim * inner..(o + 1) * dim * inner]);
        }
        let mut shape = s.to_vec();
        shape[axis] = full;
        Ok(Tensor::record(Op::Pad { axis, start }, &[self], shape, data))
    }

    /// Temporal im2col; see [`UnfoldSpec`].
    pub fn unfold_time(&self, spec: UnfoldSpec) -> Result<Tensor> {
        let expect = [spec.batch * spec.time_in, spec.channels];
        if self.shape() != expect {
            return Err(Error::shape(
                "unfold",
                format!("expected {expect:?}, got {:?}", self.shape()),
            ));
        }
        let ck = spec.channels * spec.kernel;
        let mut data = vec![0.0; spec.batch * spec.time_out * ck];
        for b in 0..spec.batch {
            for t in 0..spec.time_out {
                let row = &mut data[(b * spec.time_out + t) * ck..][..ck];
                for k in 0..spec.kernel {
                    if let Some(src) = spec.source(t, k) {
                        let x = &self.data[(b * spec.time_in + src) * spec.channels..][..spec.channels];
                        for (c, &v) in x.iter().enumerate() {
                            row[c * spec.kernel + k] = v;
                        }
                    }
                }
            }
        }
        Ok(Tensor::record(
            Op::Unfold(spec),
            &[self],
            vec![spec.batch * spec.time_out, ck],
            data,
        ))
    }

    /// Adjoint of [`Tensor::unfold_time`] (col2im with accumulation).
    pub fn fold_time(&self, spec: UnfoldSpec) -> Result<Tensor> {
        let ck = spec.channels * spec.kernel;
        let expect = [spec.batch * spec.time_out, ck];
        if self.shape() != expect {
            return Err(Error::shape(
                "fold",
                format!("expected {expect:?}, got {:?}", self.shape()),
            ));
        }
        let mut data = vec![0.0; spec.batch * spec.time_in * spec.channels];
        for b in 0..spec.batch {
            for t in 0..spec.time_out {
                let row = &self.data[(b * spec.time_out + t) * ck..][..ck];
                for k in 0..spec.kernel {
                    if let Some(src) = spec.source(t, k) {
                        let x = &mut data[(b * spec.time_in + src) * spec.channels..][..spec.channels];
                        for (c, v) in x.iter_mut().enumerate() {
                            *v += row[c * spec.kernel + k];
                        }
                    }
                }
            }
        }
        Ok(Tensor::record(
            Op::Fold(spec),
            &[self],
            vec![spec.batch * spec.time_in, spec.channels],
            data,
        ))
    }

    /// Dilated 1-D convolution of a `[C_in, T]` signal with a `[C_out, C_in, K]`
    /// kernel, returning `[C_out, T']`.
    ///
    /// Output sample `t` is `sum_{c,k} w[o,c,k] * x[c, t + k*d - pad]`, so with
    /// valid padding and `K = 2, d = 2` it is `x_t + x_{t+2}` for a unit kernel.
    pub fn conv1d_dilated(&self, kernel: &Tensor, dilation: usize, padding: Padding) -> Result<Tensor> {
        let (xs, ks) = (self.shape(), kernel.shape());
        if xs.len() != 2 || ks.len() != 3 || ks[1] != xs[0] {
            return Err(Error::shape(
                "conv1d_dilated",
                format!("input {xs:?} with kernel {ks:?}"),
            ));
        }
        let (c_in, t) = (xs[0], xs[1]);
        let (c_out, k) = (ks[0], ks[2]);
        let spec = UnfoldSpec::new(1, t, c_in, k, dilation, padding)?;
        let cols = self.transpose()?.unfold_time(spec)?;
        let w = kernel.reshape(&[c_out, c_in * k])?.transpose()?;
        cols.matmul(&w)?.transpose()
    }
}

/// Gradient contributions of one recorded node.
///
/// `x` are the node inputs, `y` its output and `g` the incoming gradient, all
/// attached to the tape when building a differentiable gradient graph.
pub(crate) fn backward_rule(
    op: &Op,
    x: &[Tensor],
    y: &Tensor,
    g: &Tensor,
    need: &[bool],
) -> Result<Vec<Option<Tensor>>> {
    let want = |i: usize| need.get(i).copied().unwrap_or(false);
    let one = |t: Result<Tensor>| -> Result<Vec<Option<Tensor>>> { Ok(vec![Some(t?)]) };
    match op {
        Op::Leaf => Ok(Vec::new()),
        Op::Add => Ok(vec![want(0).then(|| g.clone()), want(1).then(|| g.clone())]),
        Op::Sub => Ok(vec![want(0).then(|| g.clone()), want(1).then(|| g.neg())]),
        Op::Mul => Ok(vec![
            if want(0) { Some(g.mul(&x[1])?) } else { None },
            if want(1) { Some(g.mul(&x[0])?) } else { None },
        ]),
        Op::Neg => one(Ok(g.neg())),
        Op::Scale(c) => one(Ok(g.scale(*c))),
        Op::AddScalar => one(Ok(g.clone())),
        Op::MatMul => Ok(vec![
            if want(0) { Some(g.matmul_nt(&x[1])?) } else { None },
            if want(1) { Some(x[0].matmul_tn(g)?) } else { None },
        ]),
        Op::MatMulNT => Ok(vec![
            if want(0) { Some(g.matmul(&x[1])?) } else { None },
            if want(1) { Some(g.matmul_tn(&x[0])?) } else { None },
        ]),
        Op::MatMulTN => Ok(vec![
            if want(0) { Some(x[1].matmul_nt(g)?) } else { None },
            if want(1) { Some(x[0].matmul(g)?) } else { None },
        ]),
        Op::Transpose => one(g.transpose()),
        Op::Tanh => one(g.mul(&y.square().neg().add_scalar(1.0))),
        Op::Relu => {
            let mask: Vec<f64> = x[0].data().iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
            one(g.mul(&Tensor::raw(x[0].shape().to_vec(), mask)))
        }
        Op::Exp => one(g.mul(y)),
        Op::Log => one(g.mul(&x[0].recip())),
        Op::Recip => one(g.mul(&y.square()).map(|t| t.neg())),
        Op::Sigmoid => one(g.mul(&y.mul(&y.neg().add_scalar(1.0))?)),
        Op::Softplus => one(g.mul(&x[0].sigmoid())),
        Op::Concat { axis } => {
            let mut start = 0;
            let mut out = Vec::with_capacity(x.len());
            for (i, part) in x.iter().enumerate() {
                let len = part.shape()[*axis];
                out.push(if want(i) {
                    Some(g.slice(*axis, start, len)?)
                } else {
                    None
                });
                start += len;
            }
            Ok(out)
        }
        Op::Slice { axis, start } => one(g.pad(*axis, *start, x[0].shape()[*axis])),
        Op::Pad { axis, start } => one(g.slice(*axis, *start, x[0].shape()[*axis])),
        Op::Reshape => one(g.reshape(x[0].shape())),
        Op::Sum => one(g.expand(x[0].shape())),
        Op::Mean => one(g.scale(1.0 / x[0].numel() as f64).expand(x[0].shape())),
        Op::Expand => one(g.sum().reshape(x[0].shape())),
        Op::Unfold(spec) => one(g.fold_time(*spec)),
        Op::Fold(spec) => one(g.unfold_time(*spec)),
    }
}
