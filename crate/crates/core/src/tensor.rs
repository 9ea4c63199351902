//! Immutable n-dimensional tensors that record the operation that produced
//! them.
//!
//! A [`Tensor`] is a cheap handle (`Rc`) to a node holding its shape, its
//! values and, unless it is a leaf, the operation and parent handles needed
//! for reverse-mode differentiation (see [`crate::autograd`]). Nodes are never
//! mutated after construction; optimizers produce new leaves.
//!
//! Only nodes that transitively depend on a trainable leaf keep their parent
//! links. Everything else is stored as a plain constant so inference graphs
//! release intermediate buffers as soon as the last handle is dropped.

use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::kernels;
use crate::precision::round_in_place;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Clone)]
pub struct Tensor(pub(crate) Rc<Node>);

pub(crate) struct Node {
    pub(crate) id: u64,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Rc<[f64]>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op,
}

pub(crate) enum Op {
    Leaf,
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Scale(Tensor, f64),
    AddScalar(Tensor),
    ScaleBy(Tensor, Tensor),
    AddScaled { base: Tensor, delta: Tensor, gamma: Tensor },
    Recip(Tensor),
    Matmul { a: Tensor, b: Tensor, ta: bool, tb: bool },
    Transpose(Tensor),
    Reshape(Tensor),
    Concat(Vec<Tensor>),
    Conv2d { input: Tensor, kernel: Tensor, stride: usize, pad: usize },
    AddBias(Tensor, Tensor),
    Upsample(Tensor, usize),
    AvgPool(Tensor, usize),
    LeakyRelu(Tensor, f64),
    Relu(Tensor),
    Sigmoid(Tensor),
    Tanh(Tensor),
    Abs(Tensor),
    Log { input: Tensor, floor: f64 },
    Sum(Tensor),
    Mean(Tensor),
    SoftmaxRows(Tensor),
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::ScaleBy(..) => "scale_by",
            Op::AddScaled { .. } => "add_scaled",
            Op::Recip(..) => "recip",
            Op::Matmul { .. } => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::Concat(..) => "concat",
            Op::Conv2d { .. } => "conv2d",
            Op::AddBias(..) => "add_bias",
            Op::Upsample(..) => "upsample",
            Op::AvgPool(..) => "avg_pool",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Abs(..) => "abs",
            Op::Log { .. } => "log",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SoftmaxRows(..) => "softmax_rows",
        }
    }

    pub(crate) fn parents(&self) -> Vec<&Tensor> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::ScaleBy(a, b) | Op::AddBias(a, b) => {
                vec![a, b]
            }
            Op::Matmul { a, b, .. } => vec![a, b],
            Op::Conv2d { input, kernel, .. } => vec![input, kernel],
            Op::AddScaled { base, delta, gamma } => vec![base, delta, gamma],
            Op::Concat(parts) => parts.iter().collect(),
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Recip(a)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::Upsample(a, _)
            | Op::AvgPool(a, _)
            | Op::LeakyRelu(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Abs(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SoftmaxRows(a) => vec![a],
            Op::Log { input, .. } => vec![input],
        }
    }
}

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn leaf_from(shape: Vec<usize>, data: Rc<[f64]>, requires_grad: bool) -> Tensor {
        Tensor(Rc::new(Node { id: next_id(), shape, data, requires_grad, op: Op::Leaf }))
    }

    /// Constant tensor (no gradient is tracked for it).
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Self::checked_leaf(shape, data, false)
    }

    /// Trainable leaf: gradients flow into it during [`crate::autograd::backward`].
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Self::checked_leaf(shape, data, true)
    }

    fn checked_leaf(shape: &[usize], mut data: Vec<f64>, requires_grad: bool) -> Result<Tensor> {
        if numel(shape) != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {:?} holds {} values, got {}", shape, numel(shape), data.len()),
            ));
        }
        round_in_place(&mut data);
        Ok(Self::leaf_from(shape.to_vec(), data.into(), requires_grad))
    }

    pub fn scalar(value: f64) -> Tensor {
        Self::new(&[1], vec![value]).expect("one value fits shape [1]")
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Self::new(shape, vec![0.0; numel(shape)]).expect("sized from shape")
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Self::new(shape, vec![value; numel(shape)]).expect("sized from shape")
    }

    /// Constant view sharing this tensor's storage; cuts the graph here.
    pub fn detach(&self) -> Tensor {
        Self::leaf_from(self.0.shape.clone(), self.0.data.clone(), false)
    }

    /// Trainable leaf sharing this tensor's storage.
    pub fn as_param(&self) -> Tensor {
        Self::leaf_from(self.0.shape.clone(), self.0.data.clone(), true)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn len(&self) -> usize {
        self.0.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.data.is_empty()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.to_vec()
    }

    /// First element; intended for `[1]`-shaped results.
    pub fn item(&self) -> f64 {
        self.0.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// `true` when the tensor was produced by a recorded operation.
    pub fn has_graph(&self) -> bool {
        !matches!(self.0.op, Op::Leaf)
    }

    pub fn op_name(&self) -> &'static str {
        self.0.op.name()
    }

    fn from_op(shape: Vec<usize>, mut data: Vec<f64>, op: Op) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        round_in_place(&mut data);
        let requires_grad = op.parents().iter().any(|p| p.0.requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        Tensor(Rc::new(Node { id: next_id(), shape, data: data.into(), requires_grad, op }))
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(), other.shape())));
        }
        Ok(())
    }

    fn zip(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
        self.same_shape(other, op)?;
        Ok(self.data().iter().zip(other.data()).map(|(&a, &b)| f(a, b)).collect())
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.data().iter().map(|&x| f(x)).collect()
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let data = self.zip(other, "add", |a, b| a + b)?;
        Ok(Self::from_op(self.shape().to_vec(), data, Op::Add(self.clone(), other.clone())))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        let data = self.zip(other, "sub", |a, b| a - b)?;
        Ok(Self::from_op(self.shape().to_vec(), data, Op::Sub(self.clone(), other.clone())))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        let data = self.zip(other, "mul", |a, b| a * b)?;
        Ok(Self::from_op(self.shape().to_vec(), data, Op::Mul(self.clone(), other.clone())))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        Self::from_op(self.shape().to_vec(), self.map(|x| x * c), Op::Scale(self.clone(), c))
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        Self::from_op(self.shape().to_vec(), self.map(|x| x + c), Op::AddScalar(self.clone()))
    }

    /// `1 - x`, elementwise.
    pub fn one_minus(&self) -> Tensor {
        self.scale(-1.0).add_scalar(1.0)
    }

    /// Multiplies every element by the single value held in `s`.
    pub fn scale_by(&self, s: &Tensor) -> Result<Tensor> {
        if s.len() != 1 {
            return Err(Error::shape("scale_by", format!("scale must hold one value, got {:?}", s.shape())));
        }
        let c = s.item();
        Ok(Self::from_op(self.shape().to_vec(), self.map(|x| x * c), Op::ScaleBy(self.clone(), s.clone())))
    }

    /// `base + gamma * delta` with `gamma` a one-element tensor. When `gamma`
    /// is exactly zero the result is bit-identical to `base`.
    pub fn add_scaled(base: &Tensor, delta: &Tensor, gamma: &Tensor) -> Result<Tensor> {
        base.same_shape(delta, "add_scaled")?;
        if gamma.len() != 1 {
            return Err(Error::shape("add_scaled", "gamma must hold one value"));
        }
        let g = gamma.item();
        let data = if g == 0.0 {
            base.to_vec()
        } else {
            base.data().iter().zip(delta.data()).map(|(&a, &r)| a + g * r).collect()
        };
        Ok(Self::from_op(
            base.shape().to_vec(),
            data,
            Op::AddScaled { base: base.clone(), delta: delta.clone(), gamma: gamma.clone() },
        ))
    }

    pub fn recip(&self) -> Tensor {
        Self::from_op(self.shape().to_vec(), self.map(|x| 1.0 / x), Op::Recip(self.clone()))
    }

    fn matrix_dims(&self, op: &'static str) -> Result<(usize, usize)> {
        match *self.shape() {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape(op, format!("expected a matrix, got {:?}", self.shape()))),
        }
    }

    /// Matrix product `op(a) · op(b)` where `op` optionally transposes.
    pub fn matmul_ex(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Result<Tensor> {
        if ta && tb {
            return Err(Error::invalid("matmul with both operands transposed is not supported"));
        }
        let (ar, ac) = a.matrix_dims("matmul")?;
        let (br, bc) = b.matrix_dims("matmul")?;
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(Error::shape("matmul", format!("inner extents {k} and {k2} differ")));
        }
        let mut out = vec![0.0; m * n];
        match (ta, tb) {
            (false, false) => kernels::gemm_nn(m, k, n, a.data(), b.data(), &mut out),
            (false, true) => kernels::gemm_nt(m, k, n, a.data(), b.data(), &mut out),
            (true, false) => kernels::gemm_tn(m, k, n, a.data(), b.data(), &mut out),
            (true, true) => unreachable!(),
        }
        Ok(Self::from_op(vec![m, n], out, Op::Matmul { a: a.clone(), b: b.clone(), ta, tb }))
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        Self::matmul_ex(self, other, false, false)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.matrix_dims("transpose")?;
        let mut out = vec![0.0; r * c];
        let d = self.data();
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        Ok(Self::from_op(vec![c, r], out, Op::Transpose(self.clone())))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.len() {
            return Err(Error::shape("reshape", format!("{:?} -> {:?}", self.shape(), shape)));
        }
        let requires_grad = self.0.requires_grad;
        let op = if requires_grad { Op::Reshape(self.clone()) } else { Op::Leaf };
        Ok(Tensor(Rc::new(Node {
            id: next_id(),
            shape: shape.to_vec(),
            data: self.0.data.clone(),
            requires_grad,
            op,
        })))
    }

    /// Concatenation along the leading axis; trailing extents must agree.
    pub fn concat(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        if first.shape().is_empty() {
            return Err(Error::shape("concat", "cannot concatenate rank-0 tensors"));
        }
        let tail = &first.shape()[1..];
        let mut lead = 0;
        for p in parts {
            if p.shape().len() != first.shape().len() || &p.shape()[1..] != tail {
                return Err(Error::shape("concat", format!("{:?} vs {:?}", first.shape(), p.shape())));
            }
            lead += p.shape()[0];
        }
        let mut data = Vec::with_capacity(parts.iter().map(Tensor::len).sum());
        for p in parts {
            data.extend_from_slice(p.data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(tail);
        Ok(Self::from_op(shape, data, Op::Concat(parts.to_vec())))
    }

    pub(crate) fn chw(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match *self.shape() {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::shape(op, format!("expected [C,H,W], got {:?}", self.shape()))),
        }
    }

    /// 2-D cross-correlation of a `[C_in,H,W]` input with a
    /// `[C_out,C_in,k,k]` kernel.
    pub fn conv2d(&self, kernel: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
        let (c, h, w) = self.chw("conv2d")?;
        let (co, ci, kh, kw) = match *kernel.shape() {
            [a, b, c, d] => (a, b, c, d),
            _ => return Err(Error::shape("conv2d", format!("kernel must be 4-D, got {:?}", kernel.shape()))),
        };
        if ci != c {
            return Err(Error::shape("conv2d", format!("input has {c} channels, kernel expects {ci}")));
        }
        if kh != kw || kh == 0 {
            return Err(Error::shape("conv2d", format!("kernel must be square and non-empty, got {kh}x{kw}")));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d stride must be >= 1"));
        }
        if h + 2 * pad < kh || w + 2 * pad < kh {
            return Err(Error::shape("conv2d", format!("kernel {kh} exceeds padded input {h}x{w} (pad {pad})")));
        }
        let geom = kernels::ConvGeom { c, h, w, k: kh, stride, pad };
        let (ho, wo) = geom.out_hw();
        let cols = kernels::im2col(&geom, self.data());
        let mut out = vec![0.0; co * ho * wo];
        kernels::gemm_nn(co, c * kh * kh, ho * wo, kernel.data(), &cols, &mut out);
        Ok(Self::from_op(
            vec![co, ho, wo],
            out,
            Op::Conv2d { input: self.clone(), kernel: kernel.clone(), stride, pad },
        ))
    }

    /// Adds `bias[c]` to every spatial position of channel `c`.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let (c, h, w) = self.chw("add_bias")?;
        if bias.len() != c {
            return Err(Error::shape("add_bias", format!("{} biases for {} channels", bias.len(), c)));
        }
        let plane = h * w;
        let mut data = self.to_vec();
        for (ch, chunk) in data.chunks_mut(plane).enumerate() {
            let b = bias.data()[ch];
            chunk.iter_mut().for_each(|v| *v += b);
        }
        Ok(Self::from_op(self.shape().to_vec(), data, Op::AddBias(self.clone(), bias.clone())))
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample(&self, factor: usize) -> Result<Tensor> {
        let (c, h, w) = self.chw("upsample")?;
        if factor == 0 {
            return Err(Error::invalid("upsample factor must be >= 1"));
        }
        let (ho, wo) = (h * factor, w * factor);
        let src = self.data();
        let mut out = vec![0.0; c * ho * wo];
        for ch in 0..c {
            for y in 0..ho {
                let srow = &src[ch * h * w + (y / factor) * w..][..w];
                let drow = &mut out[ch * ho * wo + y * wo..][..wo];
                for (x, d) in drow.iter_mut().enumerate() {
                    *d = srow[x / factor];
                }
            }
        }
        Ok(Self::from_op(vec![c, ho, wo], out, Op::Upsample(self.clone(), factor)))
    }

    /// Average pooling over non-overlapping `factor × factor` blocks.
    pub fn avg_pool(&self, factor: usize) -> Result<Tensor> {
        let (c, h, w) = self.chw("avg_pool")?;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(Error::shape("avg_pool", format!("factor {factor} does not divide {h}x{w}")));
        }
        let out = kernels::avg_pool(self.data(), c, h, w, factor);
        Ok(Self::from_op(vec![c, h / factor, w / factor], out, Op::AvgPool(self.clone(), factor)))
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        let data = self.map(|x| if x > 0.0 { x } else { x * slope });
        Self::from_op(self.shape().to_vec(), data, Op::LeakyRelu(self.clone(), slope))
    }

    pub fn relu(&self) -> Tensor {
        let data = self.map(|x| if x > 0.0 { x } else { 0.0 });
        Self::from_op(self.shape().to_vec(), data, Op::Relu(self.clone()))
    }

    pub fn sigmoid(&self) -> Tensor {
        let data = self.map(sigmoid);
        Self::from_op(self.shape().to_vec(), data, Op::Sigmoid(self.clone()))
    }

    pub fn tanh(&self) -> Tensor {
        Self::from_op(self.shape().to_vec(), self.map(libm::tanh), Op::Tanh(self.clone()))
    }

    pub fn abs(&self) -> Tensor {
        Self::from_op(self.shape().to_vec(), self.map(libm::fabs), Op::Abs(self.clone()))
    }

    /// Natural logarithm of `max(x, floor)`; the gradient is zero where the
    /// floor is active.
    pub fn log_floor(&self, floor: f64) -> Tensor {
        let data = self.map(|x| libm::log(if x > floor { x } else { floor }));
        Self::from_op(self.shape().to_vec(), data, Op::Log { input: self.clone(), floor })
    }

    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        Self::from_op(vec![1], vec![s], Op::Sum(self.clone()))
    }

    pub fn mean(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        Self::from_op(vec![1], vec![s / self.len() as f64], Op::Mean(self.clone()))
    }

    /// Row-wise softmax of a matrix, stabilized by subtracting each row's max.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        let (r, c) = self.matrix_dims("softmax_rows")?;
        if self.data().iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("softmax_rows"));
        }
        let mut out = self.to_vec();
        for row in out.chunks_mut(c.max(1)).take(r) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = libm::exp(*v - m);
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        Ok(Self::from_op(vec![r, c], out, Op::SoftmaxRows(self.clone())))
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("op", &self.0.op.name())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_conv_reproduces_input() {
        let x = Tensor::new(&[1, 3, 4], (0..12).map(|v| v as f64 * 0.5 - 1.0).collect()).unwrap();
        let k = Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let y = x.conv2d(&k, 1, 0).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_of_ones_sums_window() {
        let x = Tensor::full(&[1, 3, 3], 1.0);
        let k = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = x.conv2d(&k, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.item(), 9.0);
    }

    #[test]
    fn conv_output_extent_formula() {
        let x = Tensor::zeros(&[2, 9, 7]);
        let k = Tensor::zeros(&[5, 2, 4, 4]);
        let y = x.conv2d(&k, 2, 1).unwrap();
        assert_eq!(y.shape(), &[5, (9 + 2 - 4) / 2 + 1, (7 + 2 - 4) / 2 + 1]);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::zeros(&[2, 4, 4]);
        let k = Tensor::zeros(&[1, 3, 3, 3]);
        assert!(matches!(x.conv2d(&k, 1, 1), Err(Error::Shape { op: "conv2d", .. })));
    }

    #[test]
    fn softmax_uniform_and_analytic() {
        let s = Tensor::new(&[2, 4], vec![0.7; 4].into_iter().chain([0.0, libm::log(2.0), -1e300, -1e300]).collect())
            .unwrap();
        let b = s.softmax_rows().unwrap();
        for v in &b.data()[..4] {
            assert!((v - 0.25).abs() < 1e-15);
        }
        assert!((b.data()[4] - 1.0 / 3.0).abs() < 1e-15);
        assert!((b.data()[5] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_nan() {
        let s = Tensor::new(&[1, 2], vec![0.0, f64::NAN]).unwrap();
        assert_eq!(s.softmax_rows().unwrap_err(), Error::NonFinite("softmax_rows"));
    }

    #[test]
    fn add_scaled_with_zero_gamma_is_bit_exact() {
        let a = Tensor::new(&[3], vec![-0.0, 1.5, -2.25]).unwrap();
        let r = Tensor::new(&[3], vec![f64::MAX, 3.0, -7.0]).unwrap();
        let y = Tensor::add_scaled(&a, &r, &Tensor::scalar(0.0)).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&y), bits(&a));
    }

    #[test]
    fn constants_do_not_record_parents() {
        let a = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let b = a.add(&a).unwrap();
        assert!(!b.has_graph());
        let p = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        assert!(p.add(&a).unwrap().has_graph());
    }

    #[test]
    fn upsample_then_pool_roundtrips() {
        let x = Tensor::new(&[2, 2, 3], (0..12).map(f64::from).collect()).unwrap();
        let y = x.upsample(2).unwrap().avg_pool(2).unwrap();
        assert_eq!(y.data(), x.data());
    }
}
