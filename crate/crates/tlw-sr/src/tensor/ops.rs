//! Forward operators and their backward rules.
//!
//! Binary operators accept equal shapes or a single-channel operand
//! broadcast over the other side's channels (equal batch and spatial
//! extents). Reductions accumulate in f64.

use super::conv;
use super::{Op, Shape, Tensor};
use crate::error::{Error, Result};

pub(crate) const LOG_CLAMP: f32 = 1e-12;

#[inline]
fn bc_index(shape: Shape, b: usize, c: usize, hw: usize) -> usize {
    let cc = if shape.c == 1 { 0 } else { c };
    (b * shape.c + cc) * (shape.h * shape.w) + hw
}

fn binary_out_shape(op: &'static str, a: Shape, b: Shape) -> Result<Shape> {
    if a == b {
        return Ok(a);
    }
    let spatial_ok = a.b == b.b && a.h == b.h && a.w == b.w;
    if spatial_ok && (a.c == 1 || b.c == 1) {
        return Ok(Shape::new(a.b, a.c.max(b.c), a.h, a.w));
    }
    Err(Error::shape(
        op,
        format!(
            "shapes {a} and {b} are not broadcastable; binary operators need equal shapes or a \
             single-channel operand with matching batch and spatial extents"
        ),
    ))
}

fn binary_forward(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f32, f32) -> f32,
) -> Result<(Shape, Vec<f32>)> {
    let out_shape = binary_out_shape(op, a.shape(), b.shape())?;
    let av = a.values();
    let bv = b.values();
    let hw = out_shape.h * out_shape.w;
    let mut out = Vec::with_capacity(out_shape.numel());
    for bi in 0..out_shape.b {
        for ci in 0..out_shape.c {
            let abase = bc_index(a.shape(), bi, ci, 0);
            let bbase = bc_index(b.shape(), bi, ci, 0);
            for i in 0..hw {
                out.push(f(av[abase + i], bv[bbase + i]));
            }
        }
    }
    Ok((out_shape, out))
}

/// Sum `full` (laid out as `from`) down to `to`, collapsing the channel
/// axis when the target has a single channel.
fn reduce_channels(full: &[f32], from: Shape, to: Shape) -> Vec<f32> {
    if from == to {
        return full.to_vec();
    }
    debug_assert!(to.c == 1 && from.b == to.b && from.h == to.h && from.w == to.w);
    let hw = from.h * from.w;
    let mut out = vec![0.0f32; to.numel()];
    for bi in 0..from.b {
        for ci in 0..from.c {
            let src = &full[(bi * from.c + ci) * hw..][..hw];
            let dst = &mut out[bi * hw..][..hw];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    out
}

fn unary(a: &Tensor, op: Op, f: impl Fn(f32) -> f32) -> Tensor {
    let out: Vec<f32> = a.values().iter().map(|&x| f(x)).collect();
    Tensor::make(a.shape(), out, a.requires_grad(), op)
}

#[inline]
fn stable_sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tensor {
    pub fn relu(&self) -> Tensor {
        unary(self, Op::Relu(self.clone()), |x| x.max(0.0))
    }

    pub fn sigmoid(&self) -> Tensor {
        unary(self, Op::Sigmoid(self.clone()), stable_sigmoid)
    }

    pub fn abs(&self) -> Tensor {
        unary(self, Op::Abs(self.clone()), f32::abs)
    }

    pub fn square(&self) -> Tensor {
        unary(self, Op::Square(self.clone()), |x| x * x)
    }

    pub fn exp(&self) -> Tensor {
        unary(self, Op::Exp(self.clone()), f32::exp)
    }

    /// Natural log, guarded by a clamp at 1e-12.
    pub fn log(&self) -> Tensor {
        unary(self, Op::Log(self.clone()), |x| x.max(LOG_CLAMP).ln())
    }

    pub fn clamp(&self, lo: f32, hi: f32) -> Tensor {
        unary(self, Op::Clamp(self.clone(), lo, hi), |x| x.clamp(lo, hi))
    }

    /// Multiply every element by a constant.
    pub fn scale(&self, c: f32) -> Tensor {
        unary(self, Op::Scale(self.clone(), c), |x| x * c)
    }

    /// Add a constant to every element.
    pub fn add_scalar(&self, c: f32) -> Tensor {
        unary(self, Op::AddScalar(self.clone()), |x| x + c)
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        let (shape, out) = binary_forward("add", self, other, |a, b| a + b)?;
        let rg = self.requires_grad() || other.requires_grad();
        Ok(Tensor::make(
            shape,
            out,
            rg,
            Op::Add(self.clone(), other.clone()),
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        let (shape, out) = binary_forward("sub", self, other, |a, b| a - b)?;
        let rg = self.requires_grad() || other.requires_grad();
        Ok(Tensor::make(
            shape,
            out,
            rg,
            Op::Sub(self.clone(), other.clone()),
        ))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        let (shape, out) = binary_forward("mul", self, other, |a, b| a * b)?;
        let rg = self.requires_grad() || other.requires_grad();
        Ok(Tensor::make(
            shape,
            out,
            rg,
            Op::Mul(self.clone(), other.clone()),
        ))
    }

    /// Sum of all elements as a scalar tensor (f64 accumulation).
    pub fn sum(&self) -> Tensor {
        let s: f64 = self.values().iter().map(|&x| x as f64).sum();
        Tensor::make(
            Shape::scalar(),
            vec![s as f32],
            self.requires_grad(),
            Op::Sum(self.clone()),
        )
    }

    /// Mean of all elements as a scalar tensor (f64 accumulation).
    pub fn mean(&self) -> Tensor {
        let s: f64 = self.values().iter().map(|&x| x as f64).sum();
        let m = s / self.numel() as f64;
        Tensor::make(
            Shape::scalar(),
            vec![m as f32],
            self.requires_grad(),
            Op::Mean(self.clone()),
        )
    }

    /// Per-position sum over the channel axis: (B, C, H, W) -> (B, 1, H, W).
    pub fn channel_sum(&self) -> Tensor {
        let shape = self.shape();
        let hw = shape.h * shape.w;
        let v = self.values();
        let mut out = vec![0.0f32; shape.b * hw];
        for bi in 0..shape.b {
            for i in 0..hw {
                let mut acc = 0.0f64;
                for ci in 0..shape.c {
                    acc += v[(bi * shape.c + ci) * hw + i] as f64;
                }
                out[bi * hw + i] = acc as f32;
            }
        }
        Tensor::make(
            Shape::new(shape.b, 1, shape.h, shape.w),
            out,
            self.requires_grad(),
            Op::ChannelSum(self.clone()),
        )
    }

    /// Elementwise 1 / sqrt(x + eps).
    pub fn recip_sqrt(&self, eps: f32) -> Tensor {
        unary(self, Op::RecipSqrtEps(self.clone(), eps), |x| {
            ((x as f64 + eps as f64).sqrt().recip()) as f32
        })
    }

    /// Concatenate along the channel axis; order (self, other).
    pub fn concat_channels(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.shape(), other.shape());
        if a.b != b.b || a.h != b.h || a.w != b.w {
            return Err(Error::shape(
                "concat_channels",
                format!("batch/spatial extents differ: {a} vs {b}"),
            ));
        }
        let hw = a.h * a.w;
        let av = self.values();
        let bv = other.values();
        let mut out = Vec::with_capacity(a.numel() + b.numel());
        for bi in 0..a.b {
            out.extend_from_slice(&av[bi * a.c * hw..][..a.c * hw]);
            out.extend_from_slice(&bv[bi * b.c * hw..][..b.c * hw]);
        }
        Ok(Tensor::make(
            Shape::new(a.b, a.c + b.c, a.h, a.w),
            out,
            self.requires_grad() || other.requires_grad(),
            Op::ConcatChannels(self.clone(), other.clone()),
        ))
    }

    /// Channels `[from, to)` as a new tensor.
    pub fn slice_channels(&self, from: usize, to: usize) -> Result<Tensor> {
        let shape = self.shape();
        if from >= to || to > shape.c {
            return Err(Error::shape(
                "slice_channels",
                format!(
                    "channel range {from}..{to} out of bounds for {} channels",
                    shape.c
                ),
            ));
        }
        let hw = shape.h * shape.w;
        let v = self.values();
        let mut out = Vec::with_capacity(shape.b * (to - from) * hw);
        for bi in 0..shape.b {
            out.extend_from_slice(&v[(bi * shape.c + from) * hw..][..(to - from) * hw]);
        }
        Ok(Tensor::make(
            Shape::new(shape.b, to - from, shape.h, shape.w),
            out,
            self.requires_grad(),
            Op::SliceChannels(self.clone(), from),
        ))
    }

    /// 2-D convolution, stride 1, zero padding. Kernel layout is
    /// (out_ch, in_ch, kh, kw); bias has shape (1, out_ch, 1, 1).
    pub fn conv2d(&self, kernel: &Tensor, bias: &Tensor, padding: usize) -> Result<Tensor> {
        let ishape = self.shape();
        let kshape = kernel.shape();
        let bshape = bias.shape();
        if ishape.c != kshape.c {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "input has {} channels but kernel expects {} (kernel shape {kshape})",
                    ishape.c, kshape.c
                ),
            ));
        }
        if bshape != Shape::new(1, kshape.b, 1, 1) {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "bias shape {bshape} does not match (1, {}, 1, 1) for {} output channels",
                    kshape.b, kshape.b
                ),
            ));
        }
        let oh = (ishape.h + 2 * padding).checked_sub(kshape.h - 1);
        let ow = (ishape.w + 2 * padding).checked_sub(kshape.w - 1);
        let (oh, ow) = match (oh, ow) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => (oh, ow),
            _ => {
                return Err(Error::shape(
                    "conv2d",
                    format!(
                        "kernel {}x{} with padding {padding} does not fit input {}x{}",
                        kshape.h, kshape.w, ishape.h, ishape.w
                    ),
                ))
            }
        };
        let out = conv::forward(
            &self.values(),
            ishape,
            &kernel.values(),
            kshape,
            &bias.values(),
            padding,
            oh,
            ow,
        );
        let rg = self.requires_grad() || kernel.requires_grad() || bias.requires_grad();
        Ok(Tensor::make(
            Shape::new(ishape.b, kshape.b, oh, ow),
            out,
            rg,
            Op::Conv2d {
                input: self.clone(),
                kernel: kernel.clone(),
                bias: bias.clone(),
                padding,
            },
        ))
    }

    /// Per-image sum-fixing activation: rescales each batch item so its
    /// element sum equals `k * N` while keeping every element in [0, 1].
    /// Inputs are expected in [0, 1].
    pub fn fixedsum(&self, k: f32) -> Result<Tensor> {
        if !(k > 0.0 && k < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "fixedsum: k must lie in (0, 1), got {k}"
            )));
        }
        let shape = self.shape();
        let n = shape.per_image();
        let v = self.values();
        let mut out = vec![0.0f32; shape.numel()];
        for bi in 0..shape.b {
            let x = &v[bi * n..][..n];
            let o = &mut out[bi * n..][..n];
            fixedsum_image(x, k, o);
        }
        drop(v);
        Ok(Tensor::make(
            shape,
            out,
            self.requires_grad(),
            Op::FixedSum {
                input: self.clone(),
                k,
            },
        ))
    }
}

const FIXEDSUM_EPS: f64 = 1e-8;

fn fixedsum_image(x: &[f32], k: f32, out: &mut [f32]) {
    let n = x.len() as f64;
    let s: f64 = x.iter().map(|&v| v as f64).sum();
    let kn = k as f64 * n;
    if kn > s {
        let denom = (n - s).max(FIXEDSUM_EPS);
        let r = (kn - s) / denom;
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = (xi as f64 + r * (1.0 - xi as f64)) as f32;
        }
    } else {
        let denom = s.max(FIXEDSUM_EPS);
        let r = kn / denom;
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = (xi as f64 * r) as f32;
        }
    }
}

fn fixedsum_backward(x: &[f32], k: f32, grad: &[f32], gin: &mut [f32]) {
    let n = x.len() as f64;
    let s: f64 = x.iter().map(|&v| v as f64).sum();
    let kn = k as f64 * n;
    if kn > s {
        // out_i = x_i + r (1 - x_i); d out_i / d x_j =
        //   delta_ij (n - kn)/(n - s) + (1 - x_i)(kn - n)/(n - s)^2
        let denom = (n - s).max(FIXEDSUM_EPS);
        let diag = (n - kn) / denom;
        let coef = (kn - n) / (denom * denom);
        let dot: f64 = grad
            .iter()
            .zip(x)
            .map(|(&g, &xi)| g as f64 * (1.0 - xi as f64))
            .sum();
        for (gi, &g) in gin.iter_mut().zip(grad) {
            *gi += (g as f64 * diag + dot * coef) as f32;
        }
    } else {
        // out_i = x_i kn / s; d out_i / d x_j = delta_ij kn/s - x_i kn/s^2
        let denom = s.max(FIXEDSUM_EPS);
        let diag = kn / denom;
        let coef = kn / (denom * denom);
        let dot: f64 = grad
            .iter()
            .zip(x)
            .map(|(&g, &xi)| g as f64 * xi as f64)
            .sum();
        for (gi, &g) in gin.iter_mut().zip(grad) {
            *gi += (g as f64 * diag - dot * coef) as f32;
        }
    }
}

/// log(sum(exp(v_i))) over scalar tensors, computed as
/// m + log(sum(exp(v_i - m))) with m = max v_i.
pub fn logsumexp(values: &[Tensor]) -> Result<Tensor> {
    if values.is_empty() {
        return Err(Error::InvalidArgument(
            "logsumexp: empty list of values".into(),
        ));
    }
    for v in values {
        if !v.shape().is_scalar() {
            return Err(Error::shape(
                "logsumexp",
                format!("expected scalar tensors, got shape {}", v.shape()),
            ));
        }
    }
    let m = values
        .iter()
        .map(|v| v.scalar_value())
        .fold(f32::NEG_INFINITY, f32::max);
    let mut total: Option<Tensor> = None;
    for v in values {
        let term = v.add_scalar(-m).exp();
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    Ok(total.unwrap().log().add_scalar(m))
}

pub(super) type GradMap = std::collections::HashMap<u64, Vec<f32>>;

fn sink(pass: &mut GradMap, t: &Tensor, delta: Vec<f32>) {
    if !t.requires_grad() {
        return;
    }
    match pass.entry(t.id()) {
        std::collections::hash_map::Entry::Occupied(mut e) => {
            for (g, d) in e.get_mut().iter_mut().zip(&delta) {
                *g += d;
            }
        }
        std::collections::hash_map::Entry::Vacant(e) => {
            e.insert(delta);
        }
    }
}

/// Dispatch of backward rules; `out` is the tensor the rule belongs to,
/// `grad` the upstream gradient w.r.t. `out`, and `pass` the gradient map
/// of the running backward pass.
pub(super) fn backward_rule(op: &Op, out: &Tensor, grad: &[f32], pass: &mut GradMap) {
    match op {
        Op::Leaf => {}
        Op::Relu(a) => {
            if a.requires_grad() {
                let av = a.values();
                let delta: Vec<f32> = grad
                    .iter()
                    .zip(av.iter())
                    .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                drop(av);
                sink(pass, a, delta);
            }
        }
        Op::Sigmoid(a) => {
            if a.requires_grad() {
                let ov = out.values();
                let delta: Vec<f32> = grad
                    .iter()
                    .zip(ov.iter())
                    .map(|(&g, &s)| g * s * (1.0 - s))
                    .collect();
                drop(ov);
                sink(pass, a, delta);
            }
        }
        Op::Abs(a) => {
            if a.requires_grad() {
                let av = a.values();
                let delta: Vec<f32> = grad
                    .iter()
                    .zip(av.iter())
                    .map(|(&g, &x)| {
                        if x > 0.0 {
                            g
                        } else if x < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    })
                    .collect();
                drop(av);
                sink(pass, a, delta);
            }
        }
        Op::Square(a) => {
            if a.requires_grad() {
                let av = a.values();
                let delta: Vec<f32> = grad
                    .iter()
                    .zip(av.iter())
                    .map(|(&g, &x)| g * 2.0 * x)
                    .collect();
                drop(av);
                sink(pass, a, delta);
            }
        }
        Op::Exp(a) => {
            if a.requires_grad() {
                let ov = out.values();
                let delta: Vec<f32> = grad.iter().zip(ov.iter()).map(|(&g, &e)| g * e).collect();
                drop(ov);
                sink(pass, a, delta);
            }
        }
        Op::Log(a) => {
            if a.requires_grad() {
                let av = a.values();
                let delta: Vec<f32> = grad
                    .iter()
                    .zip(av.iter())
                    .map(|(&g, &x)| if x > LOG_CLAMP { g / x } else { 0.0 })
                    .collect();
                drop(av);
                sink(pass, a, delta);
            }
        }
        Op::Clamp(a, lo, hi) => {
            if a.requires_grad() {
                let av = a.values();
                let delta: Vec<f32> = grad
                    .iter()
                    .zip(av.iter())
                    .map(|(&g, &x)| if x >= *lo && x <= *hi { g } else { 0.0 })
                    .collect();
                drop(av);
                sink(pass, a, delta);
            }
        }
        Op::Scale(a, c) => {
            if a.requires_grad() {
                let delta: Vec<f32> = grad.iter().map(|&g| g * c).collect();
                sink(pass, a, delta);
            }
        }
        Op::AddScalar(a) => {
            if a.requires_grad() {
                sink(pass, a, grad.to_vec());
            }
        }
        Op::Add(a, b) => {
            let out_shape = out.shape();
            if a.requires_grad() {
                sink(pass, a, reduce_channels(grad, out_shape, a.shape()));
            }
            if b.requires_grad() {
                sink(pass, b, reduce_channels(grad, out_shape, b.shape()));
            }
        }
        Op::Sub(a, b) => {
            let out_shape = out.shape();
            if a.requires_grad() {
                sink(pass, a, reduce_channels(grad, out_shape, a.shape()));
            }
            if b.requires_grad() {
                let neg: Vec<f32> = grad.iter().map(|&g| -g).collect();
                sink(pass, b, reduce_channels(&neg, out_shape, b.shape()));
            }
        }
        Op::Mul(a, b) => {
            let out_shape = out.shape();
            let hw = out_shape.h * out_shape.w;
            if a.requires_grad() {
                let bv = b.values();
                let mut full = vec![0.0f32; out_shape.numel()];
                for bi in 0..out_shape.b {
                    for ci in 0..out_shape.c {
                        let obase = (bi * out_shape.c + ci) * hw;
                        let bbase = bc_index(b.shape(), bi, ci, 0);
                        for i in 0..hw {
                            full[obase + i] = grad[obase + i] * bv[bbase + i];
                        }
                    }
                }
                drop(bv);
                sink(pass, a, reduce_channels(&full, out_shape, a.shape()));
            }
            if b.requires_grad() {
                let av = a.values();
                let mut full = vec![0.0f32; out_shape.numel()];
                for bi in 0..out_shape.b {
                    for ci in 0..out_shape.c {
                        let obase = (bi * out_shape.c + ci) * hw;
                        let abase = bc_index(a.shape(), bi, ci, 0);
                        for i in 0..hw {
                            full[obase + i] = grad[obase + i] * av[abase + i];
                        }
                    }
                }
                drop(av);
                sink(pass, b, reduce_channels(&full, out_shape, b.shape()));
            }
        }
        Op::Sum(a) => {
            if a.requires_grad() {
                let g0 = grad[0];
                sink(pass, a, vec![g0; a.numel()]);
            }
        }
        Op::Mean(a) => {
            if a.requires_grad() {
                let g0 = (grad[0] as f64 / a.numel() as f64) as f32;
                sink(pass, a, vec![g0; a.numel()]);
            }
        }
        Op::ChannelSum(a) => {
            if a.requires_grad() {
                let shape = a.shape();
                let hw = shape.h * shape.w;
                let mut delta = vec![0.0f32; shape.numel()];
                for bi in 0..shape.b {
                    for ci in 0..shape.c {
                        let dst = &mut delta[(bi * shape.c + ci) * hw..][..hw];
                        dst.copy_from_slice(&grad[bi * hw..][..hw]);
                    }
                }
                sink(pass, a, delta);
            }
        }
        Op::RecipSqrtEps(a, _eps) => {
            if a.requires_grad() {
                let ov = out.values();
                let delta: Vec<f32> = grad
                    .iter()
                    .zip(ov.iter())
                    .map(|(&g, &o)| {
                        let o = o as f64;
                        (g as f64 * (-0.5) * o * o * o) as f32
                    })
                    .collect();
                drop(ov);
                sink(pass, a, delta);
            }
        }
        Op::ConcatChannels(a, b) => {
            let (sa, sb) = (a.shape(), b.shape());
            let hw = sa.h * sa.w;
            let out_c = sa.c + sb.c;
            if a.requires_grad() {
                let mut delta = Vec::with_capacity(sa.numel());
                for bi in 0..sa.b {
                    delta.extend_from_slice(&grad[bi * out_c * hw..][..sa.c * hw]);
                }
                sink(pass, a, delta);
            }
            if b.requires_grad() {
                let mut delta = Vec::with_capacity(sb.numel());
                for bi in 0..sb.b {
                    delta.extend_from_slice(&grad[(bi * out_c + sa.c) * hw..][..sb.c * hw]);
                }
                sink(pass, b, delta);
            }
        }
        Op::SliceChannels(a, from) => {
            if a.requires_grad() {
                let sa = a.shape();
                let oc = out.shape().c;
                let hw = sa.h * sa.w;
                let mut delta = vec![0.0f32; sa.numel()];
                for bi in 0..sa.b {
                    let dst = &mut delta[(bi * sa.c + from) * hw..][..oc * hw];
                    dst.copy_from_slice(&grad[bi * oc * hw..][..oc * hw]);
                }
                sink(pass, a, delta);
            }
        }
        Op::Conv2d {
            input,
            kernel,
            bias,
            padding,
        } => {
            let oshape = out.shape();
            if input.requires_grad() {
                let delta = conv::backward_input(
                    grad,
                    oshape,
                    &kernel.values(),
                    kernel.shape(),
                    input.shape(),
                    *padding,
                );
                sink(pass, input, delta);
            }
            if kernel.requires_grad() {
                let delta = conv::backward_kernel(
                    grad,
                    oshape,
                    &input.values(),
                    input.shape(),
                    kernel.shape(),
                    *padding,
                );
                sink(pass, kernel, delta);
            }
            if bias.requires_grad() {
                let delta = conv::backward_bias(grad, oshape);
                sink(pass, bias, delta);
            }
        }
        Op::FixedSum { input, k } => {
            if input.requires_grad() {
                let shape = input.shape();
                let n = shape.per_image();
                let v = input.values();
                let mut delta = vec![0.0f32; shape.numel()];
                for bi in 0..shape.b {
                    fixedsum_backward(
                        &v[bi * n..][..n],
                        *k,
                        &grad[bi * n..][..n],
                        &mut delta[bi * n..][..n],
                    );
                }
                drop(v);
                sink(pass, input, delta);
            }
        }
    }
}
