//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as a node in creation order, so the
//! node list is already a topological order and [`Graph::backward`] is a
//! single reverse sweep. Only leaves created with [`Graph::param`] collect
//! gradients.

use super::conv::{col2im, conv2d_output_size, conv_transpose2d_output_size, im2col, matmul_nn, matmul_nt, matmul_tn, ConvGeom};
use super::spectral::{power_iteration, SpectralOutcome, SpectralState};
use super::{lit, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
    Abs(Var),
    Square(Var),
    Log(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Softplus(Var),
    Reshape(Var),
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
        col: Vec<T>,
    },
    ConvTranspose2d {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
    },
    ChannelBias(Var, Var),
    ReflectPad(Var, usize),
    InstanceNorm {
        input: Var,
        normalized: Vec<T>,
        inv_std: Vec<T>,
    },
    AvgPool2(Var),
    Gram(Var),
    SliceChannels {
        input: Var,
        start: usize,
    },
    ConcatChannels(Vec<Var>),
    SpectralNorm {
        weight: Var,
        u: Vec<T>,
        v: Vec<T>,
        sigma: T,
    },
    SpectralPassThrough(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// A recorded computation. Confined to one thread; build a fresh graph per step.
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that collects gradients.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        let mut value = value;
        value.zero_grad();
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never collects gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        let mut value = value;
        value.zero_grad();
        self.push(value, Op::Leaf, false)
    }

    /// Copies the value of `v` into a new constant, cutting the graph there.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient accumulated into leaf `v` by previous [`Graph::backward`] calls.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let node = &self.nodes[v.0];
        node.grad.as_ref().map(|g| {
            Tensor::from_vec(node.value.shape(), g.clone()).expect("grad shape matches value")
        })
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.nodes[a.0].value.map(f);
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>, what: &str) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_vec(va.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.nodes[a.0].value.sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.nodes[a.0].value.mean());
        let rg = self.rg(a);
        self.push(value, Op::Mean(a), rg)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.abs(), Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// Natural log; every input element must be positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.nodes[a.0].value.data().iter().find(|v| !(**v > T::zero())) {
            return Err(Error::contract(format!("log of non-positive value {bad}")));
        }
        Ok(self.unary(a, |x| x.ln(), Op::Log(a)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid_scalar, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, tanh_scalar, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(T::zero()), Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        self.unary(a, |x| if x > T::zero() { x } else { x * slope }, Op::LeakyRelu(a, slope))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus_scalar, Op::Softplus(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let mut value = self.nodes[a.0].value.reshape(shape)?;
        value.zero_grad();
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Mean absolute difference, the L1 distance used by every image loss.
    pub fn l1(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let d = self.abs(d);
        Ok(self.mean(d))
    }

    /// Direct 2D convolution (cross-correlation) with zero padding.
    ///
    /// `input` is `c_in × h × w`, `kernel` is `c_out × c_in × kh × kw`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let (xs, ks) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        if xs.len() != 3 || ks.len() != 4 {
            return Err(Error::shape(format!("conv2d expects CHW input and OIHW kernel, got {xs:?} and {ks:?}")));
        }
        if ks[1] != xs[0] {
            return Err(Error::shape(format!(
                "conv2d kernel expects {} input channels, input has {}",
                ks[1], xs[0]
            )));
        }
        let out_h = conv2d_output_size(xs[1], ks[2], stride, padding);
        let out_w = conv2d_output_size(xs[2], ks[3], stride, padding);
        let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
            return Err(Error::shape(format!(
                "kernel {}x{} does not fit input {}x{} with padding {padding} stride {stride}",
                ks[2], ks[3], xs[1], xs[2]
            )));
        };
        let geom = ConvGeom {
            channels: xs[0],
            height: xs[1],
            width: xs[2],
            kh: ks[2],
            kw: ks[3],
            stride,
            padding,
            out_h,
            out_w,
        };
        let col = im2col(self.value(input).data(), &geom);
        let out = matmul_nn(self.value(kernel).data(), &col, ks[0], geom.rows(), geom.cols());
        let value = Tensor::from_vec(&[ks[0], out_h, out_w], out)?;
        let rg = self.rg(input) || self.rg(kernel);
        // The unfolded input is only needed for the kernel gradient.
        let col = if self.rg(kernel) { col } else { Vec::new() };
        Ok(self.push(value, Op::Conv2d { input, kernel, geom, col }, rg))
    }

    /// Transposed convolution: the input-gradient map of [`Graph::conv2d`]
    /// applied to `input`.
    ///
    /// `input` is `c_in × h × w`, `kernel` is `c_in × c_out × kh × kw`.
    pub fn conv_transpose2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let (xs, ks) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        if xs.len() != 3 || ks.len() != 4 {
            return Err(Error::shape(format!(
                "conv_transpose2d expects CHW input and IOHW kernel, got {xs:?} and {ks:?}"
            )));
        }
        if ks[0] != xs[0] {
            return Err(Error::shape(format!(
                "conv_transpose2d kernel expects {} input channels, input has {}",
                ks[0], xs[0]
            )));
        }
        let out_h = conv_transpose2d_output_size(xs[1], ks[2], stride, padding);
        let out_w = conv_transpose2d_output_size(xs[2], ks[3], stride, padding);
        let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
            return Err(Error::shape("conv_transpose2d output would be empty"));
        };
        // Geometry of the forward convolution whose adjoint this is.
        let geom = ConvGeom {
            channels: ks[1],
            height: out_h,
            width: out_w,
            kh: ks[2],
            kw: ks[3],
            stride,
            padding,
            out_h: xs[1],
            out_w: xs[2],
        };
        if conv2d_output_size(out_h, ks[2], stride, padding) != Some(xs[1])
            || conv2d_output_size(out_w, ks[3], stride, padding) != Some(xs[2])
        {
            return Err(Error::shape("conv_transpose2d geometry is not invertible"));
        }
        let col = matmul_tn(self.value(kernel).data(), self.value(input).data(), xs[0], geom.rows(), geom.cols());
        let out = col2im(&col, &geom);
        let value = Tensor::from_vec(&[ks[1], out_h, out_w], out)?;
        let rg = self.rg(input) || self.rg(kernel);
        Ok(self.push(value, Op::ConvTranspose2d { input, kernel, geom }, rg))
    }

    /// Adds `bias[c]` to every pixel of channel `c`.
    pub fn channel_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let bs = self.shape(bias).to_vec();
        if xs.len() != 3 || bs != [xs[0]] {
            return Err(Error::shape(format!("bias {bs:?} does not match input {xs:?}")));
        }
        let plane = xs[1] * xs[2];
        let b = self.value(bias).data().to_vec();
        let mut data = self.value(input).data().to_vec();
        for (c, chunk) in data.chunks_mut(plane).enumerate() {
            chunk.iter_mut().for_each(|v| *v += b[c]);
        }
        let value = Tensor::from_vec(&xs, data)?;
        let rg = self.rg(input) || self.rg(bias);
        Ok(self.push(value, Op::ChannelBias(input, bias), rg))
    }

    /// Mirror padding without repeating the edge pixel.
    pub fn reflect_pad(&mut self, input: Var, pad: usize) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() != 3 {
            return Err(Error::shape(format!("reflect_pad expects CHW, got {xs:?}")));
        }
        if pad >= xs[1] || pad >= xs[2] {
            return Err(Error::shape(format!("reflection pad {pad} too large for {}x{}", xs[1], xs[2])));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (oh, ow) = (h + 2 * pad, w + 2 * pad);
        let src = self.value(input).data();
        let mut out = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for i in 0..oh {
                let si = reflect_index(i as isize - pad as isize, h);
                for j in 0..ow {
                    let sj = reflect_index(j as isize - pad as isize, w);
                    out.push(src[(ch * h + si) * w + sj]);
                }
            }
        }
        let value = Tensor::from_vec(&[c, oh, ow], out)?;
        let rg = self.rg(input);
        Ok(self.push(value, Op::ReflectPad(input, pad), rg))
    }

    /// Per-channel `(x − mean) / sqrt(var + eps)` over the spatial positions.
    pub fn instance_norm(&mut self, input: Var, eps: T) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() != 3 {
            return Err(Error::shape(format!("instance_norm expects CHW, got {xs:?}")));
        }
        let plane = xs[1] * xs[2];
        let n: T = lit(plane as f64);
        let mut normalized = Vec::with_capacity(xs.iter().product());
        let mut inv_std = Vec::with_capacity(xs[0]);
        for chunk in self.value(input).data().chunks(plane) {
            let mean = chunk.iter().copied().sum::<T>() / n;
            let var = chunk.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            normalized.extend(chunk.iter().map(|&v| (v - mean) * is));
        }
        let value = Tensor::from_vec(&xs, normalized.clone())?;
        let rg = self.rg(input);
        Ok(self.push(value, Op::InstanceNorm { input, normalized, inv_std }, rg))
    }

    /// 2×2 average pooling with stride 2; an odd trailing row/column is dropped.
    pub fn avg_pool2(&mut self, input: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() != 3 || xs[1] < 2 || xs[2] < 2 {
            return Err(Error::shape(format!("avg_pool2 needs CHW with h,w >= 2, got {xs:?}")));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (oh, ow) = (h / 2, w / 2);
        let src = self.value(input).data();
        let quarter: T = lit(0.25);
        let mut out = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            let p = &src[ch * h * w..(ch + 1) * h * w];
            for i in 0..oh {
                for j in 0..ow {
                    let s = p[2 * i * w + 2 * j] + p[2 * i * w + 2 * j + 1] + p[(2 * i + 1) * w + 2 * j] + p[(2 * i + 1) * w + 2 * j + 1];
                    out.push(s * quarter);
                }
            }
        }
        let value = Tensor::from_vec(&[c, oh, ow], out)?;
        let rg = self.rg(input);
        Ok(self.push(value, Op::AvgPool2(input), rg))
    }

    /// `G = H·Hᵀ` for a `d × p` matrix `H`.
    pub fn gram(&mut self, h: Var) -> Result<Var> {
        let hs = self.shape(h).to_vec();
        if hs.len() != 2 {
            return Err(Error::shape(format!("gram expects a d×p matrix, got {hs:?}")));
        }
        let (d, p) = (hs[0], hs[1]);
        let data = self.value(h).data();
        let g = matmul_nt(data, data, d, p, d);
        let value = Tensor::from_vec(&[d, d], g)?;
        let rg = self.rg(h);
        Ok(self.push(value, Op::Gram(h), rg))
    }

    /// Channels `start..start + len` of a CHW tensor.
    pub fn slice_channels(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() != 3 || len == 0 || start + len > xs[0] {
            return Err(Error::shape(format!("cannot take channels {start}..{} of {xs:?}", start + len)));
        }
        let plane = xs[1] * xs[2];
        let data = self.value(input).data()[start * plane..(start + len) * plane].to_vec();
        let value = Tensor::from_vec(&[len, xs[1], xs[2]], data)?;
        let rg = self.rg(input);
        Ok(self.push(value, Op::SliceChannels { input, start }, rg))
    }

    /// Stacks CHW tensors with equal spatial size along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat_channels of nothing"))?;
        let fs = self.shape(*first).to_vec();
        if fs.len() != 3 {
            return Err(Error::shape(format!("concat_channels expects CHW, got {fs:?}")));
        }
        let mut channels = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 3 || s[1..] != fs[1..] {
                return Err(Error::shape(format!("cannot concat {s:?} with {fs:?}")));
            }
            channels += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::from_vec(&[channels, fs[1], fs[2]], data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatChannels(parts.to_vec()), rg))
    }

    /// `W / σ̂` where `σ̂` is the power-iteration estimate of the largest
    /// singular value of `weight` viewed as `shape[0] × rest`.
    ///
    /// Updates `state.u` in place. `σ̂` is differentiated as `uᵀ W v` with
    /// the singular vectors held fixed. A degenerate (near-zero) weight is
    /// passed through unchanged.
    pub fn spectral_norm(&mut self, weight: Var, state: &mut SpectralState) -> Result<(Var, SpectralOutcome)> {
        let ws = self.shape(weight).to_vec();
        let rows = ws[0];
        let cols = self.value(weight).len() / rows;
        let w64: Vec<f64> = self.value(weight).data().iter().map(|v| v.as_f64()).collect();
        let est = power_iteration(&w64, rows, cols, state)?;
        let rg = self.rg(weight);
        if est.degenerate {
            log::warn!("spectral normalization skipped: largest singular value estimate {:e}", est.sigma);
            let mut value = self.value(weight).clone();
            value.zero_grad();
            let var = self.push(value, Op::SpectralPassThrough(weight), rg);
            return Ok((var, SpectralOutcome::Degenerate { sigma: est.sigma }));
        }
        let sigma: T = lit(est.sigma);
        let value = self.value(weight).map(|x| x / sigma);
        let op = Op::SpectralNorm {
            weight,
            u: est.u.iter().map(|&x| lit(x)).collect(),
            v: est.v.iter().map(|&x| lit(x)).collect(),
            sigma,
        };
        let var = self.push(value, op, rg);
        Ok((var, SpectralOutcome::Normalized { sigma: est.sigma }))
    }

    /// Runs the reverse sweep from a scalar `loss`, adding into the gradient
    /// buffers of every reachable [`Graph::param`] leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if !self.rg(loss) {
            return Err(Error::contract("loss does not depend on any parameter"));
        }
        let mut adj: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(buf) => buf.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut adj);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], adj: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut send = |v: Var, grad: Vec<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut adj[v.0] {
                Some(buf) => buf.iter_mut().zip(&grad).for_each(|(a, &b)| *a += b),
                slot @ None => *slot = Some(grad),
            }
        };
        let zip_map = |a: &[T], f: &dyn Fn(T, T) -> T| -> Vec<T> { a.iter().zip(g).map(|(&x, &gy)| f(x, gy)).collect() };

        match &node.op {
            Op::Leaf => unreachable!(),
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|&x| -x).collect());
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    send(*a, zip_map(val(*b), &|y, gy| y * gy));
                }
                if self.rg(*b) {
                    send(*b, zip_map(val(*a), &|x, gy| x * gy));
                }
            }
            Op::Scale(a, s) => send(*a, g.iter().map(|&x| x * *s).collect()),
            Op::AddScalar(a) | Op::Reshape(a) | Op::SpectralPassThrough(a) => send(*a, g.to_vec()),
            Op::Sum(a) => send(*a, vec![g[0]; val(*a).len()]),
            Op::Mean(a) => {
                let n = val(*a).len();
                send(*a, vec![g[0] / lit(n as f64); n]);
            }
            Op::Abs(a) => send(
                *a,
                zip_map(val(*a), &|x, gy| {
                    if x > T::zero() {
                        gy
                    } else if x < T::zero() {
                        -gy
                    } else {
                        T::zero()
                    }
                }),
            ),
            Op::Square(a) => send(*a, zip_map(val(*a), &|x, gy| lit::<T>(2.0) * x * gy)),
            Op::Log(a) => send(*a, zip_map(val(*a), &|x, gy| gy / x)),
            Op::Sigmoid(a) => send(*a, zip_map(out, &|s, gy| gy * s * (T::one() - s))),
            Op::Tanh(a) => send(*a, zip_map(out, &|t, gy| gy * (T::one() - t * t))),
            Op::Relu(a) => send(*a, zip_map(val(*a), &|x, gy| if x > T::zero() { gy } else { T::zero() })),
            Op::LeakyRelu(a, slope) => {
                let slope = *slope;
                send(*a, zip_map(val(*a), &|x, gy| if x > T::zero() { gy } else { gy * slope }))
            }
            Op::Softplus(a) => send(*a, zip_map(val(*a), &|x, gy| gy * sigmoid_scalar(x))),
            Op::Conv2d { input, kernel, geom, col } => {
                let ks = self.nodes[kernel.0].value.shape();
                let c_out = ks[0];
                if self.rg(*kernel) {
                    let gk = matmul_nt(g, col, c_out, geom.cols(), geom.rows());
                    send(*kernel, gk);
                }
                if self.rg(*input) {
                    let gcol = matmul_tn(val(*kernel), g, c_out, geom.rows(), geom.cols());
                    send(*input, col2im(&gcol, geom));
                }
            }
            Op::ConvTranspose2d { input, kernel, geom } => {
                let c_in = self.nodes[input.0].value.shape()[0];
                let gcol = im2col(g, geom);
                if self.rg(*input) {
                    send(*input, matmul_nn(val(*kernel), &gcol, c_in, geom.rows(), geom.cols()));
                }
                if self.rg(*kernel) {
                    send(*kernel, matmul_nt(val(*input), &gcol, c_in, geom.cols(), geom.rows()));
                }
            }
            Op::ChannelBias(input, bias) => {
                send(*input, g.to_vec());
                if self.rg(*bias) {
                    let c = val(*bias).len();
                    let plane = g.len() / c;
                    send(*bias, g.chunks(plane).map(|ch| ch.iter().copied().sum()).collect());
                }
            }
            Op::ReflectPad(input, pad) => {
                let xs = self.nodes[input.0].value.shape();
                let (c, h, w) = (xs[0], xs[1], xs[2]);
                let (oh, ow) = (h + 2 * pad, w + 2 * pad);
                let mut gx = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for i in 0..oh {
                        let si = reflect_index(i as isize - *pad as isize, h);
                        for j in 0..ow {
                            let sj = reflect_index(j as isize - *pad as isize, w);
                            gx[(ch * h + si) * w + sj] += g[(ch * oh + i) * ow + j];
                        }
                    }
                }
                send(*input, gx);
            }
            Op::InstanceNorm { input, normalized, inv_std } => {
                let plane = normalized.len() / inv_std.len();
                let n: T = lit(plane as f64);
                let mut gx = Vec::with_capacity(normalized.len());
                for (c, &is) in inv_std.iter().enumerate() {
                    let xh = &normalized[c * plane..(c + 1) * plane];
                    let gy = &g[c * plane..(c + 1) * plane];
                    let mean_g = gy.iter().copied().sum::<T>() / n;
                    let mean_gx = gy.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / n;
                    gx.extend(gy.iter().zip(xh).map(|(&gv, &x)| is * (gv - mean_g - x * mean_gx)));
                }
                send(*input, gx);
            }
            Op::AvgPool2(input) => {
                let xs = self.nodes[input.0].value.shape();
                let (c, h, w) = (xs[0], xs[1], xs[2]);
                let (oh, ow) = (h / 2, w / 2);
                let quarter: T = lit(0.25);
                let mut gx = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for i in 0..oh {
                        for j in 0..ow {
                            let v = g[(ch * oh + i) * ow + j] * quarter;
                            let base = ch * h * w;
                            gx[base + 2 * i * w + 2 * j] += v;
                            gx[base + 2 * i * w + 2 * j + 1] += v;
                            gx[base + (2 * i + 1) * w + 2 * j] += v;
                            gx[base + (2 * i + 1) * w + 2 * j + 1] += v;
                        }
                    }
                }
                send(*input, gx);
            }
            Op::Gram(h) => {
                let hs = self.nodes[h.0].value.shape();
                let (d, p) = (hs[0], hs[1]);
                let mut sym = vec![T::zero(); d * d];
                for i in 0..d {
                    for j in 0..d {
                        sym[i * d + j] = g[i * d + j] + g[j * d + i];
                    }
                }
                send(*h, matmul_nn(&sym, val(*h), d, d, p));
            }
            Op::SliceChannels { input, start } => {
                let xs = self.nodes[input.0].value.shape();
                let plane = xs[1] * xs[2];
                let mut gx = vec![T::zero(); xs.iter().product()];
                gx[start * plane..start * plane + g.len()].copy_from_slice(g);
                send(*input, gx);
            }
            Op::ConcatChannels(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = val(p).len();
                    send(p, g[off..off + n].to_vec());
                    off += n;
                }
            }
            Op::SpectralNorm { weight, u, v, sigma } => {
                let w = val(*weight);
                let cols = v.len();
                let inner: T = g.iter().zip(w).map(|(&a, &b)| a * b).sum();
                let coef = inner / (*sigma * *sigma);
                let gw = (0..w.len())
                    .map(|k| g[k] / *sigma - coef * u[k / cols] * v[k % cols])
                    .collect();
                send(*weight, gw);
            }
        }
    }
}

fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// Logistic function, branching on sign so `exp` never overflows.
pub fn sigmoid_scalar<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Hyperbolic tangent through `expm1` of a non-positive argument.
pub fn tanh_scalar<T: Real>(u: T) -> T {
    if u >= T::zero() {
        let t = (lit::<T>(-2.0) * u).exp_m1();
        -t / (lit::<T>(2.0) + t)
    } else {
        -tanh_scalar(-u)
    }
}

pub fn softplus_scalar<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}
