//! Primitive layers with analytic backward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::{matmul, Param, Real, Tensor};
use super::{join, Mode, Module, NetError, StateVisitor};

fn kaiming<T: Real>(shape: &[usize], fan_in: usize, gain: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let std = (gain / fan_in.max(1) as f64).sqrt();
    let normal = Normal::new(0.0, std).unwrap();
    Tensor::from_fn(shape, |_| T::lit(normal.sample(rng)))
}

fn conv_out(size: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - kernel) / stride + 1
}

/// Dense 2-D convolution without bias, `same` padding for odd kernels.
/// Implemented as im2col followed by GEMM.
pub struct Conv2d<T: Real> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Param<T>,
    cols: Vec<Vec<T>>,
    in_shape: Option<(usize, usize, usize, usize)>,
    out_hw: (usize, usize),
}

impl<T: Real> Conv2d<T> {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            pad: kernel / 2,
            weight: Param::new(kaiming(&[out_channels, in_channels, kernel, kernel], fan_in, 2.0, rng)),
            cols: Vec::new(),
            in_shape: None,
            out_hw: (0, 0),
        }
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    fn im2col(&self, x: &[T], h: usize, w: usize, ho: usize, wo: usize, col: &mut [T]) {
        let k = self.kernel;
        let p = ho * wo;
        for c in 0..self.in_channels {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = &mut col[((c * k + ki) * k + kj) * p..][..p];
                    for oh in 0..ho {
                        let ih = (oh * self.stride + ki) as isize - self.pad as isize;
                        let dst = &mut row[oh * wo..(oh + 1) * wo];
                        if ih < 0 || ih >= h as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src = &plane[ih as usize * w..(ih as usize + 1) * w];
                        for (ow, d) in dst.iter_mut().enumerate() {
                            let iw = (ow * self.stride + kj) as isize - self.pad as isize;
                            *d = if iw < 0 || iw >= w as isize { T::zero() } else { src[iw as usize] };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[T], h: usize, w: usize, ho: usize, wo: usize, dx: &mut [T]) {
        let k = self.kernel;
        let p = ho * wo;
        for c in 0..self.in_channels {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = &col[((c * k + ki) * k + kj) * p..][..p];
                    for oh in 0..ho {
                        let ih = (oh * self.stride + ki) as isize - self.pad as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[ih as usize * w..(ih as usize + 1) * w];
                        for (ow, &g) in row[oh * wo..(oh + 1) * wo].iter().enumerate() {
                            let iw = (ow * self.stride + kj) as isize - self.pad as isize;
                            if iw >= 0 && iw < w as isize {
                                dst[iw as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<T: Real> Module<T> for Conv2d<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>, NetError> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.in_channels {
            return Err(NetError::Shape(format!(
                "conv expects {} input channels, got input {:?} and weight {:?}",
                self.in_channels,
                x.shape(),
                self.weight.value.shape()
            )));
        }
        let ho = conv_out(h, self.kernel, self.stride, self.pad);
        let wo = conv_out(w, self.kernel, self.stride, self.pad);
        let p = ho * wo;
        let kdim = c * self.kernel * self.kernel;
        let mut out = Tensor::zeros(&[n, self.out_channels, ho, wo]);
        let in_per = c * h * w;
        let out_per = self.out_channels * p;
        let pointwise = self.is_pointwise();
        self.cols.resize_with(n, Vec::new);
        for s in 0..n {
            let xs = &x.data()[s * in_per..(s + 1) * in_per];
            let ys = &mut out.data_mut()[s * out_per..(s + 1) * out_per];
            if pointwise {
                matmul(self.out_channels, kdim, p, self.weight.value.data(), false, xs, false, ys, false);
                let col = &mut self.cols[s];
                col.clear();
                col.extend_from_slice(xs);
            } else {
                let mut col = std::mem::take(&mut self.cols[s]);
                col.resize(kdim * p, T::zero());
                self.im2col(xs, h, w, ho, wo, &mut col);
                matmul(self.out_channels, kdim, p, self.weight.value.data(), false, &col, false, ys, false);
                self.cols[s] = col;
            }
        }
        self.in_shape = Some((n, c, h, w));
        self.out_hw = (ho, wo);
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NetError> {
        let (n, c, h, w) = self.in_shape.ok_or(NetError::NoForwardCache("conv2d"))?;
        let (ho, wo) = self.out_hw;
        let expected = [n, self.out_channels, ho, wo];
        if grad_out.shape() != expected {
            return Err(NetError::Shape(format!(
                "conv backward: gradient {:?} vs output {:?}",
                grad_out.shape(),
                expected
            )));
        }
        let p = ho * wo;
        let kdim = c * self.kernel * self.kernel;
        let out_per = self.out_channels * p;
        let in_per = c * h * w;
        let mut dx = Tensor::zeros(&[n, c, h, w]);
        let mut dcol = vec![T::zero(); kdim * p];
        for s in 0..n {
            let dy = &grad_out.data()[s * out_per..(s + 1) * out_per];
            // dW += dY * col^T
            matmul(self.out_channels, p, kdim, dy, false, &self.cols[s], true, self.weight.grad.data_mut(), true);
            let dxs = &mut dx.data_mut()[s * in_per..(s + 1) * in_per];
            if self.is_pointwise() {
                matmul(kdim, self.out_channels, p, self.weight.value.data(), true, dy, false, dxs, false);
            } else {
                matmul(kdim, self.out_channels, p, self.weight.value.data(), true, dy, false, &mut dcol, false);
                self.col2im(&dcol, h, w, ho, wo, dxs);
            }
        }
        Ok(dx)
    }

    fn visit(&mut self, prefix: &str, v: &mut dyn StateVisitor<T>) {
        v.param(&join(prefix, "weight"), &mut self.weight);
    }

    fn macs(&self) -> u64 {
        (self.out_channels * self.in_channels * self.kernel * self.kernel * self.out_hw.0 * self.out_hw.1) as u64
    }
}

/// Depthwise (one filter per channel) 2-D convolution without bias.
pub struct DepthwiseConv2d<T: Real> {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Param<T>,
    input: Option<Tensor<T>>,
    out_hw: (usize, usize),
}

impl<T: Real> DepthwiseConv2d<T> {
    pub fn new(channels: usize, kernel: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            channels,
            kernel,
            stride,
            pad: kernel / 2,
            weight: Param::new(kaiming(&[channels, 1, kernel, kernel], kernel * kernel, 2.0, rng)),
            input: None,
            out_hw: (0, 0),
        }
    }
}

impl<T: Real> Module<T> for DepthwiseConv2d<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>, NetError> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.channels {
            return Err(NetError::Shape(format!(
                "depthwise conv expects {} channels, got input {:?}",
                self.channels,
                x.shape()
            )));
        }
        let (k, st, pad) = (self.kernel, self.stride, self.pad as isize);
        let ho = conv_out(h, k, st, self.pad);
        let wo = conv_out(w, k, st, self.pad);
        let mut out = Tensor::zeros(&[n, c, ho, wo]);
        let wt = self.weight.value.data();
        for s in 0..n {
            for ch in 0..c {
                let plane = &x.data()[(s * c + ch) * h * w..][..h * w];
                let kern = &wt[ch * k * k..][..k * k];
                let dst = &mut out.data_mut()[(s * c + ch) * ho * wo..][..ho * wo];
                for ki in 0..k {
                    for oh in 0..ho {
                        let ih = (oh * st + ki) as isize - pad;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let src = &plane[ih as usize * w..][..w];
                        let row = &mut dst[oh * wo..][..wo];
                        for kj in 0..k {
                            let wv = kern[ki * k + kj];
                            for (ow, d) in row.iter_mut().enumerate() {
                                let iw = (ow * st + kj) as isize - pad;
                                if iw >= 0 && iw < w as isize {
                                    *d += wv * src[iw as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        self.input = Some(x.clone());
        self.out_hw = (ho, wo);
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NetError> {
        let x = self.input.as_ref().ok_or(NetError::NoForwardCache("depthwise conv"))?;
        let (n, c, h, w) = x.dims4()?;
        let (ho, wo) = self.out_hw;
        if grad_out.shape() != [n, c, ho, wo] {
            return Err(NetError::Shape(format!(
                "depthwise backward: gradient {:?} vs output {:?}",
                grad_out.shape(),
                [n, c, ho, wo]
            )));
        }
        let (k, st, pad) = (self.kernel, self.stride, self.pad as isize);
        let mut dx = Tensor::zeros(&[n, c, h, w]);
        let wt = self.weight.value.data().to_vec();
        let dw = self.weight.grad.data_mut();
        for s in 0..n {
            for ch in 0..c {
                let plane = &x.data()[(s * c + ch) * h * w..][..h * w];
                let dplane = &mut dx.data_mut()[(s * c + ch) * h * w..][..h * w];
                let g = &grad_out.data()[(s * c + ch) * ho * wo..][..ho * wo];
                for ki in 0..k {
                    for oh in 0..ho {
                        let ih = (oh * st + ki) as isize - pad;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let ih = ih as usize;
                        let grow = &g[oh * wo..][..wo];
                        for kj in 0..k {
                            let wv = wt[ch * k * k + ki * k + kj];
                            let mut acc = T::zero();
                            for (ow, &gv) in grow.iter().enumerate() {
                                let iw = (ow * st + kj) as isize - pad;
                                if iw >= 0 && iw < w as isize {
                                    acc += gv * plane[ih * w + iw as usize];
                                    dplane[ih * w + iw as usize] += gv * wv;
                                }
                            }
                            dw[ch * k * k + ki * k + kj] += acc;
                        }
                    }
                }
            }
        }
        Ok(dx)
    }

    fn visit(&mut self, prefix: &str, v: &mut dyn StateVisitor<T>) {
        v.param(&join(prefix, "weight"), &mut self.weight);
    }

    fn macs(&self) -> u64 {
        (self.channels * self.kernel * self.kernel * self.out_hw.0 * self.out_hw.1) as u64
    }
}

/// Per-channel batch normalisation over `(N, H, W)`.
///
/// Running statistics follow `running = momentum * running + (1 - momentum) * batch`
/// with momentum 0.9; the running variance uses the unbiased batch variance.
pub struct BatchNorm2d<T: Real> {
    pub channels: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
    x_hat: Vec<T>,
    inv_std: Vec<T>,
    shape: Option<(usize, usize, usize, usize)>,
    // inference-mode statistics are constants, so backward is affine
    frozen: bool,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::new(Tensor::full(&[channels], T::one())),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            momentum: 0.9,
            eps: 1e-5,
            x_hat: Vec::new(),
            inv_std: Vec::new(),
            shape: None,
            frozen: false,
        }
    }
}

impl<T: Real> Module<T> for BatchNorm2d<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NetError> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.channels {
            return Err(NetError::Shape(format!(
                "batchnorm over {} channels got input {:?}",
                self.channels,
                x.shape()
            )));
        }
        let hw = h * w;
        let count = n * hw;
        let mut out = Tensor::zeros(x.shape());
        self.x_hat.resize(x.len(), T::zero());
        self.inv_std.resize(c, T::zero());
        let eps = T::lit(self.eps);
        for ch in 0..c {
            let (mean, inv_std) = match mode {
                Mode::Train => {
                    let mut sum = 0.0f64;
                    for s in 0..n {
                        sum += x.data()[(s * c + ch) * hw..][..hw].iter().map(|v| v.as_f64()).sum::<f64>();
                    }
                    let mean = sum / count as f64;
                    let mut sq = 0.0f64;
                    for s in 0..n {
                        sq += x.data()[(s * c + ch) * hw..][..hw]
                            .iter()
                            .map(|v| (v.as_f64() - mean).powi(2))
                            .sum::<f64>();
                    }
                    let var = sq / count as f64;
                    let unbiased = if count > 1 { sq / (count - 1) as f64 } else { var };
                    let m = T::lit(self.momentum);
                    let one_m = T::lit(1.0 - self.momentum);
                    let rm = &mut self.running_mean.data_mut()[ch];
                    *rm = m * *rm + one_m * T::lit(mean);
                    let rv = &mut self.running_var.data_mut()[ch];
                    *rv = m * *rv + one_m * T::lit(unbiased);
                    (T::lit(mean), T::one() / (T::lit(var) + eps).sqrt())
                }
                Mode::Eval => (
                    self.running_mean.data()[ch],
                    T::one() / (self.running_var.data()[ch] + eps).sqrt(),
                ),
            };
            self.inv_std[ch] = inv_std;
            let g = self.gamma.value.data()[ch];
            let b = self.beta.value.data()[ch];
            for s in 0..n {
                let base = (s * c + ch) * hw;
                for i in base..base + hw {
                    let xh = (x.data()[i] - mean) * inv_std;
                    self.x_hat[i] = xh;
                    out.data_mut()[i] = g * xh + b;
                }
            }
        }
        self.shape = Some((n, c, h, w));
        self.frozen = mode == Mode::Eval;
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NetError> {
        let (n, c, h, w) = self.shape.ok_or(NetError::NoForwardCache("batchnorm"))?;
        if grad_out.shape() != [n, c, h, w] {
            return Err(NetError::Shape(format!(
                "batchnorm backward: gradient {:?} vs output {:?}",
                grad_out.shape(),
                [n, c, h, w]
            )));
        }
        let hw = h * w;
        let count = T::lit((n * hw) as f64);
        let mut dx = Tensor::zeros(grad_out.shape());
        for ch in 0..c {
            let mut sum_dy = T::zero();
            let mut sum_dy_xh = T::zero();
            for s in 0..n {
                let base = (s * c + ch) * hw;
                for i in base..base + hw {
                    let dy = grad_out.data()[i];
                    sum_dy += dy;
                    sum_dy_xh += dy * self.x_hat[i];
                }
            }
            self.gamma.grad.data_mut()[ch] += sum_dy_xh;
            self.beta.grad.data_mut()[ch] += sum_dy;
            let g = self.gamma.value.data()[ch];
            let inv_std = self.inv_std[ch];
            for s in 0..n {
                let base = (s * c + ch) * hw;
                for i in base..base + hw {
                    let dy = grad_out.data()[i];
                    dx.data_mut()[i] = if self.frozen {
                        g * inv_std * dy
                    } else {
                        g * inv_std / count * (count * dy - sum_dy - self.x_hat[i] * sum_dy_xh)
                    };
                }
            }
        }
        Ok(dx)
    }

    fn visit(&mut self, prefix: &str, v: &mut dyn StateVisitor<T>) {
        v.param(&join(prefix, "gamma"), &mut self.gamma);
        v.param(&join(prefix, "beta"), &mut self.beta);
        v.buffer(&join(prefix, "running_mean"), &mut self.running_mean);
        v.buffer(&join(prefix, "running_var"), &mut self.running_var);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Silu,
    Sigmoid,
    Relu,
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Element-wise activation.
pub struct Activation<T: Real> {
    pub kind: ActivationKind,
    input: Option<Tensor<T>>,
}

impl<T: Real> Activation<T> {
    pub fn new(kind: ActivationKind) -> Self {
        Self { kind, input: None }
    }

    pub fn apply(kind: ActivationKind, x: T) -> T {
        match kind {
            ActivationKind::Silu => x * sigmoid(x),
            ActivationKind::Sigmoid => sigmoid(x),
            ActivationKind::Relu => x.max(T::zero()),
        }
    }

    pub fn derivative(kind: ActivationKind, x: T) -> T {
        match kind {
            ActivationKind::Silu => {
                let s = sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            }
            ActivationKind::Sigmoid => {
                let s = sigmoid(x);
                s * (T::one() - s)
            }
            ActivationKind::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

impl<T: Real> Module<T> for Activation<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>, NetError> {
        let kind = self.kind;
        let out = x.map(|v| Self::apply(kind, v));
        self.input = Some(x.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NetError> {
        let x = self.input.as_ref().ok_or(NetError::NoForwardCache("activation"))?;
        x.require_same_shape(grad_out)?;
        let kind = self.kind;
        let data = x
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&xi, &g)| g * Self::derivative(kind, xi))
            .collect();
        Tensor::from_vec(x.shape(), data)
    }

    fn visit(&mut self, _prefix: &str, _v: &mut dyn StateVisitor<T>) {}
}

/// `[N, C, H, W] -> [N, C]` spatial mean.
#[derive(Default)]
pub struct GlobalAvgPool {
    shape: Option<(usize, usize, usize, usize)>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self { shape: None }
    }
}

pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>, NetError> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let inv = T::one() / T::lit(hw as f64);
    Ok(Tensor::from_fn(&[n, c], |i| {
        x.data()[i * hw..(i + 1) * hw].iter().copied().sum::<T>() * inv
    }))
}

impl<T: Real> Module<T> for GlobalAvgPool {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>, NetError> {
        self.shape = Some(x.dims4()?);
        global_avg_pool(x)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NetError> {
        let (n, c, h, w) = self.shape.ok_or(NetError::NoForwardCache("global average pool"))?;
        if grad_out.shape() != [n, c] {
            return Err(NetError::Shape(format!(
                "pool backward: gradient {:?} vs output {:?}",
                grad_out.shape(),
                [n, c]
            )));
        }
        let hw = h * w;
        let inv = T::one() / T::lit(hw as f64);
        Ok(Tensor::from_fn(&[n, c, h, w], |i| grad_out.data()[i / hw] * inv))
    }

    fn visit(&mut self, _prefix: &str, _v: &mut dyn StateVisitor<T>) {}
}

/// Fully connected layer `y = x W^T + b`, `W` stored `[out, in]`.
pub struct Dense<T: Real> {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Real> Dense<T> {
    pub fn new(in_features: usize, out_features: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            in_features,
            out_features,
            weight: Param::new(kaiming(&[out_features, in_features], in_features, 1.0, rng)),
            bias: Param::new(Tensor::zeros(&[out_features])),
            input: None,
        }
    }
}

impl<T: Real> Module<T> for Dense<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>, NetError> {
        let (n, f) = x.dims2()?;
        if f != self.in_features {
            return Err(NetError::Shape(format!(
                "dense expects {} features, got input {:?} and weight {:?}",
                self.in_features,
                x.shape(),
                self.weight.value.shape()
            )));
        }
        let mut out = Tensor::zeros(&[n, self.out_features]);
        for row in out.data_mut().chunks_exact_mut(self.out_features) {
            row.copy_from_slice(self.bias.value.data());
        }
        matmul(n, f, self.out_features, x.data(), false, self.weight.value.data(), true, out.data_mut(), true);
        self.input = Some(x.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NetError> {
        let x = self.input.as_ref().ok_or(NetError::NoForwardCache("dense"))?;
        let (n, f) = x.dims2()?;
        if grad_out.shape() != [n, self.out_features] {
            return Err(NetError::Shape(format!(
                "dense backward: gradient {:?} vs output {:?}",
                grad_out.shape(),
                [n, self.out_features]
            )));
        }
        let o = self.out_features;
        matmul(o, n, f, grad_out.data(), true, x.data(), false, self.weight.grad.data_mut(), true);
        for row in grad_out.data().chunks_exact(o) {
            for (b, &g) in self.bias.grad.data_mut().iter_mut().zip(row) {
                *b += g;
            }
        }
        let mut dx = Tensor::zeros(&[n, f]);
        matmul(n, o, f, grad_out.data(), false, self.weight.value.data(), false, dx.data_mut(), false);
        Ok(dx)
    }

    fn visit(&mut self, prefix: &str, v: &mut dyn StateVisitor<T>) {
        v.param(&join(prefix, "weight"), &mut self.weight);
        v.param(&join(prefix, "bias"), &mut self.bias);
    }

    fn macs(&self) -> u64 {
        (self.in_features * self.out_features) as u64
    }
}

/// Inverted dropout; identity in [`Mode::Eval`].
pub struct Dropout {
    pub rate: f64,
    rng: ChaCha8Rng,
    mask: Option<Vec<bool>>,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Self {
        Self {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
            mask: None,
        }
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }
}

impl<T: Real> Module<T> for Dropout {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NetError> {
        if mode == Mode::Eval || self.rate <= 0.0 {
            self.mask = None;
            return Ok(x.clone());
        }
        let keep = 1.0 - self.rate;
        let scale = T::lit(1.0 / keep);
        let mask: Vec<bool> = (0..x.len()).map(|_| self.rng.random::<f64>() < keep).collect();
        let data = x
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| if m { v * scale } else { T::zero() })
            .collect();
        self.mask = Some(mask);
        Tensor::from_vec(x.shape(), data)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NetError> {
        match &self.mask {
            None => Ok(grad_out.clone()),
            Some(mask) => {
                if mask.len() != grad_out.len() {
                    return Err(NetError::Shape("dropout mask does not match gradient".into()));
                }
                let scale = T::lit(1.0 / (1.0 - self.rate));
                let data = grad_out
                    .data()
                    .iter()
                    .zip(mask)
                    .map(|(&g, &m)| if m { g * scale } else { T::zero() })
                    .collect();
                Tensor::from_vec(grad_out.shape(), data)
            }
        }
    }

    fn visit(&mut self, _prefix: &str, _v: &mut dyn StateVisitor<T>) {}
}

/// Row-wise softmax of `[N, K]` logits.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>, NetError> {
    let (_, k) = logits.dims2()?;
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

/// Mean cross-entropy of `[N, K]` logits against class indices, with the
/// gradient of that mean with respect to the logits.
pub fn cross_entropy<T: Real>(logits: &Tensor<T>, targets: &[usize]) -> Result<(f64, Tensor<T>), NetError> {
    let (n, k) = logits.dims2()?;
    if targets.len() != n {
        return Err(NetError::Shape(format!("{} targets for {n} rows", targets.len())));
    }
    let mut grad = softmax(logits)?;
    let mut loss = 0.0;
    let inv_n = T::lit(1.0 / n as f64);
    for (row, &t) in grad.data_mut().chunks_exact_mut(k).zip(targets) {
        if t >= k {
            return Err(NetError::Shape(format!("target {t} out of range for {k} classes")));
        }
        loss -= row[t].as_f64().max(f64::MIN_POSITIVE).ln();
        row[t] -= T::one();
        for v in row.iter_mut() {
            *v *= inv_n;
        }
    }
    Ok((loss / n as f64, grad))
}

/// Ordered chain of modules.
pub struct Sequential<T: Real> {
    pub layers: Vec<(String, Box<dyn Module<T>>)>,
}

impl<T: Real> Sequential<T> {
    pub fn new() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, m: impl Module<T> + 'static) {
        self.layers.push((name.into(), Box::new(m)));
    }
}

impl<T: Real> Default for Sequential<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Module<T> for Sequential<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NetError> {
        let mut iter = self.layers.iter_mut();
        let Some((_, first)) = iter.next() else {
            return Ok(x.clone());
        };
        let mut h = first.forward(x, mode)?;
        for (_, layer) in iter {
            h = layer.forward(&h, mode)?;
        }
        Ok(h)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NetError> {
        let mut g = grad_out.clone();
        for (_, layer) in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    fn visit(&mut self, prefix: &str, v: &mut dyn StateVisitor<T>) {
        for (name, layer) in self.layers.iter_mut() {
            layer.visit(&join(prefix, name), v);
        }
    }

    fn macs(&self) -> u64 {
        self.layers.iter().map(|(_, l)| l.macs()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_uniform_and_cross_entropy_ln3() {
        let logits = Tensor::<f64>::zeros(&[1, 3]);
        let p = softmax(&logits).unwrap();
        assert!(p.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let (loss, _) = cross_entropy(&logits, &[2]).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
        assert!((loss - 1.0986).abs() < 1e-4);
    }

    #[test]
    fn pool_of_two_by_two_is_mean() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[2.5]);
    }

    #[test]
    fn conv_stride_two_halves_spatial_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv2d::<f32>::new(2, 4, 3, 2, &mut rng);
        let out = conv.forward(&Tensor::zeros(&[1, 2, 96, 96]), Mode::Eval).unwrap();
        assert_eq!(out.shape(), &[1, 4, 48, 48]);
    }

    #[test]
    fn conv_shape_error_names_both_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv2d::<f32>::new(3, 4, 3, 1, &mut rng);
        let err = conv.forward(&Tensor::zeros(&[1, 2, 8, 8]), Mode::Eval).unwrap_err().to_string();
        assert!(err.contains("[1, 2, 8, 8]") && err.contains("[4, 3, 3, 3]"), "{err}");
    }

    #[test]
    fn conv_matches_direct_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut conv = Conv2d::<f64>::new(2, 3, 3, 2, &mut rng);
        let x = Tensor::<f64>::from_fn(&[2, 2, 5, 6], |i| ((i * 7919) % 13) as f64 / 7.0 - 0.8);
        let y = conv.forward(&x, Mode::Eval).unwrap();
        let (ho, wo) = (3, 3);
        assert_eq!(y.shape(), &[2, 3, ho, wo]);
        let w = conv.weight.value.data();
        for s in 0..2 {
            for o in 0..3 {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut acc = 0.0;
                        for c in 0..2 {
                            for ki in 0..3 {
                                for kj in 0..3 {
                                    let ih = (oh * 2 + ki) as isize - 1;
                                    let iw = (ow * 2 + kj) as isize - 1;
                                    if ih >= 0 && ih < 5 && iw >= 0 && iw < 6 {
                                        acc += w[((o * 2 + c) * 3 + ki) * 3 + kj]
                                            * x.data()[((s * 2 + c) * 5 + ih as usize) * 6 + iw as usize];
                                    }
                                }
                            }
                        }
                        let got = y.data()[((s * 3 + o) * ho + oh) * wo + ow];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn batchnorm_running_stats_use_momentum() {
        let mut bn = BatchNorm2d::<f64>::new(1);
        let x = Tensor::from_vec(&[2, 1, 1, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        bn.forward(&x, Mode::Train).unwrap();
        assert!((bn.running_mean.data()[0] - 0.4).abs() < 1e-12);
        // unbiased variance of {1,3,5,7} is 20/3
        assert!((bn.running_var.data()[0] - (0.9 + 0.1 * 20.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn dropout_is_identity_in_eval() {
        let mut d = Dropout::new(0.5, 1);
        let x = Tensor::<f32>::from_fn(&[4, 4], |i| i as f32);
        assert_eq!(Module::<f32>::forward(&mut d, &x, Mode::Eval).unwrap(), x);
        let y = Module::<f32>::forward(&mut d, &x, Mode::Train).unwrap();
        assert!(y.data().iter().zip(x.data()).all(|(&a, &b)| a == 0.0 || a == 2.0 * b));
    }
}
