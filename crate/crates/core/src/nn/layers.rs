//! Layers used by the spectrogram GAN and the mask-estimation DNN:
//! strided 5x5 conv, its transpose, batch norm, dense, activations, dropout.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;

use super::gemm::{matmul, matmul_acc, matmul_bt_acc, transpose};
use super::tensor::{Parameter, Tensor};
use super::Mode;

// ---------------------------------------------------------------------------
// Convolution cores (shared by Conv2d and ConvTranspose2d in both directions)
// ---------------------------------------------------------------------------

#[inline]
pub fn conv_out_size(h: usize, k: usize, stride: usize, pad: usize) -> usize {
    (h + 2 * pad - k) / stride + 1
}

/// Patch matrix of one (C,H,W) image: rows C*k*k, cols Ho*Wo.
fn im2col(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let ho = conv_out_size(h, k, stride, pad);
    let wo = conv_out_size(w, k, stride, pad);
    let l = ho * wo;
    let mut cols = vec![0.0; c * k * k * l];
    for ci in 0..c {
        let img = &x[ci * h * w..(ci + 1) * h * w];
        for di in 0..k {
            for dj in 0..k {
                let row = &mut cols[(ci * k * k + di * k + dj) * l..][..l];
                for oy in 0..ho {
                    let iy = (oy * stride + di) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &img[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    for ox in 0..wo {
                        let ix = (ox * stride + dj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of im2col: scatter-add patch columns back into the image.
fn col2im_acc(
    cols: &[f64],
    x: &mut [f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) {
    let ho = conv_out_size(h, k, stride, pad);
    let wo = conv_out_size(w, k, stride, pad);
    let l = ho * wo;
    for ci in 0..c {
        let img = &mut x[ci * h * w..(ci + 1) * h * w];
        for di in 0..k {
            for dj in 0..k {
                let row = &cols[(ci * k * k + di * k + dj) * l..][..l];
                for oy in 0..ho {
                    let iy = (oy * stride + di) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + dj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            img[iy as usize * w + ix as usize] += row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// y[n] = W (K x C*k*k) * im2col(x[n]) + b.
fn conv_fwd(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Tensor {
    let (n, c, h, w) = dims4(x);
    let ws = weight.shape();
    assert_eq!(ws[1], c, "conv: input channels {} vs kernel {}", c, ws[1]);
    let (k_out, k) = (ws[0], ws[2]);
    assert_eq!(ws[2], ws[3], "square kernels only");
    let ho = conv_out_size(h, k, stride, pad);
    let wo = conv_out_size(w, k, stride, pad);
    let l = ho * wo;
    let ckk = c * k * k;

    let mut out = Tensor::zeros(&[n, k_out, ho, wo]);
    for i in 0..n {
        let cols = im2col(&x.data()[i * c * h * w..], c, h, w, k, stride, pad);
        let y = matmul(weight.data(), &cols, k_out, ckk, l);
        let dst = &mut out.data_mut()[i * k_out * l..(i + 1) * k_out * l];
        dst.copy_from_slice(&y);
        if let Some(b) = bias {
            for ko in 0..k_out {
                let bv = b.data()[ko];
                for v in &mut dst[ko * l..(ko + 1) * l] {
                    *v += bv;
                }
            }
        }
    }
    out
}

/// Gradient w.r.t. the conv input: col2im(W^T * g).
fn conv_bwd_input(
    g: &Tensor,
    weight: &Tensor,
    stride: usize,
    pad: usize,
    in_h: usize,
    in_w: usize,
) -> Tensor {
    let (n, k_out, ho, wo) = dims4(g);
    let ws = weight.shape();
    assert_eq!(ws[0], k_out);
    let (c, k) = (ws[1], ws[2]);
    assert_eq!(conv_out_size(in_h, k, stride, pad), ho);
    assert_eq!(conv_out_size(in_w, k, stride, pad), wo);
    let l = ho * wo;
    let ckk = c * k * k;

    let wt = transpose(weight.data(), k_out, ckk);
    let mut out = Tensor::zeros(&[n, c, in_h, in_w]);
    for i in 0..n {
        let grad_cols = matmul(&wt, &g.data()[i * k_out * l..(i + 1) * k_out * l], ckk, k_out, l);
        col2im_acc(
            &grad_cols,
            &mut out.data_mut()[i * c * in_h * in_w..],
            c,
            in_h,
            in_w,
            k,
            stride,
            pad,
        );
    }
    out
}

/// Gradient w.r.t. the conv weight: g * im2col(x)^T, accumulated over the
/// batch. Bias gradient is the per-output-channel sum of g.
fn conv_bwd_weight(
    x: &Tensor,
    g: &Tensor,
    k: usize,
    stride: usize,
    pad: usize,
    dw: &mut Tensor,
    db: Option<&mut Tensor>,
) {
    let (n, c, h, w) = dims4(x);
    let (gn, k_out, ho, wo) = dims4(g);
    assert_eq!(n, gn);
    let l = ho * wo;
    let ckk = c * k * k;
    assert_eq!(dw.shape(), &[k_out, c, k, k]);

    for i in 0..n {
        let cols = im2col(&x.data()[i * c * h * w..], c, h, w, k, stride, pad);
        matmul_bt_acc(
            dw.data_mut(),
            &g.data()[i * k_out * l..(i + 1) * k_out * l],
            &cols,
            k_out,
            l,
            ckk,
        );
    }
    if let Some(db) = db {
        for i in 0..n {
            for ko in 0..k_out {
                let sum: f64 = g.data()[(i * k_out + ko) * l..(i * k_out + ko + 1) * l]
                    .iter()
                    .sum();
                db.data_mut()[ko] += sum;
            }
        }
    }
}

fn dims4(t: &Tensor) -> (usize, usize, usize, usize) {
    let s = t.shape();
    assert_eq!(s.len(), 4, "expected NCHW tensor, got shape {:?}", s);
    (s[0], s[1], s[2], s[3])
}

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

/// Strided 2-D cross-correlation with zero padding.
pub struct Conv2d {
    pub w: Parameter, // [K, C, k, k]
    pub b: Parameter, // [K]
    pub stride: usize,
    pub pad: usize,
    cache: Option<Tensor>,
}

impl Conv2d {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, k: usize, stride: usize, pad: usize) -> Self {
        Conv2d {
            w: Parameter::new(format!("{name}.w"), Tensor::zeros(&[out_ch, in_ch, k, k])),
            b: Parameter::new(format!("{name}.b"), Tensor::zeros(&[out_ch])),
            stride,
            pad,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, _mode: Mode) -> Tensor {
        let out = conv_fwd(x, &self.w.value, Some(&self.b.value), self.stride, self.pad);
        out.assert_finite("conv2d");
        self.cache = Some(x.clone());
        out
    }

    pub fn backward(&mut self, g: &Tensor) -> Tensor {
        let x = self.cache.take().expect("conv2d backward without forward");
        let k = self.w.value.shape()[2];
        conv_bwd_weight(&x, g, k, self.stride, self.pad, &mut self.w.grad, Some(&mut self.b.grad));
        let s = x.shape();
        conv_bwd_input(g, &self.w.value, self.stride, self.pad, s[2], s[3])
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.w, &mut self.b]
    }
}

// ---------------------------------------------------------------------------
// ConvTranspose2d
// ---------------------------------------------------------------------------

/// Transposed conv, the exact adjoint of Conv2d: with stride 2, pad 2,
/// 5x5 kernels and output padding fixed at 1, it doubles both spatial dims.
/// Weight layout is [C_in, K_out, k, k].
pub struct ConvTranspose2d {
    pub w: Parameter,
    pub b: Parameter, // [K_out]
    pub stride: usize,
    pub pad: usize,
    cache: Option<Tensor>,
}

impl ConvTranspose2d {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, k: usize, stride: usize, pad: usize) -> Self {
        ConvTranspose2d {
            w: Parameter::new(format!("{name}.w"), Tensor::zeros(&[in_ch, out_ch, k, k])),
            b: Parameter::new(format!("{name}.b"), Tensor::zeros(&[out_ch])),
            stride,
            pad,
            cache: None,
        }
    }

    fn out_spatial(&self, h: usize) -> usize {
        let k = self.w.value.shape()[2];
        // output_padding = stride - 1 makes stride-2 upsampling exact (2x).
        (h - 1) * self.stride + k - 2 * self.pad + (self.stride - 1)
    }

    pub fn forward(&mut self, x: &Tensor, _mode: Mode) -> Tensor {
        let (_, c_in, h, w) = dims4(x);
        assert_eq!(c_in, self.w.value.shape()[0]);
        let (oh, ow) = (self.out_spatial(h), self.out_spatial(w));
        // Forward of the transpose = input-gradient of the mirrored conv.
        let mut out = conv_bwd_input(x, &self.w.value, self.stride, self.pad, oh, ow);
        let (n, k_out, _, _) = dims4(&out);
        let plane = oh * ow;
        for i in 0..n {
            for ko in 0..k_out {
                let bv = self.b.value.data()[ko];
                for v in &mut out.data_mut()[(i * k_out + ko) * plane..(i * k_out + ko + 1) * plane]
                {
                    *v += bv;
                }
            }
        }
        out.assert_finite("conv_transpose2d");
        self.cache = Some(x.clone());
        out
    }

    pub fn backward(&mut self, g: &Tensor) -> Tensor {
        let x = self.cache.take().expect("conv_transpose2d backward without forward");
        let k = self.w.value.shape()[2];
        // dW: the mirrored conv maps g -> x, so its weight gradient uses
        // g as the conv input and x as the output gradient.
        conv_bwd_weight(g, &x, k, self.stride, self.pad, &mut self.w.grad, None);
        let (n, k_out, oh, ow) = dims4(g);
        let plane = oh * ow;
        for i in 0..n {
            for ko in 0..k_out {
                let sum: f64 = g.data()[(i * k_out + ko) * plane..(i * k_out + ko + 1) * plane]
                    .iter()
                    .sum();
                self.b.grad.data_mut()[ko] += sum;
            }
        }
        conv_fwd(g, &self.w.value, None, self.stride, self.pad)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.w, &mut self.b]
    }
}

// ---------------------------------------------------------------------------
// BatchNorm2d
// ---------------------------------------------------------------------------

pub struct BatchNorm2d {
    pub gamma: Parameter, // [C]
    pub beta: Parameter,  // [C]
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
    cache: Option<BnCache>,
}

struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
    used_batch_stats: bool,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm2d {
            gamma: Parameter::new(format!("{name}.gamma"), Tensor::filled(&[channels], 1.0)),
            beta: Parameter::new(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: 1e-5,
            momentum: 0.1,
            cache: None,
        }
    }

    /// Train mode normalizes with batch statistics over (N, H, W) per
    /// channel and updates running stats; eval uses the running stats.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let (n, c, h, w) = dims4(x);
        assert_eq!(c, self.gamma.value.numel());
        let m = n * h * w;
        assert!(m > 0, "batch norm over an empty channel");
        let plane = h * w;

        let use_batch = mode != Mode::Eval;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        if use_batch {
            for ci in 0..c {
                let mut s = 0.0;
                for i in 0..n {
                    for v in &x.data()[(i * c + ci) * plane..(i * c + ci + 1) * plane] {
                        s += v;
                    }
                }
                mean[ci] = s / m as f64;
                let mut q = 0.0;
                for i in 0..n {
                    for v in &x.data()[(i * c + ci) * plane..(i * c + ci + 1) * plane] {
                        let d = v - mean[ci];
                        q += d * d;
                    }
                }
                var[ci] = q / m as f64;
            }
            if mode == Mode::Train {
                for ci in 0..c {
                    self.running_mean[ci] =
                        (1.0 - self.momentum) * self.running_mean[ci] + self.momentum * mean[ci];
                    self.running_var[ci] =
                        (1.0 - self.momentum) * self.running_var[ci] + self.momentum * var[ci];
                }
            }
        } else {
            mean.copy_from_slice(&self.running_mean);
            var.copy_from_slice(&self.running_var);
        }

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = Tensor::zeros(x.shape());
        let mut out = Tensor::zeros(x.shape());
        for i in 0..n {
            for ci in 0..c {
                let (g, b) = (self.gamma.value.data()[ci], self.beta.value.data()[ci]);
                let base = (i * c + ci) * plane;
                for j in 0..plane {
                    let xh = (x.data()[base + j] - mean[ci]) * inv_std[ci];
                    xhat.data_mut()[base + j] = xh;
                    out.data_mut()[base + j] = g * xh + b;
                }
            }
        }
        out.assert_finite("batch_norm");
        self.cache = Some(BnCache {
            xhat,
            inv_std,
            used_batch_stats: use_batch,
        });
        out
    }

    pub fn backward(&mut self, g: &Tensor) -> Tensor {
        let cache = self.cache.take().expect("batch_norm backward without forward");
        let (n, c, h, w) = dims4(g);
        let plane = h * w;
        let m = (n * plane) as f64;
        let mut out = Tensor::zeros(g.shape());

        for ci in 0..c {
            let gamma = self.gamma.value.data()[ci];
            let istd = cache.inv_std[ci];
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for i in 0..n {
                let base = (i * c + ci) * plane;
                for j in 0..plane {
                    let gv = g.data()[base + j];
                    sum_g += gv;
                    sum_gx += gv * cache.xhat.data()[base + j];
                }
            }
            self.beta.grad.data_mut()[ci] += sum_g;
            self.gamma.grad.data_mut()[ci] += sum_gx;

            for i in 0..n {
                let base = (i * c + ci) * plane;
                for j in 0..plane {
                    let gv = g.data()[base + j];
                    let xh = cache.xhat.data()[base + j];
                    let dx = if cache.used_batch_stats {
                        // Batch statistics participate in the graph.
                        gamma * istd * (gv - sum_g / m - xh * sum_gx / m)
                    } else {
                        gamma * istd * gv
                    };
                    out.data_mut()[base + j] = dx;
                }
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

pub struct Dense {
    pub w: Parameter, // [In, Out]
    pub b: Parameter, // [Out]
    cache: Option<Tensor>,
}

impl Dense {
    pub fn new(name: &str, in_dim: usize, out_dim: usize) -> Self {
        Dense {
            w: Parameter::new(format!("{name}.w"), Tensor::zeros(&[in_dim, out_dim])),
            b: Parameter::new(format!("{name}.b"), Tensor::zeros(&[out_dim])),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, _mode: Mode) -> Tensor {
        let s = x.shape();
        assert_eq!(s.len(), 2, "dense expects [N, In]");
        let (n, in_dim) = (s[0], s[1]);
        let out_dim = self.w.value.shape()[1];
        assert_eq!(in_dim, self.w.value.shape()[0]);
        let mut y = matmul(x.data(), self.w.value.data(), n, in_dim, out_dim);
        for row in y.chunks_mut(out_dim) {
            for (v, b) in row.iter_mut().zip(self.b.value.data()) {
                *v += b;
            }
        }
        let out = Tensor::from_vec(&[n, out_dim], y);
        out.assert_finite("dense");
        self.cache = Some(x.clone());
        out
    }

    pub fn backward(&mut self, g: &Tensor) -> Tensor {
        let x = self.cache.take().expect("dense backward without forward");
        let (n, in_dim) = (x.shape()[0], x.shape()[1]);
        let out_dim = self.w.value.shape()[1];
        // dW = x^T g: accumulate row outer products.
        let xt = transpose(x.data(), n, in_dim);
        matmul_acc(self.w.grad.data_mut(), &xt, g.data(), in_dim, n, out_dim);
        for row in g.data().chunks(out_dim) {
            for (bg, gv) in self.b.grad.data_mut().iter_mut().zip(row) {
                *bg += gv;
            }
        }
        // dx = g W^T.
        let mut dx = vec![0.0; n * in_dim];
        matmul_bt_acc(&mut dx, g.data(), self.w.value.data(), n, out_dim, in_dim);
        Tensor::from_vec(&[n, in_dim], dx)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.w, &mut self.b]
    }
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActKind {
    LeakyRelu(f64),
    Relu,
    Tanh,
    Sigmoid,
}

pub struct Activation {
    pub kind: ActKind,
    cache: Option<Tensor>,
}

impl Activation {
    pub fn new(kind: ActKind) -> Self {
        Activation { kind, cache: None }
    }

    pub fn leaky_relu() -> Self {
        Activation::new(ActKind::LeakyRelu(0.2))
    }

    pub fn apply(kind: ActKind, v: f64) -> f64 {
        match kind {
            ActKind::LeakyRelu(a) => {
                if v >= 0.0 {
                    v
                } else {
                    a * v
                }
            }
            ActKind::Relu => v.max(0.0),
            ActKind::Tanh => v.tanh(),
            ActKind::Sigmoid => 1.0 / (1.0 + (-v).exp()),
        }
    }

    fn derivative(kind: ActKind, x: f64) -> f64 {
        match kind {
            ActKind::LeakyRelu(a) => {
                if x >= 0.0 {
                    1.0
                } else {
                    a
                }
            }
            ActKind::Relu => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActKind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            ActKind::Sigmoid => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 - s)
            }
        }
    }

    pub fn forward(&mut self, x: &Tensor, _mode: Mode) -> Tensor {
        let out = x.map(|v| Self::apply(self.kind, v));
        self.cache = Some(x.clone());
        out
    }

    pub fn backward(&mut self, g: &Tensor) -> Tensor {
        let x = self.cache.take().expect("activation backward without forward");
        let mut out = g.clone();
        for (o, xv) in out.data_mut().iter_mut().zip(x.data()) {
            *o *= Self::derivative(self.kind, *xv);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

/// Inverted dropout: train mode zeroes with probability p and scales
/// survivors by 1/(1-p); eval mode is the identity. The mask RNG is owned
/// and seeded, so training runs are reproducible.
pub struct Dropout {
    pub p: f64,
    rng: ChaCha20Rng,
    mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(p: f64, seed: u64) -> Self {
        assert!((0.0..1.0).contains(&p));
        Dropout {
            p,
            rng: ChaCha20Rng::seed_from_u64(seed),
            mask: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        match mode {
            Mode::Eval => {
                self.mask = None;
                x.clone()
            }
            Mode::Train | Mode::TrainFrozen => {
                if mode == Mode::Train || self.mask.as_ref().map(|m| m.len()) != Some(x.numel()) {
                    let keep = 1.0 - self.p;
                    let mask: Vec<f64> = (0..x.numel())
                        .map(|_| {
                            if self.p == 0.0 || self.rng.gen::<f64>() >= self.p {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    self.mask = Some(mask);
                }
                let mask = self.mask.as_ref().unwrap();
                let mut out = x.clone();
                for (o, m) in out.data_mut().iter_mut().zip(mask) {
                    *o *= m;
                }
                out
            }
        }
    }

    pub fn backward(&mut self, g: &Tensor) -> Tensor {
        match &self.mask {
            None => g.clone(),
            Some(mask) => {
                let mut out = g.clone();
                for (o, m) in out.data_mut().iter_mut().zip(mask) {
                    *o *= m;
                }
                out
            }
        }
    }
}

// DiffModule hooks so every layer can go through the shared gradient
// checker.
macro_rules! impl_diff_module {
    ($ty:ty) => {
        impl crate::nn::DiffModule for $ty {
            fn forward_t(&mut self, x: &Tensor, mode: Mode) -> Tensor {
                self.forward(x, mode)
            }
            fn backward_t(&mut self, g: &Tensor) -> Tensor {
                self.backward(g)
            }
            fn params_mut(&mut self) -> Vec<&mut Parameter> {
                self.params_mut()
            }
        }
    };
}

impl_diff_module!(Conv2d);
impl_diff_module!(ConvTranspose2d);
impl_diff_module!(BatchNorm2d);
impl_diff_module!(Dense);

impl crate::nn::DiffModule for Activation {
    fn forward_t(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        self.forward(x, mode)
    }
    fn backward_t(&mut self, g: &Tensor) -> Tensor {
        self.backward(g)
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![]
    }
}

impl crate::nn::DiffModule for Dropout {
    fn forward_t(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        self.forward(x, mode)
    }
    fn backward_t(&mut self, g: &Tensor) -> Tensor {
        self.backward(g)
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![]
    }
}
