//! Forward and backward kernels for the layer types the network uses.
//!
//! Activations are dense NCHW buffers. Every backward function takes the
//! cached forward quantities explicitly so the kernels can be checked in
//! isolation against finite differences.

use super::Scalar;

/// Dense NCHW activation tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Act<T> {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Act<T> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![T::zero(); n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), n * c * h * w, "activation size mismatch");
        Self { n, c, h, w, data }
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let s = self.sample_len();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [T] {
        let s = self.sample_len();
        &mut self.data[i * s..(i + 1) * s]
    }

    pub fn same_shape(&self) -> Self {
        Self::zeros(self.n, self.c, self.h, self.w)
    }
}

/// Bias-free 2-D convolution with square kernel and symmetric zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    /// `[out_ch][in_ch][k][k]`.
    pub weight: Vec<T>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            weight: vec![T::zero(); out_ch * in_ch * kernel * kernel],
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    /// Unfolds one sample into `[in_ch * k * k] x [out_h * out_w]` columns.
    fn im2col(&self, x: &[T], h: usize, w: usize, cols: &mut [T]) {
        let (oh, ow) = self.out_hw(h, w);
        let k = self.kernel;
        let mut row = 0;
        for c in 0..self.in_ch {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let line = &mut dst[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            line.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, slot) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *slot = if ix < 0 || ix >= w as isize { T::zero() } else { src[ix as usize] };
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Accumulates columns back into an input-shaped buffer.
    fn col2im(&self, cols: &[T], h: usize, w: usize, dx: &mut [T]) {
        let (oh, ow) = self.out_hw(h, w);
        let k = self.kernel;
        let mut row = 0;
        for c in 0..self.in_ch {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = iy as usize * w;
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                plane[base + ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn forward(&self, x: &Act<T>) -> Act<T> {
        assert_eq!(x.c, self.in_ch, "conv input channels");
        let (oh, ow) = self.out_hw(x.h, x.w);
        let mut y = Act::zeros(x.n, self.out_ch, oh, ow);
        let kk = self.fan_in();
        let mut cols = if self.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * oh * ow] };
        for i in 0..x.n {
            let xi = x.sample(i);
            let b: &[T] = if self.is_pointwise() {
                xi
            } else {
                self.im2col(xi, x.h, x.w, &mut cols);
                &cols
            };
            T::gemm(self.out_ch, kk, oh * ow, &self.weight, false, b, false, y.sample_mut(i), false);
        }
        y
    }

    /// Returns the input gradient when `need_dx`, and accumulates the weight
    /// gradient into `dw` when given.
    pub fn backward(&self, x: &Act<T>, dy: &Act<T>, need_dx: bool, mut dw: Option<&mut [T]>) -> Option<Act<T>> {
        let (oh, ow) = self.out_hw(x.h, x.w);
        debug_assert_eq!((dy.c, dy.h, dy.w), (self.out_ch, oh, ow));
        let kk = self.fan_in();
        let pointwise = self.is_pointwise();
        let mut dx = need_dx.then(|| x.same_shape());
        let mut cols = vec![T::zero(); kk * oh * ow];
        for i in 0..x.n {
            let dyi = dy.sample(i);
            if let Some(dw) = dw.as_deref_mut() {
                let b: &[T] = if pointwise {
                    x.sample(i)
                } else {
                    self.im2col(x.sample(i), x.h, x.w, &mut cols);
                    &cols
                };
                // dW (out x kk) += dY (out x P) * cols^T (P x kk)
                T::gemm(self.out_ch, oh * ow, kk, dyi, false, b, true, dw, true);
            }
            if let Some(dx) = dx.as_mut() {
                if pointwise {
                    T::gemm(kk, self.out_ch, oh * ow, &self.weight, true, dyi, false, dx.sample_mut(i), false);
                } else {
                    T::gemm(kk, self.out_ch, oh * ow, &self.weight, true, dyi, false, &mut cols, false);
                    self.col2im(&cols, x.h, x.w, dx.sample_mut(i));
                }
            }
        }
        dx
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

/// Quantities saved by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    /// Batch statistics were used (gradient flows through mean and variance).
    pub batch_stats: bool,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn normalize(&self, x: &Act<T>, mean: &[T], inv_std: &[T], y: &mut [T], xhat: &mut [T]) {
        let plane = x.plane();
        let planes = x.data.chunks(plane).zip(y.chunks_mut(plane)).zip(xhat.chunks_mut(plane));
        for (k, ((xs, ys), hs)) in planes.enumerate() {
            let c = k % x.c;
            let (m, s, g, b) = (mean[c], inv_std[c], self.gamma[c], self.beta[c]);
            for ((&xv, yv), hv) in xs.iter().zip(ys.iter_mut()).zip(hs.iter_mut()) {
                let xh = (xv - m) * s;
                *hv = xh;
                *yv = g * xh + b;
            }
        }
    }

    /// Normalizes with running statistics.
    pub fn forward_eval(&self, x: &Act<T>) -> (Act<T>, BnCache<T>) {
        let eps = T::from_f64_lossy(BN_EPS);
        let inv_std: Vec<T> = self.running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut y = x.same_shape();
        let mut xhat = vec![T::zero(); x.data.len()];
        self.normalize(x, &self.running_mean, &inv_std, &mut y.data, &mut xhat);
        (y, BnCache { xhat, inv_std, batch_stats: false })
    }

    /// Normalizes with batch statistics; updates running statistics when
    /// `update_running` is set.
    pub fn forward_train(&mut self, x: &Act<T>, update_running: bool) -> (Act<T>, BnCache<T>) {
        self.forward_batch(x, update_running.then_some(BN_MOMENTUM))
    }

    /// Batch-statistics forward that blends the batch statistics into the
    /// running ones with weight `momentum`; 1 overwrites them.
    pub fn forward_batch(&mut self, x: &Act<T>, momentum: Option<f64>) -> (Act<T>, BnCache<T>) {
        let eps = T::from_f64_lossy(BN_EPS);
        let plane = x.plane();
        let count = x.n * plane;
        let count_t = T::from_usize(count).expect("count");
        let mut mean = vec![T::zero(); x.c];
        let mut var = vec![T::zero(); x.c];
        for c in 0..x.c {
            let mut s = T::zero();
            for n in 0..x.n {
                let off = (n * x.c + c) * plane;
                s += x.data[off..off + plane].iter().copied().sum::<T>();
            }
            mean[c] = s / count_t;
            let mut v = T::zero();
            for n in 0..x.n {
                let off = (n * x.c + c) * plane;
                v += x.data[off..off + plane].iter().map(|&e| (e - mean[c]) * (e - mean[c])).sum::<T>();
            }
            var[c] = v / count_t;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut y = x.same_shape();
        let mut xhat = vec![T::zero(); x.data.len()];
        self.normalize(x, &mean, &inv_std, &mut y.data, &mut xhat);
        if let Some(mom) = momentum {
            let mom = T::from_f64_lossy(mom);
            let unbias = if count > 1 {
                count_t / T::from_usize(count - 1).expect("count")
            } else {
                T::one()
            };
            for c in 0..x.c {
                self.running_mean[c] = (T::one() - mom) * self.running_mean[c] + mom * mean[c];
                self.running_var[c] = (T::one() - mom) * self.running_var[c] + mom * var[c] * unbias;
            }
        }
        (y, BnCache { xhat, inv_std, batch_stats: true })
    }

    /// Returns `dx` (when requested) and accumulates `dgamma`, `dbeta` when given.
    pub fn backward(
        &self,
        cache: &BnCache<T>,
        dy: &Act<T>,
        need_dx: bool,
        dparams: Option<(&mut [T], &mut [T])>,
    ) -> Option<Act<T>> {
        let plane = dy.plane();
        let count = T::from_usize(dy.n * plane).expect("count");
        let mut sum_dy = vec![T::zero(); dy.c];
        let mut sum_dy_xhat = vec![T::zero(); dy.c];
        for n in 0..dy.n {
            for c in 0..dy.c {
                let off = (n * dy.c + c) * plane;
                for i in off..off + plane {
                    sum_dy[c] += dy.data[i];
                    sum_dy_xhat[c] += dy.data[i] * cache.xhat[i];
                }
            }
        }
        if let Some((dgamma, dbeta)) = dparams {
            for c in 0..dy.c {
                dgamma[c] += sum_dy_xhat[c];
                dbeta[c] += sum_dy[c];
            }
        }
        if !need_dx {
            return None;
        }
        let mut dx = dy.same_shape();
        for n in 0..dy.n {
            for c in 0..dy.c {
                let off = (n * dy.c + c) * plane;
                let scale = self.gamma[c] * cache.inv_std[c];
                if cache.batch_stats {
                    let (sd, sdx) = (sum_dy[c] / count, sum_dy_xhat[c] / count);
                    for i in off..off + plane {
                        dx.data[i] = scale * (dy.data[i] - sd - cache.xhat[i] * sdx);
                    }
                } else {
                    for i in off..off + plane {
                        dx.data[i] = scale * dy.data[i];
                    }
                }
            }
        }
        Some(dx)
    }
}

pub fn relu_inplace<T: Scalar>(x: &mut Act<T>) {
    for v in &mut x.data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Gradient through a ReLU given its output.
pub fn relu_backward<T: Scalar>(out: &Act<T>, dy: &Act<T>) -> Act<T> {
    let mut dx = dy.clone();
    for (g, &o) in dx.data.iter_mut().zip(&out.data) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
    dx
}

/// Global average pool to `[n x c]`.
pub fn gap_forward<T: Scalar>(x: &Act<T>) -> Vec<T> {
    let plane = x.plane();
    let denom = T::from_usize(plane).expect("plane");
    x.data.chunks(plane).map(|p| p.iter().copied().sum::<T>() / denom).collect()
}

pub fn gap_backward<T: Scalar>(dfeat: &[T], n: usize, c: usize, h: usize, w: usize) -> Act<T> {
    let plane = h * w;
    let denom = T::from_usize(plane).expect("plane");
    let mut dx = Act::zeros(n, c, h, w);
    for (chunk, &g) in dx.data.chunks_mut(plane).zip(dfeat) {
        chunk.fill(g / denom);
    }
    dx
}

/// Fully connected layer, `y = x W^T + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    /// `[out][in]`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub in_features: usize,
    pub out_features: usize,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Self {
            weight: vec![T::zero(); in_features * out_features],
            bias: vec![T::zero(); out_features],
            in_features,
            out_features,
        }
    }

    pub fn forward(&self, x: &[T], batch: usize) -> Vec<T> {
        let mut y = vec![T::zero(); batch * self.out_features];
        for row in y.chunks_mut(self.out_features) {
            row.copy_from_slice(&self.bias);
        }
        T::gemm(batch, self.in_features, self.out_features, x, false, &self.weight, true, &mut y, true);
        y
    }

    /// Returns `dx` and accumulates `dW`, `db` when given.
    pub fn backward(&self, x: &[T], dy: &[T], batch: usize, dparams: Option<(&mut [T], &mut [T])>) -> Vec<T> {
        if let Some((dw, db)) = dparams {
            T::gemm(self.out_features, batch, self.in_features, dy, true, x, false, dw, true);
            for row in dy.chunks(self.out_features) {
                for (b, &g) in db.iter_mut().zip(row) {
                    *b += g;
                }
            }
        }
        let mut dx = vec![T::zero(); batch * self.in_features];
        T::gemm(batch, self.out_features, self.in_features, dy, false, &self.weight, false, &mut dx, false);
        dx
    }
}

/// Row-wise softmax.
pub fn softmax<T: Scalar>(logits: &[T], classes: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
        let sum: T = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / sum));
    }
    out
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy<T: Scalar>(logits: &[T], labels: &[usize], classes: usize) -> (T, Vec<T>) {
    let batch = labels.len();
    debug_assert_eq!(logits.len(), batch * classes);
    let probs = softmax(logits, classes);
    let bt = T::from_usize(batch).expect("batch");
    let mut loss = T::zero();
    let mut grad = probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        let row = &logits[i * classes..(i + 1) * classes];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        loss += lse - row[y];
        grad[i * classes + y] -= T::one();
    }
    for g in &mut grad {
        *g /= bt;
    }
    (loss / bt, grad)
}
