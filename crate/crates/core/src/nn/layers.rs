use rand::Rng;

use super::{Float, Tensor};
use crate::par;

/// Trainable array plus its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Float> Param<T> {
    pub fn new(value: Vec<T>) -> Self {
        let grad = vec![T::zero(); value.len()];
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn cast<U: Float>(&self) -> Param<U> {
        Param {
            value: self.value.iter().map(|v| U::lit(v.as_f64())).collect(),
            grad: self.grad.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Square-kernel 2-D convolution without bias, via im2col + GEMM.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `out × (in · k · k)`, row-major.
    pub weight: Param<T>,
}

impl<T: Float> Conv2d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let normal =
            rand_distr::Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid He std");
        let weight = (0..out_channels * fan_in)
            .map(|_| T::lit(rng.sample(normal)))
            .collect();
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Param::new(weight),
        }
    }

    pub fn cast<U: Float>(&self) -> Conv2d<U> {
        Conv2d {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            weight: self.weight.cast(),
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.kernel;
        let p = self.padding;
        (
            (h + 2 * p - k) / self.stride + 1,
            (w + 2 * p - k) / self.stride + 1,
        )
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn im2col(&self, x: &[T], h: usize, w: usize, oh: usize, ow: usize, col: &mut [T]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let plane = oh * ow;
        for ci in 0..self.in_channels {
            let src = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut col[((ci * k + ky) * k + kx) * plane..][..plane];
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - p as isize;
                        let dst = &mut row[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p as isize;
                            *d = if ix < 0 || ix >= w as isize {
                                T::zero()
                            } else {
                                src_row[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[T], h: usize, w: usize, oh: usize, ow: usize, dx: &mut [T]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let plane = oh * ow;
        for ci in 0..self.in_channels {
            let dst = &mut dx[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &col[((ci * k + ky) * k + kx) * plane..][..plane];
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, g) in row[oy * ow..(oy + 1) * ow].iter().enumerate() {
                            let ix = (ox * s + kx) as isize - p as isize;
                            if ix >= 0 && ix < w as isize {
                                dst_row[ix as usize] += *g;
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c(), self.in_channels, "conv input channels");
        let (h, w) = x.spatial();
        let (oh, ow) = self.output_hw(h, w);
        let plane = oh * ow;
        let kk = self.patch_len();
        let mut y = Tensor::zeros([x.n(), self.out_channels, oh, ow]);
        let weight = &self.weight.value;
        par::for_each_chunk(y.data_mut(), self.out_channels * plane, |i, out| {
            let mut col = vec![T::zero(); kk * plane];
            self.im2col(x.sample(i), h, w, oh, ow, &mut col);
            T::gemm(
                self.out_channels,
                kk,
                plane,
                T::one(),
                weight,
                (kk as isize, 1),
                &col,
                (plane as isize, 1),
                T::zero(),
                out,
                (plane as isize, 1),
            );
        });
        y
    }

    /// Accumulates the weight gradient and returns the input gradient
    /// (or `None` when `need_input_grad` is false).
    pub fn backward(
        &mut self,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        let (h, w) = x.spatial();
        let (oh, ow) = dy.spatial();
        let plane = oh * ow;
        let kk = self.patch_len();
        let oc = self.out_channels;
        let mut dx = Tensor::zeros(if need_input_grad {
            x.shape()
        } else {
            [x.n(), 0, 0, 0]
        });
        let chunk = if need_input_grad { x.sample_len() } else { 0 };
        let weight = &self.weight.value;
        let this = &*self;
        let partials = par::map_indexed(x.n(), |i| {
            let mut col = vec![T::zero(); kk * plane];
            this.im2col(x.sample(i), h, w, oh, ow, &mut col);
            let mut dw = vec![T::zero(); oc * kk];
            T::gemm(
                oc,
                plane,
                kk,
                T::one(),
                dy.sample(i),
                (plane as isize, 1),
                &col,
                (1, plane as isize),
                T::zero(),
                &mut dw,
                (kk as isize, 1),
            );
            let dcol = need_input_grad.then(|| {
                T::gemm(
                    kk,
                    oc,
                    plane,
                    T::one(),
                    weight,
                    (1, kk as isize),
                    dy.sample(i),
                    (plane as isize, 1),
                    T::zero(),
                    &mut col,
                    (plane as isize, 1),
                );
                col
            });
            (dw, dcol)
        });
        let grad = &mut self.weight.grad;
        let mut dcols = Vec::with_capacity(x.n());
        for (dw, dcol) in partials {
            for (g, d) in grad.iter_mut().zip(&dw) {
                *g += *d;
            }
            dcols.push(dcol);
        }
        if !need_input_grad {
            return None;
        }
        let this = &*self;
        par::for_each_chunk(dx.data_mut(), chunk, |i, out| {
            if let Some(dcol) = &dcols[i] {
                this.col2im(dcol, h, w, oh, ow, out);
            }
        });
        Some(dx)
    }
}

/// Per-channel batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct BnCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

impl<T: Float> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(vec![T::one(); channels]),
            beta: Param::new(vec![T::zero(); channels]),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn cast<U: Float>(&self) -> BatchNorm2d<U> {
        BatchNorm2d {
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            running_mean: self
                .running_mean
                .iter()
                .map(|v| U::lit(v.as_f64()))
                .collect(),
            running_var: self
                .running_var
                .iter()
                .map(|v| U::lit(v.as_f64()))
                .collect(),
            momentum: self.momentum,
            eps: self.eps,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    #[allow(clippy::needless_range_loop)]
    pub fn forward_train(&mut self, x: &Tensor<T>) -> (Tensor<T>, BnCache<T>) {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.channels(), "batch-norm channels");
        let hw = h * w;
        let m = (n * hw) as f64;
        let mut xhat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        let mut inv_std = vec![T::zero(); c];
        for ch in 0..c {
            let (mut sum, mut sq) = (0.0f64, 0.0f64);
            for i in 0..n {
                for v in &x.data()[(i * c + ch) * hw..][..hw] {
                    let v = v.as_f64();
                    sum += v;
                    sq += v * v;
                }
            }
            let mean = sum / m;
            let var = (sq / m - mean * mean).max(0.0);
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std[ch] = T::lit(istd);
            let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
            let (mean_t, istd_t) = (T::lit(mean), T::lit(istd));
            for i in 0..n {
                let off = (i * c + ch) * hw;
                for j in off..off + hw {
                    let xh = (x.data()[j] - mean_t) * istd_t;
                    xhat.data_mut()[j] = xh;
                    y.data_mut()[j] = g * xh + b;
                }
            }
            let mom = self.momentum;
            let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
            self.running_mean[ch] =
                T::lit((1.0 - mom) * self.running_mean[ch].as_f64() + mom * mean);
            self.running_var[ch] =
                T::lit((1.0 - mom) * self.running_var[ch].as_f64() + mom * unbiased);
        }
        (y, BnCache { xhat, inv_std })
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.channels(), "batch-norm channels");
        let hw = h * w;
        let mut y = x.clone();
        let eps = T::lit(self.eps);
        for i in 0..n {
            for ch in 0..c {
                let scale = self.gamma.value[ch] / (self.running_var[ch] + eps).sqrt();
                let shift = self.beta.value[ch] - self.running_mean[ch] * scale;
                for v in &mut y.data_mut()[(i * c + ch) * hw..][..hw] {
                    *v = *v * scale + shift;
                }
            }
        }
        y
    }

    pub fn backward(&mut self, cache: &BnCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = dy.shape();
        let hw = h * w;
        let m = (n * hw) as f64;
        let mut dx = Tensor::zeros(dy.shape());
        for ch in 0..c {
            let (mut dbeta, mut dgamma) = (0.0f64, 0.0f64);
            for i in 0..n {
                let off = (i * c + ch) * hw;
                for j in off..off + hw {
                    let g = dy.data()[j].as_f64();
                    dbeta += g;
                    dgamma += g * cache.xhat.data()[j].as_f64();
                }
            }
            self.gamma.grad[ch] += T::lit(dgamma);
            self.beta.grad[ch] += T::lit(dbeta);
            let k = self.gamma.value[ch].as_f64() * cache.inv_std[ch].as_f64() / m;
            let (k, mdb, dg, mt) = (T::lit(k), T::lit(dbeta), T::lit(dgamma), T::lit(m));
            for i in 0..n {
                let off = (i * c + ch) * hw;
                for j in off..off + hw {
                    dx.data_mut()[j] = k * (mt * dy.data()[j] - mdb - cache.xhat.data()[j] * dg);
                }
            }
        }
        dx
    }
}

pub fn relu_inplace<T: Float>(x: &mut Tensor<T>) {
    for v in x.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Masks `dy` by where the ReLU output was positive.
pub fn relu_backward<T: Float>(out: &Tensor<T>, dy: &mut Tensor<T>) {
    for (g, o) in dy.data_mut().iter_mut().zip(out.data()) {
        if *o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2×2 stride-2 max pool. Returns the output and, for each output element,
/// the flat index of the winning input (first maximum on ties).
pub fn maxpool2_forward<T: Float>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor::zeros([n, c, oh, ow]);
    let mut idx = vec![0u32; n * c * oh * ow];
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let j = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x.data()[j] > x.data()[best] {
                        best = j;
                    }
                }
                let o = (plane * oh + oy) * ow + ox;
                y.data_mut()[o] = x.data()[best];
                idx[o] = best as u32;
            }
        }
    }
    (y, idx)
}

pub fn maxpool2_backward<T: Float>(
    input_shape: [usize; 4],
    idx: &[u32],
    dy: &Tensor<T>,
) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    for (g, i) in dy.data().iter().zip(idx) {
        dx.data_mut()[*i as usize] += *g;
    }
    dx
}

/// Global average pool to `N × C`.
pub fn gap_forward<T: Float>(x: &Tensor<T>) -> Vec<T> {
    let hw = x.h() * x.w();
    let inv = T::lit(1.0 / hw as f64);
    x.data()
        .chunks_exact(hw)
        .map(|plane| plane.iter().copied().sum::<T>() * inv)
        .collect()
}

pub fn gap_backward<T: Float>(input_shape: [usize; 4], dy: &[T]) -> Tensor<T> {
    let hw = input_shape[2] * input_shape[3];
    let inv = T::lit(1.0 / hw as f64);
    let mut dx = Tensor::zeros(input_shape);
    for (plane, g) in dx.data_mut().chunks_exact_mut(hw).zip(dy) {
        plane.fill(*g * inv);
    }
    dx
}

/// Inverted dropout: kept units are scaled by `1 / (1 - p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub p: f64,
}

impl Dropout {
    pub fn sample_mask<T: Float>(&self, len: usize, rng: &mut impl Rng) -> Vec<T> {
        if self.p <= 0.0 {
            return vec![T::one(); len];
        }
        let keep = T::lit(1.0 / (1.0 - self.p));
        (0..len)
            .map(|_| {
                if rng.random::<f64>() < self.p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect()
    }
}

/// Fully connected layer on `N × in` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub in_features: usize,
    pub out_features: usize,
    /// `out × in`, row-major.
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Float> Linear<T> {
    pub fn new(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        let weight = (0..in_features * out_features)
            .map(|_| T::lit(rng.random_range(-bound..bound)))
            .collect();
        Linear {
            in_features,
            out_features,
            weight: Param::new(weight),
            bias: Param::new(vec![T::zero(); out_features]),
        }
    }

    pub fn cast<U: Float>(&self) -> Linear<U> {
        Linear {
            in_features: self.in_features,
            out_features: self.out_features,
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }

    pub fn forward(&self, x: &[T], n: usize) -> Vec<T> {
        let (fi, fo) = (self.in_features, self.out_features);
        let mut y: Vec<T> = (0..n)
            .flat_map(|_| self.bias.value.iter().copied())
            .collect();
        T::gemm(
            n,
            fi,
            fo,
            T::one(),
            x,
            (fi as isize, 1),
            &self.weight.value,
            (1, fi as isize),
            T::one(),
            &mut y,
            (fo as isize, 1),
        );
        y
    }

    pub fn backward(&mut self, x: &[T], dy: &[T], n: usize) -> Vec<T> {
        let (fi, fo) = (self.in_features, self.out_features);
        // dW += dyᵀ · x
        T::gemm(
            fo,
            n,
            fi,
            T::one(),
            dy,
            (1, fo as isize),
            x,
            (fi as isize, 1),
            T::one(),
            &mut self.weight.grad,
            (fi as isize, 1),
        );
        for row in dy.chunks_exact(fo) {
            for (b, g) in self.bias.grad.iter_mut().zip(row) {
                *b += *g;
            }
        }
        let mut dx = vec![T::zero(); n * fi];
        T::gemm(
            n,
            fo,
            fi,
            T::one(),
            dy,
            (fo as isize, 1),
            &self.weight.value,
            (fi as isize, 1),
            T::zero(),
            &mut dx,
            (fi as isize, 1),
        );
        dx
    }
}

/// Row-wise softmax of an `n × k` matrix.
pub fn softmax_rows<T: Float>(logits: &[T], k: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|v| (*v - max).exp()).collect();
        let sum: T = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / sum));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop convolution used as an independent reference.
    fn naive_conv(conv: &Conv2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let [n, c, h, w] = x.shape();
        let (oh, ow) = conv.output_hw(h, w);
        let k = conv.kernel;
        let mut y = Tensor::zeros([n, conv.out_channels, oh, ow]);
        for i in 0..n {
            for o in 0..conv.out_channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy =
                                        (oy * conv.stride + ky) as isize - conv.padding as isize;
                                    let ix =
                                        (ox * conv.stride + kx) as isize - conv.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let xv = x.data()
                                        [((i * c + ci) * h + iy as usize) * w + ix as usize];
                                    let wv = conv.weight.value[((o * c + ci) * k + ky) * k + kx];
                                    acc += xv * wv;
                                }
                            }
                        }
                        y.data_mut()[((i * conv.out_channels + o) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        y
    }

    fn random_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let len = shape.iter().product();
        Tensor::from_vec(
            shape,
            (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (k, s, p) in [(3, 1, 1), (3, 2, 1), (1, 2, 0), (1, 1, 0)] {
            let conv = Conv2d::<f64>::new(3, 4, k, s, p, &mut rng);
            let x = random_tensor([2, 3, 8, 8], &mut rng);
            let y = conv.forward(&x);
            let want = naive_conv(&conv, &x);
            assert_eq!(y.shape(), want.shape());
            for (a, b) in y.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    /// Checks `backward` against central differences of `sum(dy ⊙ f(x))`.
    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = Conv2d::<f64>::new(2, 3, 3, 2, 1, &mut rng);
        let x = random_tensor([2, 2, 6, 6], &mut rng);
        let dy = random_tensor([2, 3, 3, 3], &mut rng);
        let dx = conv.backward(&x, &dy, true).unwrap();
        let objective = |c: &Conv2d<f64>, x: &Tensor<f64>| -> f64 {
            c.forward(x)
                .data()
                .iter()
                .zip(dy.data())
                .map(|(a, b)| a * b)
                .sum()
        };
        let h = 1e-6;
        for j in [0, 7, 30, 53] {
            let mut xp = x.clone();
            xp.data_mut()[j] += h;
            let mut xm = x.clone();
            xm.data_mut()[j] -= h;
            let fd = (objective(&conv, &xp) - objective(&conv, &xm)) / (2.0 * h);
            assert!((fd - dx.data()[j]).abs() < 1e-7, "dx[{j}]");
        }
        for j in [0, 11, 40] {
            let mut cp = conv.clone();
            cp.weight.value[j] += h;
            let mut cm = conv.clone();
            cm.weight.value[j] -= h;
            let fd = (objective(&cp, &x) - objective(&cm, &x)) / (2.0 * h);
            assert!((fd - conv.weight.grad[j]).abs() < 1e-7, "dw[{j}]");
        }
    }

    #[test]
    fn batchnorm_train_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut bn = BatchNorm2d::<f64>::new(2);
        let x = random_tensor([4, 2, 3, 3], &mut rng);
        let (y, _) = bn.forward_train(&x);
        for ch in 0..2 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|i| y.data()[(i * 2 + ch) * 9..][..9].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn batchnorm_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut bn = BatchNorm2d::<f64>::new(2);
        bn.gamma.value = vec![1.3, -0.7];
        bn.beta.value = vec![0.2, 0.1];
        let x = random_tensor([3, 2, 2, 2], &mut rng);
        let dy = random_tensor([3, 2, 2, 2], &mut rng);
        let (_, cache) = bn.forward_train(&x);
        let dx = bn.backward(&cache, &dy);
        let objective = |x: &Tensor<f64>| -> f64 {
            let mut b = bn.clone();
            let (y, _) = b.forward_train(x);
            y.data().iter().zip(dy.data()).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for j in 0..x.data().len() {
            let mut xp = x.clone();
            xp.data_mut()[j] += h;
            let mut xm = x.clone();
            xm.data_mut()[j] -= h;
            let fd = (objective(&xp) - objective(&xm)) / (2.0 * h);
            assert!(
                (fd - dx.data()[j]).abs() < 1e-6,
                "dx[{j}]: {fd} vs {}",
                dx.data()[j]
            );
        }
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let x = Tensor::from_vec([1, 1, 2, 4], vec![1.0, 5.0, 2.0, 2.0, 3.0, 4.0, 2.0, 0.0]);
        let (y, idx) = maxpool2_forward(&x);
        assert_eq!(y.data(), &[5.0, 2.0]);
        let dx = maxpool2_backward(
            x.shape(),
            &idx,
            &Tensor::from_vec([1, 1, 1, 2], vec![1.0, 1.0]),
        );
        // tie between 2.0s resolves to the first
        assert_eq!(dx.data(), &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax_rows(&[1000.0f64, -1000.0, 0.5, 0.5], 2);
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1] >= 0.0);
        assert_eq!(&p[2..], &[0.5, 0.5]);
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut lin = Linear::<f64>::new(3, 2, &mut rng);
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dy = vec![0.3, -1.2, 0.7, 0.4];
        let dx = lin.backward(&x, &dy, 2);
        let objective = |l: &Linear<f64>, x: &[f64]| -> f64 {
            l.forward(x, 2).iter().zip(&dy).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for j in 0..6 {
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let fd = (objective(&lin, &xp) - objective(&lin, &xm)) / (2.0 * h);
            assert!((fd - dx[j]).abs() < 1e-8);
        }
        for j in 0..6 {
            let mut lp = lin.clone();
            lp.weight.value[j] += h;
            let mut lm = lin.clone();
            lm.weight.value[j] -= h;
            let fd = (objective(&lp, &x) - objective(&lm, &x)) / (2.0 * h);
            assert!((fd - lin.weight.grad[j]).abs() < 1e-8);
        }
        assert!((lin.bias.grad[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dropout_zero_probability_keeps_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m: Vec<f32> = Dropout { p: 0.0 }.sample_mask(10, &mut rng);
        assert!(m.iter().all(|v| *v == 1.0));
        let m: Vec<f32> = Dropout { p: 0.5 }.sample_mask(1000, &mut rng);
        assert!(m.iter().all(|v| *v == 0.0 || *v == 2.0));
    }
}
