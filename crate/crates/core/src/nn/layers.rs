//! Layers with hand-written backward passes.
//!
//! Each trainable layer offers a pure `forward` (inference, `&self`) and a
//! caching `forward_train` / `backward` pair. Work is split per sample; any
//! quantity summed across the batch is reduced in sample order so that
//! parallel and sequential execution agree bit for bit.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::gemm::sgemm;
use super::param::{Buffer, Param, ParamKind};
use super::tensor::Tensor4;
use crate::exec::Execution;

/// Zero-padded square convolution (cross-correlation), optional bias.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Param,
    pub bias: Option<Param>,
    input: Option<Tensor4>,
}

struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col(x: &[f32], g: &Geometry, col: &mut [f32]) {
    let p = g.ho * g.wo;
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &mut col[((ci * g.k + ky) * g.k + kx) * p..][..p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let dst = &mut row[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f32], g: &Geometry, dx: &mut [f32]) {
    let p = g.ho * g.wo;
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &col[((ci * g.k + ky) * g.k + kx) * p..][..p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += row[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

impl Conv2d {
    /// "Same"-padded convolution with fan-in scaled normal initialisation.
    pub fn new(name: &str, cin: usize, cout: usize, k: usize, stride: usize, bias: bool, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = (cin * k * k) as f64;
        let std = (2.0 / fan_in).sqrt();
        let w: Vec<f32> = (0..cout * cin * k * k)
            .map(|_| (std * rng.sample::<f64, _>(StandardNormal)) as f32)
            .collect();
        Self {
            cin,
            cout,
            k,
            stride,
            pad: k / 2,
            weight: Param::new(format!("{name}.weight"), ParamKind::ConvKernel, w),
            bias: bias.then(|| Param::new(format!("{name}.bias"), ParamKind::Bias, vec![0.0; cout])),
            input: None,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn geometry(&self, h: usize, w: usize) -> Geometry {
        let (ho, wo) = self.out_hw(h, w);
        Geometry {
            cin: self.cin,
            h,
            w,
            k: self.k,
            stride: self.stride,
            pad: self.pad,
            ho,
            wo,
        }
    }

    pub fn forward(&self, x: &Tensor4, exec: Execution) -> Tensor4 {
        assert_eq!(x.c, self.cin, "{}: channel mismatch", self.weight.name);
        let g = self.geometry(x.h, x.w);
        let p = g.ho * g.wo;
        let kk = self.cin * self.k * self.k;
        let mut y = Tensor4::zeros(x.n, self.cout, g.ho, g.wo);
        let sample_out = self.cout * p;
        exec.for_each_chunk_mut(&mut y.data, sample_out, |i, out| {
            let xs = x.sample(i);
            if g.is_pointwise() {
                sgemm(self.cout, kk, p, &self.weight.value, (kk, 1), xs, (p, 1), 0.0, out);
            } else {
                let mut col = vec![0.0f32; kk * p];
                im2col(xs, &g, &mut col);
                sgemm(self.cout, kk, p, &self.weight.value, (kk, 1), &col, (p, 1), 0.0, out);
            }
            if let Some(b) = &self.bias {
                for (co, row) in out.chunks_mut(p).enumerate() {
                    let bv = b.value[co];
                    row.iter_mut().for_each(|v| *v += bv);
                }
            }
        });
        y
    }

    pub fn forward_train(&mut self, x: &Tensor4, exec: Execution) -> Tensor4 {
        let y = self.forward(x, exec);
        self.input = Some(x.clone());
        y
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, dy: &Tensor4, exec: Execution) -> Tensor4 {
        let x = self.input.take().expect("backward without forward_train");
        let g = self.geometry(x.h, x.w);
        let p = g.ho * g.wo;
        let kk = self.cin * self.k * self.k;
        assert_eq!(dy.shape(), [x.n, self.cout, g.ho, g.wo]);
        let weight = &self.weight.value;
        let cout = self.cout;
        let with_bias = self.bias.is_some();
        let parts = exec.map_range(x.n, |i| {
            let xs = x.sample(i);
            let dys = dy.sample(i);
            let owned;
            let col: &[f32] = if g.is_pointwise() {
                xs
            } else {
                let mut c = vec![0.0f32; kk * p];
                im2col(xs, &g, &mut c);
                owned = c;
                &owned
            };
            let mut dw = vec![0.0f32; cout * kk];
            sgemm(cout, p, kk, dys, (p, 1), col, (1, p), 0.0, &mut dw);
            let db: Vec<f32> = if with_bias {
                dys.chunks(p).map(|r| r.iter().map(|&v| v as f64).sum::<f64>() as f32).collect()
            } else {
                Vec::new()
            };
            let mut dx = vec![0.0f32; x.sample_len()];
            if g.is_pointwise() {
                sgemm(kk, cout, p, weight, (1, kk), dys, (p, 1), 0.0, &mut dx);
            } else {
                let mut dcol = vec![0.0f32; kk * p];
                sgemm(kk, cout, p, weight, (1, kk), dys, (p, 1), 0.0, &mut dcol);
                col2im(&dcol, &g, &mut dx);
            }
            (dw, db, dx)
        });
        let mut dx = Tensor4::zeros(x.n, x.c, x.h, x.w);
        for (i, (dw, db, dxi)) in parts.into_iter().enumerate() {
            self.weight.grad.iter_mut().zip(&dw).for_each(|(a, b)| *a += b);
            if let Some(b) = &mut self.bias {
                b.grad.iter_mut().zip(&db).for_each(|(a, v)| *a += v);
            }
            dx.sample_mut(i).copy_from_slice(&dxi);
        }
        dx
    }

    pub fn params(&self) -> Vec<&Param> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }

    pub fn clear_cache(&mut self) {
        self.input = None;
    }
}

pub const BN_MOMENTUM: f32 = 0.99;
pub const BN_EPS: f32 = 1e-3;

/// Per-channel batch normalisation with learnable scale and shift.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub c: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Buffer,
    pub running_var: Buffer,
    pub momentum: f32,
    pub eps: f32,
    cache: Option<(Tensor4, Vec<f32>)>,
}

/// Per-sample `(sum, sum of squares)` per channel, then reduced in sample order.
fn channel_moments(x: &Tensor4, exec: Execution) -> (Vec<f64>, Vec<f64>) {
    let hw = x.plane_len();
    let parts = exec.map_range(x.n, |i| {
        x.sample(i)
            .chunks(hw)
            .map(|pl| {
                let s: f64 = pl.iter().map(|&v| v as f64).sum();
                let q: f64 = pl.iter().map(|&v| (v as f64) * (v as f64)).sum();
                (s, q)
            })
            .collect::<Vec<_>>()
    });
    let mut sum = vec![0.0; x.c];
    let mut sq = vec![0.0; x.c];
    for part in parts {
        for (c, (s, q)) in part.into_iter().enumerate() {
            sum[c] += s;
            sq[c] += q;
        }
    }
    (sum, sq)
}

impl BatchNorm2d {
    pub fn new(name: &str, c: usize) -> Self {
        Self {
            c,
            gamma: Param::new(format!("{name}.gamma"), ParamKind::NormScale, vec![1.0; c]),
            beta: Param::new(format!("{name}.beta"), ParamKind::NormShift, vec![0.0; c]),
            running_mean: Buffer {
                name: format!("{name}.running_mean"),
                value: vec![0.0; c],
            },
            running_var: Buffer {
                name: format!("{name}.running_var"),
                value: vec![1.0; c],
            },
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
            cache: None,
        }
    }

    fn apply(&self, x: &Tensor4, mean: &[f32], inv_std: &[f32], exec: Execution) -> Tensor4 {
        let hw = x.plane_len();
        let mut y = x.clone();
        exec.for_each_chunk_mut(&mut y.data, x.sample_len(), |_, s| {
            for (c, pl) in s.chunks_mut(hw).enumerate() {
                let (m, is, g, b) = (mean[c], inv_std[c], self.gamma.value[c], self.beta.value[c]);
                pl.iter_mut().for_each(|v| *v = g * ((*v - m) * is) + b);
            }
        });
        y
    }

    /// Inference: running statistics.
    pub fn forward(&self, x: &Tensor4, exec: Execution) -> Tensor4 {
        let inv: Vec<f32> = self
            .running_var
            .value
            .iter()
            .map(|&v| 1.0 / (v + self.eps).sqrt())
            .collect();
        self.apply(x, &self.running_mean.value, &inv, exec)
    }

    /// Training: batch statistics; updates the running averages.
    pub fn forward_train(&mut self, x: &Tensor4, exec: Execution) -> Tensor4 {
        let m = (x.n * x.plane_len()) as f64;
        let (sum, sq) = channel_moments(x, exec);
        let mut mean = vec![0.0f32; x.c];
        let mut inv = vec![0.0f32; x.c];
        for c in 0..x.c {
            let mu = sum[c] / m;
            let var = (sq[c] / m - mu * mu).max(0.0);
            mean[c] = mu as f32;
            inv[c] = (1.0 / (var + self.eps as f64).sqrt()) as f32;
            let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
            let mo = self.momentum;
            self.running_mean.value[c] = mo * self.running_mean.value[c] + (1.0 - mo) * mu as f32;
            self.running_var.value[c] = mo * self.running_var.value[c] + (1.0 - mo) * unbiased as f32;
        }
        // normalised activations (gamma = 1, beta = 0) for the backward pass
        let hw = x.plane_len();
        let mut xhat = x.clone();
        exec.for_each_chunk_mut(&mut xhat.data, x.sample_len(), |_, s| {
            for (c, pl) in s.chunks_mut(hw).enumerate() {
                pl.iter_mut().for_each(|v| *v = (*v - mean[c]) * inv[c]);
            }
        });
        let mut y = xhat.clone();
        exec.for_each_chunk_mut(&mut y.data, x.sample_len(), |_, s| {
            for (c, pl) in s.chunks_mut(hw).enumerate() {
                let (g, b) = (self.gamma.value[c], self.beta.value[c]);
                pl.iter_mut().for_each(|v| *v = g * *v + b);
            }
        });
        self.cache = Some((xhat, inv));
        y
    }

    pub fn backward(&mut self, dy: &Tensor4, exec: Execution) -> Tensor4 {
        let (xhat, inv) = self.cache.take().expect("backward without forward_train");
        let hw = dy.plane_len();
        let m = (dy.n * hw) as f64;
        let parts = exec.map_range(dy.n, |i| {
            dy.sample(i)
                .chunks(hw)
                .zip(xhat.sample(i).chunks(hw))
                .map(|(d, xh)| {
                    let s: f64 = d.iter().map(|&v| v as f64).sum();
                    let sx: f64 = d.iter().zip(xh).map(|(&a, &b)| a as f64 * b as f64).sum();
                    (s, sx)
                })
                .collect::<Vec<_>>()
        });
        let mut sum_dy = vec![0.0f64; dy.c];
        let mut sum_dyx = vec![0.0f64; dy.c];
        for part in parts {
            for (c, (s, sx)) in part.into_iter().enumerate() {
                sum_dy[c] += s;
                sum_dyx[c] += sx;
            }
        }
        for c in 0..dy.c {
            self.gamma.grad[c] += sum_dyx[c] as f32;
            self.beta.grad[c] += sum_dy[c] as f32;
        }
        let mean_dy: Vec<f32> = sum_dy.iter().map(|s| (s / m) as f32).collect();
        let mean_dyx: Vec<f32> = sum_dyx.iter().map(|s| (s / m) as f32).collect();
        let mut dx = dy.clone();
        let gamma = &self.gamma.value;
        exec.for_each_chunk_mut(&mut dx.data, dy.sample_len(), |i, s| {
            let xs = xhat.sample(i);
            for (c, pl) in s.chunks_mut(hw).enumerate() {
                let scale = gamma[c] * inv[c];
                let xh = &xs[c * hw..(c + 1) * hw];
                for (v, &xv) in pl.iter_mut().zip(xh) {
                    *v = scale * (*v - mean_dy[c] - xv * mean_dyx[c]);
                }
            }
        });
        dx
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }

    pub fn buffers(&self) -> Vec<&Buffer> {
        vec![&self.running_mean, &self.running_var]
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Buffer> {
        vec![&mut self.running_mean, &mut self.running_var]
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

pub fn relu_inplace(x: &mut Tensor4) {
    // NaN passes through so divergence stays visible
    x.data.iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0
        }
    });
}

/// Masks `dy` by the positive support of the ReLU output `y`.
pub fn relu_backward(dy: &mut Tensor4, y: &Tensor4) {
    dy.data.iter_mut().zip(&y.data).for_each(|(d, &v)| {
        if v <= 0.0 {
            *d = 0.0
        }
    });
}

/// Half-pixel interpolation taps for doubling a length-`n` axis: for output
/// index `o`, `(near, far, 0.75, 0.25)` with edge clamping.
#[inline]
fn taps(o: usize, n: usize) -> (usize, usize) {
    let i = o / 2;
    let far = if o % 2 == 0 { i.saturating_sub(1) } else { (i + 1).min(n - 1) };
    (i, far)
}

/// 2x bilinear upsampling (half-pixel centres, edge clamp).
pub fn upsample2x(x: &Tensor4, exec: Execution) -> Tensor4 {
    let (h, w) = (x.h, x.w);
    let (h2, w2) = (2 * h, 2 * w);
    let mut y = Tensor4::zeros(x.n, x.c, h2, w2);
    exec.for_each_chunk_mut(&mut y.data, x.c * h2 * w2, |i, out| {
        let xs = x.sample(i);
        let mut tmp = vec![0.0f32; h2 * w];
        for c in 0..x.c {
            let src = &xs[c * h * w..(c + 1) * h * w];
            for oy in 0..h2 {
                let (a, b) = taps(oy, h);
                for xx in 0..w {
                    tmp[oy * w + xx] = 0.75 * src[a * w + xx] + 0.25 * src[b * w + xx];
                }
            }
            let dst = &mut out[c * h2 * w2..(c + 1) * h2 * w2];
            for oy in 0..h2 {
                for ox in 0..w2 {
                    let (a, b) = taps(ox, w);
                    dst[oy * w2 + ox] = 0.75 * tmp[oy * w + a] + 0.25 * tmp[oy * w + b];
                }
            }
        }
    });
    y
}

/// Adjoint of [`upsample2x`].
pub fn upsample2x_backward(dy: &Tensor4, exec: Execution) -> Tensor4 {
    let (h2, w2) = (dy.h, dy.w);
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor4::zeros(dy.n, dy.c, h, w);
    exec.for_each_chunk_mut(&mut dx.data, dy.c * h * w, |i, out| {
        let ds = dy.sample(i);
        let mut tmp = vec![0.0f32; h2 * w];
        for c in 0..dy.c {
            tmp.fill(0.0);
            let src = &ds[c * h2 * w2..(c + 1) * h2 * w2];
            for oy in 0..h2 {
                for ox in 0..w2 {
                    let (a, b) = taps(ox, w);
                    let g = src[oy * w2 + ox];
                    tmp[oy * w + a] += 0.75 * g;
                    tmp[oy * w + b] += 0.25 * g;
                }
            }
            let dst = &mut out[c * h * w..(c + 1) * h * w];
            for oy in 0..h2 {
                let (a, b) = taps(oy, h);
                for xx in 0..w {
                    let g = tmp[oy * w + xx];
                    dst[a * w + xx] += 0.75 * g;
                    dst[b * w + xx] += 0.25 * g;
                }
            }
        }
    });
    dx
}

/// Channel concatenation `[a, b]`.
pub fn concat_channels(a: &Tensor4, b: &Tensor4) -> Tensor4 {
    assert_eq!((a.n, a.h, a.w), (b.n, b.h, b.w), "concat spatial mismatch");
    let mut out = Vec::with_capacity(a.data.len() + b.data.len());
    for i in 0..a.n {
        out.extend_from_slice(a.sample(i));
        out.extend_from_slice(b.sample(i));
    }
    Tensor4 {
        n: a.n,
        c: a.c + b.c,
        h: a.h,
        w: a.w,
        data: out,
    }
}

/// Inverse of [`concat_channels`] for gradients.
pub fn split_channels(x: &Tensor4, ca: usize) -> (Tensor4, Tensor4) {
    let cb = x.c - ca;
    let hw = x.plane_len();
    let mut a = Tensor4::zeros(x.n, ca, x.h, x.w);
    let mut b = Tensor4::zeros(x.n, cb, x.h, x.w);
    for i in 0..x.n {
        let s = x.sample(i);
        a.sample_mut(i).copy_from_slice(&s[..ca * hw]);
        b.sample_mut(i).copy_from_slice(&s[ca * hw..]);
    }
    (a, b)
}

/// Softmax over the channel axis at every pixel.
pub fn softmax_channels(x: &Tensor4, exec: Execution) -> Tensor4 {
    let hw = x.plane_len();
    let c = x.c;
    let mut y = x.clone();
    exec.for_each_chunk_mut(&mut y.data, x.sample_len(), |_, s| {
        for p in 0..hw {
            let mut mx = f32::NEG_INFINITY;
            for ch in 0..c {
                mx = mx.max(s[ch * hw + p]);
            }
            let mut z = 0.0f32;
            for ch in 0..c {
                let e = (s[ch * hw + p] - mx).exp();
                s[ch * hw + p] = e;
                z += e;
            }
            for ch in 0..c {
                s[ch * hw + p] /= z;
            }
        }
    });
    y
}

/// Gradient through softmax given its output `p` and upstream `dp`.
pub fn softmax_backward(p: &Tensor4, dp: &Tensor4) -> Tensor4 {
    let hw = p.plane_len();
    let c = p.c;
    let mut dz = dp.clone();
    for i in 0..p.n {
        let ps = p.sample(i);
        let ds = dz.sample_mut(i);
        for px in 0..hw {
            let dot: f32 = (0..c).map(|ch| ps[ch * hw + px] * ds[ch * hw + px]).sum();
            for ch in 0..c {
                ds[ch * hw + px] = ps[ch * hw + px] * (ds[ch * hw + px] - dot);
            }
        }
    }
    dz
}

/// Two 3x3 convolutions, each followed by batch normalisation, with an additive
/// shortcut before the final ReLU. When the block changes width the shortcut is
/// taken from the first convolution's activation instead of the block input.
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub cin: usize,
    pub cout: usize,
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
    cache: Option<(Tensor4, Tensor4)>,
}

impl ResBlock {
    pub fn new(name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            cin,
            cout,
            conv1: Conv2d::new(&format!("{name}.conv1"), cin, cout, 3, 1, false, rng),
            bn1: BatchNorm2d::new(&format!("{name}.bn1"), cout),
            conv2: Conv2d::new(&format!("{name}.conv2"), cout, cout, 3, 1, false, rng),
            bn2: BatchNorm2d::new(&format!("{name}.bn2"), cout),
            cache: None,
        }
    }

    fn identity_shortcut(&self) -> bool {
        self.cin == self.cout
    }

    pub fn forward(&self, x: &Tensor4, exec: Execution) -> Tensor4 {
        let mut a = self.bn1.forward(&self.conv1.forward(x, exec), exec);
        relu_inplace(&mut a);
        let mut out = self.bn2.forward(&self.conv2.forward(&a, exec), exec);
        out.add_assign(if self.identity_shortcut() { x } else { &a });
        relu_inplace(&mut out);
        out
    }

    pub fn forward_train(&mut self, x: &Tensor4, exec: Execution) -> Tensor4 {
        let z1 = self.conv1.forward_train(x, exec);
        let mut a = self.bn1.forward_train(&z1, exec);
        relu_inplace(&mut a);
        let z2 = self.conv2.forward_train(&a, exec);
        let mut out = self.bn2.forward_train(&z2, exec);
        out.add_assign(if self.identity_shortcut() { x } else { &a });
        relu_inplace(&mut out);
        self.cache = Some((a, out.clone()));
        out
    }

    pub fn backward(&mut self, dout: &Tensor4, exec: Execution) -> Tensor4 {
        let (a, out) = self.cache.take().expect("backward without forward_train");
        let mut ds = dout.clone();
        relu_backward(&mut ds, &out);
        let dz2 = self.bn2.backward(&ds, exec);
        let mut da = self.conv2.backward(&dz2, exec);
        if !self.identity_shortcut() {
            da.add_assign(&ds);
        }
        relu_backward(&mut da, &a);
        let dz1 = self.bn1.backward(&da, exec);
        let mut dx = self.conv1.backward(&dz1, exec);
        if self.identity_shortcut() {
            dx.add_assign(&ds);
        }
        dx
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = self.conv1.params();
        v.extend(self.bn1.params());
        v.extend(self.conv2.params());
        v.extend(self.bn2.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.conv1.params_mut();
        v.extend(self.bn1.params_mut());
        v.extend(self.conv2.params_mut());
        v.extend(self.bn2.params_mut());
        v
    }

    pub fn buffers(&self) -> Vec<&Buffer> {
        let mut v = self.bn1.buffers();
        v.extend(self.bn2.buffers());
        v
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Buffer> {
        let mut v = self.bn1.buffers_mut();
        v.extend(self.bn2.buffers_mut());
        v
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
        self.conv1.clear_cache();
        self.conv2.clear_cache();
        self.bn1.clear_cache();
        self.bn2.clear_cache();
    }
}
