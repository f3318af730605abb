use serde::{Deserialize, Serialize};

use super::layers::{concat_channels, softmax_backward, softmax_channels, split_channels, upsample2x, upsample2x_backward, Conv2d, ResBlock};
use super::param::{Buffer, Param};
use super::tensor::Tensor4;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpsampleMode {
    #[default]
    Bilinear,
}

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// Number of downsampling stages.
    pub depth: usize,
    /// Width of the first level; doubles at every downsampling.
    pub base_filters: usize,
    pub in_channels: usize,
    pub n_classes: usize,
    pub upsample: UpsampleMode,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            base_filters: 32,
            in_channels: 4,
            n_classes: 4,
            upsample: UpsampleMode::Bilinear,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::Config("depth must be at least 1".into()));
        }
        if self.depth > 12 {
            return Err(Error::Config(format!("depth {} is unreasonably large", self.depth)));
        }
        if self.base_filters < 1 || self.in_channels < 1 || self.n_classes < 2 {
            return Err(Error::Config(
                "base_filters and in_channels must be positive, n_classes at least 2".into(),
            ));
        }
        Ok(())
    }

    /// Channel width of level `l` (0 = full resolution).
    pub fn width(&self, level: usize) -> usize {
        self.base_filters << level
    }

    /// Spatial sizes must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << self.depth
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.width(self.depth)
    }
}

/// 2D fully convolutional residual U-Net.
///
/// Graph: a 3x3 stem to `base_filters`, then per level a residual block and a
/// stride-2 3x3 convolution that doubles the width, down to the bottleneck
/// block. The decoder halves the width with a 1x1 convolution, upsamples 2x
/// bilinearly, concatenates the encoder activation of the same level and runs a
/// residual block that maps back to the level width. A 1x1 convolution and a
/// channel softmax produce class probabilities.
///
/// The 1x1 width reduction is applied before upsampling; both maps are linear
/// and act on different axes, so the order does not change the result.
#[derive(Debug, Clone)]
pub struct ResUNet {
    cfg: NetworkConfig,
    stem: Conv2d,
    enc: Vec<ResBlock>,
    down: Vec<Conv2d>,
    up: Vec<Conv2d>,
    dec: Vec<ResBlock>,
    head: Conv2d,
    exec: Execution,
    probs: Option<Tensor4>,
}

/// Builds a freshly initialised network.
pub fn build_network(cfg: &NetworkConfig, seed: u64) -> Result<ResUNet> {
    ResUNet::new(cfg, seed)
}

impl ResUNet {
    pub fn new(cfg: &NetworkConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng::stream(seed, &[0x4e45_5457]);
        let f = |l| cfg.width(l);
        let stem = Conv2d::new("stem", cfg.in_channels, f(0), 3, 1, true, &mut rng);
        let mut enc = Vec::new();
        let mut down = Vec::new();
        for l in 0..=cfg.depth {
            enc.push(ResBlock::new(&format!("enc{l}"), f(l), f(l), &mut rng));
            if l < cfg.depth {
                down.push(Conv2d::new(&format!("down{l}"), f(l), f(l + 1), 3, 2, true, &mut rng));
            }
        }
        let mut up = Vec::new();
        let mut dec = Vec::new();
        for l in 0..cfg.depth {
            up.push(Conv2d::new(&format!("up{l}"), f(l + 1), f(l), 1, 1, true, &mut rng));
            dec.push(ResBlock::new(&format!("dec{l}"), 2 * f(l), f(l), &mut rng));
        }
        let head = Conv2d::new("head", f(0), cfg.n_classes, 1, 1, true, &mut rng);
        Ok(Self {
            cfg: cfg.clone(),
            stem,
            enc,
            down,
            up,
            dec,
            head,
            exec: Execution::from_env(),
            probs: None,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn execution(&self) -> Execution {
        self.exec
    }

    pub fn set_execution(&mut self, exec: Execution) {
        self.exec = exec;
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        let m = self.cfg.divisor();
        if x.c != self.cfg.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "expected {} input channels, got {}",
                self.cfg.in_channels, x.c
            )));
        }
        if x.n == 0 || x.h == 0 || x.w == 0 || x.h % m != 0 || x.w % m != 0 {
            return Err(Error::ShapeMismatch(format!(
                "spatial size {}x{} must be a positive multiple of {m}",
                x.h, x.w
            )));
        }
        Ok(())
    }

    /// Inference forward pass: per-pixel class probabilities, `N x n_classes x H x W`.
    pub fn forward(&self, x: &Tensor4) -> Result<Tensor4> {
        Ok(self.forward_with_shapes(x)?.0)
    }

    /// Inference forward that also reports the `[N, C, H, W]` shape of every
    /// encoder level's output; the last entry is the bottleneck.
    pub fn forward_with_shapes(&self, x: &Tensor4) -> Result<(Tensor4, Vec<[usize; 4]>)> {
        self.check_input(x)?;
        let e = self.exec;
        let mut h = self.stem.forward(x, e);
        let mut skips = Vec::with_capacity(self.cfg.depth);
        let mut shapes = Vec::with_capacity(self.cfg.depth + 1);
        for l in 0..self.cfg.depth {
            let s = self.enc[l].forward(&h, e);
            shapes.push(s.shape());
            h = self.down[l].forward(&s, e);
            skips.push(s);
        }
        h = self.enc[self.cfg.depth].forward(&h, e);
        shapes.push(h.shape());
        for l in (0..self.cfg.depth).rev() {
            let u = upsample2x(&self.up[l].forward(&h, e), e);
            h = self.dec[l].forward(&concat_channels(&u, &skips[l]), e);
        }
        let logits = self.head.forward(&h, e);
        Ok((softmax_channels(&logits, e), shapes))
    }

    /// Training forward pass (batch statistics); caches what `backward` needs.
    pub fn forward_train(&mut self, x: &Tensor4) -> Result<Tensor4> {
        self.check_input(x)?;
        let e = self.exec;
        let depth = self.cfg.depth;
        let mut h = self.stem.forward_train(x, e);
        let mut skips = Vec::with_capacity(depth);
        for l in 0..depth {
            let s = self.enc[l].forward_train(&h, e);
            h = self.down[l].forward_train(&s, e);
            skips.push(s);
        }
        h = self.enc[depth].forward_train(&h, e);
        for l in (0..depth).rev() {
            let u = upsample2x(&self.up[l].forward_train(&h, e), e);
            h = self.dec[l].forward_train(&concat_channels(&u, &skips[l]), e);
        }
        let logits = self.head.forward_train(&h, e);
        let p = softmax_channels(&logits, e);
        self.probs = Some(p.clone());
        Ok(p)
    }

    /// Back-propagates `dprobs` (gradient w.r.t. the softmax output), accumulating
    /// parameter gradients; returns the gradient w.r.t. the input.
    pub fn backward(&mut self, dprobs: &Tensor4) -> Tensor4 {
        let e = self.exec;
        let depth = self.cfg.depth;
        let p = self.probs.take().expect("backward without forward_train");
        let dlogits = softmax_backward(&p, dprobs);
        let mut dh = self.head.backward(&dlogits, e);
        let mut dskips: Vec<Option<Tensor4>> = vec![None; depth];
        for l in 0..depth {
            let dc = self.dec[l].backward(&dh, e);
            let (du, dskip) = split_channels(&dc, self.cfg.width(l));
            dskips[l] = Some(dskip);
            dh = self.up[l].backward(&upsample2x_backward(&du, e), e);
        }
        dh = self.enc[depth].backward(&dh, e);
        for l in (0..depth).rev() {
            let mut ds = self.down[l].backward(&dh, e);
            ds.add_assign(dskips[l].as_ref().expect("set above"));
            dh = self.enc[l].backward(&ds, e);
        }
        self.stem.backward(&dh, e)
    }

    /// Drops any activations cached by an unfinished training step.
    pub fn clear_cache(&mut self) {
        self.probs = None;
        self.stem.clear_cache();
        self.head.clear_cache();
        self.enc.iter_mut().chain(self.dec.iter_mut()).for_each(|b| b.clear_cache());
        self.down.iter_mut().chain(self.up.iter_mut()).for_each(|c| c.clear_cache());
    }

    /// Trainable tensors in a fixed order (stable across runs and checkpoints).
    pub fn params(&self) -> Vec<&Param> {
        let mut v = self.stem.params();
        for l in 0..=self.cfg.depth {
            v.extend(self.enc[l].params());
            if l < self.cfg.depth {
                v.extend(self.down[l].params());
            }
        }
        for l in 0..self.cfg.depth {
            v.extend(self.up[l].params());
            v.extend(self.dec[l].params());
        }
        v.extend(self.head.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let depth = self.cfg.depth;
        let mut v = self.stem.params_mut();
        let mut enc = self.enc.iter_mut();
        let mut down = self.down.iter_mut();
        for l in 0..=depth {
            v.extend(enc.next().expect("depth+1 blocks").params_mut());
            if l < depth {
                v.extend(down.next().expect("depth convs").params_mut());
            }
        }
        for (u, d) in self.up.iter_mut().zip(self.dec.iter_mut()) {
            v.extend(u.params_mut());
            v.extend(d.params_mut());
        }
        v.extend(self.head.params_mut());
        v
    }

    pub fn buffers(&self) -> Vec<&Buffer> {
        let mut v = Vec::new();
        for b in &self.enc {
            v.extend(b.buffers());
        }
        for b in &self.dec {
            v.extend(b.buffers());
        }
        v
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Buffer> {
        let mut v = Vec::new();
        for b in self.enc.iter_mut().chain(self.dec.iter_mut()) {
            v.extend(b.buffers_mut());
        }
        v
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.zero_grad());
    }

    /// Total number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_input(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor4 {
        let mut r = rng::stream(seed, &[]);
        Tensor4::from_vec(n, c, h, w, (0..n * c * h * w).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn small_cfg(depth: usize, base: usize) -> NetworkConfig {
        NetworkConfig {
            depth,
            base_filters: base,
            ..NetworkConfig::default()
        }
    }

    #[test]
    fn depth_zero_is_rejected() {
        assert!(matches!(build_network(&small_cfg(0, 8), 0), Err(Error::Config(_))));
        assert!(matches!(build_network(&small_cfg(2, 0), 0), Err(Error::Config(_))));
    }

    #[test]
    fn shapes_for_square_and_rectangular_inputs() {
        let net = build_network(&small_cfg(3, 4), 1).unwrap();
        for (h, w) in [(32, 32), (64, 64), (16, 40)] {
            let x = random_input(2, 4, h, w, 2);
            let (p, shapes) = net.forward_with_shapes(&x).unwrap();
            assert_eq!(p.shape(), [2, 4, h, w]);
            assert_eq!(*shapes.last().unwrap(), [2, 32, h / 8, w / 8]);
            let hw = h * w;
            for i in 0..2 {
                for px in 0..hw {
                    let s: f32 = (0..4).map(|c| p.sample(i)[c * hw + px]).sum();
                    assert!((s - 1.0).abs() < 1e-5);
                }
            }
        }
        let bad = random_input(1, 4, 20, 24, 0);
        assert!(matches!(net.forward(&bad), Err(Error::ShapeMismatch(_))));
        let wrong_c = random_input(1, 3, 16, 16, 0);
        assert!(net.forward(&wrong_c).is_err());
    }

    #[test]
    fn toy_parameter_count_by_hand() {
        // stem 4*1*9+1=37; enc0 9+2+9+2=22; down0 1*2*9+2=20; enc1 36+4+36+4=80;
        // up0 2*1+1=3; dec0 2*1*9+2+9+2=31; head 1*4+4=8
        let net = build_network(&small_cfg(1, 1), 0).unwrap();
        assert_eq!(net.parameter_count(), 37 + 22 + 20 + 80 + 3 + 31 + 8);
    }

    #[test]
    fn inference_is_deterministic_and_mode_independent() {
        let mut net = build_network(&small_cfg(2, 4), 5).unwrap();
        let x = random_input(3, 4, 16, 16, 6);
        net.set_execution(Execution::Sequential);
        let a = net.forward(&x).unwrap();
        net.set_execution(Execution::Parallel);
        let b = net.forward(&x).unwrap();
        assert_eq!(a, b);
    }

    /// Scalar objective: sum of probabilities weighted by a fixed random tensor.
    fn objective(p: &Tensor4, r: &Tensor4) -> f64 {
        p.data.iter().zip(&r.data).map(|(&a, &b)| a as f64 * b as f64).sum()
    }

    #[test]
    fn every_parameter_receives_a_finite_nonzero_gradient() {
        let mut net = build_network(&small_cfg(2, 4), 9).unwrap();
        let x = random_input(2, 4, 16, 16, 10);
        let p = net.forward_train(&x).unwrap();
        let r = random_input(2, 4, 16, 16, 11);
        assert!(p.all_finite());
        net.backward(&r);
        for prm in net.params() {
            assert!(prm.grad.iter().all(|g| g.is_finite()), "{}", prm.name);
            assert!(prm.grad.iter().any(|&g| g != 0.0), "{} has zero gradient", prm.name);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let cfg = small_cfg(1, 2);
        let mut net = build_network(&cfg, 21).unwrap();
        net.set_execution(Execution::Sequential);
        let x = random_input(2, 4, 8, 8, 22);
        let r = random_input(2, 4, 8, 8, 23);
        net.zero_grad();
        net.forward_train(&x).unwrap();
        let dx = net.backward(&r);
        let analytic: Vec<(String, usize, f32)> = net
            .params()
            .iter()
            .flat_map(|p| [0usize, p.len() - 1].map(|j| (p.name.clone(), j, p.grad[j])))
            .collect();

        let eval = |net: &mut ResUNet| {
            let p = net.forward_train(&x).unwrap();
            net.clear_cache();
            objective(&p, &r)
        };
        // A ReLU kink close to the evaluation point can spoil one step size,
        // so agreement at any of a few step sizes is accepted.
        let steps = [1e-2f32, 3e-3, 1e-3, 3e-4];
        for (name, j, g) in analytic {
            let best = steps
                .iter()
                .map(|&h| {
                    let mut plus = net.clone();
                    plus.params_mut().into_iter().find(|p| p.name == name).unwrap().value[j] += h;
                    let mut minus = net.clone();
                    minus.params_mut().into_iter().find(|p| p.name == name).unwrap().value[j] -= h;
                    let fd = (eval(&mut plus) - eval(&mut minus)) / (2.0 * h as f64);
                    ((fd - g as f64).abs() - 2e-2 * fd.abs().max(g.abs() as f64), fd)
                })
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .unwrap();
            assert!(best.0 <= 3e-3, "{name}[{j}]: fd {} analytic {g}", best.1);
        }
        let h = 1e-2f32;
        // input gradient at a couple of positions
        for idx in [0usize, 200] {
            let mut xp = x.clone();
            xp.data[idx] += h;
            let mut xm = x.clone();
            xm.data[idx] -= h;
            let mut n1 = net.clone();
            let fp = objective(&n1.forward_train(&xp).unwrap(), &r);
            let mut n2 = net.clone();
            let fm = objective(&n2.forward_train(&xm).unwrap(), &r);
            let fd = (fp - fm) / (2.0 * h as f64);
            assert!((fd - dx.data[idx] as f64).abs() <= 2e-2 * fd.abs() + 2e-3, "dx[{idx}]: {fd} vs {}", dx.data[idx]);
        }
    }
}
