//! Class-weighted Dice loss.
//!
//! With one-hot targets `g`, probabilities `p`, and class weights
//! `w_c = 1 / (sum_i g_ci + EPS_WEIGHT)`:
//!
//! ```text
//! loss = 1 - (2 * sum_c w_c * sum_i g_ci * p_ci + EPS)
//!            / (sum_c w_c * (sum_i g_ci^2 + sum_i p_ci^2) + EPS)
//! ```
//!
//! All pixels of the batch form a single index set `i`; classes absent from the
//! batch get a very large weight and therefore a strong push towards zero
//! probability.

use crate::error::{Error, Result};
use crate::nn::{IndexBatch, Tensor4};

/// Smoothing added to numerator and denominator.
pub const EPS: f64 = 1e-5;
/// Smoothing inside the class weights.
pub const EPS_WEIGHT: f64 = 1e-6;

/// One-hot encoding of a class-index batch as an `N x L x H x W` tensor.
pub fn one_hot(mask: &IndexBatch, classes: usize) -> Result<Tensor4> {
    let hw = mask.h * mask.w;
    let mut t = Tensor4::zeros(mask.n, classes, mask.h, mask.w);
    for i in 0..mask.n {
        let src = &mask.data[i * hw..(i + 1) * hw];
        let dst = t.sample_mut(i);
        for (p, &c) in src.iter().enumerate() {
            if c as usize >= classes {
                return Err(Error::IndexOutOfRange { index: c, classes });
            }
            dst[c as usize * hw + p] = 1.0;
        }
    }
    Ok(t)
}

/// Per-pixel argmax over classes; ties go to the lowest index.
pub fn argmax(t: &Tensor4) -> IndexBatch {
    let hw = t.plane_len();
    let mut data = Vec::with_capacity(t.n * hw);
    for i in 0..t.n {
        let s = t.sample(i);
        for p in 0..hw {
            let mut best = 0;
            for c in 1..t.c {
                if s[c * hw + p] > s[best * hw + p] {
                    best = c;
                }
            }
            data.push(best as u8);
        }
    }
    IndexBatch {
        n: t.n,
        h: t.h,
        w: t.w,
        data,
    }
}

/// Loss value and gradient for flat `N x L x P` buffers (sample-major, then class, then pixel).
#[derive(Debug, Clone, Copy)]
pub struct DiceLayout {
    pub samples: usize,
    pub classes: usize,
    pub pixels: usize,
}

impl DiceLayout {
    fn of(t: &Tensor4) -> Self {
        Self {
            samples: t.n,
            classes: t.c,
            pixels: t.plane_len(),
        }
    }

    #[inline]
    fn at(&self, n: usize, c: usize, p: usize) -> usize {
        (n * self.classes + c) * self.pixels + p
    }
}

/// Per-class sums `(sum g, sum g*p, sum p^2)` accumulated in `f64`.
fn class_sums(probs: &[f64], target: &[f64], lay: DiceLayout) -> Vec<(f64, f64, f64)> {
    let mut sums = vec![(0.0, 0.0, 0.0); lay.classes];
    for n in 0..lay.samples {
        for (c, s) in sums.iter_mut().enumerate() {
            let base = lay.at(n, c, 0);
            for p in 0..lay.pixels {
                let (g, q) = (target[base + p], probs[base + p]);
                s.0 += g;
                s.1 += g * q;
                s.2 += q * q;
            }
        }
    }
    sums
}

/// Loss on `f64` buffers; `target` is one-hot so `g^2 == g`, but the squared
/// form is kept for fidelity with soft targets.
pub fn dice_loss_f64(probs: &[f64], target: &[f64], lay: DiceLayout) -> (f64, Vec<f64>) {
    let sums = class_sums(probs, target, lay);
    let mut g2 = vec![0.0; lay.classes];
    for n in 0..lay.samples {
        for (c, acc) in g2.iter_mut().enumerate() {
            let base = lay.at(n, c, 0);
            *acc += target[base..base + lay.pixels].iter().map(|g| g * g).sum::<f64>();
        }
    }
    let weights: Vec<f64> = sums.iter().map(|s| 1.0 / (s.0 + EPS_WEIGHT)).collect();
    let num = 2.0 * sums.iter().zip(&weights).map(|(s, w)| w * s.1).sum::<f64>() + EPS;
    let den = sums
        .iter()
        .zip(&weights)
        .zip(&g2)
        .map(|((s, w), gg)| w * (gg + s.2))
        .sum::<f64>()
        + EPS;
    let loss = 1.0 - num / den;
    let mut grad = vec![0.0; probs.len()];
    for n in 0..lay.samples {
        for (c, w) in weights.iter().enumerate() {
            let base = lay.at(n, c, 0);
            for p in 0..lay.pixels {
                let i = base + p;
                // d/dp [num/den] = (2 w g den - num 2 w p) / den^2
                grad[i] = -(2.0 * w * (target[i] * den - num * probs[i])) / (den * den);
            }
        }
    }
    (loss, grad)
}

fn check_shapes(probs: &Tensor4, target: &Tensor4) -> Result<()> {
    if probs.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "probabilities {:?} vs target {:?}",
            probs.shape(),
            target.shape()
        )));
    }
    Ok(())
}

/// Weighted Dice loss of a probability batch against a one-hot target.
pub fn weighted_dice_loss(probs: &Tensor4, target: &Tensor4) -> Result<f64> {
    Ok(weighted_dice_loss_with_grad(probs, target)?.0)
}

/// Loss and its gradient with respect to `probs`.
pub fn weighted_dice_loss_with_grad(probs: &Tensor4, target: &Tensor4) -> Result<(f64, Tensor4)> {
    check_shapes(probs, target)?;
    let p: Vec<f64> = probs.data.iter().map(|&v| v as f64).collect();
    let g: Vec<f64> = target.data.iter().map(|&v| v as f64).collect();
    let (loss, grad) = dice_loss_f64(&p, &g, DiceLayout::of(probs));
    let grad = Tensor4::from_vec(probs.n, probs.c, probs.h, probs.w, grad.into_iter().map(|v| v as f32).collect())?;
    Ok((loss, grad))
}

/// The class weights the loss would use for `target`.
pub fn class_weights(target: &Tensor4) -> Vec<f64> {
    let hw = target.plane_len();
    let mut s = vec![0.0f64; target.c];
    for n in 0..target.n {
        for (c, acc) in s.iter_mut().enumerate() {
            *acc += target.sample(n)[c * hw..(c + 1) * hw].iter().map(|&v| v as f64).sum::<f64>();
        }
    }
    s.into_iter().map(|v| 1.0 / (v + EPS_WEIGHT)).collect()
}
