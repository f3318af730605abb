//! On-the-fly geometric augmentation of image/mask pairs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::preprocess::PatchSample;
use crate::volume::Plane;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub rotation: bool,
    /// Angles are drawn uniformly from `[-max_rotation_deg, max_rotation_deg)`.
    pub max_rotation_deg: f64,
    pub horizontal_flip: bool,
    pub vertical_flip: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation: true,
            max_rotation_deg: 180.0,
            horizontal_flip: true,
            vertical_flip: true,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            rotation: false,
            max_rotation_deg: 0.0,
            horizontal_flip: false,
            vertical_flip: false,
        }
    }

    pub fn is_identity(&self) -> bool {
        !(self.rotation || self.horizontal_flip || self.vertical_flip)
    }
}

/// One concrete transform: rotate about the patch centre, then flip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub angle_deg: f64,
    pub horizontal_flip: bool,
    pub vertical_flip: bool,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        angle_deg: 0.0,
        horizontal_flip: false,
        vertical_flip: false,
    };

    pub fn sample<R: Rng>(cfg: &AugmentConfig, rng: &mut R) -> Self {
        let angle_deg = if cfg.rotation && cfg.max_rotation_deg > 0.0 {
            rng.random_range(-cfg.max_rotation_deg..cfg.max_rotation_deg)
        } else {
            0.0
        };
        Transform {
            angle_deg,
            horizontal_flip: cfg.horizontal_flip && rng.random_bool(0.5),
            vertical_flip: cfg.vertical_flip && rng.random_bool(0.5),
        }
    }

    /// Source coordinate for output pixel `(r, c)` of a `rows x cols` plane.
    fn source(&self, r: usize, c: usize, rows: usize, cols: usize, cos: f64, sin: f64) -> (f64, f64) {
        let r = if self.vertical_flip { rows - 1 - r } else { r };
        let c = if self.horizontal_flip { cols - 1 - c } else { c };
        if self.angle_deg == 0.0 {
            return (r as f64, c as f64);
        }
        let (cr, cc) = ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0);
        let (dr, dc) = (r as f64 - cr, c as f64 - cc);
        // inverse rotation
        (cr + cos * dr - sin * dc, cc + sin * dr + cos * dc)
    }

    pub fn apply(&self, sample: &PatchSample) -> PatchSample {
        let (rows, cols) = (sample.image.rows, sample.image.cols);
        let theta = self.angle_deg.to_radians();
        let (sin, cos) = theta.sin_cos();
        let mut image = Plane::filled(sample.image.channels, rows, cols, 0.0f32);
        let mut mask = Plane::filled(1, rows, cols, 0u8);
        for r in 0..rows {
            for c in 0..cols {
                let (sr, sc) = self.source(r, c, rows, cols, cos, sin);
                if self.angle_deg == 0.0 {
                    let (sr, sc) = (sr as usize, sc as usize);
                    for ch in 0..image.channels {
                        image.set(ch, r, c, sample.image.get(ch, sr, sc));
                    }
                    mask.set(0, r, c, sample.mask.get(0, sr, sc));
                    continue;
                }
                // bilinear for intensities, zero outside
                let (r0, c0) = (sr.floor(), sc.floor());
                let (fr, fc) = (sr - r0, sc - c0);
                for ch in 0..image.channels {
                    let mut acc = 0.0f64;
                    for (dr, wr) in [(0.0, 1.0 - fr), (1.0, fr)] {
                        for (dc, wc) in [(0.0, 1.0 - fc), (1.0, fc)] {
                            let (rr, cc) = (r0 + dr, c0 + dc);
                            if wr * wc == 0.0 || rr < 0.0 || cc < 0.0 || rr >= rows as f64 || cc >= cols as f64 {
                                continue;
                            }
                            acc += wr * wc * sample.image.get(ch, rr as usize, cc as usize) as f64;
                        }
                    }
                    image.set(ch, r, c, acc as f32);
                }
                // nearest neighbour for labels, background outside
                let (nr, nc) = (sr.round(), sc.round());
                if nr >= 0.0 && nc >= 0.0 && nr < rows as f64 && nc < cols as f64 {
                    mask.set(0, r, c, sample.mask.get(0, nr as usize, nc as usize));
                }
            }
        }
        PatchSample {
            image,
            mask,
            view: sample.view,
            case_id: sample.case_id.clone(),
            slice_index: sample.slice_index,
        }
    }
}

/// Samples a transform and applies it to image and mask alike.
pub fn augment<R: Rng>(sample: &PatchSample, cfg: &AugmentConfig, rng: &mut R) -> PatchSample {
    Transform::sample(cfg, rng).apply(sample)
}
