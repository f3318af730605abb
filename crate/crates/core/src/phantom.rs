//! Synthetic multi-modal cases with nested ellipsoidal tumours.
//!
//! A case is an ellipsoidal "brain" of strictly positive Gaussian-textured
//! intensities inside an exactly-zero background. Inside the brain sit three
//! nested ellipsoids: whole tumour (edema, label 2), tumour core (necrosis,
//! label 1) and enhancing tumour (label 4). Each modality gets its own global
//! gain and a smooth linear bias ramp so that per-modality normalisation has
//! real work to do.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::rng;
use crate::volume::{Dims, Grid3, LabelVolume, Modality, MultiModalCase, ScalarVolume};

/// Tissue classes that carry distinct intensity statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tissue {
    Healthy = 0,
    Edema = 1,
    Necrosis = 2,
    Enhancing = 3,
}

impl Tissue {
    fn label(self) -> u8 {
        match self {
            Tissue::Healthy => 0,
            Tissue::Edema => 2,
            Tissue::Necrosis => 1,
            Tissue::Enhancing => 4,
        }
    }
}

/// Mean and standard deviation of a Gaussian intensity distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intensity {
    pub mean: f64,
    pub sigma: f64,
}

const fn iv(mean: f64, sigma: f64) -> Intensity {
    Intensity { mean, sigma }
}

/// `table[modality][tissue]`, modalities in T1, T1ce, T2, FLAIR order and
/// tissues as in [`Tissue`].
pub type ContrastTable = [[Intensity; 4]; 4];

/// T1ce is brightest on enhancing tumour; T2 and FLAIR are brightest on edema.
pub const DEFAULT_CONTRAST: ContrastTable = [
    [iv(100.0, 8.0), iv(88.0, 8.0), iv(68.0, 8.0), iv(96.0, 8.0)],
    [iv(100.0, 8.0), iv(96.0, 8.0), iv(74.0, 8.0), iv(165.0, 8.0)],
    [iv(100.0, 8.0), iv(155.0, 8.0), iv(135.0, 8.0), iv(120.0, 8.0)],
    [iv(100.0, 8.0), iv(165.0, 8.0), iv(118.0, 8.0), iv(128.0, 8.0)],
];

/// Probability that each tumour structure is drawn at all.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Presence {
    pub edema: f64,
    pub core: f64,
    pub enhancing: f64,
}

impl Default for Presence {
    fn default() -> Self {
        Self {
            edema: 1.0,
            core: 1.0,
            enhancing: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub seed: u64,
    pub presence: Presence,
    pub contrast: ContrastTable,
    /// Whole-tumour semi-axis range in voxels.
    pub wt_radius: (f64, f64),
    /// Core semi-axes as a fraction of the whole-tumour semi-axes.
    pub tc_scale: (f64, f64),
    /// Enhancing semi-axes as a fraction of the core semi-axes.
    pub et_scale: (f64, f64),
    /// Maximum relative intensity change of the bias ramp across the grid.
    pub bias_strength: f64,
    /// Range of the per-modality global gain.
    pub gain: (f64, f64),
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: (64, 64, 64),
            seed: 0,
            presence: Presence::default(),
            contrast: DEFAULT_CONTRAST,
            wt_radius: (7.0, 12.0),
            tc_scale: (0.5, 0.7),
            et_scale: (0.45, 0.7),
            bias_strength: 0.15,
            gain: (0.7, 1.4),
        }
    }
}

const MIN_SIDE: usize = 32;
const MAX_TUMOUR_EXTENT: f64 = 128.0;
/// Brain semi-axes as a fraction of each grid extent.
const BRAIN_FRACTION: f64 = 0.44;

impl PhantomSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (d, h, w) = self.dims;
        if d.min(h).min(w) < MIN_SIDE {
            return Err(Error::Spec(format!("dims {:?} below {MIN_SIDE} per axis", self.dims)));
        }
        let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi;
        for (name, r) in [
            ("wt_radius", self.wt_radius),
            ("tc_scale", self.tc_scale),
            ("et_scale", self.et_scale),
            ("gain", self.gain),
        ] {
            if !range_ok(r) {
                return Err(Error::Spec(format!("{name} range {r:?} is empty or non-positive")));
            }
        }
        if self.tc_scale.1 > 1.0 || self.et_scale.1 > 1.0 {
            return Err(Error::Spec("nested scales must not exceed 1".into()));
        }
        let brain_min = BRAIN_FRACTION * d.min(h).min(w) as f64;
        if self.wt_radius.1 >= brain_min - 1.0 {
            return Err(Error::Spec(format!(
                "whole-tumour radius {} does not fit in a brain of radius {brain_min:.1}",
                self.wt_radius.1
            )));
        }
        if 2.0 * self.wt_radius.1 + 1.0 > MAX_TUMOUR_EXTENT {
            return Err(Error::Spec("tumour extent exceeds a 128-voxel patch".into()));
        }
        if !(0.0..1.0).contains(&self.bias_strength) {
            return Err(Error::Spec("bias_strength must lie in [0, 1)".into()));
        }
        for p in [self.presence.edema, self.presence.core, self.presence.enhancing] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Spec(format!("presence probability {p} outside [0, 1]")));
            }
        }
        for row in &self.contrast {
            for t in row {
                if !(t.mean > 0.0 && t.sigma >= 0.0 && t.mean.is_finite() && t.sigma.is_finite()) {
                    return Err(Error::Spec(format!("bad intensity {t:?}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
}

impl Ellipsoid {
    #[inline]
    fn contains(&self, p: [f64; 3]) -> bool {
        let mut s = 0.0;
        for k in 0..3 {
            let t = (p[k] - self.center[k]) / self.radii[k];
            s += t * t;
        }
        s <= 1.0
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

pub fn case_id(index: usize) -> String {
    format!("phantom_{index:04}")
}

/// Generates case `index` of the family described by `spec`.
pub fn generate_case(spec: &PhantomSpec, index: usize) -> Result<MultiModalCase> {
    spec.validate()?;
    let dims = spec.dims;
    let mut rng = rng::stream(spec.seed, &[0x5048_414e, index as u64]);
    let ext = [dims.0 as f64, dims.1 as f64, dims.2 as f64];
    let brain = Ellipsoid {
        center: ext.map(|e| (e - 1.0) / 2.0),
        radii: ext.map(|e| BRAIN_FRACTION * e),
    };

    let wt_radii = [0; 3].map(|_| uniform(&mut rng, spec.wt_radius));
    // keep the whole tumour inside the brain: its farthest point along each axis
    // stays within a shrunken copy of the brain ellipsoid
    let mut center = [0.0; 3];
    for k in 0..3 {
        let room = (brain.radii[k] - wt_radii[k] - 1.0).max(0.0) * 0.55;
        center[k] = brain.center[k] + uniform(&mut rng, (-room, room));
    }
    let wt = Ellipsoid {
        center,
        radii: wt_radii,
    };
    let tc_radii: [f64; 3] = std::array::from_fn(|k| wt_radii[k] * uniform(&mut rng, spec.tc_scale));
    let tc = Ellipsoid {
        center: std::array::from_fn(|k| center[k] + uniform(&mut rng, (-0.25, 0.25)) * (wt_radii[k] - tc_radii[k])),
        radii: tc_radii,
    };
    let et_radii: [f64; 3] = std::array::from_fn(|k| tc_radii[k] * uniform(&mut rng, spec.et_scale));
    let et = Ellipsoid {
        center: std::array::from_fn(|k| tc.center[k] + uniform(&mut rng, (-0.25, 0.25)) * (tc_radii[k] - et_radii[k])),
        radii: et_radii,
    };
    let has_edema = rng.random::<f64>() < spec.presence.edema;
    let has_core = rng.random::<f64>() < spec.presence.core;
    let has_enh = rng.random::<f64>() < spec.presence.enhancing;

    // per-modality gain and bias-ramp coefficients
    let gains: [f64; 4] = [0; 4].map(|_| uniform(&mut rng, spec.gain));
    let ramps: [[f64; 3]; 4] = [0; 4].map(|_| {
        [0; 3].map(|_| uniform(&mut rng, (-spec.bias_strength, spec.bias_strength)))
    });

    let n = dims.0 * dims.1 * dims.2;
    let mut labels = vec![0u8; n];
    let mut channels: [Vec<f32>; 4] = std::array::from_fn(|_| vec![0.0f32; n]);
    let mut i = 0;
    for z in 0..dims.0 {
        for y in 0..dims.1 {
            for x in 0..dims.2 {
                let p = [z as f64, y as f64, x as f64];
                if brain.contains(p) {
                    let tissue = if has_enh && et.contains(p) {
                        Tissue::Enhancing
                    } else if has_core && tc.contains(p) {
                        Tissue::Necrosis
                    } else if has_edema && wt.contains(p) {
                        Tissue::Edema
                    } else {
                        Tissue::Healthy
                    };
                    labels[i] = tissue.label();
                    for m in 0..4 {
                        let t = spec.contrast[m][tissue as usize];
                        let noise: f64 = rng.sample(StandardNormal);
                        let mut bias = 1.0;
                        for k in 0..3 {
                            bias += ramps[m][k] * (p[k] - brain.center[k]) / ext[k];
                        }
                        let v = gains[m] * bias * (t.mean + t.sigma * noise);
                        // strictly positive inside the brain
                        channels[m][i] = v.max(0.5) as f32;
                    }
                }
                i += 1;
            }
        }
    }
    let [a, b, c, d] = channels;
    let vol = |v: Vec<f32>| -> ScalarVolume { Grid3::new(dims, v).expect("sized above") };
    let labels = LabelVolume::new(Grid3::new(dims, labels)?)?;
    MultiModalCase::new(case_id(index), [vol(a), vol(b), vol(c), vol(d)], Some(labels), [1.0; 3])
}

/// Cases `range` of the family, generated independently (parallel when enabled).
pub fn generate_dataset(spec: &PhantomSpec, range: std::ops::Range<usize>, exec: Execution) -> Result<Vec<MultiModalCase>> {
    spec.validate()?;
    let idx: Vec<usize> = range.collect();
    exec.map(&idx, |&i| generate_case(spec, i)).into_iter().collect()
}

/// Channel lookup helper used by tests and diagnostics.
pub fn modality_mean(spec: &PhantomSpec, m: Modality, t: Tissue) -> f64 {
    spec.contrast[m.index()][t as usize].mean
}
