//! Full-volume prediction and softmax-average ensembling.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{load_checkpoint, save_checkpoint, ResUNet, Tensor4};
use crate::train::{TrainHistory, ViewRegime};
use crate::volume::{indices_to_labels, reassemble, reslice_case, Dims, Grid3, LabelVolume, MultiModalCase, Plane, View};

/// Slices forwarded together during inference.
const SLICE_BATCH: usize = 8;

/// Zero padding applied by [`pad_to_multiple`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropRecord {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
    pub rows: usize,
    pub cols: usize,
}

fn split_pad(n: usize, m: usize) -> (usize, usize) {
    let total = n.div_ceil(m) * m - n;
    (total / 2, total - total / 2)
}

/// Symmetric zero padding up to multiples of `m`; an odd remainder goes to the
/// bottom/right.
pub fn pad_to_multiple<T: Copy + Default>(plane: &Plane<T>, m: usize) -> (Plane<T>, CropRecord) {
    let m = m.max(1);
    let (top, bottom) = split_pad(plane.rows, m);
    let (left, right) = split_pad(plane.cols, m);
    let rec = CropRecord {
        top,
        bottom,
        left,
        right,
        rows: plane.rows,
        cols: plane.cols,
    };
    if top + bottom + left + right == 0 {
        return (plane.clone(), rec);
    }
    let (rows, cols) = (plane.rows + top + bottom, plane.cols + left + right);
    let mut out = Plane::filled(plane.channels, rows, cols, T::default());
    for ch in 0..plane.channels {
        for r in 0..plane.rows {
            for c in 0..plane.cols {
                out.set(ch, r + top, c + left, plane.get(ch, r, c));
            }
        }
    }
    (out, rec)
}

/// Inverse of [`pad_to_multiple`].
pub fn crop<T: Copy + Default>(plane: &Plane<T>, rec: &CropRecord) -> Plane<T> {
    let mut out = Plane::filled(plane.channels, rec.rows, rec.cols, T::default());
    for ch in 0..plane.channels {
        for r in 0..rec.rows {
            for c in 0..rec.cols {
                out.set(ch, r, c, plane.get(ch, r + rec.top, c + rec.left));
            }
        }
    }
    out
}

/// Per-voxel class probabilities, stored one grid per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVolume {
    classes: Vec<Grid3<f32>>,
}

impl ProbabilityVolume {
    pub fn new(classes: Vec<Grid3<f32>>) -> Result<Self> {
        let Some(first) = classes.first() else {
            return Err(Error::ShapeMismatch("probability volume needs at least one class".into()));
        };
        let dims = first.dims();
        if let Some(g) = classes.iter().find(|g| g.dims() != dims) {
            return Err(Error::DimMismatch {
                expected: dims,
                found: g.dims(),
            });
        }
        Ok(Self { classes })
    }

    pub fn dims(&self) -> Dims {
        self.classes[0].dims()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class(&self, c: usize) -> &Grid3<f32> {
        &self.classes[c]
    }

    pub fn get(&self, c: usize, z: usize, y: usize, x: usize) -> f32 {
        self.classes[c].get(z, y, x)
    }

    /// Largest deviation of a voxel's class sum from 1.
    pub fn max_sum_error(&self) -> f64 {
        (0..self.classes[0].len())
            .map(|i| (self.classes.iter().map(|g| g.data()[i] as f64).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Per-voxel class index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> Grid3<u8> {
        let n = self.classes[0].len();
        let data = (0..n)
            .map(|i| {
                let mut best = 0;
                for c in 1..self.classes.len() {
                    if self.classes[c].data()[i] > self.classes[best].data()[i] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect();
        Grid3::new(self.dims(), data).expect("same length")
    }

    /// BraTS label volume of the argmax.
    pub fn labels(&self) -> Result<LabelVolume> {
        indices_to_labels(&self.argmax())
    }
}

/// Voxelwise arithmetic mean, accumulated in `f64` in the given order.
pub fn mean_probabilities(vols: &[ProbabilityVolume]) -> Result<ProbabilityVolume> {
    let Some(first) = vols.first() else {
        return Err(Error::ViewMismatch("ensemble without members".into()));
    };
    let (dims, l) = (first.dims(), first.n_classes());
    if let Some(v) = vols.iter().find(|v| v.dims() != dims || v.n_classes() != l) {
        return Err(Error::ShapeMismatch(format!(
            "probability volumes {dims:?}x{l} vs {:?}x{}",
            v.dims(),
            v.n_classes()
        )));
    }
    let k = vols.len() as f64;
    let classes = (0..l)
        .map(|c| {
            let mut acc = vec![0.0f64; first.class(c).len()];
            for v in vols {
                for (a, &p) in acc.iter_mut().zip(v.class(c).data()) {
                    *a += p as f64;
                }
            }
            Grid3::new(dims, acc.into_iter().map(|a| (a / k) as f32).collect()).expect("same length")
        })
        .collect();
    ProbabilityVolume::new(classes)
}

/// Predicts every slice along `view` (padded to the network's divisor, then
/// cropped back) and reassembles the class probabilities.
pub fn predict_volume(net: &ResUNet, case: &MultiModalCase, view: View) -> Result<ProbabilityVolume> {
    let cfg = net.config();
    if cfg.in_channels != 4 {
        return Err(Error::ShapeMismatch(format!(
            "model expects {} input channels, cases provide 4",
            cfg.in_channels
        )));
    }
    let m = cfg.divisor();
    let slices = reslice_case(case, view);
    let mut out: Vec<Plane<f32>> = Vec::with_capacity(slices.len());
    for chunk in slices.chunks(SLICE_BATCH) {
        let padded: Vec<(Plane<f32>, CropRecord)> = chunk.iter().map(|s| pad_to_multiple(s, m)).collect();
        let refs: Vec<&Plane<f32>> = padded.iter().map(|(p, _)| p).collect();
        let probs = net.forward(&Tensor4::from_planes(&refs)?)?;
        for (i, (_, rec)) in padded.iter().enumerate() {
            out.push(crop(&probs.to_plane(i), rec));
        }
    }
    ProbabilityVolume::new(reassemble(&out, view, case.dims())?)
}

/// Mean probabilities of arbitrary `(model, view)` pairs, in the given order.
pub fn ensemble_probabilities(members: &[(&ResUNet, View)], case: &MultiModalCase) -> Result<ProbabilityVolume> {
    let vols = members
        .iter()
        .map(|(net, view)| predict_volume(net, case, *view))
        .collect::<Result<Vec<_>>>()?;
    mean_probabilities(&vols)
}

/// A trained model and the view it predicts in.
#[derive(Debug, Clone)]
pub struct ModelMember {
    pub view: View,
    pub net: ResUNet,
    /// Empty when loaded from disk.
    pub history: TrainHistory,
}

/// Models of one training regime.
#[derive(Debug, Clone)]
pub struct ModelSet {
    regime: ViewRegime,
    members: Vec<ModelMember>,
}

#[derive(Serialize, Deserialize)]
struct SetManifest {
    regime: ViewRegime,
    members: Vec<MemberEntry>,
}

#[derive(Serialize, Deserialize)]
struct MemberEntry {
    view: View,
    checkpoint: String,
}

const SET_MANIFEST: &str = "modelset.json";

impl ModelSet {
    /// Checks the regime's membership rule: one model per view for the
    /// ensemble, exactly one model otherwise.
    pub fn new(regime: ViewRegime, mut members: Vec<ModelMember>) -> Result<Self> {
        match regime {
            ViewRegime::PerViewEnsemble => {
                let mut views: Vec<View> = members.iter().map(|m| m.view).collect();
                views.sort();
                if views != View::ALL.to_vec() {
                    return Err(Error::ViewMismatch(format!(
                        "ensemble needs one model per view, got {views:?}"
                    )));
                }
                members.sort_by_key(|m| m.view);
            }
            _ => {
                if members.len() != 1 {
                    return Err(Error::ViewMismatch(format!(
                        "{regime} needs exactly one model, got {}",
                        members.len()
                    )));
                }
            }
        }
        Ok(Self { regime, members })
    }

    pub fn regime(&self) -> ViewRegime {
        self.regime
    }

    pub fn members(&self) -> &[ModelMember] {
        &self.members
    }

    pub fn member(&self, view: View) -> Option<&ModelMember> {
        self.members.iter().find(|m| m.view == view)
    }

    pub fn checkpoint_name(view: View) -> String {
        format!("model_{view}.ckpt")
    }

    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths = Vec::new();
        let mut entries = Vec::new();
        for m in &self.members {
            let name = Self::checkpoint_name(m.view);
            let path = dir.join(&name);
            save_checkpoint(&m.net, &path)?;
            paths.push(path);
            entries.push(MemberEntry {
                view: m.view,
                checkpoint: name,
            });
        }
        let manifest = SetManifest {
            regime: self.regime,
            members: entries,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Serde(e.to_string()))?;
        let path = dir.join(SET_MANIFEST);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(paths)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(SET_MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: SetManifest = serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
        let members = manifest
            .members
            .into_iter()
            .map(|e| {
                Ok(ModelMember {
                    view: e.view,
                    net: load_checkpoint(&dir.join(&e.checkpoint))?,
                    history: TrainHistory::default(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(manifest.regime, members)
    }

    /// Mean of every member's probabilities in its own view.
    pub fn probabilities(&self, case: &MultiModalCase) -> Result<ProbabilityVolume> {
        let pairs: Vec<(&ResUNet, View)> = self.members.iter().map(|m| (&m.net, m.view)).collect();
        ensemble_probabilities(&pairs, case)
    }
}

/// Ensemble (or single-model) prediction as a BraTS label volume.
pub fn ensemble_predict(models: &ModelSet, case: &MultiModalCase) -> Result<LabelVolume> {
    models.probabilities(case)?.labels()
}
