//! Per-modality normalisation, tumour-bearing patch extraction, dataset
//! splitting and class statistics.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::io::{read_fixture, write_fixture, FixtureGrid};
use crate::rng;
use crate::volume::{ClassIndexMap, Grid3, LabelVolume, MultiModalCase, Plane, ScalarVolume, View};

/// Below this nonzero-voxel standard deviation a modality is considered constant.
pub const EPS_STD: f64 = 1e-6;

/// Default spatial size of training patches.
pub const PATCH_SIZE: usize = 128;

/// Zero-mean, unit-variance scaling over the nonzero voxels (population σ).
/// Voxels that are exactly zero stay exactly zero.
pub fn normalize_modality(vol: &ScalarVolume) -> Result<ScalarVolume> {
    let (mut n, mut sum) = (0usize, 0.0f64);
    for &v in vol.data() {
        if v != 0.0 {
            n += 1;
            sum += v as f64;
        }
    }
    if n == 0 {
        return Err(Error::EmptyBrain);
    }
    let mean = sum / n as f64;
    let var = vol
        .data()
        .iter()
        .filter(|&&v| v != 0.0)
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    let std = var.sqrt();
    if n < 2 || std <= EPS_STD {
        return Err(Error::DegenerateIntensity(std));
    }
    Ok(vol.map(|v| if v == 0.0 { 0.0 } else { ((v as f64 - mean) / std) as f32 }))
}

/// Normalises all four modalities of a case.
pub fn normalize_case(case: &MultiModalCase) -> Result<MultiModalCase> {
    case.try_map_modalities(normalize_modality)
}

/// A 2D training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    /// Channels T1, T1ce, T2, FLAIR.
    pub image: Plane<f32>,
    /// Class indices in `0..4`.
    pub mask: Plane<u8>,
    pub view: View,
    pub case_id: String,
    pub slice_index: usize,
}

impl PatchSample {
    pub fn size(&self) -> (usize, usize) {
        (self.mask.rows, self.mask.cols)
    }

    pub fn has_tumour(&self) -> bool {
        self.mask.data.iter().any(|&v| v != 0)
    }
}

/// Crop or pad window along one axis of length `n`: source start (may be
/// negative for padding) for a window of `size`.
fn window_start(n: usize, size: usize, center: f64) -> isize {
    if n <= size {
        -(((size - n) / 2) as isize)
    } else {
        let start = (center + 0.5).floor() as isize - (size / 2) as isize;
        start.clamp(0, (n - size) as isize)
    }
}

/// One patch per tumour-bearing slice along `view`, centred on the slice's
/// tumour centroid and clamped to the slice. Axes shorter than `patch_size`
/// are zero-padded symmetrically (mask padded with background).
pub fn extract_patches(case: &MultiModalCase, view: View, patch_size: usize) -> Result<Vec<PatchSample>> {
    let labels = case.labels().ok_or_else(|| Error::MissingLabels(case.case_id.clone()))?;
    let dims = case.dims();
    let (rows, cols) = view.slice_shape(dims);
    let lg = labels.grid();
    let mods = case.modalities();
    let mut out = Vec::new();
    for k in 0..view.slice_count(dims) {
        let mut tumour = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let (z, y, x) = view.voxel(k, r, c);
                if lg.get(z, y, x) != 0 {
                    tumour.push((r, c));
                }
            }
        }
        if tumour.is_empty() {
            continue;
        }
        let n = tumour.len() as f64;
        let cr = tumour.iter().map(|p| p.0 as f64).sum::<f64>() / n;
        let cc = tumour.iter().map(|p| p.1 as f64).sum::<f64>() / n;
        let mut r0 = window_start(rows, patch_size, cr);
        let mut c0 = window_start(cols, patch_size, cc);
        let inside = |r0: isize, c0: isize, p: &(usize, usize)| {
            let (r, c) = (p.0 as isize, p.1 as isize);
            r >= r0 && r < r0 + patch_size as isize && c >= c0 && c < c0 + patch_size as isize
        };
        if !tumour.iter().any(|p| inside(r0, c0, p)) {
            // centroid falls between separated blobs: recentre on the nearest tumour voxel
            let nearest = tumour
                .iter()
                .min_by(|a, b| {
                    let da = (a.0 as f64 - cr).powi(2) + (a.1 as f64 - cc).powi(2);
                    let db = (b.0 as f64 - cr).powi(2) + (b.1 as f64 - cc).powi(2);
                    da.total_cmp(&db)
                })
                .expect("nonempty");
            r0 = window_start(rows, patch_size, nearest.0 as f64);
            c0 = window_start(cols, patch_size, nearest.1 as f64);
        }
        let mut image = Plane::filled(4, patch_size, patch_size, 0.0f32);
        let mut mask = Plane::filled(1, patch_size, patch_size, 0u8);
        for pr in 0..patch_size {
            let r = r0 + pr as isize;
            if r < 0 || r >= rows as isize {
                continue;
            }
            for pc in 0..patch_size {
                let c = c0 + pc as isize;
                if c < 0 || c >= cols as isize {
                    continue;
                }
                let (z, y, x) = view.voxel(k, r as usize, c as usize);
                for (ch, m) in mods.iter().enumerate() {
                    image.set(ch, pr, pc, m.get(z, y, x));
                }
                let idx = ClassIndexMap::index_of(lg.get(z, y, x)).expect("validated labels");
                mask.set(0, pr, pc, idx);
            }
        }
        out.push(PatchSample {
            image,
            mask,
            view,
            case_id: case.case_id.clone(),
            slice_index: k,
        });
    }
    Ok(out)
}

/// Extracts patches from many cases (parallel per case), preserving case order.
pub fn extract_all(cases: &[MultiModalCase], view: View, patch_size: usize, exec: Execution) -> Result<Vec<PatchSample>> {
    let per_case: Result<Vec<Vec<PatchSample>>> = exec
        .map(cases, |c| extract_patches(c, view, patch_size))
        .into_iter()
        .collect();
    Ok(per_case?.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<PatchSample>,
    pub val: Vec<PatchSample>,
    pub seed: u64,
}

/// How patches are assigned to the training and validation sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Shuffle all patches, then cut.
    #[default]
    PatchWise,
    /// Shuffle case ids, then cut; no patient contributes to both sides.
    PatientWise,
}

/// Seeded shuffle followed by an 80/20-style cut with `round(ratio * N)` training patches.
pub fn split_dataset(patches: Vec<PatchSample>, ratio: f64, seed: u64) -> Result<DatasetSplit> {
    let n = patches.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let mut patches = patches;
    patches.shuffle(&mut rng::stream(seed, &[0x5350_4c54]));
    let n_train = ((ratio * n as f64).round() as usize).min(n);
    let val = patches.split_off(n_train);
    Ok(DatasetSplit {
        train: patches,
        val,
        seed,
    })
}

/// Patient-level variant of [`split_dataset`].
pub fn split_by_case(patches: Vec<PatchSample>, ratio: f64, seed: u64) -> Result<DatasetSplit> {
    let ids: BTreeSet<String> = patches.iter().map(|p| p.case_id.clone()).collect();
    if ids.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: ids.len(),
        });
    }
    let mut ids: Vec<String> = ids.into_iter().collect();
    ids.shuffle(&mut rng::stream(seed, &[0x5053_504c]));
    let n_train = ((ratio * ids.len() as f64).round() as usize).min(ids.len());
    let train_ids: BTreeSet<&String> = ids[..n_train].iter().collect();
    let (train, val) = patches.into_iter().partition(|p| train_ids.contains(&p.case_id));
    Ok(DatasetSplit { train, val, seed })
}

pub fn split_with(mode: SplitMode, patches: Vec<PatchSample>, ratio: f64, seed: u64) -> Result<DatasetSplit> {
    match mode {
        SplitMode::PatchWise => split_dataset(patches, ratio, seed),
        SplitMode::PatientWise => split_by_case(patches, ratio, seed),
    }
}

/// Voxel fractions of (background, label 1, label 2, label 4) over all volumes.
pub fn class_distribution<'a>(volumes: impl IntoIterator<Item = &'a LabelVolume>) -> [f64; 4] {
    let mut counts = [0u64; 4];
    for v in volumes {
        for &l in v.data() {
            counts[ClassIndexMap::index_of(l).expect("validated labels") as usize] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return [0.0; 4];
    }
    counts.map(|c| c as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchEntry {
    pub case_id: String,
    pub view: View,
    pub slice_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchManifest {
    pub patch_size: usize,
    pub channels: usize,
    pub entries: Vec<PatchEntry>,
}

/// Writes patches as two fixture grids (`images`: `(N*4, S, S)` f32, `masks`:
/// `(N, S, S)` u8) plus `manifest.json`.
pub fn save_patches(dir: &Path, patches: &[PatchSample]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let size = patches.first().map_or(0, |p| p.mask.rows);
    let mut images = Vec::with_capacity(patches.len() * 4 * size * size);
    let mut masks = Vec::with_capacity(patches.len() * size * size);
    for p in patches {
        if p.mask.rows != size || p.mask.cols != size || p.image.channels != 4 {
            return Err(Error::ShapeMismatch(format!(
                "patch {}:{} is not {size}x{size} with 4 channels",
                p.case_id, p.slice_index
            )));
        }
        images.extend_from_slice(&p.image.data);
        masks.extend_from_slice(&p.mask.data);
    }
    let n = patches.len();
    write_fixture(&dir.join("images"), &FixtureGrid::F32(Grid3::new((n * 4, size, size), images)?), [1.0; 3])?;
    write_fixture(&dir.join("masks"), &FixtureGrid::U8(Grid3::new((n, size, size), masks)?), [1.0; 3])?;
    let manifest = PatchManifest {
        patch_size: size,
        channels: 4,
        entries: patches
            .iter()
            .map(|p| PatchEntry {
                case_id: p.case_id.clone(),
                view: p.view,
                slice_index: p.slice_index,
            })
            .collect(),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Serde(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_patches(dir: &Path) -> Result<Vec<PatchSample>> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: PatchManifest = serde_json::from_str(&text).map_err(|e| Error::Serde(e.to_string()))?;
    let n = manifest.entries.len();
    let s = manifest.patch_size;
    let (images, _) = read_fixture(&dir.join("images"))?;
    let (masks, _) = read_fixture(&dir.join("masks"))?;
    let (FixtureGrid::F32(images), FixtureGrid::U8(masks)) = (images, masks) else {
        return Err(Error::Serde("patch store has unexpected dtypes".into()));
    };
    if images.dims() != (n * 4, s, s) || masks.dims() != (n, s, s) {
        return Err(Error::ShapeMismatch("patch store grids disagree with manifest".into()));
    }
    let plane = s * s;
    Ok(manifest
        .entries
        .into_iter()
        .enumerate()
        .map(|(i, e)| PatchSample {
            image: Plane {
                channels: 4,
                rows: s,
                cols: s,
                data: images.data()[i * 4 * plane..(i + 1) * 4 * plane].to_vec(),
            },
            mask: Plane {
                channels: 1,
                rows: s,
                cols: s,
                data: masks.data()[i * plane..(i + 1) * plane].to_vec(),
            },
            view: e.view,
            case_id: e.case_id,
            slice_index: e.slice_index,
        })
        .collect())
}
