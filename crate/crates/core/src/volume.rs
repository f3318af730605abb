//! In-memory volumes, BraTS label semantics, region masks and view reslicing.
//!
//! Grids are stored row-major over `(D, H, W)`: the flat offset of voxel
//! `(z, y, x)` is `(z * H + y) * W + x`. The three views slice along one axis
//! each: axial along axis 0, sagittal along axis 1, coronal along axis 2.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voxel counts along `(D, H, W)`.
pub type Dims = (usize, usize, usize);

/// Dense 3D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid3<T> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: Copy> Grid3<T> {
    pub fn new(dims: Dims, data: Vec<T>) -> Result<Self> {
        let n = dims.0 * dims.1 * dims.2;
        if data.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "grid {dims:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn filled(dims: Dims, value: T) -> Self {
        Self {
            dims,
            data: vec![value; dims.0 * dims.1 * dims.2],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims.1 + y) * self.dims.2 + x
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> T {
        self.data[self.offset(z, y, x)]
    }

    #[inline]
    pub fn set(&mut self, z: usize, y: usize, x: usize, v: T) {
        let o = self.offset(z, y, x);
        self.data[o] = v;
    }

    /// `(z, y, x)` of a flat offset.
    pub fn position(&self, offset: usize) -> (usize, usize, usize) {
        let (_, h, w) = self.dims;
        (offset / (h * w), (offset / w) % h, offset % w)
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid3<U> {
        Grid3 {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Real-valued intensity volume.
pub type ScalarVolume = Grid3<f32>;

/// Binary mask.
pub type Mask = Grid3<bool>;

impl Grid3<f32> {
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Grid3<bool> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// The BraTS label alphabet. Label 3 is never used.
pub const BRATS_LABELS: [u8; 4] = [0, 1, 2, 4];

/// Checks that every voxel carries a BraTS label.
pub fn validate_labels<T: Copy + Into<i64>>(grid: &Grid3<T>) -> Result<()> {
    for (i, &v) in grid.data.iter().enumerate() {
        let v: i64 = v.into();
        if !matches!(v, 0 | 1 | 2 | 4) {
            return Err(Error::InvalidLabel {
                value: v,
                position: grid.position(i),
            });
        }
    }
    Ok(())
}

/// A label volume whose voxels are all in `{0, 1, 2, 4}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume(Grid3<u8>);

impl LabelVolume {
    pub fn new(grid: Grid3<u8>) -> Result<Self> {
        validate_labels(&grid)?;
        Ok(Self(grid))
    }

    pub fn zeros(dims: Dims) -> Self {
        Self(Grid3::filled(dims, 0))
    }

    pub fn dims(&self) -> Dims {
        self.0.dims()
    }

    pub fn grid(&self) -> &Grid3<u8> {
        &self.0
    }

    pub fn into_grid(self) -> Grid3<u8> {
        self.0
    }

    pub fn data(&self) -> &[u8] {
        self.0.data()
    }
}

/// Nested evaluation regions: enhancing tumour, tumour core, whole tumour.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMasks {
    pub et: Mask,
    pub tc: Mask,
    pub wt: Mask,
}

impl RegionMasks {
    pub fn get(&self, region: Region) -> &Mask {
        match region {
            Region::Et => &self.et,
            Region::Tc => &self.tc,
            Region::Wt => &self.wt,
        }
    }
}

/// Evaluation sub-region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Region {
    #[serde(rename = "ET")]
    Et,
    #[serde(rename = "WT")]
    Wt,
    #[serde(rename = "TC")]
    Tc,
}

impl Region {
    /// Reporting order used in tables: ET, WT, TC.
    pub const ALL: [Region; 3] = [Region::Et, Region::Wt, Region::Tc];

    pub fn name(self) -> &'static str {
        match self {
            Region::Et => "ET",
            Region::Wt => "WT",
            Region::Tc => "TC",
        }
    }

    pub fn contains_label(self, label: u8) -> bool {
        match self {
            Region::Et => label == 4,
            Region::Tc => label == 1 || label == 4,
            Region::Wt => label != 0,
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Derives ET/TC/WT masks. Inputs are already validated by construction.
pub fn derive_region_masks(vol: &LabelVolume) -> RegionMasks {
    let g = vol.grid();
    RegionMasks {
        et: g.map(|v| Region::Et.contains_label(v)),
        tc: g.map(|v| Region::Tc.contains_label(v)),
        wt: g.map(|v| Region::Wt.contains_label(v)),
    }
}

/// Bidirectional map between BraTS labels `{0,1,2,4}` and class indices `{0,1,2,3}`.
pub struct ClassIndexMap;

impl ClassIndexMap {
    pub const NUM_CLASSES: usize = 4;

    pub fn index_of(label: u8) -> Option<u8> {
        match label {
            0 => Some(0),
            1 => Some(1),
            2 => Some(2),
            4 => Some(3),
            _ => None,
        }
    }

    pub fn label_of(index: u8) -> Option<u8> {
        BRATS_LABELS.get(index as usize).copied()
    }
}

/// Forward direction of the label map.
pub fn labels_to_indices(vol: &LabelVolume) -> Grid3<u8> {
    vol.grid()
        .map(|v| ClassIndexMap::index_of(v).expect("label volume holds validated labels"))
}

/// Backward direction of the label map.
pub fn indices_to_labels(indices: &Grid3<u8>) -> Result<LabelVolume> {
    let mut out = Vec::with_capacity(indices.len());
    for (offset, &i) in indices.data().iter().enumerate() {
        out.push(ClassIndexMap::label_of(i).ok_or(Error::InvalidIndex { value: i, offset })?);
    }
    Ok(LabelVolume(Grid3::new(indices.dims(), out)?))
}

/// MRI acquisition contrast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    T1,
    T1ce,
    T2,
    Flair,
}

impl Modality {
    /// Channel order used throughout: T1, T1ce, T2, FLAIR.
    pub const ALL: [Modality; 4] = [Modality::T1, Modality::T1ce, Modality::T2, Modality::Flair];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Filename suffix in the BraTS distribution convention.
    pub fn suffix(self) -> &'static str {
        match self {
            Modality::T1 => "_t1",
            Modality::T1ce => "_t1ce",
            Modality::T2 => "_t2",
            Modality::Flair => "_flair",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::T1 => "T1",
            Modality::T1ce => "T1ce",
            Modality::T2 => "T2",
            Modality::Flair => "FLAIR",
        })
    }
}

/// One patient: four co-registered modalities and an optional segmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiModalCase {
    pub case_id: String,
    modalities: [ScalarVolume; 4],
    labels: Option<LabelVolume>,
    /// Millimetres per voxel along `(D, H, W)`.
    pub spacing: [f64; 3],
}

impl MultiModalCase {
    /// `modalities` is in [`Modality::ALL`] order.
    pub fn new(
        case_id: impl Into<String>,
        modalities: [ScalarVolume; 4],
        labels: Option<LabelVolume>,
        spacing: [f64; 3],
    ) -> Result<Self> {
        let dims = modalities[0].dims();
        for m in &modalities[1..] {
            if m.dims() != dims {
                return Err(Error::DimMismatch {
                    expected: dims,
                    found: m.dims(),
                });
            }
        }
        if let Some(l) = &labels {
            if l.dims() != dims {
                return Err(Error::DimMismatch {
                    expected: dims,
                    found: l.dims(),
                });
            }
        }
        Ok(Self {
            case_id: case_id.into(),
            modalities,
            labels,
            spacing,
        })
    }

    pub fn dims(&self) -> Dims {
        self.modalities[0].dims()
    }

    pub fn modality(&self, m: Modality) -> &ScalarVolume {
        &self.modalities[m.index()]
    }

    pub fn modalities(&self) -> &[ScalarVolume; 4] {
        &self.modalities
    }

    pub fn labels(&self) -> Option<&LabelVolume> {
        self.labels.as_ref()
    }

    pub fn without_labels(mut self) -> Self {
        self.labels = None;
        self
    }

    /// Applies `f` to every modality, keeping labels and geometry.
    pub fn try_map_modalities(
        &self,
        f: impl Fn(&ScalarVolume) -> Result<ScalarVolume>,
    ) -> Result<Self> {
        let [a, b, c, d] = &self.modalities;
        Self::new(
            self.case_id.clone(),
            [f(a)?, f(b)?, f(c)?, f(d)?],
            self.labels.clone(),
            self.spacing,
        )
    }
}

/// Anatomical viewing plane, bound to one grid axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Axial,
    Sagittal,
    Coronal,
}

impl View {
    pub const ALL: [View; 3] = [View::Axial, View::Sagittal, View::Coronal];

    pub fn axis(self) -> usize {
        match self {
            View::Axial => 0,
            View::Sagittal => 1,
            View::Coronal => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            View::Axial => "axial",
            View::Sagittal => "sagittal",
            View::Coronal => "coronal",
        }
    }

    /// Number of slices along this view.
    pub fn slice_count(self, dims: Dims) -> usize {
        match self {
            View::Axial => dims.0,
            View::Sagittal => dims.1,
            View::Coronal => dims.2,
        }
    }

    /// `(rows, cols)` of one slice.
    pub fn slice_shape(self, dims: Dims) -> (usize, usize) {
        match self {
            View::Axial => (dims.1, dims.2),
            View::Sagittal => (dims.0, dims.2),
            View::Coronal => (dims.0, dims.1),
        }
    }

    /// Voxel `(z, y, x)` at row `r`, column `c` of slice `k`.
    #[inline]
    pub fn voxel(self, k: usize, r: usize, c: usize) -> (usize, usize, usize) {
        match self {
            View::Axial => (k, r, c),
            View::Sagittal => (r, k, c),
            View::Coronal => (r, c, k),
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for View {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "axial" => Ok(View::Axial),
            "sagittal" => Ok(View::Sagittal),
            "coronal" => Ok(View::Coronal),
            other => Err(format!("unknown view '{other}'")),
        }
    }
}

/// Multi-channel 2D image stored channel-major: `data[(ch * rows + r) * cols + c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane<T> {
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Plane<T> {
    pub fn filled(channels: usize, rows: usize, cols: usize, v: T) -> Self {
        Self {
            channels,
            rows,
            cols,
            data: vec![v; channels * rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, ch: usize, r: usize, c: usize) -> T {
        self.data[(ch * self.rows + r) * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, ch: usize, r: usize, c: usize, v: T) {
        self.data[(ch * self.rows + r) * self.cols + c] = v;
    }

    pub fn channel(&self, ch: usize) -> &[T] {
        let n = self.rows * self.cols;
        &self.data[ch * n..(ch + 1) * n]
    }
}

/// Cuts one or more co-registered grids into slices along `view`; grid `i`
/// becomes channel `i` of every slice.
pub fn reslice<T: Copy>(grids: &[&Grid3<T>], view: View) -> Result<Vec<Plane<T>>> {
    let Some(first) = grids.first() else {
        return Ok(Vec::new());
    };
    let dims = first.dims();
    if let Some(g) = grids.iter().find(|g| g.dims() != dims) {
        return Err(Error::DimMismatch {
            expected: dims,
            found: g.dims(),
        });
    }
    let (rows, cols) = view.slice_shape(dims);
    let channels = grids.len();
    let n = view.slice_count(dims);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut data = Vec::with_capacity(channels * rows * cols);
        for g in grids {
            for r in 0..rows {
                for c in 0..cols {
                    let (z, y, x) = view.voxel(k, r, c);
                    data.push(g.get(z, y, x));
                }
            }
        }
        out.push(Plane {
            channels,
            rows,
            cols,
            data,
        });
    }
    Ok(out)
}

/// Single-grid convenience wrapper for [`reslice`].
pub fn reslice_volume<T: Copy>(grid: &Grid3<T>, view: View) -> Vec<Plane<T>> {
    reslice(&[grid], view).expect("a single grid always agrees with itself")
}

/// All four modalities as 4-channel slices.
pub fn reslice_case(case: &MultiModalCase, view: View) -> Vec<Plane<f32>> {
    let m = case.modalities();
    reslice(&[&m[0], &m[1], &m[2], &m[3]], view).expect("case invariants guarantee equal dims")
}

/// Inverse of [`reslice`]: one grid per slice channel.
pub fn reassemble<T: Copy + Default>(slices: &[Plane<T>], view: View, dims: Dims) -> Result<Vec<Grid3<T>>> {
    let n = view.slice_count(dims);
    if slices.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{view} reassembly of {dims:?} needs {n} slices, got {}",
            slices.len()
        )));
    }
    let (rows, cols) = view.slice_shape(dims);
    let channels = slices.first().map_or(1, |s| s.channels);
    for (k, s) in slices.iter().enumerate() {
        if s.rows != rows || s.cols != cols || s.channels != channels || s.data.len() != channels * rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "slice {k} is {}x{}x{}, expected {channels}x{rows}x{cols}",
                s.channels, s.rows, s.cols
            )));
        }
    }
    let mut grids: Vec<Grid3<T>> = (0..channels).map(|_| Grid3::filled(dims, T::default())).collect();
    for (k, s) in slices.iter().enumerate() {
        for (ch, g) in grids.iter_mut().enumerate() {
            for r in 0..rows {
                for c in 0..cols {
                    let (z, y, x) = view.voxel(k, r, c);
                    g.set(z, y, x, s.get(ch, r, c));
                }
            }
        }
    }
    Ok(grids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels_from(dims: Dims, data: Vec<u8>) -> LabelVolume {
        LabelVolume::new(Grid3::new(dims, data).unwrap()).unwrap()
    }

    #[test]
    fn validate_accepts_brats_alphabet() {
        assert!(validate_labels(&Grid3::<u8>::filled((2, 2, 2), 0)).is_ok());
        let g = Grid3::new((1, 1, 4), vec![0u8, 1, 2, 4]).unwrap();
        assert!(validate_labels(&g).is_ok());
    }

    #[test]
    fn validate_rejects_label_three_with_position() {
        let mut g = Grid3::<u8>::filled((3, 4, 5), 0);
        g.set(2, 1, 3, 3);
        match validate_labels(&g) {
            Err(Error::InvalidLabel { value, position }) => {
                assert_eq!(value, 3);
                assert_eq!(position, (2, 1, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(LabelVolume::new(g).is_err());
    }

    #[test]
    fn region_masks_follow_set_definitions() {
        let v = labels_from((1, 1, 4), vec![1, 2, 4, 0]);
        let m = derive_region_masks(&v);
        assert_eq!((m.et.count(), m.tc.count(), m.wt.count()), (1, 2, 3));

        let m = derive_region_masks(&LabelVolume::zeros((3, 3, 3)));
        assert_eq!((m.et.count(), m.tc.count(), m.wt.count()), (0, 0, 0));

        let v = labels_from((2, 2, 2), vec![2; 8]);
        let m = derive_region_masks(&v);
        assert_eq!((m.et.count(), m.tc.count(), m.wt.count()), (0, 0, 8));
    }

    #[test]
    fn reslice_counts_and_shapes() {
        let dims = (155, 240, 240);
        assert_eq!(View::Axial.slice_count(dims), 155);
        assert_eq!(View::Axial.slice_shape(dims), (240, 240));
        assert_eq!(View::Sagittal.slice_count(dims), 240);
        assert_eq!(View::Sagittal.slice_shape(dims), (155, 240));

        let g = Grid3::<f32>::filled((8, 8, 8), 1.0);
        for view in View::ALL {
            let s = reslice_volume(&g, view);
            assert_eq!(s.len(), 8);
            assert!(s.iter().all(|p| p.rows == 8 && p.cols == 8 && p.channels == 1));
        }
    }

    #[test]
    fn reslice_picks_the_cross_section() {
        let dims = (3, 4, 5);
        let data: Vec<u32> = (0..60).collect();
        let g = Grid3::new(dims, data).unwrap();
        let sag = reslice_volume(&g, View::Sagittal);
        assert_eq!(sag[2].get(0, 1, 3), g.get(1, 2, 3));
        let cor = reslice_volume(&g, View::Coronal);
        assert_eq!(cor[4].get(0, 2, 1), g.get(2, 1, 4));
    }

    #[test]
    fn reassemble_rejects_wrong_slice_count() {
        let g = Grid3::<f32>::filled((4, 5, 6), 0.5);
        let mut s = reslice_volume(&g, View::Axial);
        s.pop();
        assert!(matches!(
            reassemble(&s, View::Axial, g.dims()),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn multichannel_round_trip() {
        let dims = (6, 10, 12);
        let chans: Vec<Grid3<f32>> = (0..4)
            .map(|c| Grid3::new(dims, (0..720).map(|i| (i * 7 + c) as f32 * 0.25).collect()).unwrap())
            .collect();
        let refs: Vec<&Grid3<f32>> = chans.iter().collect();
        for view in View::ALL {
            let s = reslice(&refs, view).unwrap();
            assert!(s.iter().all(|p| p.channels == 4));
            assert_eq!(reassemble(&s, view, dims).unwrap(), chans);
        }
    }

    #[test]
    fn label_index_map() {
        assert_eq!(ClassIndexMap::index_of(4), Some(3));
        assert_eq!(ClassIndexMap::label_of(3), Some(4));
        for l in [0u8, 1, 2] {
            assert_eq!(ClassIndexMap::index_of(l), Some(l));
        }
        assert_eq!(ClassIndexMap::index_of(3), None);
        let bad = Grid3::new((1, 1, 2), vec![0u8, 5]).unwrap();
        assert!(matches!(indices_to_labels(&bad), Err(Error::InvalidIndex { value: 5, offset: 1 })));
    }

    fn label_grid(max_side: usize) -> impl Strategy<Value = LabelVolume> {
        (1..=max_side, 1..=max_side, 1..=max_side).prop_flat_map(|(d, h, w)| {
            prop::collection::vec(prop::sample::select(BRATS_LABELS.to_vec()), d * h * w)
                .prop_map(move |v| labels_from((d, h, w), v))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn regions_nest_and_count(v in label_grid(6)) {
            let m = derive_region_masks(&v);
            for i in 0..v.data().len() {
                let (et, tc, wt) = (m.et.data()[i], m.tc.data()[i], m.wt.data()[i]);
                prop_assert!(!et || tc);
                prop_assert!(!tc || wt);
            }
            prop_assert_eq!(m.wt.count(), v.data().iter().filter(|&&l| l != 0).count());
            prop_assert_eq!(m.et.count(), v.data().iter().filter(|&&l| l == 4).count());
        }
    }

    proptest! {
        #[test]
        fn label_map_round_trips(v in label_grid(7)) {
            prop_assert_eq!(indices_to_labels(&labels_to_indices(&v)).unwrap(), v);
        }

        #[test]
        fn reslice_round_trips(d in 1usize..9, h in 1usize..9, w in 1usize..9, seed in any::<u64>()) {
            let data: Vec<f32> = (0..d * h * w)
                .map(|i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f32 - 500.5)
                .collect();
            let g = Grid3::new((d, h, w), data).unwrap();
            for view in View::ALL {
                let s = reslice_volume(&g, view);
                prop_assert_eq!(s.len(), view.slice_count(g.dims()));
                let back = reassemble(&s, view, g.dims()).unwrap();
                prop_assert_eq!(&back[0], &g);
            }
        }
    }
}
