use std::path::{Path, PathBuf};

use super::fixture::{read_fixture, FixtureGrid};
use super::nifti::{self, NiftiHeader};
use crate::error::{Error, Result};
use crate::volume::{validate_labels, Grid3, LabelVolume, Modality, MultiModalCase, ScalarVolume};

pub const SEG_SUFFIX: &str = "_seg";
const EXTENSIONS: [&str; 3] = [".nii.gz", ".nii", ".bin"];

/// Location of one case on disk: `<dir>/<case_id><suffix><ext>` per modality,
/// with `<ext>` one of `.nii.gz`, `.nii` or the fixture `.bin`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseLayout {
    pub dir: PathBuf,
    pub case_id: String,
}

impl CaseLayout {
    pub fn new(dir: impl Into<PathBuf>, case_id: impl Into<String>) -> Self {
        Self {
            dir: dir.into(),
            case_id: case_id.into(),
        }
    }

    /// A BraTS-style case directory whose name is the case id.
    pub fn from_dir(dir: impl Into<PathBuf>) -> Self {
        let dir = dir.into();
        let case_id = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self { dir, case_id }
    }

    fn find(&self, suffix: &str) -> Option<PathBuf> {
        EXTENSIONS
            .iter()
            .map(|ext| self.dir.join(format!("{}{suffix}{ext}", self.case_id)))
            .find(|p| p.exists())
    }

    pub fn modality_path(&self, m: Modality) -> Option<PathBuf> {
        self.find(m.suffix())
    }

    pub fn seg_path(&self) -> Option<PathBuf> {
        self.find(SEG_SUFFIX)
    }

    /// Output path for a given suffix, gzipped NIfTI.
    pub fn output_path(&self, suffix: &str) -> PathBuf {
        self.dir.join(format!("{}{suffix}.nii.gz", self.case_id))
    }
}

fn is_fixture(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == "bin")
}

fn read_scalar_any(p: &Path) -> Result<(ScalarVolume, [f64; 3], Option<NiftiHeader>)> {
    if is_fixture(p) {
        let (g, meta) = read_fixture(&p.with_extension(""))?;
        let g = match g {
            FixtureGrid::F32(g) => g,
            FixtureGrid::U8(g) => g.map(|v| v as f32),
        };
        Ok((g, meta.spacing, None))
    } else {
        let (g, h) = nifti::read_scalar(p)?;
        Ok((g, h.spacing(), Some(h)))
    }
}

fn read_labels_any(p: &Path) -> Result<Grid3<i64>> {
    if is_fixture(p) {
        let (g, _) = read_fixture(&p.with_extension(""))?;
        Ok(match g {
            FixtureGrid::U8(g) => g.map(|v| v as i64),
            FixtureGrid::F32(g) => {
                if let Some(v) = g.data().iter().find(|v| v.fract() != 0.0) {
                    return Err(Error::CorruptHeader {
                        path: p.to_path_buf(),
                        reason: format!("non-integer label {v}"),
                    });
                }
                g.map(|v| v as i64)
            }
        })
    } else {
        Ok(nifti::read_integer(p)?.0)
    }
}

/// Reads a standalone label volume (NIfTI or fixture) and validates its labels.
pub fn read_labels(path: &Path) -> Result<LabelVolume> {
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    let g = read_labels_any(path)?;
    validate_labels(&g)?;
    LabelVolume::new(g.map(|v| v as u8))
}

/// Reads the four modalities and, when present, the segmentation.
///
/// Returns the header of the T1 image (when stored as NIfTI) for use as the
/// geometry reference of exported predictions.
pub fn read_case(layout: &CaseLayout) -> Result<(MultiModalCase, Option<NiftiHeader>)> {
    let mut vols = Vec::with_capacity(4);
    let mut spacing = [1.0; 3];
    let mut reference = None;
    for m in Modality::ALL {
        let p = layout.modality_path(m).ok_or(Error::MissingModality(m))?;
        let (g, sp, h) = read_scalar_any(&p)?;
        if m == Modality::T1 {
            spacing = sp;
            reference = h;
        }
        vols.push(g);
    }
    let labels = match layout.seg_path() {
        Some(p) => {
            let g = read_labels_any(&p)?;
            validate_labels(&g)?;
            Some(LabelVolume::new(g.map(|v| v as u8))?)
        }
        None => None,
    };
    let modalities: [ScalarVolume; 4] = vols.try_into().expect("four modalities");
    Ok((
        MultiModalCase::new(layout.case_id.clone(), modalities, labels, spacing)?,
        reference,
    ))
}

/// Writes a case as gzipped NIfTI in the BraTS naming convention.
pub fn write_case(case: &MultiModalCase, dir: &Path) -> Result<CaseLayout> {
    let layout = CaseLayout::new(dir, case.case_id.clone());
    let header = NiftiHeader::new_3d(case.dims(), case.spacing, nifti::DT_FLOAT32);
    for m in Modality::ALL {
        nifti::write_f32(&layout.output_path(m.suffix()), case.modality(m), &header)?;
    }
    if let Some(l) = case.labels() {
        write_labels(l, &layout.output_path(SEG_SUFFIX), &header)?;
    }
    Ok(layout)
}

/// Writes a label volume as `uint8` NIfTI, copying geometry from `reference`.
pub fn write_labels(vol: &LabelVolume, path: &Path, reference: &NiftiHeader) -> Result<()> {
    nifti::write_u8(path, vol.grid(), reference)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::fixture::write_fixture;

    fn toy_case(with_labels: bool) -> MultiModalCase {
        let dims = (3, 4, 5);
        let vols: [ScalarVolume; 4] = std::array::from_fn(|m| {
            Grid3::new(dims, (0..60).map(|i| (i + 10 * m) as f32).collect()).unwrap()
        });
        let labels = with_labels.then(|| {
            LabelVolume::new(Grid3::new(dims, (0..60).map(|i| [0u8, 1, 2, 4][i % 4]).collect()).unwrap()).unwrap()
        });
        MultiModalCase::new("case_7", vols, labels, [1.0, 1.0, 1.0]).unwrap()
    }

    #[test]
    fn case_round_trip_with_labels() {
        let dir = tempfile::tempdir().unwrap();
        let case = toy_case(true);
        let layout = write_case(&case, dir.path()).unwrap();
        let (back, reference) = read_case(&layout).unwrap();
        assert_eq!(back, case);
        assert!(reference.is_some());
    }

    #[test]
    fn labels_absent_without_seg_file() {
        let dir = tempfile::tempdir().unwrap();
        let layout = write_case(&toy_case(false), dir.path()).unwrap();
        assert!(read_case(&layout).unwrap().0.labels().is_none());
    }

    #[test]
    fn missing_t2_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let layout = write_case(&toy_case(true), dir.path()).unwrap();
        std::fs::remove_file(layout.output_path("_t2")).unwrap();
        assert!(matches!(read_case(&layout), Err(Error::MissingModality(Modality::T2))));
    }

    #[test]
    fn label_three_in_seg_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let case = toy_case(false);
        let layout = write_case(&case, dir.path()).unwrap();
        let mut seg = Grid3::<u8>::filled(case.dims(), 0);
        seg.set(1, 1, 1, 3);
        let h = NiftiHeader::new_3d(case.dims(), case.spacing, nifti::DT_UINT8);
        nifti::write_u8(&layout.output_path(SEG_SUFFIX), &seg, &h).unwrap();
        assert!(matches!(read_case(&layout), Err(Error::InvalidLabel { value: 3, .. })));
    }

    #[test]
    fn dim_mismatch_between_modalities() {
        let dir = tempfile::tempdir().unwrap();
        let layout = write_case(&toy_case(false), dir.path()).unwrap();
        let other = Grid3::<f32>::filled((2, 2, 2), 1.0);
        let h = NiftiHeader::new_3d(other.dims(), [1.0; 3], nifti::DT_FLOAT32);
        nifti::write_f32(&layout.output_path("_flair"), &other, &h).unwrap();
        assert!(matches!(read_case(&layout), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn fixture_cases_are_readable() {
        let dir = tempfile::tempdir().unwrap();
        let case = toy_case(true);
        for m in Modality::ALL {
            let stem = dir.path().join(format!("case_7{}", m.suffix()));
            write_fixture(&stem, &FixtureGrid::F32(case.modality(m).clone()), [1.0; 3]).unwrap();
        }
        let stem = dir.path().join("case_7_seg");
        write_fixture(&stem, &FixtureGrid::U8(case.labels().unwrap().grid().clone()), [1.0; 3]).unwrap();
        let (back, reference) = read_case(&CaseLayout::new(dir.path(), "case_7")).unwrap();
        assert_eq!(back, case);
        assert!(reference.is_none());
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, b"x").unwrap();
        let h = NiftiHeader::new_3d((1, 1, 1), [1.0; 3], nifti::DT_UINT8);
        let err = write_labels(&LabelVolume::zeros((1, 1, 1)), &blocker.join("sub/pred.nii.gz"), &h);
        assert!(matches!(err, Err(Error::Io { .. })));
    }

    #[test]
    fn all_zero_prediction_is_readable() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.nii.gz");
        let h = NiftiHeader::new_3d((4, 4, 4), [1.0; 3], nifti::DT_FLOAT32);
        write_labels(&LabelVolume::zeros((4, 4, 4)), &p, &h).unwrap();
        let (g, _) = nifti::read_integer(&p).unwrap();
        assert!(g.data().iter().all(|&v| v == 0));
    }
}
