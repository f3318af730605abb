//! Volume file formats: NIfTI-1 (optionally gzipped) and a flat-binary fixture format.

mod case;
mod fixture;
pub mod nifti;

pub use case::{read_case, read_labels, write_case, write_labels, CaseLayout, SEG_SUFFIX};
pub use fixture::{read_fixture, write_fixture, FixtureDtype, FixtureGrid, FixtureMeta};
pub use nifti::NiftiHeader;

use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}
