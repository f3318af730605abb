//! Fixture format: a raw little-endian grid (`<stem>.bin`) beside a JSON sidecar
//! (`<stem>.json`) holding `{"dims": [D, H, W], "spacing": [..], "dtype": "f32" | "u8"}`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::Grid3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FixtureDtype {
    F32,
    U8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureMeta {
    pub dims: [usize; 3],
    #[serde(default = "unit_spacing")]
    pub spacing: [f64; 3],
    pub dtype: FixtureDtype,
}

fn unit_spacing() -> [f64; 3] {
    [1.0; 3]
}

#[derive(Debug, Clone, PartialEq)]
pub enum FixtureGrid {
    F32(Grid3<f32>),
    U8(Grid3<u8>),
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

pub fn write_fixture(stem: &Path, grid: &FixtureGrid, spacing: [f64; 3]) -> Result<()> {
    let (bin, json) = paths(stem);
    super::create_parent(&bin)?;
    let (dims, dtype, bytes) = match grid {
        FixtureGrid::F32(g) => (
            g.dims(),
            FixtureDtype::F32,
            g.data().iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>(),
        ),
        FixtureGrid::U8(g) => (g.dims(), FixtureDtype::U8, g.data().to_vec()),
    };
    let meta = FixtureMeta {
        dims: [dims.0, dims.1, dims.2],
        spacing,
        dtype,
    };
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Serde(e.to_string()))?;
    std::fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
    std::fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))
}

pub fn read_fixture(stem: &Path) -> Result<(FixtureGrid, FixtureMeta)> {
    let (bin, json) = paths(stem);
    let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let meta: FixtureMeta = serde_json::from_str(&text).map_err(|e| Error::CorruptHeader {
        path: json.clone(),
        reason: e.to_string(),
    })?;
    let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let dims = (meta.dims[0], meta.dims[1], meta.dims[2]);
    let n = dims.0 * dims.1 * dims.2;
    let width = match meta.dtype {
        FixtureDtype::F32 => 4,
        FixtureDtype::U8 => 1,
    };
    if bytes.len() != n * width {
        return Err(Error::CorruptHeader {
            path: bin,
            reason: format!("expected {} bytes, found {}", n * width, bytes.len()),
        });
    }
    let grid = match meta.dtype {
        FixtureDtype::F32 => FixtureGrid::F32(Grid3::new(
            dims,
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )?),
        FixtureDtype::U8 => FixtureGrid::U8(Grid3::new(dims, bytes)?),
    };
    Ok((grid, meta))
}
