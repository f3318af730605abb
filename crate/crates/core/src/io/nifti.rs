//! Minimal NIfTI-1 single-file (`.nii` / `.nii.gz`) reader and writer.
//!
//! Axis mapping: on-disk `(nx, ny, nz)` becomes grid `(D, H, W) = (nz, ny, nx)`,
//! which keeps the on-disk x-fastest voxel order identical to the grid's flat order.
//! Orientation fields are carried through untouched.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::volume::{Dims, Grid3};

pub const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

pub const DT_UINT8: i16 = 2;
pub const DT_INT16: i16 = 4;
pub const DT_INT32: i16 = 8;
pub const DT_FLOAT32: i16 = 16;
pub const DT_FLOAT64: i16 = 64;
pub const DT_INT8: i16 = 256;
pub const DT_UINT16: i16 = 512;
pub const DT_UINT32: i16 = 768;

/// Raw NIfTI-1 header plus the byte order it was read in.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    raw: [u8; HEADER_SIZE],
    big_endian: bool,
}

macro_rules! field {
    ($get:ident, $set:ident, $t:ty, $off:expr) => {
        pub fn $get(&self) -> $t {
            let mut b = [0u8; std::mem::size_of::<$t>()];
            b.copy_from_slice(&self.raw[$off..$off + std::mem::size_of::<$t>()]);
            if self.big_endian {
                <$t>::from_be_bytes(b)
            } else {
                <$t>::from_le_bytes(b)
            }
        }

        pub fn $set(&mut self, v: $t) {
            let b = if self.big_endian { v.to_be_bytes() } else { v.to_le_bytes() };
            self.raw[$off..$off + std::mem::size_of::<$t>()].copy_from_slice(&b);
        }
    };
}

impl NiftiHeader {
    field!(sizeof_hdr, set_sizeof_hdr, i32, 0);
    field!(datatype, set_datatype, i16, 70);
    field!(bitpix, set_bitpix, i16, 72);
    field!(vox_offset, set_vox_offset, f32, 108);
    field!(scl_slope, set_scl_slope, f32, 112);
    field!(scl_inter, set_scl_inter, f32, 116);
    field!(xyzt_units, set_xyzt_units_raw, u8, 123);
    field!(sform_code, set_sform_code, i16, 254);

    fn dim_at(&self, i: usize) -> i16 {
        let o = 40 + 2 * i;
        let b = [self.raw[o], self.raw[o + 1]];
        if self.big_endian {
            i16::from_be_bytes(b)
        } else {
            i16::from_le_bytes(b)
        }
    }

    fn set_dim_at(&mut self, i: usize, v: i16) {
        let o = 40 + 2 * i;
        let b = if self.big_endian { v.to_be_bytes() } else { v.to_le_bytes() };
        self.raw[o..o + 2].copy_from_slice(&b);
    }

    fn f32_at(&self, o: usize) -> f32 {
        let mut b = [0u8; 4];
        b.copy_from_slice(&self.raw[o..o + 4]);
        if self.big_endian {
            f32::from_be_bytes(b)
        } else {
            f32::from_le_bytes(b)
        }
    }

    fn set_f32_at(&mut self, o: usize, v: f32) {
        let b = if self.big_endian { v.to_be_bytes() } else { v.to_le_bytes() };
        self.raw[o..o + 4].copy_from_slice(&b);
    }

    /// A fresh little-endian header for a 3D volume with the given spacing (mm, `(D, H, W)` order).
    pub fn new_3d(dims: Dims, spacing: [f64; 3], datatype: i16) -> Self {
        let mut h = NiftiHeader {
            raw: [0u8; HEADER_SIZE],
            big_endian: false,
        };
        h.set_sizeof_hdr(HEADER_SIZE as i32);
        h.raw[38] = b'r';
        h.set_dims(dims);
        h.set_spacing(spacing);
        h.set_f32_at(76, 1.0); // qfac
        h.set_storage(datatype);
        h.set_xyzt_units_raw(2); // millimetres
        h.set_sform_code(1);
        let sp = [spacing[2] as f32, spacing[1] as f32, spacing[0] as f32];
        for (row, s) in sp.iter().enumerate() {
            h.set_f32_at(280 + 16 * row + 4 * row, *s);
        }
        h.raw[344..348].copy_from_slice(b"n+1\0");
        h
    }

    pub fn parse(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: &str| Error::CorruptHeader {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < HEADER_SIZE {
            return Err(corrupt("file shorter than a NIfTI-1 header"));
        }
        let mut raw = [0u8; HEADER_SIZE];
        raw.copy_from_slice(&bytes[..HEADER_SIZE]);
        let le = i32::from_le_bytes([raw[0], raw[1], raw[2], raw[3]]);
        let be = i32::from_be_bytes([raw[0], raw[1], raw[2], raw[3]]);
        let big_endian = match (le, be) {
            (348, _) => false,
            (_, 348) => true,
            _ => return Err(corrupt("sizeof_hdr is not 348")),
        };
        if &raw[344..348] != b"n+1\0" {
            return Err(corrupt("magic is not 'n+1' (only single-file NIfTI-1 is supported)"));
        }
        let h = NiftiHeader { raw, big_endian };
        let ndim = h.dim_at(0);
        if !(1..=7).contains(&ndim) {
            return Err(corrupt("dim[0] outside 1..=7"));
        }
        for i in 1..=ndim as usize {
            if h.dim_at(i) < 1 {
                return Err(corrupt("non-positive dimension"));
            }
        }
        for i in 4..=ndim as usize {
            if h.dim_at(i) != 1 {
                return Err(corrupt("only 3D volumes are supported"));
            }
        }
        if bytes_per_voxel(h.datatype()).is_none() {
            return Err(corrupt(&format!("unsupported datatype {}", h.datatype())));
        }
        if h.vox_offset() < HEADER_SIZE as f32 {
            return Err(corrupt("vox_offset inside header"));
        }
        Ok(h)
    }

    /// Grid dims `(D, H, W)`.
    pub fn dims(&self) -> Dims {
        let ndim = self.dim_at(0).max(1) as usize;
        let d = |i: usize| if i <= ndim { self.dim_at(i).max(1) as usize } else { 1 };
        (d(3), d(2), d(1))
    }

    pub fn set_dims(&mut self, dims: Dims) {
        self.set_dim_at(0, 3);
        self.set_dim_at(1, dims.2 as i16);
        self.set_dim_at(2, dims.1 as i16);
        self.set_dim_at(3, dims.0 as i16);
        for i in 4..8 {
            self.set_dim_at(i, 1);
        }
    }

    /// Spacing in mm along `(D, H, W)`; non-positive entries read as 1.
    pub fn spacing(&self) -> [f64; 3] {
        let p = |i: usize| {
            let v = self.f32_at(76 + 4 * i) as f64;
            if v > 0.0 && v.is_finite() {
                v
            } else {
                1.0
            }
        };
        [p(3), p(2), p(1)]
    }

    pub fn set_spacing(&mut self, spacing: [f64; 3]) {
        self.set_f32_at(76 + 4, spacing[2] as f32);
        self.set_f32_at(76 + 8, spacing[1] as f32);
        self.set_f32_at(76 + 12, spacing[0] as f32);
    }

    fn set_storage(&mut self, datatype: i16) {
        self.set_datatype(datatype);
        self.set_bitpix(8 * bytes_per_voxel(datatype).unwrap_or(1) as i16);
        self.set_vox_offset(VOX_OFFSET as f32);
        self.set_scl_slope(1.0);
        self.set_scl_inter(0.0);
    }

    /// The intensity scaling `(slope, intercept)`; a zero slope means "no scaling".
    fn scaling(&self) -> Option<(f64, f64)> {
        let s = self.scl_slope() as f64;
        let i = self.scl_inter() as f64;
        if s == 0.0 || !s.is_finite() || (s == 1.0 && i == 0.0) {
            None
        } else {
            Some((s, if i.is_finite() { i } else { 0.0 }))
        }
    }

    pub fn is_big_endian(&self) -> bool {
        self.big_endian
    }
}

fn bytes_per_voxel(datatype: i16) -> Option<usize> {
    Some(match datatype {
        DT_UINT8 | DT_INT8 => 1,
        DT_INT16 | DT_UINT16 => 2,
        DT_INT32 | DT_UINT32 | DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        _ => return None,
    })
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"))
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    if is_gz(path) {
        GzDecoder::new(BufReader::new(file))
            .read_to_end(&mut buf)
            .map_err(|e| Error::io(path, e))?;
    } else {
        BufReader::new(file)
            .read_to_end(&mut buf)
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(buf)
}

/// Voxel values as stored, before scaling.
fn decode_voxels(h: &NiftiHeader, bytes: &[u8], path: &Path) -> Result<Vec<f64>> {
    let (d, hh, w) = h.dims();
    let n = d * hh * w;
    let bpv = bytes_per_voxel(h.datatype()).expect("validated in parse");
    let start = h.vox_offset() as usize;
    let end = start + n * bpv;
    if bytes.len() < end {
        return Err(Error::CorruptHeader {
            path: path.to_path_buf(),
            reason: format!("expected {} bytes of voxel data, found {}", n * bpv, bytes.len().saturating_sub(start)),
        });
    }
    let body = &bytes[start..end];
    let be = h.big_endian;
    macro_rules! conv {
        ($t:ty) => {
            body.chunks_exact(std::mem::size_of::<$t>())
                .map(|c| {
                    let b = c.try_into().unwrap();
                    (if be { <$t>::from_be_bytes(b) } else { <$t>::from_le_bytes(b) }) as f64
                })
                .collect()
        };
    }
    Ok(match h.datatype() {
        DT_UINT8 => body.iter().map(|&v| v as f64).collect(),
        DT_INT8 => body.iter().map(|&v| v as i8 as f64).collect(),
        DT_INT16 => conv!(i16),
        DT_UINT16 => conv!(u16),
        DT_INT32 => conv!(i32),
        DT_UINT32 => conv!(u32),
        DT_FLOAT32 => conv!(f32),
        DT_FLOAT64 => conv!(f64),
        _ => unreachable!(),
    })
}

/// Reads a volume as real intensities with `scl_slope`/`scl_inter` applied.
pub fn read_scalar(path: &Path) -> Result<(Grid3<f32>, NiftiHeader)> {
    let bytes = read_all(path)?;
    let h = NiftiHeader::parse(&bytes, path)?;
    let mut v = decode_voxels(&h, &bytes, path)?;
    if let Some((s, i)) = h.scaling() {
        v.iter_mut().for_each(|x| *x = *x * s + i);
    }
    let data: Vec<f32> = v.into_iter().map(|x| x as f32).collect();
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::CorruptHeader {
            path: path.to_path_buf(),
            reason: "non-finite intensity".into(),
        });
    }
    Ok((Grid3::new(h.dims(), data)?, h))
}

/// Reads an integer-valued volume (segmentations). Values are returned unscaled
/// unless a non-trivial scaling is present, in which case it is applied and the
/// result must be integral.
pub fn read_integer(path: &Path) -> Result<(Grid3<i64>, NiftiHeader)> {
    let bytes = read_all(path)?;
    let h = NiftiHeader::parse(&bytes, path)?;
    let mut v = decode_voxels(&h, &bytes, path)?;
    if let Some((s, i)) = h.scaling() {
        v.iter_mut().for_each(|x| *x = *x * s + i);
    }
    let mut out = Vec::with_capacity(v.len());
    for x in v {
        if !x.is_finite() || x.fract() != 0.0 {
            return Err(Error::CorruptHeader {
                path: path.to_path_buf(),
                reason: format!("non-integer value {x} in integer volume"),
            });
        }
        out.push(x as i64);
    }
    Ok((Grid3::new(h.dims(), out)?, h))
}

fn write_bytes(path: &Path, header: &NiftiHeader, body: &[u8]) -> Result<()> {
    super::create_parent(path)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut head = Vec::with_capacity(VOX_OFFSET);
    head.extend_from_slice(&header.raw);
    head.extend_from_slice(&[0u8; VOX_OFFSET - HEADER_SIZE]);
    let res = if is_gz(path) {
        let mut enc = GzEncoder::new(BufWriter::new(file), Compression::fast());
        enc.write_all(&head)
            .and_then(|_| enc.write_all(body))
            .and_then(|_| enc.finish().and_then(|mut w| w.flush()))
    } else {
        let mut w = BufWriter::new(file);
        w.write_all(&head).and_then(|_| w.write_all(body)).and_then(|_| w.flush())
    };
    res.map_err(|e| Error::io(path, e))
}

fn prepare_header(reference: &NiftiHeader, dims: Dims, datatype: i16) -> NiftiHeader {
    let mut h = reference.clone();
    h.set_dims(dims);
    h.set_storage(datatype);
    h
}

/// Writes a `uint8` volume; geometry fields come from `reference`.
pub fn write_u8(path: &Path, grid: &Grid3<u8>, reference: &NiftiHeader) -> Result<()> {
    let h = prepare_header(reference, grid.dims(), DT_UINT8);
    write_bytes(path, &h, grid.data())
}

/// Writes a `float32` volume; geometry fields come from `reference`.
pub fn write_f32(path: &Path, grid: &Grid3<f32>, reference: &NiftiHeader) -> Result<()> {
    let h = prepare_header(reference, grid.dims(), DT_FLOAT32);
    let mut body = Vec::with_capacity(grid.len() * 4);
    for v in grid.data() {
        body.extend_from_slice(&if h.big_endian { v.to_be_bytes() } else { v.to_le_bytes() });
    }
    write_bytes(path, &h, &body)
}
