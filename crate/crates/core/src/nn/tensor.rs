use crate::error::{Error, Result};
use crate::volume::Plane;

/// Dense `N x C x H x W` batch of `f32` feature maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor4 {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(Error::ShapeMismatch(format!(
                "{n}x{c}x{h}x{w} tensor needs {} values, got {}",
                n * c * h * w,
                data.len()
            )));
        }
        Ok(Self { n, c, h, w, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let s = self.sample_len();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f32] {
        let s = self.sample_len();
        &mut self.data[i * s..(i + 1) * s]
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[((n * self.c + c) * self.h + y) * self.w + x]
    }

    /// Stacks equally shaped multi-channel planes into a batch.
    pub fn from_planes(planes: &[&Plane<f32>]) -> Result<Self> {
        let Some(first) = planes.first() else {
            return Err(Error::ShapeMismatch("empty batch".into()));
        };
        let (c, h, w) = (first.channels, first.rows, first.cols);
        let mut data = Vec::with_capacity(planes.len() * c * h * w);
        for p in planes {
            if (p.channels, p.rows, p.cols) != (c, h, w) {
                return Err(Error::ShapeMismatch("batch planes differ in shape".into()));
            }
            data.extend_from_slice(&p.data);
        }
        Self::from_vec(planes.len(), c, h, w, data)
    }

    pub fn to_plane(&self, i: usize) -> Plane<f32> {
        Plane {
            channels: self.c,
            rows: self.h,
            cols: self.w,
            data: self.sample(i).to_vec(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor4) {
        debug_assert_eq!(self.shape(), other.shape());
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }
}

/// Batch of per-pixel class indices, `N x H x W`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexBatch {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl IndexBatch {
    pub fn from_planes(planes: &[&Plane<u8>]) -> Result<Self> {
        let Some(first) = planes.first() else {
            return Err(Error::ShapeMismatch("empty batch".into()));
        };
        let (h, w) = (first.rows, first.cols);
        let mut data = Vec::with_capacity(planes.len() * h * w);
        for p in planes {
            if (p.channels, p.rows, p.cols) != (1, h, w) {
                return Err(Error::ShapeMismatch("mask planes differ in shape".into()));
            }
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            n: planes.len(),
            h,
            w,
            data,
        })
    }
}
