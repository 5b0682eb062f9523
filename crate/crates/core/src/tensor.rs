//! Dense real tensors.
//!
//! [`Tensor`] is the general n-dimensional container used by the layers and the
//! file format. [`Volume`] is the rank-3 `(nx, ny, nt)` array that holds video
//! clips and convolution feature maps; its last axis is the fastest varying, so
//! one pixel's time series is contiguous.

use crate::error::{Error, Result};

fn check_finite(data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::validation(format!(
            "non-finite element {} at flat index {i}",
            data[i]
        ))),
        None => Ok(()),
    }
}

/// Row-major n-dimensional array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }
}

/// Rank-3 array indexed `(x, y, t)` with `t` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    data: Vec<f64>,
}

/// Raw grayscale clip, `nx × ny × nt`.
pub type VideoTensor = Volume;
/// Output of a convolution over a [`VideoTensor`].
pub type FeatureTensor = Volume;

impl Volume {
    pub fn new(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::shape(format!("all dims must be >= 1, got {dims:?}")));
        }
        let len = dims[0] * dims[1] * dims[2];
        if len != data.len() {
            return Err(Error::shape(format!(
                "dims {dims:?} need {len} elements, got {}",
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Volume { dims, data })
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        assert!(dims.iter().all(|&d| d > 0), "zero-sized volume {dims:?}");
        Volume {
            dims,
            data: vec![0.0; dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut v = Volume::zeros(dims);
        for x in 0..dims[0] {
            for y in 0..dims[1] {
                for t in 0..dims[2] {
                    let i = v.index(x, y, t);
                    v.data[i] = f(x, y, t);
                }
            }
        }
        v
    }

    pub(crate) fn from_parts(dims: [usize; 3], data: Vec<f64>) -> Self {
        debug_assert_eq!(dims[0] * dims[1] * dims[2], data.len());
        Volume { dims, data }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn nx(&self) -> usize {
        self.dims[0]
    }

    pub fn ny(&self) -> usize {
        self.dims[1]
    }

    pub fn nt(&self) -> usize {
        self.dims[2]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, t: usize) -> usize {
        (x * self.dims[1] + y) * self.dims[2] + t
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, t: usize) -> f64 {
        self.data[self.index(x, y, t)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, t: usize, value: f64) {
        let i = self.index(x, y, t);
        self.data[i] = value;
    }

    /// Frame `t` as an `nx × ny` x-major buffer.
    pub fn frame(&self, t: usize) -> Vec<f64> {
        assert!(t < self.nt(), "frame {t} out of range (nt = {})", self.nt());
        self.data.iter().skip(t).step_by(self.nt()).copied().collect()
    }

    /// Inclusive frame range `start..=end` as a new volume.
    pub fn slice_frames(&self, start: usize, end: usize) -> Result<Volume> {
        if start > end || end >= self.nt() {
            return Err(Error::shape(format!(
                "frame range {start}..={end} invalid for nt = {}",
                self.nt()
            )));
        }
        let nt = end - start + 1;
        let mut data = Vec::with_capacity(self.nx() * self.ny() * nt);
        for series in self.data.chunks_exact(self.nt()) {
            data.extend_from_slice(&series[start..=end]);
        }
        Ok(Volume::from_parts([self.nx(), self.ny(), nt], data))
    }

    /// Stacks equally sized x-major frames along time.
    pub fn from_frames(nx: usize, ny: usize, frames: &[Vec<f64>]) -> Result<Volume> {
        if frames.is_empty() {
            return Err(Error::shape("no frames to stack"));
        }
        if let Some(f) = frames.iter().find(|f| f.len() != nx * ny) {
            return Err(Error::shape(format!(
                "frame has {} pixels, expected {}",
                f.len(),
                nx * ny
            )));
        }
        let nt = frames.len();
        let mut data = vec![0.0; nx * ny * nt];
        for (t, frame) in frames.iter().enumerate() {
            for (p, &v) in frame.iter().enumerate() {
                data[p * nt + t] = v;
            }
        }
        Volume::new([nx, ny, nt], data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Volume {
        Volume::from_parts(self.dims, self.data.iter().map(|&v| f(v)).collect())
    }

    /// `a·self + b·other`.
    pub fn axpby(&self, a: f64, other: &Volume, b: f64) -> Result<Volume> {
        if self.dims != other.dims {
            return Err(Error::shape(format!(
                "dims differ: {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&p, &q)| a * p + b * q)
            .collect();
        Ok(Volume::from_parts(self.dims, data))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max|self − other| / max|other|`, or the absolute difference when
    /// `other` is identically zero.
    pub fn rel_diff(&self, other: &Volume) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::shape(format!(
                "dims differ: {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        let diff = self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        let scale = other.max_abs();
        Ok(if scale > 0.0 { diff / scale } else { diff })
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(self.dims.to_vec(), self.data.clone())
    }

    pub fn from_tensor(t: Tensor) -> Result<Volume> {
        let shape = t.shape().to_vec();
        if shape.len() != 3 {
            return Err(Error::shape(format!("expected rank 3, got shape {shape:?}")));
        }
        Volume::new([shape[0], shape[1], shape[2]], t.into_data())
    }
}

/// `mx × my` spatial kernel, x-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2D {
    pub mx: usize,
    pub my: usize,
    pub data: Vec<f64>,
}

impl Kernel2D {
    pub fn new(mx: usize, my: usize, data: Vec<f64>) -> Result<Self> {
        if mx == 0 || my == 0 || data.len() != mx * my {
            return Err(Error::shape(format!(
                "2D kernel {mx}x{my} with {} elements",
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Kernel2D { mx, my, data })
    }

    /// 1 at the center, 0 elsewhere. Dims must be odd.
    pub fn delta(mx: usize, my: usize) -> Self {
        assert!(mx % 2 == 1 && my % 2 == 1, "delta kernel needs odd dims");
        let mut data = vec![0.0; mx * my];
        data[(mx / 2) * my + my / 2] = 1.0;
        Kernel2D { mx, my, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.my + j]
    }
}

/// `mx × my × mt` kernel, same layout as [`Volume`].
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel3D {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Kernel3D {
    pub fn new(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) || data.len() != dims.iter().product::<usize>() {
            return Err(Error::shape(format!(
                "3D kernel {dims:?} with {} elements",
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Kernel3D { dims, data })
    }

    pub fn delta(dims: [usize; 3]) -> Self {
        assert!(dims.iter().all(|d| d % 2 == 1), "delta kernel needs odd dims");
        let mut data = vec![0.0; dims.iter().product()];
        data[((dims[0] / 2) * dims[1] + dims[1] / 2) * dims[2] + dims[2] / 2] = 1.0;
        Kernel3D { dims, data }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.dims[1] + j) * self.dims[2] + k]
    }
}

/// A spatial kernel and a temporal kernel whose outer product is a [`Kernel3D`].
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableKernel {
    pub spatial: Kernel2D,
    pub temporal: Vec<f64>,
}

impl SeparableKernel {
    pub fn new(spatial: Kernel2D, temporal: Vec<f64>) -> Result<Self> {
        if temporal.is_empty() {
            return Err(Error::shape("temporal kernel is empty"));
        }
        check_finite(&temporal)?;
        Ok(SeparableKernel { spatial, temporal })
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.spatial.mx, self.spatial.my, self.temporal.len()]
    }
}

/// A single image with several channels, indexed `(x, y, c)` with `c` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelFrame {
    pub nx: usize,
    pub ny: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ChannelFrame {
    pub fn new(nx: usize, ny: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if nx == 0 || ny == 0 || channels == 0 || data.len() != nx * ny * channels {
            return Err(Error::shape(format!(
                "frame {nx}x{ny}x{channels} with {} elements",
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(ChannelFrame {
            nx,
            ny,
            channels,
            data,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(x * self.ny + y) * self.channels + c]
    }

    /// One channel as an x-major `nx × ny` buffer.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        assert!(Volume::new([1, 1, 2], vec![0.0, f64::NAN]).is_err());
        assert!(Tensor::new(vec![1], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn rejects_zero_dims_and_bad_length() {
        assert!(Volume::new([0, 1, 1], vec![]).is_err());
        assert!(Volume::new([2, 2, 2], vec![0.0; 7]).is_err());
    }

    #[test]
    fn frame_and_slice_round_trip() {
        let v = Volume::from_fn([2, 3, 4], |x, y, t| (x * 100 + y * 10 + t) as f64);
        assert_eq!(v.frame(2), vec![2.0, 12.0, 22.0, 102.0, 112.0, 122.0]);
        let s = v.slice_frames(1, 2).unwrap();
        assert_eq!(s.dims(), [2, 3, 2]);
        assert_eq!(s.get(1, 2, 0), 121.0);
        let frames: Vec<_> = (0..4).map(|t| v.frame(t)).collect();
        assert_eq!(Volume::from_frames(2, 3, &frames).unwrap(), v);
        assert!(v.slice_frames(2, 4).is_err());
    }

    #[test]
    fn channel_extraction() {
        let f = ChannelFrame::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(f.channel(1), vec![2.0, 4.0]);
    }
}
