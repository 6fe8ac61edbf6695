//! Video data model: 8-bit RGB sequences, their float working copies, and
//! quality-labelled samples.

mod manifest;
mod rvid;
mod synth;

pub use manifest::{read_manifest, write_manifest, ManifestRow};
pub use rvid::{read_video, read_video_file, write_video, write_video_file, RVID_HEADER_LEN};
pub use synth::{synth_video, BasePattern, DegradationRanges, DegradationSpec, MOS_COEFFS};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHANNELS: usize = 3;

/// `T×H×W×3` frame-major, row-major, interleaved RGB pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Video {
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Video {
    pub fn new(frames: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        check_shape(frames, height, width, data.len())?;
        Ok(Self {
            frames,
            height,
            width,
            data,
        })
    }

    pub fn filled(frames: usize, height: usize, width: usize, value: u8) -> Result<Self> {
        let len = shape_len(frames, height, width)?;
        Self::new(frames, height, width, vec![value; len])
    }

    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn frame_len(&self) -> usize {
        self.height * self.width * CHANNELS
    }
    pub fn data(&self) -> &[u8] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    #[inline]
    pub fn index(&self, t: usize, y: usize, x: usize, c: usize) -> usize {
        ((t * self.height + y) * self.width + x) * CHANNELS + c
    }

    pub fn get(&self, t: usize, y: usize, x: usize, c: usize) -> u8 {
        self.data[self.index(t, y, x, c)]
    }

    /// New video made of the listed source frames, in order.
    pub fn select_frames(&self, indices: &[usize]) -> Result<Video> {
        let n = self.frame_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &t in indices {
            if t >= self.frames {
                return Err(Error::Range {
                    what: "frame selection",
                    required: t + 1,
                    available: self.frames,
                });
            }
            data.extend_from_slice(self.frame(t));
        }
        Video::new(indices.len(), self.height, self.width, data)
    }

    pub fn to_float<T: Scalar>(&self) -> FloatVideo<T> {
        FloatVideo {
            frames: self.frames,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| T::lit(v as f64)).collect(),
        }
    }
}

/// Real-valued video on the 0–255 scale. Intermediate representation for
/// defenses and attacks; converted back with [`quantize`].
#[derive(Debug, Clone, PartialEq)]
pub struct FloatVideo<T = f64> {
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> FloatVideo<T> {
    pub fn new(frames: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        check_shape(frames, height, width, data.len())?;
        Ok(Self {
            frames,
            height,
            width,
            data,
        })
    }

    pub fn zeros(frames: usize, height: usize, width: usize) -> Result<Self> {
        let len = shape_len(frames, height, width)?;
        Self::new(frames, height, width, vec![T::zero(); len])
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            frames: self.frames,
            height: self.height,
            width: self.width,
            data: vec![T::zero(); self.data.len()],
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn frame_len(&self) -> usize {
        self.height * self.width * CHANNELS
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

    pub fn frame(&self, t: usize) -> &[T] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [T] {
        let n = self.frame_len();
        &mut self.data[t * n..(t + 1) * n]
    }

    #[inline]
    pub fn index(&self, t: usize, y: usize, x: usize, c: usize) -> usize {
        ((t * self.height + y) * self.width + x) * CHANNELS + c
    }

    pub fn same_shape<U>(&self, other: &FloatVideo<U>) -> bool {
        self.frames == other.frames && self.height == other.height && self.width == other.width
    }

    pub fn select_frames(&self, indices: &[usize]) -> Result<FloatVideo<T>> {
        let n = self.frame_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &t in indices {
            if t >= self.frames {
                return Err(Error::Range {
                    what: "frame selection",
                    required: t + 1,
                    available: self.frames,
                });
            }
            data.extend_from_slice(self.frame(t));
        }
        FloatVideo::new(indices.len(), self.height, self.width, data)
    }

    /// Largest absolute element-wise difference.
    pub fn linf_distance(&self, other: &FloatVideo<T>) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn cast<U: Scalar>(&self) -> FloatVideo<U> {
        FloatVideo {
            frames: self.frames,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Round half away from zero, then clamp to `[0, 255]`. NaN maps to 0.
pub fn quantize<T: Scalar>(fv: &FloatVideo<T>) -> Video {
    let data = fv.data.iter().map(|&v| quantize_value(v)).collect();
    Video {
        frames: fv.frames,
        height: fv.height,
        width: fv.width,
        data,
    }
}

#[inline]
pub fn quantize_value<T: Scalar>(v: T) -> u8 {
    if v.is_nan() {
        return 0;
    }
    // Float::round rounds half-way cases away from zero.
    let r = v.round().max(T::zero()).min(T::lit(255.0));
    r.to_u8().unwrap_or(0)
}

/// A video with its mean opinion score on `[1, 5]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVideo {
    pub video: Video,
    pub mos: f64,
}

impl LabeledVideo {
    pub fn new(video: Video, mos: f64) -> Result<Self> {
        if !mos.is_finite() || !(1.0..=5.0).contains(&mos) {
            return Err(Error::constraint("mos", format!("{mos} outside [1, 5]")));
        }
        Ok(Self { video, mos })
    }
}

fn shape_len(frames: usize, height: usize, width: usize) -> Result<usize> {
    if frames == 0 || height == 0 || width == 0 {
        return Err(Error::Format(format!(
            "video dimensions must be positive, got {frames}x{height}x{width}"
        )));
    }
    frames
        .checked_mul(height)
        .and_then(|v| v.checked_mul(width))
        .and_then(|v| v.checked_mul(CHANNELS))
        .ok_or_else(|| Error::Format("video dimensions overflow".into()))
}

fn check_shape(frames: usize, height: usize, width: usize, len: usize) -> Result<()> {
    let expected = shape_len(frames, height, width)?;
    if expected != len {
        return Err(Error::Format(format!(
            "pixel buffer holds {len} values, shape {frames}x{height}x{width}x3 needs {expected}"
        )));
    }
    Ok(())
}
