//! Guardian maps: frame-shaped ±1 tensors added pixel-wise before scoring.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::video::{FloatVideo, CHANNELS};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GuardianMap {
    height: usize,
    width: usize,
    /// `H×W×3`, each exactly −1 or +1.
    values: Vec<i8>,
    /// `H×W`; when present only masked pixels are modified.
    region_mask: Option<Vec<bool>>,
}

/// Independent fair ±1 draws for every element of an `H×W×3` frame.
pub fn gen_guardian_map<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> GuardianMap {
    let len = height * width * CHANNELS;
    let mut values = Vec::with_capacity(len);
    while values.len() < len {
        let bits: u64 = rng.random();
        let take = (len - values.len()).min(64);
        values.extend((0..take).map(|k| if bits >> k & 1 == 1 { 1i8 } else { -1i8 }));
    }
    GuardianMap {
        height,
        width,
        values,
        region_mask: None,
    }
}

impl GuardianMap {
    pub fn from_values(height: usize, width: usize, values: Vec<i8>) -> Result<Self> {
        if values.len() != height * width * CHANNELS {
            return Err(Error::Grid(format!(
                "guardian map of {} values for a {height}x{width} frame",
                values.len()
            )));
        }
        if values.iter().any(|&v| v != 1 && v != -1) {
            return Err(Error::Grid("guardian values must be -1 or +1".into()));
        }
        Ok(Self {
            height,
            width,
            values,
            region_mask: None,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn values(&self) -> &[i8] {
        &self.values
    }
    pub fn region_mask(&self) -> Option<&[bool]> {
        self.region_mask.as_deref()
    }

    pub fn with_region(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.height * self.width {
            return Err(Error::Grid(format!(
                "region mask of {} pixels for a {}x{} map",
                mask.len(),
                self.height,
                self.width
            )));
        }
        self.region_mask = Some(mask);
        Ok(self)
    }

    pub fn without_region(mut self) -> Self {
        self.region_mask = None;
        self
    }

    /// Adds the map to one interleaved frame in place, clamping to `[0, 255]`.
    /// `mask` overrides the map's own region. When `pass` is given it receives,
    /// per element, whether the output still depends on the input (no clamp bound).
    pub fn apply_frame<T: Scalar>(&self, frame: &mut [T], mask: Option<&[bool]>, mut pass: Option<&mut [bool]>) {
        debug_assert_eq!(frame.len(), self.values.len());
        let mask = mask.or(self.region_mask.as_deref());
        let (lo, hi) = (T::zero(), T::lit(255.0));
        for (i, v) in frame.iter_mut().enumerate() {
            if let Some(m) = mask {
                if !m[i / CHANNELS] {
                    if let Some(p) = pass.as_deref_mut() {
                        p[i] = true;
                    }
                    continue;
                }
            }
            let raw = *v + T::lit(self.values[i] as f64);
            let inside = raw >= lo && raw <= hi;
            *v = raw.max(lo).min(hi);
            if let Some(p) = pass.as_deref_mut() {
                p[i] = inside;
            }
        }
    }
}

/// Adds the same map to every frame, clamping to `[0, 255]`.
pub fn apply_guardian_map<T: Scalar>(fv: &FloatVideo<T>, gm: &GuardianMap) -> Result<FloatVideo<T>> {
    if fv.height() != gm.height || fv.width() != gm.width {
        return Err(Error::Grid(format!(
            "guardian map {}x{} does not match frame {}x{}",
            gm.height,
            gm.width,
            fv.height(),
            fv.width()
        )));
    }
    let mut out = fv.clone();
    for t in 0..out.frames() {
        gm.apply_frame(out.frame_mut(t), None, None);
    }
    Ok(out)
}
