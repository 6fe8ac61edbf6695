//! Temporal sampling: skip sampling for the intra-frame branch, continuous
//! sampling for the inter-frame branch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video::Video;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingParams {
    /// First frame index.
    pub start: usize,
    /// Skip interval, `n ≥ 1`.
    pub interval: usize,
    /// Number of frames taken, `d ≥ 1`.
    pub count: usize,
}

/// Frame indices `s, s+n, …, s+n·(d−1)` (end-exclusive reading of `s : s+n·d : n`).
pub fn skip_indices(frames: usize, p: SamplingParams) -> Result<Vec<usize>> {
    if p.interval == 0 || p.count == 0 {
        return Err(Error::constraint("sampling", "interval and count must be >= 1"));
    }
    let last = p.start + p.interval * (p.count - 1);
    if last >= frames {
        return Err(Error::Range {
            what: "skip sampling",
            required: last + 1,
            available: frames,
        });
    }
    Ok((0..p.count).map(|k| p.start + k * p.interval).collect())
}

pub fn continuous_indices(frames: usize, start: usize, count: usize) -> Result<Vec<usize>> {
    if count == 0 {
        return Err(Error::constraint("sampling", "count must be >= 1"));
    }
    if start + count > frames {
        return Err(Error::Range {
            what: "continuous sampling",
            required: start + count,
            available: frames,
        });
    }
    Ok((start..start + count).collect())
}

pub fn skip_sample(video: &Video, p: SamplingParams) -> Result<Video> {
    video.select_frames(&skip_indices(video.frames(), p)?)
}

pub fn continuous_sample(video: &Video, start: usize, count: usize) -> Result<Video> {
    video.select_frames(&continuous_indices(video.frames(), start, count)?)
}
