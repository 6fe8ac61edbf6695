//! Randomized input transformations applied in front of a quality scorer:
//! temporal sampling, spatial grid fragmentation, guardian maps and resize.

mod grid;
mod guardian;
mod pipeline;
mod resize;
mod sampling;

pub use grid::{center_crop_window, fragment_index_map, grid_fragment, sample_grid_offsets, GridParams};
pub use guardian::{apply_guardian_map, gen_guardian_map, GuardianMap};
pub use pipeline::{BranchInput, DefensePipeline, PreparedInput, Realization};
pub use resize::{nearest_source, resize_bilinear, ResizePlan};
pub use sampling::{continuous_indices, continuous_sample, skip_indices, skip_sample, SamplingParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Structural constants of the two-branch pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineParams {
    /// Skip interval `n` of the intra branch.
    pub skip_interval: usize,
    /// Frames `d` sampled by each branch.
    pub frames: usize,
    /// Grid cells per side `G`.
    pub grids: usize,
    /// Patch side `S`.
    pub patch: usize,
    /// Inter-branch resize target (height, width).
    pub resize: (usize, usize),
    /// Upper bound on inter-branch segments.
    pub segments: usize,
}

impl PipelineParams {
    /// n=2, d=32, G=7, S=32, resize 224×224, 16 segments.
    pub const PAPER: PipelineParams = PipelineParams {
        skip_interval: 2,
        frames: 32,
        grids: 7,
        patch: 32,
        resize: (224, 224),
        segments: 16,
    };

    /// Desk-scale preset for fast experiments.
    pub const DESK: PipelineParams = PipelineParams {
        skip_interval: 2,
        frames: 8,
        grids: 4,
        patch: 8,
        resize: (56, 56),
        segments: 16,
    };

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("skip_interval", self.skip_interval),
            ("frames", self.frames),
            ("grids", self.grids),
            ("patch", self.patch),
            ("resize_height", self.resize.0),
            ("resize_width", self.resize.1),
            ("segments", self.segments),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::constraint(name, "must be >= 1"));
            }
        }
        Ok(())
    }

    /// Side of the intra-branch frames, `G·S`.
    pub fn intra_side(&self) -> usize {
        self.grids * self.patch
    }

    /// Segments actually used: frame differences are split into at most
    /// `segments` groups, and there are `d − 1` of them.
    pub fn effective_segments(&self) -> usize {
        self.segments.min(self.frames.saturating_sub(1)).max(1)
    }

    /// Minimum clip length both branches can sample from.
    pub fn min_frames(&self) -> usize {
        (self.skip_interval * (self.frames - 1) + 1).max(self.frames)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardianRegion {
    Full,
    AttackedOnly,
    UntouchedOnly,
}

/// Per-defense toggles for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefenseConfig {
    pub intra_guardian: bool,
    pub inter_guardian: bool,
    /// Random grid fragmentation and a random intra start frame; when off the
    /// intra branch resizes whole frames sampled from frame 0.
    pub grid_sampling: bool,
    pub inter_branch: bool,
    pub guardian_region: GuardianRegion,
    pub per_frame_guardian: bool,
    /// Scores are averaged over this many independent draws.
    pub stochastic_passes: usize,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl DefenseConfig {
    pub fn full() -> Self {
        Self {
            intra_guardian: true,
            inter_guardian: true,
            grid_sampling: true,
            inter_branch: true,
            guardian_region: GuardianRegion::Full,
            per_frame_guardian: false,
            stochastic_passes: 1,
        }
    }

    pub fn none() -> Self {
        Self {
            intra_guardian: false,
            inter_guardian: false,
            grid_sampling: false,
            inter_branch: false,
            guardian_region: GuardianRegion::Full,
            per_frame_guardian: false,
            stochastic_passes: 1,
        }
    }

    pub fn guardian_only() -> Self {
        Self {
            intra_guardian: true,
            ..Self::none()
        }
    }

    pub fn grid_only() -> Self {
        Self {
            grid_sampling: true,
            ..Self::none()
        }
    }

    pub fn inter_only() -> Self {
        Self {
            inter_branch: true,
            ..Self::none()
        }
    }

    /// True when some transform draws randomness.
    pub fn is_stochastic(&self) -> bool {
        self.intra_guardian || (self.inter_branch && self.inter_guardian) || self.grid_sampling || self.inter_branch
    }

    pub fn validate(&self) -> Result<()> {
        if self.stochastic_passes == 0 {
            return Err(Error::constraint("stochastic_passes", "must be >= 1"));
        }
        Ok(())
    }

    /// Short label for reports, e.g. `gm+grid+inter` or `none`.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.intra_guardian || (self.inter_branch && self.inter_guardian) {
            parts.push(match self.guardian_region {
                GuardianRegion::Full => "gm",
                GuardianRegion::AttackedOnly => "gm_attacked",
                GuardianRegion::UntouchedOnly => "gm_untouched",
            });
        }
        if self.grid_sampling {
            parts.push("grid");
        }
        if self.inter_branch {
            parts.push("inter");
        }
        if self.per_frame_guardian {
            parts.push("pfgm");
        }
        if parts.is_empty() {
            "none".to_string()
        } else {
            parts.join("+")
        }
    }
}

/// Per-source-frame boolean masks in source pixel coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    pub height: usize,
    pub width: usize,
    /// One `H×W` mask per source frame.
    pub frames: Vec<Vec<bool>>,
}

impl RegionMask {
    pub fn empty(frames: usize, height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            frames: vec![vec![false; height * width]; frames],
        }
    }

    pub fn mark_rect(&mut self, frame: usize, y: usize, x: usize, side_h: usize, side_w: usize) {
        let m = &mut self.frames[frame];
        for yy in y..(y + side_h).min(self.height) {
            for xx in x..(x + side_w).min(self.width) {
                m[yy * self.width + xx] = true;
            }
        }
    }

    pub fn complement(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            frames: self.frames.iter().map(|m| m.iter().map(|&b| !b).collect()).collect(),
        }
    }

    /// Fraction of marked pixels over all frames.
    pub fn coverage(&self) -> f64 {
        let total: usize = self.frames.iter().map(|m| m.len()).sum();
        let set: usize = self.frames.iter().map(|m| m.iter().filter(|&&b| b).count()).sum();
        set as f64 / total.max(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_hold_documented_constants() {
        let p = PipelineParams::PAPER;
        assert_eq!((p.skip_interval, p.frames, p.grids, p.patch, p.resize), (2, 32, 7, 32, (224, 224)));
        assert_eq!(p.intra_side(), 224);
        assert_eq!(p.effective_segments(), 16);
        assert_eq!(p.min_frames(), 63);
        assert_eq!(PipelineParams::DESK.effective_segments(), 7);
    }

    #[test]
    fn labels() {
        assert_eq!(DefenseConfig::none().label(), "none");
        assert_eq!(DefenseConfig::full().label(), "gm+grid+inter");
        assert_eq!(DefenseConfig::grid_only().label(), "grid");
        assert!(!DefenseConfig::none().is_stochastic());
        assert!(DefenseConfig::guardian_only().is_stochastic());
    }

    #[test]
    fn region_mask_ops() {
        let mut m = RegionMask::empty(2, 4, 4);
        m.mark_rect(1, 2, 2, 4, 4);
        assert_eq!(m.frames[1].iter().filter(|&&b| b).count(), 4);
        assert!((m.coverage() - 4.0 / 32.0).abs() < 1e-12);
        assert!((m.complement().coverage() - 28.0 / 32.0).abs() < 1e-12);
    }
}
