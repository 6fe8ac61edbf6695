//! The two-branch input pipeline and its adjoint.
//!
//! Intra branch: skip sampling → grid fragmentation (or plain resize) →
//! guardian map. Inter branch: continuous sampling → resize → guardian map.
//! All random draws for one scoring call are collected in a [`Realization`]
//! first, so a forward pass and its gradient see exactly the same transform.

use rand::Rng;

use super::grid::{center_crop_window, fragment_index_map, sample_grid_offsets, GridParams};
use super::guardian::{gen_guardian_map, GuardianMap};
use super::resize::{nearest_source, ResizePlan};
use super::sampling::{continuous_indices, skip_indices, SamplingParams};
use super::{DefenseConfig, GuardianRegion, PipelineParams, RegionMask};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::video::{FloatVideo, CHANNELS};

/// Random draws of one scoring call.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub intra_start: usize,
    pub inter_start: Option<usize>,
    pub grid: Option<GridParams>,
    /// Empty, one shared map, or one map per sampled frame.
    pub intra_guardian: Vec<GuardianMap>,
    pub inter_guardian: Vec<GuardianMap>,
}

#[derive(Debug, Clone)]
enum Spatial<T> {
    /// Output pixel `i` copies source pixel `map[i]` (flat `y·W + x`).
    Gather(Vec<usize>),
    Resize(ResizePlan<T>),
}

impl<T: Scalar> Spatial<T> {
    fn apply(&self, src: &[T], out: &mut Vec<T>) {
        match self {
            Spatial::Gather(map) => {
                for &p in map {
                    out.extend_from_slice(&src[p * CHANNELS..p * CHANNELS + CHANNELS]);
                }
            }
            Spatial::Resize(plan) => plan.forward_into(src, out),
        }
    }

    fn adjoint(&self, dout: &[T], dsrc: &mut [T]) {
        match self {
            Spatial::Gather(map) => {
                for (i, &p) in map.iter().enumerate() {
                    for c in 0..CHANNELS {
                        dsrc[p * CHANNELS + c] += dout[i * CHANNELS + c];
                    }
                }
            }
            Spatial::Resize(plan) => plan.backward_accumulate(dout, dsrc),
        }
    }

    /// Representative source pixel of every output pixel.
    fn representative(&self, src_w: usize) -> Vec<usize> {
        match self {
            Spatial::Gather(map) => map.clone(),
            Spatial::Resize(plan) => {
                let rows = nearest_source(plan.in_h, plan.out_h);
                let cols = nearest_source(plan.in_w, plan.out_w);
                rows.iter().flat_map(|&y| cols.iter().map(move |&x| y * src_w + x)).collect()
            }
        }
    }
}

/// Frames entering one branch encoder.
#[derive(Debug, Clone)]
pub struct BranchInput<T> {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// `frames × height × width × 3`, interleaved.
    pub data: Vec<T>,
    source_frames: Vec<usize>,
    spatial: Spatial<T>,
    /// Elements whose value still depends on the input after guardian clamping.
    pass: Option<Vec<bool>>,
}

impl<T: Scalar> BranchInput<T> {
    pub fn frame_len(&self) -> usize {
        self.height * self.width * CHANNELS
    }

    pub fn frame(&self, k: usize) -> &[T] {
        let n = self.frame_len();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn source_frames(&self) -> &[usize] {
        &self.source_frames
    }
}

#[derive(Debug, Clone)]
pub struct PreparedInput<T> {
    pub intra: BranchInput<T>,
    pub inter: Option<BranchInput<T>>,
    source_shape: (usize, usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefensePipeline {
    pub params: PipelineParams,
    pub config: DefenseConfig,
}

fn draw_excluding<R: Rng + ?Sized>(rng: &mut R, hi: usize, avoid: Option<usize>) -> usize {
    match avoid {
        Some(a) if hi > 0 || a != 0 => loop {
            let v = rng.random_range(0..=hi);
            if v != a {
                break v;
            }
        },
        _ => rng.random_range(0..=hi),
    }
}

impl DefensePipeline {
    pub fn new(params: PipelineParams, config: DefenseConfig) -> Self {
        Self { params, config }
    }

    fn intra_guardian_on(&self) -> bool {
        self.config.intra_guardian
    }

    fn inter_guardian_on(&self) -> bool {
        self.config.inter_branch && self.config.inter_guardian
    }

    fn start_bounds(&self, frames: usize) -> Result<(usize, Option<usize>)> {
        let p = &self.params;
        let intra_need = p.skip_interval * (p.frames - 1) + 1;
        if intra_need > frames {
            return Err(Error::Range {
                what: "skip sampling",
                required: intra_need,
                available: frames,
            });
        }
        let inter_hi = if self.config.inter_branch {
            if p.frames > frames {
                return Err(Error::Range {
                    what: "continuous sampling",
                    required: p.frames,
                    available: frames,
                });
            }
            Some(frames - p.frames)
        } else {
            None
        };
        Ok((frames - intra_need, inter_hi))
    }

    fn intra_grid_window(&self, height: usize, width: usize) -> Result<(usize, usize, usize, usize)> {
        let p = &self.params;
        let window = center_crop_window(height, width, p.grids);
        if window.2 < p.intra_side() || window.3 < p.intra_side() {
            return Err(Error::Grid(format!(
                "frame {height}x{width} too small for a {}x{} grid of {} pixel patches",
                p.grids, p.grids, p.patch
            )));
        }
        Ok(window)
    }

    /// Draws every random quantity for one call, in a fixed order that does
    /// not depend on pixel values.
    pub fn draw<R: Rng + ?Sized>(&self, frames: usize, height: usize, width: usize, rng: &mut R) -> Result<Realization> {
        self.params.validate()?;
        let p = &self.params;
        let (intra_hi, inter_hi) = self.start_bounds(frames)?;

        // the inter clip start is random whenever the branch runs; the intra
        // start only with grid sampling, otherwise frame 0
        let (intra_start, inter_start) = if self.config.grid_sampling {
            let inter = inter_hi.map(|hi| rng.random_range(0..=hi));
            (draw_excluding(rng, intra_hi, inter), inter)
        } else {
            (0, inter_hi.map(|hi| draw_excluding(rng, hi, Some(0))))
        };

        let grid = if self.config.grid_sampling {
            let (_, _, h, w) = self.intra_grid_window(height, width)?;
            Some(sample_grid_offsets(h, w, p.grids, p.patch, rng)?)
        } else {
            None
        };

        let maps = |on: bool, h: usize, w: usize, rng: &mut R| -> Vec<GuardianMap> {
            if !on {
                return Vec::new();
            }
            let count = if self.config.per_frame_guardian { p.frames } else { 1 };
            (0..count).map(|_| gen_guardian_map(h, w, rng)).collect()
        };
        let side = p.intra_side();
        let intra_guardian = maps(self.intra_guardian_on(), side, side, rng);
        let inter_guardian = maps(self.inter_guardian_on(), p.resize.0, p.resize.1, rng);

        Ok(Realization {
            intra_start,
            inter_start,
            grid,
            intra_guardian,
            inter_guardian,
        })
    }

    fn branch<T: Scalar>(
        &self,
        video: &FloatVideo<T>,
        source_frames: Vec<usize>,
        spatial: Spatial<T>,
        out_h: usize,
        out_w: usize,
        maps: &[GuardianMap],
        region: Option<&RegionMask>,
    ) -> Result<BranchInput<T>> {
        let frame_len = out_h * out_w * CHANNELS;
        let mut data = Vec::with_capacity(source_frames.len() * frame_len);
        for &t in &source_frames {
            spatial.apply(video.frame(t), &mut data);
        }

        let mut pass = None;
        if !maps.is_empty() {
            let region = match self.config.guardian_region {
                GuardianRegion::Full => None,
                mode => {
                    let r = region.ok_or_else(|| {
                        Error::Model(format!("guardian region {mode:?} needs a region mask"))
                    })?;
                    if r.height != video.height() || r.width != video.width() || r.frames.len() != video.frames() {
                        return Err(Error::Model("region mask shape does not match the video".into()));
                    }
                    Some((r, mode == GuardianRegion::UntouchedOnly))
                }
            };
            let reps = region.map(|_| spatial.representative(video.width()));
            let mut flags = vec![true; data.len()];
            for (k, &t) in source_frames.iter().enumerate() {
                let gm = &maps[k.min(maps.len() - 1)];
                let mask: Option<Vec<bool>> = match (&region, &reps) {
                    (Some((r, invert)), Some(reps)) => {
                        Some(reps.iter().map(|&s| r.frames[t][s] != *invert).collect())
                    }
                    _ => None,
                };
                let range = k * frame_len..(k + 1) * frame_len;
                gm.apply_frame(&mut data[range.clone()], mask.as_deref(), Some(&mut flags[range]));
            }
            pass = Some(flags);
        }

        Ok(BranchInput {
            frames: source_frames.len(),
            height: out_h,
            width: out_w,
            data,
            source_frames,
            spatial,
            pass,
        })
    }

    /// Builds both branch inputs for the given draws. `region` is only read
    /// when the guardian region is not `Full`.
    pub fn prepare<T: Scalar>(
        &self,
        video: &FloatVideo<T>,
        real: &Realization,
        region: Option<&RegionMask>,
    ) -> Result<PreparedInput<T>> {
        let p = &self.params;
        let (h, w) = (video.height(), video.width());
        let side = p.intra_side();

        let intra_frames = skip_indices(
            video.frames(),
            SamplingParams {
                start: real.intra_start,
                interval: p.skip_interval,
                count: p.frames,
            },
        )?;
        let intra_spatial = match &real.grid {
            Some(gp) => {
                let (y0, x0, ch, cw) = self.intra_grid_window(h, w)?;
                let map = fragment_index_map(ch, cw, gp)?
                    .into_iter()
                    .map(|i| (y0 + i / cw) * w + x0 + i % cw)
                    .collect();
                Spatial::Gather(map)
            }
            None => Spatial::Resize(ResizePlan::new(h, w, side, side)),
        };
        let intra = self.branch(video, intra_frames, intra_spatial, side, side, &real.intra_guardian, region)?;

        let inter = match real.inter_start {
            Some(start) if self.config.inter_branch => {
                let frames = continuous_indices(video.frames(), start, p.frames)?;
                let plan = ResizePlan::new(h, w, p.resize.0, p.resize.1);
                Some(self.branch(
                    video,
                    frames,
                    Spatial::Resize(plan),
                    p.resize.0,
                    p.resize.1,
                    &real.inter_guardian,
                    region,
                )?)
            }
            _ => None,
        };

        Ok(PreparedInput {
            intra,
            inter,
            source_shape: (video.frames(), h, w),
        })
    }

    /// Pulls branch-input gradients back to source pixels. Unconsumed pixels get 0.
    pub fn backward<T: Scalar>(
        &self,
        prepared: &PreparedInput<T>,
        d_intra: &[T],
        d_inter: Option<&[T]>,
    ) -> Result<FloatVideo<T>> {
        let (frames, h, w) = prepared.source_shape;
        let mut grad = FloatVideo::zeros(frames, h, w)?;
        let mut pull = |branch: &BranchInput<T>, d: &[T]| -> Result<()> {
            if d.len() != branch.data.len() {
                return Err(Error::Model(format!(
                    "branch gradient has {} values, expected {}",
                    d.len(),
                    branch.data.len()
                )));
            }
            let n = branch.frame_len();
            let mut buf = vec![T::zero(); n];
            for (k, &t) in branch.source_frames.iter().enumerate() {
                buf.copy_from_slice(&d[k * n..(k + 1) * n]);
                if let Some(pass) = &branch.pass {
                    for (g, &ok) in buf.iter_mut().zip(&pass[k * n..(k + 1) * n]) {
                        if !ok {
                            *g = T::zero();
                        }
                    }
                }
                branch.spatial.adjoint(&buf, grad.frame_mut(t));
            }
            Ok(())
        };
        pull(&prepared.intra, d_intra)?;
        if let (Some(branch), Some(d)) = (&prepared.inter, d_inter) {
            pull(branch, d)?;
        }
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn ramp_video(frames: usize, h: usize, w: usize) -> FloatVideo<f64> {
        let data = (0..frames * h * w * 3).map(|i| (i % 251) as f64).collect();
        FloatVideo::new(frames, h, w, data).unwrap()
    }

    fn small_params() -> PipelineParams {
        PipelineParams {
            skip_interval: 2,
            frames: 3,
            grids: 2,
            patch: 4,
            resize: (6, 6),
            segments: 4,
        }
    }

    #[test]
    fn no_defense_is_deterministic() {
        let pipe = DefensePipeline::new(small_params(), DefenseConfig::none());
        let a = pipe.draw(8, 12, 12, &mut seeded(1)).unwrap();
        let b = pipe.draw(8, 12, 12, &mut seeded(2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.intra_start, 0);
        assert!(a.inter_start.is_none() && a.grid.is_none());
    }

    #[test]
    fn starts_differ_when_feasible() {
        let pipe = DefensePipeline::new(small_params(), DefenseConfig::full());
        for s in 0..200 {
            let r = pipe.draw(8, 12, 12, &mut seeded(s)).unwrap();
            assert_ne!(Some(r.intra_start), r.inter_start);
            assert!(r.intra_start <= 3 && r.inter_start.unwrap() <= 5);
            assert_eq!(r.intra_guardian.len(), 1);
            assert_eq!(r.inter_guardian.len(), 1);
        }
        let inter = DefensePipeline::new(small_params(), DefenseConfig::inter_only());
        for s in 0..50 {
            let r = inter.draw(8, 12, 12, &mut seeded(s)).unwrap();
            assert_eq!(r.intra_start, 0);
            assert_ne!(r.inter_start, Some(0));
        }
    }

    #[test]
    fn too_short_video() {
        let pipe = DefensePipeline::new(small_params(), DefenseConfig::none());
        assert!(matches!(pipe.draw(4, 12, 12, &mut seeded(0)), Err(Error::Range { .. })));
    }

    #[test]
    fn per_frame_maps() {
        let cfg = DefenseConfig {
            per_frame_guardian: true,
            ..DefenseConfig::full()
        };
        let r = DefensePipeline::new(small_params(), cfg).draw(8, 12, 12, &mut seeded(0)).unwrap();
        assert_eq!(r.intra_guardian.len(), 3);
        assert_ne!(r.intra_guardian[0], r.intra_guardian[1]);
    }

    #[test]
    fn grid_branch_copies_source_pixels() {
        let pipe = DefensePipeline::new(small_params(), DefenseConfig::grid_only());
        // 13x13 gets center-cropped to 12x12
        let v = ramp_video(6, 13, 13);
        let real = pipe.draw(6, 13, 13, &mut seeded(4)).unwrap();
        let prep = pipe.prepare(&v, &real, None).unwrap();
        assert_eq!((prep.intra.frames, prep.intra.height, prep.intra.width), (3, 8, 8));
        let gp = real.grid.as_ref().unwrap();
        let (i, j) = (1, 0);
        let (oh, ow) = gp.offsets[i * 2 + j];
        let src_y = i * 6 + oh; // cell side 6 inside the crop
        let src_x = j * 6 + ow;
        let t = prep.intra.source_frames()[1];
        let expected = v.data()[v.index(t, src_y, src_x, 2)];
        let got = prep.intra.frame(1)[((i * 4) * 8 + j * 4) * 3 + 2];
        assert_eq!(got, expected);
    }

    #[test]
    fn region_requires_mask() {
        let cfg = DefenseConfig {
            guardian_region: GuardianRegion::AttackedOnly,
            ..DefenseConfig::guardian_only()
        };
        let pipe = DefensePipeline::new(small_params(), cfg);
        let v = ramp_video(6, 8, 8);
        let real = pipe.draw(6, 8, 8, &mut seeded(0)).unwrap();
        assert!(pipe.prepare(&v, &real, None).is_err());
        let mask = RegionMask::empty(6, 8, 8);
        let clean = DefensePipeline::new(small_params(), DefenseConfig::none());
        let reference = clean.prepare(&v, &clean.draw(6, 8, 8, &mut seeded(0)).unwrap(), None).unwrap();
        let prep = pipe.prepare(&v, &real, Some(&mask)).unwrap();
        // empty attacked region: nothing touched
        assert_eq!(prep.intra.data, reference.intra.data);
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // With guardian addition being a constant shift, <P(x)-P(0), y> == <x, Pᵀ y>
        // holds away from clamping; use mid-range values.
        let pipe = DefensePipeline::new(small_params(), DefenseConfig::full());
        let mut rng = seeded(9);
        let v: FloatVideo<f64> = FloatVideo::new(
            8,
            12,
            12,
            (0..8 * 12 * 12 * 3).map(|_| rng.random_range(20.0..230.0)).collect(),
        )
        .unwrap();
        let base = FloatVideo::new(8, 12, 12, vec![128.0; 8 * 12 * 12 * 3]).unwrap();
        let real = pipe.draw(8, 12, 12, &mut rng).unwrap();
        let px = pipe.prepare(&v, &real, None).unwrap();
        let p0 = pipe.prepare(&base, &real, None).unwrap();
        let y_intra: Vec<f64> = (0..px.intra.data.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y_inter: Vec<f64> = (0..px.inter.as_ref().unwrap().data.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = pipe.backward(&px, &y_intra, Some(&y_inter)).unwrap();
        let mut lhs = 0.0;
        for (a, (b, y)) in px.intra.data.iter().zip(p0.intra.data.iter().zip(&y_intra)) {
            lhs += (a - b) * y;
        }
        let (xi, bi) = (px.inter.as_ref().unwrap(), p0.inter.as_ref().unwrap());
        for (a, (b, y)) in xi.data.iter().zip(bi.data.iter().zip(&y_inter)) {
            lhs += (a - b) * y;
        }
        let rhs: f64 = v.data().iter().zip(g.data()).map(|(x, gx)| (x - 128.0) * gx).sum();
        assert!((lhs - rhs).abs() < 1e-8 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn unconsumed_frames_get_zero_gradient() {
        let pipe = DefensePipeline::new(small_params(), DefenseConfig::none());
        let v = ramp_video(8, 8, 8);
        let real = pipe.draw(8, 8, 8, &mut seeded(0)).unwrap();
        let prep = pipe.prepare(&v, &real, None).unwrap();
        let ones = vec![1.0; prep.intra.data.len()];
        let g = pipe.backward(&prep, &ones, None).unwrap();
        for t in [1, 3, 5, 6, 7] {
            assert!(g.frame(t).iter().all(|&x| x == 0.0), "frame {t}");
        }
        assert!(g.frame(0).iter().any(|&x| x != 0.0));
    }
}
