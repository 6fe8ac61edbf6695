//! Procedural videos with analytically known quality labels.
//!
//! A seeded base pattern pans across the frame; degradations are applied in
//! the fixed order blur → block → noise → jitter. The label is
//! `mos = 1 + 4·exp(−(a₁·noise + a₂·blur + a₃·block + a₄·jitter))`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{quantize, FloatVideo, LabeledVideo, CHANNELS};
use crate::error::{Error, Result};
use crate::rng::seeded;

/// `(a₁, a₂, a₃, a₄)` for noise sigma, blur radius, block size and temporal jitter.
pub const MOS_COEFFS: [f64; 4] = [0.08, 0.15, 0.02, 0.25];

/// Per-frame brightness offset is `jitter · JITTER_SCALE · z`, `z ~ N(0, 1)`.
const JITTER_SCALE: f64 = 2.0;
const DETAIL_AMPLITUDE: f64 = 18.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasePattern {
    Gradient,
    Checker,
    Bands,
}

impl BasePattern {
    pub const ALL: [BasePattern; 3] = [BasePattern::Gradient, BasePattern::Checker, BasePattern::Bands];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub base_pattern: BasePattern,
    /// Gaussian noise standard deviation, pixel units.
    pub noise_sigma: f64,
    /// Box blur radius in pixels.
    pub blur_radius: u32,
    /// Side of the averaging blocks; 0 and 1 leave the frame untouched.
    pub block_size: u32,
    /// Per-frame brightness wobble strength.
    pub temporal_jitter: f64,
    pub seed: u64,
}

impl DegradationSpec {
    pub fn pristine(base_pattern: BasePattern, seed: u64) -> Self {
        Self {
            base_pattern,
            noise_sigma: 0.0,
            blur_radius: 0,
            block_size: 0,
            temporal_jitter: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::constraint("noise_sigma", "must be finite and >= 0"));
        }
        if !(self.temporal_jitter.is_finite() && self.temporal_jitter >= 0.0) {
            return Err(Error::constraint("temporal_jitter", "must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn mos(&self) -> f64 {
        let [a1, a2, a3, a4] = MOS_COEFFS;
        let load = a1 * self.noise_sigma
            + a2 * self.blur_radius as f64
            + a3 * self.block_size as f64
            + a4 * self.temporal_jitter;
        1.0 + 4.0 * (-load).exp()
    }
}

/// Sampling ranges for random dataset generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationRanges {
    pub noise_sigma_max: f64,
    pub blur_radius_max: u32,
    pub block_size_max: u32,
    pub temporal_jitter_max: f64,
    /// Probability that each degradation is active at all.
    pub active_probability: f64,
}

impl Default for DegradationRanges {
    fn default() -> Self {
        Self {
            noise_sigma_max: 15.0,
            blur_radius_max: 3,
            block_size_max: 12,
            temporal_jitter_max: 4.0,
            active_probability: 0.5,
        }
    }
}

impl DegradationRanges {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DegradationSpec {
        let p = self.active_probability.clamp(0.0, 1.0);
        let base_pattern = BasePattern::ALL[rng.random_range(0..BasePattern::ALL.len())];
        let active = |rng: &mut R| rng.random_bool(p);
        let noise_sigma = if active(rng) { rng.random_range(0.0..=self.noise_sigma_max) } else { 0.0 };
        let blur_radius = if active(rng) { rng.random_range(0..=self.blur_radius_max) } else { 0 };
        let block_size = if active(rng) { rng.random_range(0..=self.block_size_max) } else { 0 };
        let temporal_jitter = if active(rng) {
            rng.random_range(0.0..=self.temporal_jitter_max)
        } else {
            0.0
        };
        DegradationSpec {
            base_pattern,
            noise_sigma,
            blur_radius,
            block_size,
            temporal_jitter,
            seed: rng.random(),
        }
    }
}

struct PatternParams {
    colors: [[f64; 3]; 2],
    speed: (f64, f64),
    cell: f64,
    freqs: [(f64, f64); 3],
    phases: [f64; 3],
    detail_period: f64,
}

impl PatternParams {
    fn draw<R: Rng>(rng: &mut R) -> Self {
        let color = |rng: &mut R| [0; 3].map(|_: i32| rng.random_range(50.0..205.0));
        let colors = [color(rng), color(rng)];
        let speed = (rng.random_range(0.5..1.5), rng.random_range(-0.5..0.5));
        let cell = rng.random_range(6.0..12.0);
        let freqs = [0; 3].map(|_: i32| (rng.random_range(0.5..2.5), rng.random_range(0.5..2.5)));
        let phases = [0; 3].map(|_: i32| rng.random_range(0.0..2.0 * PI));
        let detail_period = rng.random_range(3.0..5.0);
        Self {
            colors,
            speed,
            cell,
            freqs,
            phases,
            detail_period,
        }
    }
}

fn render_base(pattern: BasePattern, p: &PatternParams, frames: usize, height: usize, width: usize) -> Vec<f64> {
    let mut data = vec![0.0; frames * height * width * CHANNELS];
    let (hf, wf) = (height as f64, width as f64);
    for t in 0..frames {
        let (dx, dy) = (p.speed.0 * t as f64, p.speed.1 * t as f64);
        for y in 0..height {
            for x in 0..width {
                let u = x as f64 + dx;
                let v = y as f64 + dy;
                let mix = match pattern {
                    BasePattern::Gradient => {
                        let a = (u / (wf * 2.0)).fract();
                        let b = (v / (hf * 2.0)).abs().fract();
                        0.5 * (a + b)
                    }
                    BasePattern::Checker => {
                        let cx = (u / p.cell).floor() as i64;
                        let cy = (v / p.cell).floor() as i64;
                        if (cx + cy).rem_euclid(2) == 0 {
                            0.15
                        } else {
                            0.85
                        }
                    }
                    BasePattern::Bands => {
                        let mut s = 0.0;
                        for (&(fx, fy), &ph) in p.freqs.iter().zip(&p.phases) {
                            s += (2.0 * PI * (fx * u / wf + fy * v / hf) + ph).sin();
                        }
                        0.5 + s / 6.0
                    }
                };
                let detail = DETAIL_AMPLITUDE
                    * (2.0 * PI * u / p.detail_period).sin()
                    * (2.0 * PI * v / p.detail_period).cos();
                let base = ((t * height + y) * width + x) * CHANNELS;
                for c in 0..CHANNELS {
                    let lo = p.colors[0][c];
                    let hi = p.colors[1][c];
                    data[base + c] = lo + (hi - lo) * mix + detail;
                }
            }
        }
    }
    data
}

fn box_blur(data: &mut [f64], frames: usize, height: usize, width: usize, radius: usize) {
    if radius == 0 {
        return;
    }
    let norm = 1.0 / (2 * radius + 1) as f64;
    let mut tmp = vec![0.0; height * width * CHANNELS];
    let n = height * width * CHANNELS;
    for t in 0..frames {
        let frame = &mut data[t * n..(t + 1) * n];
        // horizontal pass into tmp
        for y in 0..height {
            for x in 0..width {
                for c in 0..CHANNELS {
                    let mut acc = 0.0;
                    for k in -(radius as isize)..=(radius as isize) {
                        let xx = (x as isize + k).clamp(0, width as isize - 1) as usize;
                        acc += frame[(y * width + xx) * CHANNELS + c];
                    }
                    tmp[(y * width + x) * CHANNELS + c] = acc * norm;
                }
            }
        }
        // vertical pass back into frame
        for y in 0..height {
            for x in 0..width {
                for c in 0..CHANNELS {
                    let mut acc = 0.0;
                    for k in -(radius as isize)..=(radius as isize) {
                        let yy = (y as isize + k).clamp(0, height as isize - 1) as usize;
                        acc += tmp[(yy * width + x) * CHANNELS + c];
                    }
                    frame[(y * width + x) * CHANNELS + c] = acc * norm;
                }
            }
        }
    }
}

fn blockify(data: &mut [f64], frames: usize, height: usize, width: usize, block: usize) {
    if block < 2 {
        return;
    }
    let n = height * width * CHANNELS;
    for t in 0..frames {
        let frame = &mut data[t * n..(t + 1) * n];
        for by in (0..height).step_by(block) {
            for bx in (0..width).step_by(block) {
                let (y1, x1) = ((by + block).min(height), (bx + block).min(width));
                let count = ((y1 - by) * (x1 - bx)) as f64;
                for c in 0..CHANNELS {
                    let mut sum = 0.0;
                    for y in by..y1 {
                        for x in bx..x1 {
                            sum += frame[(y * width + x) * CHANNELS + c];
                        }
                    }
                    let mean = sum / count;
                    for y in by..y1 {
                        for x in bx..x1 {
                            frame[(y * width + x) * CHANNELS + c] = mean;
                        }
                    }
                }
            }
        }
    }
}

/// Renders a labelled video. Deterministic in `(spec, frames, height, width)`.
pub fn synth_video(spec: &DegradationSpec, frames: usize, height: usize, width: usize) -> Result<LabeledVideo> {
    spec.validate()?;
    // shape check up front
    FloatVideo::<f64>::zeros(frames, height, width)?;

    let mut rng = seeded(spec.seed);
    let params = PatternParams::draw(&mut rng);
    let mut data = render_base(spec.base_pattern, &params, frames, height, width);

    box_blur(&mut data, frames, height, width, spec.blur_radius as usize);
    blockify(&mut data, frames, height, width, spec.block_size as usize);
    if spec.noise_sigma > 0.0 {
        for v in data.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += spec.noise_sigma * z;
        }
    }
    if spec.temporal_jitter > 0.0 {
        let n = height * width * CHANNELS;
        for t in 0..frames {
            let z: f64 = StandardNormal.sample(&mut rng);
            let offset = spec.temporal_jitter * JITTER_SCALE * z;
            data[t * n..(t + 1) * n].iter_mut().for_each(|v| *v += offset);
        }
    }

    let video = quantize(&FloatVideo::new(frames, height, width, data)?);
    LabeledVideo::new(video, spec.mos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    #[test]
    fn pristine_has_top_score() {
        for p in BasePattern::ALL {
            let lv = synth_video(&DegradationSpec::pristine(p, 3), 2, 8, 8).unwrap();
            assert_eq!(lv.mos, 5.0);
        }
    }

    #[test]
    fn more_noise_lower_mos() {
        let mut a = DegradationSpec::pristine(BasePattern::Bands, 1);
        a.noise_sigma = 2.0;
        let mut b = a;
        b.noise_sigma = 4.0;
        assert!(a.mos() > b.mos());
    }

    #[test]
    fn deterministic() {
        let spec = DegradationSpec {
            base_pattern: BasePattern::Checker,
            noise_sigma: 5.0,
            blur_radius: 1,
            block_size: 4,
            temporal_jitter: 1.5,
            seed: 99,
        };
        let a = synth_video(&spec, 3, 16, 12).unwrap();
        let b = synth_video(&spec, 3, 16, 12).unwrap();
        assert_eq!(a, b);
        let mut other = spec;
        other.seed = 100;
        assert_ne!(a.video, synth_video(&other, 3, 16, 12).unwrap().video);
    }

    #[test]
    fn degradations_change_content() {
        let base = DegradationSpec::pristine(BasePattern::Bands, 5);
        let clean = synth_video(&base, 2, 16, 16).unwrap().video;
        for f in [
            |s: &mut DegradationSpec| s.noise_sigma = 6.0,
            |s: &mut DegradationSpec| s.blur_radius = 2,
            |s: &mut DegradationSpec| s.block_size = 4,
            |s: &mut DegradationSpec| s.temporal_jitter = 3.0,
        ] {
            let mut spec = base;
            f(&mut spec);
            assert_ne!(synth_video(&spec, 2, 16, 16).unwrap().video, clean);
        }
    }

    #[test]
    fn rejects_negative_noise() {
        let mut s = DegradationSpec::pristine(BasePattern::Gradient, 0);
        s.noise_sigma = -1.0;
        assert!(synth_video(&s, 1, 4, 4).is_err());
    }

    #[test]
    fn default_ranges_span_the_scale() {
        let ranges = DegradationRanges::default();
        let mut rng = seeded(8);
        let mos: Vec<f64> = (0..500).map(|_| ranges.sample(&mut rng).mos()).collect();
        let lo = mos.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = mos.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo < 1.6, "min mos {lo}");
        assert_eq!(hi, 5.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn label_monotone_in_each_parameter(
            which in 0usize..4,
            lo in 0.0f64..10.0,
            gap in 0.01f64..10.0,
            seed in any::<u64>(),
        ) {
            let ranges = DegradationRanges { active_probability: 1.0, ..Default::default() };
            let base = ranges.sample(&mut seeded(seed));
            let (mut a, mut b) = (base, base);
            match which {
                0 => { a.noise_sigma = lo; b.noise_sigma = lo + gap; }
                1 => { a.blur_radius = lo as u32; b.blur_radius = lo as u32 + 1 + gap as u32; }
                2 => { a.block_size = lo as u32; b.block_size = lo as u32 + 1 + gap as u32; }
                _ => { a.temporal_jitter = lo; b.temporal_jitter = lo + gap; }
            }
            prop_assert!(a.mos() > b.mos());
        }
    }
}
