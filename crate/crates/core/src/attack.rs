//! White-box PGD and black-box keep/revert patch search against any [`Scorer`].

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::defense::RegionMask;
use crate::error::{Error, Result};
use crate::rng::{substream, tag};
use crate::scalar::Scalar;
use crate::scorer::Scorer;
use crate::video::{quantize, FloatVideo, Video, CHANNELS};

pub const TRACE_HEADER: &str = "step,score,accepted,linf_so_far";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    WhiteboxLinf,
    WhiteboxL2,
    Blackbox,
}

impl AttackMode {
    pub fn label(&self) -> &'static str {
        match self {
            AttackMode::WhiteboxLinf => "whitebox_linf",
            AttackMode::WhiteboxL2 => "whitebox_l2",
            AttackMode::Blackbox => "blackbox",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub mode: AttackMode,
    /// Step size in pixel units: 1.0 or 3.0 for the 1/255 and 3/255 settings.
    pub per_iter_bound: f64,
    pub iterations: usize,
    pub query_budget: usize,
    pub patch_side: usize,
    /// Half-width of the uniform per-query noise, pixel units.
    pub query_amplitude: f64,
    /// Overall L∞ cap around the original video, pixel units.
    pub global_budget: Option<f64>,
    pub seed: u64,
    /// Spend `query_budget` queries on every frame instead of on the whole video.
    pub per_frame_budget: bool,
    /// Pick the frame of each query at random instead of round-robin.
    pub random_frames: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            mode: AttackMode::Blackbox,
            per_iter_bound: 1.0,
            iterations: 30,
            query_budget: 300,
            patch_side: 56,
            query_amplitude: 8.0,
            global_budget: None,
            seed: 0,
            per_frame_budget: false,
            random_frames: false,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.per_iter_bound > 0.0 && self.per_iter_bound.is_finite()) {
            return Err(Error::constraint("per_iter_bound", "must be > 0"));
        }
        if self.patch_side < 1 {
            return Err(Error::constraint("patch_side", "must be >= 1"));
        }
        if !(self.query_amplitude >= 0.0 && self.query_amplitude.is_finite()) {
            return Err(Error::constraint("query_amplitude", "must be >= 0"));
        }
        if let Some(b) = self.global_budget {
            if !(b >= 0.0) {
                return Err(Error::constraint("global_budget", "must be >= 0"));
            }
        }
        Ok(())
    }

    /// Iterations for white-box modes, queries for black-box.
    pub fn steps(&self) -> usize {
        match self.mode {
            AttackMode::Blackbox => self.query_budget,
            _ => self.iterations,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub score: f64,
    pub accepted: bool,
    pub linf_so_far: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub adversarial: Video,
    pub score_before: f64,
    pub score_after: f64,
    pub trace: Vec<TraceRecord>,
    pub queries_used: usize,
    /// Black-box only: union of accepted patches, per source frame.
    pub patch_mask: Option<RegionMask>,
}

impl AttackResult {
    pub fn accepted(&self) -> usize {
        self.trace.iter().filter(|r| r.accepted).count()
    }
}

/// The range boundary opposite `mos`; the midpoint maps to `score_max`.
pub fn target_score(mos: f64, score_min: f64, score_max: f64) -> f64 {
    if mos <= (score_min + score_max) / 2.0 {
        score_max
    } else {
        score_min
    }
}

fn linf<T: Scalar>(a: &FloatVideo<T>, b: &FloatVideo<T>) -> f64 {
    a.linf_distance(b).as_f64()
}

fn project<T: Scalar>(x: &mut FloatVideo<T>, orig: &FloatVideo<T>, global: Option<f64>) {
    let (lo, hi) = (T::zero(), T::lit(255.0));
    match global {
        Some(eps) => {
            let eps = T::lit(eps);
            for (v, &o) in x.data_mut().iter_mut().zip(orig.data()) {
                *v = v.max(o - eps).min(o + eps).max(lo).min(hi);
            }
        }
        None => x.data_mut().iter_mut().for_each(|v| *v = v.max(lo).min(hi)),
    }
}

/// Projected gradient descent on `(score − tar)²`.
pub fn pgd_attack<T: Scalar, S: Scorer<T> + ?Sized>(scorer: &S, video: &Video, tar: f64, cfg: &AttackConfig) -> Result<AttackResult> {
    cfg.validate()?;
    if cfg.mode == AttackMode::Blackbox {
        return Err(Error::constraint("mode", "pgd_attack needs a white-box mode"));
    }
    if !scorer.has_input_gradient() {
        return Err(Error::Capability(format!("scorer {} exposes no input gradient", scorer.name())));
    }
    let orig: FloatVideo<T> = video.to_float();
    let mut x = orig.clone();
    let mut rng = substream(cfg.seed, tag::ATTACK_SCORER, 0);
    let score_before = scorer.score(&x, &mut rng)?.as_f64();
    let bound = T::lit(cfg.per_iter_bound);
    let mut trace = Vec::with_capacity(cfg.iterations);

    for step in 0..cfg.iterations {
        let (s, g) = scorer.score_and_gradient(&x, &mut rng)?;
        let coeff = T::lit(2.0) * (s - T::lit(tar));
        let mut stepped = false;
        match cfg.mode {
            AttackMode::WhiteboxLinf => {
                for (v, &gi) in x.data_mut().iter_mut().zip(g.data()) {
                    let d = coeff * gi;
                    if d > T::zero() {
                        *v -= bound;
                        stepped = true;
                    } else if d < T::zero() {
                        *v += bound;
                        stepped = true;
                    }
                }
            }
            AttackMode::WhiteboxL2 => {
                for t in 0..x.frames() {
                    let gf = g.frame(t);
                    let norm = gf.iter().map(|&gi| (coeff * gi) * (coeff * gi)).sum::<T>().sqrt();
                    if norm == T::zero() || !norm.is_finite() {
                        continue;
                    }
                    stepped = true;
                    for (v, &gi) in x.frame_mut(t).iter_mut().zip(gf) {
                        *v -= bound * coeff * gi / norm;
                    }
                }
            }
            AttackMode::Blackbox => unreachable!(),
        }
        project(&mut x, &orig, cfg.global_budget);
        trace.push(TraceRecord {
            step,
            score: s.as_f64(),
            accepted: stepped,
            linf_so_far: linf(&x, &orig),
        });
    }
    let score_after = if cfg.iterations == 0 {
        score_before
    } else {
        scorer.score(&x, &mut rng)?.as_f64()
    };
    Ok(AttackResult {
        adversarial: quantize(&x),
        score_before,
        score_after,
        queries_used: cfg.iterations,
        trace,
        patch_mask: None,
    })
}

/// Keep/revert random patch search. A query is kept only when it strictly
/// reduces the distance to `tar`.
pub fn blackbox_attack<T: Scalar, S: Scorer<T> + ?Sized>(
    scorer: &S,
    video: &Video,
    tar: f64,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate()?;
    let (frames, h, w) = (video.frames(), video.height(), video.width());
    if cfg.patch_side > h.min(w) {
        return Err(Error::constraint(
            "patch_side",
            format!("{} exceeds the frame size {h}x{w}", cfg.patch_side),
        ));
    }
    let orig: FloatVideo<T> = video.to_float();
    let mut x = orig.clone();
    let mut attack_rng = substream(cfg.seed, tag::ATTACK, 0);
    let mut score_rng = substream(cfg.seed, tag::ATTACK_SCORER, 0);
    let score_before = scorer.score(&x, &mut score_rng)?.as_f64();
    let mut current = score_before;
    let mut mask = RegionMask::empty(frames, h, w);
    let p = cfg.patch_side;
    let amp = cfg.query_amplitude;
    let budget = if cfg.per_frame_budget {
        cfg.query_budget * frames
    } else {
        cfg.query_budget
    };
    let mut trace = Vec::with_capacity(budget);
    let mut saved = vec![T::zero(); p * p * CHANNELS];

    for q in 0..budget {
        let t = if cfg.random_frames {
            attack_rng.random_range(0..frames)
        } else {
            q % frames
        };
        let y0 = attack_rng.random_range(0..=h - p);
        let x0 = attack_rng.random_range(0..=w - p);
        {
            let frame = x.frame_mut(t);
            let mut k = 0;
            for yy in y0..y0 + p {
                let row = (yy * w + x0) * CHANNELS;
                for v in &mut frame[row..row + p * CHANNELS] {
                    saved[k] = *v;
                    k += 1;
                    let noise = if amp > 0.0 { attack_rng.random_range(-amp..=amp) } else { 0.0 };
                    *v = (*v + T::lit(noise)).max(T::zero()).min(T::lit(255.0));
                }
            }
        }
        let s = scorer.score(&x, &mut score_rng)?.as_f64();
        let accepted = (s - tar).abs() < (current - tar).abs();
        if accepted {
            current = s;
            mask.mark_rect(t, y0, x0, p, p);
        } else {
            let frame = x.frame_mut(t);
            let mut k = 0;
            for yy in y0..y0 + p {
                let row = (yy * w + x0) * CHANNELS;
                for v in &mut frame[row..row + p * CHANNELS] {
                    *v = saved[k];
                    k += 1;
                }
            }
        }
        trace.push(TraceRecord {
            step: q,
            score: s,
            accepted,
            linf_so_far: linf(&x, &orig),
        });
    }
    Ok(AttackResult {
        adversarial: quantize(&x),
        score_before,
        score_after: current,
        queries_used: budget,
        trace,
        patch_mask: Some(mask),
    })
}

/// Dispatches on `cfg.mode`.
pub fn run_attack<T: Scalar, S: Scorer<T> + ?Sized>(scorer: &S, video: &Video, tar: f64, cfg: &AttackConfig) -> Result<AttackResult> {
    match cfg.mode {
        AttackMode::Blackbox => blackbox_attack(scorer, video, tar, cfg),
        _ => pgd_attack(scorer, video, tar, cfg),
    }
}

pub fn write_trace<W: Write>(trace: &[TraceRecord], sink: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink);
    w.write_record(TRACE_HEADER.split(','))?;
    for r in trace {
        w.write_record([r.step.to_string(), r.score.to_string(), r.accepted.to_string(), r.linf_so_far.to_string()])?;
    }
    w.flush().map_err(|source| Error::Io {
        bytes_written: 0,
        source,
    })
}

pub fn write_trace_file(trace: &[TraceRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::path_io(path, e))?;
    write_trace(trace, std::io::BufWriter::new(file))
}
