//! Closed-form differentiable scorer:
//! `1 + 4·σ(w₁·sharpness − w₂·noise − w₃·temporal + b)` on pixels scaled to `[0, 1]`.

use serde::{Deserialize, Serialize};

use super::Scorer;
use crate::defense::{DefensePipeline, RegionMask};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::scalar::Scalar;
use crate::video::{FloatVideo, CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticWeights {
    pub sharpness: f64,
    pub noise: f64,
    pub temporal: f64,
    pub bias: f64,
}

impl Default for AnalyticWeights {
    fn default() -> Self {
        Self {
            sharpness: 8.0,
            noise: 2.0,
            temporal: 4.0,
            bias: -0.5,
        }
    }
}

impl AnalyticWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sharpness", self.sharpness),
            ("noise", self.noise),
            ("temporal", self.temporal),
            ("bias", self.bias),
        ] {
            if !v.is_finite() {
                return Err(Error::constraint(name, "weight must be finite"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticFeatures<T> {
    /// Mean smoothed absolute horizontal difference plus the same vertically.
    pub sharpness: T,
    /// Mean squared 4-neighbour Laplacian over interior pixels.
    pub noise: T,
    /// Mean smoothed absolute difference between consecutive frames.
    pub temporal: T,
}

/// Smoothing width of the absolute value, one 8-bit level on the `[0, 1]` scale.
const SMOOTH: f64 = 1.0 / 255.0;

/// `√(d² + δ²) − δ` and its derivative.
fn smooth_abs<T: Scalar>(d: T) -> (T, T) {
    let delta = T::lit(SMOOTH);
    let r = (d * d + delta * delta).sqrt();
    (r - delta, d / r)
}

/// Value-only pass over contiguous rows.
fn features_value<T: Scalar>(data: &[T], frames: usize, h: usize, w: usize) -> [T; 4] {
    let s = T::lit(1.0 / 255.0);
    let row = w * CHANNELS;
    let plane = h * row;
    let diff_sum = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&p, &q)| smooth_abs((p - q) * s).0).sum::<T>();
    let mut sx = T::zero();
    let mut sy = T::zero();
    let mut lap = T::zero();
    for t in 0..frames {
        let f = &data[t * plane..(t + 1) * plane];
        for y in 0..h {
            let r = &f[y * row..(y + 1) * row];
            sx += diff_sum(&r[CHANNELS..], r);
            if y + 1 < h {
                sy += diff_sum(&f[(y + 1) * row..(y + 2) * row], r);
            }
            if y >= 1 && y + 1 < h && w >= 3 {
                let (up, down) = (&f[(y - 1) * row..y * row], &f[(y + 1) * row..(y + 2) * row]);
                for i in CHANNELS..row - CHANNELS {
                    let l = (T::lit(4.0) * r[i] - up[i] - down[i] - r[i - CHANNELS] - r[i + CHANNELS]) * s;
                    lap += l * l;
                }
            }
        }
    }
    let st = (1..frames)
        .map(|t| diff_sum(&data[t * plane..(t + 1) * plane], &data[(t - 1) * plane..t * plane]))
        .sum::<T>();
    [sx, sy, lap, st]
}

/// Features of a `frames×h×w×3` buffer on the 0–255 scale. When `grad` is given,
/// `Σ coeffs·∂feature/∂pixel` is accumulated into it.
fn features_impl<T: Scalar>(
    data: &[T],
    frames: usize,
    h: usize,
    w: usize,
    grad: Option<(&mut [T], [T; 3])>,
) -> AnalyticFeatures<T> {
    let s = T::lit(1.0 / 255.0);
    let at = |t: usize, y: usize, x: usize, c: usize| ((t * h + y) * w + x) * CHANNELS + c;
    let count = |n: usize| T::from_usize_lossy(n.max(1));
    let n_dx = count(frames * h * w.saturating_sub(1) * CHANNELS);
    let n_dy = count(frames * h.saturating_sub(1) * w * CHANNELS);
    let n_lap = count(frames * h.saturating_sub(2) * w.saturating_sub(2) * CHANNELS);
    let n_dt = count(frames.saturating_sub(1) * h * w * CHANNELS);
    let finish = |sx: T, sy: T, lap: T, st: T| AnalyticFeatures {
        sharpness: sx / n_dx + sy / n_dy,
        noise: lap / n_lap,
        temporal: st / n_dt,
    };
    if grad.is_none() {
        let [sx, sy, lap, st] = features_value(data, frames, h, w);
        return finish(sx, sy, lap, st);
    }

    let mut sx = T::zero();
    let mut sy = T::zero();
    let mut lap = T::zero();
    let mut st = T::zero();
    let coeffs = grad.as_ref().map(|(_, c)| *c).unwrap_or([T::zero(); 3]);
    let [c_sharp, c_noise, c_temp] = coeffs;
    let mut grad = grad;
    let mut g = |i: usize, v: T| {
        if let Some((buf, _)) = grad.as_mut() {
            buf[i] += v;
        }
    };
    for t in 0..frames {
        for y in 0..h {
            for x in 0..w {
                for c in 0..CHANNELS {
                    let i = at(t, y, x, c);
                    if x + 1 < w {
                        let j = at(t, y, x + 1, c);
                        let (a, da) = smooth_abs((data[j] - data[i]) * s);
                        sx += a;
                        let gd = c_sharp * da * s / n_dx;
                        g(j, gd);
                        g(i, -gd);
                    }
                    if y + 1 < h {
                        let j = at(t, y + 1, x, c);
                        let (a, da) = smooth_abs((data[j] - data[i]) * s);
                        sy += a;
                        let gd = c_sharp * da * s / n_dy;
                        g(j, gd);
                        g(i, -gd);
                    }
                    if y >= 1 && x >= 1 && y + 1 < h && x + 1 < w {
                        let nb = [at(t, y - 1, x, c), at(t, y + 1, x, c), at(t, y, x - 1, c), at(t, y, x + 1, c)];
                        let l = (T::lit(4.0) * data[i] - nb.iter().map(|&k| data[k]).sum::<T>()) * s;
                        lap += l * l;
                        let gl = c_noise * T::lit(2.0) * l * s / n_lap;
                        g(i, T::lit(4.0) * gl);
                        for k in nb {
                            g(k, -gl);
                        }
                    }
                    if t + 1 < frames {
                        let j = at(t + 1, y, x, c);
                        let (a, da) = smooth_abs((data[j] - data[i]) * s);
                        st += a;
                        let gd = c_temp * da * s / n_dt;
                        g(j, gd);
                        g(i, -gd);
                    }
                }
            }
        }
    }
    finish(sx, sy, lap, st)
}

pub fn analytic_features<T: Scalar>(video: &FloatVideo<T>) -> AnalyticFeatures<T> {
    features_impl(video.data(), video.frames(), video.height(), video.width(), None)
}

/// Closed-form scorer. With a pipeline it scores the intra-branch input of
/// each draw instead of the raw video.
#[derive(Debug, Clone)]
pub struct AnalyticScorer {
    pub weights: AnalyticWeights,
    pub pipeline: Option<DefensePipeline>,
    pub region: Option<std::sync::Arc<RegionMask>>,
}

impl AnalyticScorer {
    pub fn new(weights: AnalyticWeights) -> Self {
        Self {
            weights,
            pipeline: None,
            region: None,
        }
    }

    pub fn defended(weights: AnalyticWeights, pipeline: DefensePipeline) -> Self {
        Self {
            weights,
            pipeline: Some(pipeline),
            region: None,
        }
    }

    fn logit<T: Scalar>(&self, f: &AnalyticFeatures<T>) -> T {
        let w = &self.weights;
        T::lit(w.sharpness) * f.sharpness - T::lit(w.noise) * f.noise - T::lit(w.temporal) * f.temporal + T::lit(w.bias)
    }

    fn eval<T: Scalar>(&self, data: &[T], frames: usize, h: usize, w: usize, want_grad: bool) -> (T, Option<Vec<T>>) {
        let f = features_impl(data, frames, h, w, None);
        let sig = T::one() / (T::one() + (-self.logit(&f)).exp());
        let score = T::one() + T::lit(4.0) * sig;
        if !want_grad {
            return (score, None);
        }
        let dz = T::lit(4.0) * sig * (T::one() - sig);
        let coeffs = [
            dz * T::lit(self.weights.sharpness),
            -dz * T::lit(self.weights.noise),
            -dz * T::lit(self.weights.temporal),
        ];
        let mut g = vec![T::zero(); data.len()];
        features_impl(data, frames, h, w, Some((&mut g, coeffs)));
        (score, Some(g))
    }

    fn run<T: Scalar>(&self, video: &FloatVideo<T>, rng: &mut StreamRng, want_grad: bool) -> Result<(T, Option<FloatVideo<T>>)> {
        match &self.pipeline {
            None => {
                let (s, g) = self.eval(video.data(), video.frames(), video.height(), video.width(), want_grad);
                let g = g.map(|g| FloatVideo::new(video.frames(), video.height(), video.width(), g)).transpose()?;
                Ok((s, g))
            }
            Some(pipe) => {
                let passes = pipe.config.stochastic_passes.max(1);
                let weight = T::one() / T::from_usize_lossy(passes);
                let mut total = T::zero();
                let mut grad = want_grad.then(|| video.zeros_like());
                for _ in 0..passes {
                    let real = pipe.draw(video.frames(), video.height(), video.width(), rng)?;
                    let prepared = pipe.prepare(video, &real, self.region.as_deref())?;
                    let b = &prepared.intra;
                    let (s, g) = self.eval(&b.data, b.frames, b.height, b.width, want_grad);
                    total += s;
                    if let (Some(acc), Some(mut g)) = (grad.as_mut(), g) {
                        g.iter_mut().for_each(|v| *v *= weight);
                        let back = pipe.backward(&prepared, &g, None)?;
                        for (a, &v) in acc.data_mut().iter_mut().zip(back.data()) {
                            *a += v;
                        }
                    }
                }
                Ok((total * weight, grad))
            }
        }
    }
}

impl<T: Scalar> Scorer<T> for AnalyticScorer {
    fn score(&self, video: &FloatVideo<T>, rng: &mut StreamRng) -> Result<T> {
        Ok(self.run(video, rng, false)?.0)
    }

    fn has_input_gradient(&self) -> bool {
        true
    }

    fn score_and_gradient(&self, video: &FloatVideo<T>, rng: &mut StreamRng) -> Result<(T, FloatVideo<T>)> {
        let (s, g) = self.run(video, rng, true)?;
        Ok((s, g.expect("gradient requested")))
    }

    fn name(&self) -> String {
        "analytic".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn random_video(seed: u64, frames: usize, h: usize, w: usize) -> FloatVideo<f64> {
        let mut rng = seeded(seed);
        let data = (0..frames * h * w * 3).map(|_| rng.random_range(10.0..245.0)).collect();
        FloatVideo::new(frames, h, w, data).unwrap()
    }

    #[test]
    fn constant_video_scores_sigmoid_of_bias() {
        let v = FloatVideo::new(3, 5, 5, vec![77.0; 225]).unwrap();
        let w = AnalyticWeights::default();
        let s: f64 = AnalyticScorer::new(w).score(&v, &mut seeded(0)).unwrap();
        let expect = 1.0 + 4.0 / (1.0 + (-w.bias).exp());
        assert!((s - expect).abs() < 1e-15);
        let f = analytic_features(&v);
        assert_eq!((f.sharpness, f.noise, f.temporal), (0.0, 0.0, 0.0));
    }

    #[test]
    fn zero_weights_ignore_content() {
        let w = AnalyticWeights {
            sharpness: 0.0,
            noise: 0.0,
            temporal: 0.0,
            bias: 0.3,
        };
        let v = random_video(1, 2, 6, 6);
        let s: f64 = AnalyticScorer::new(w).score(&v, &mut seeded(0)).unwrap();
        assert!((s - (1.0 + 4.0 / (1.0 + (-0.3f64).exp()))).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let scorer = AnalyticScorer::new(AnalyticWeights::default());
        let v = random_video(2, 3, 6, 7);
        let (_, g) = scorer.score_and_gradient(&v, &mut seeded(0)).unwrap();
        let h = 1e-3;
        let mut num = vec![0.0; v.data().len()];
        for i in 0..num.len() {
            let mut p = v.clone();
            p.data_mut()[i] += h;
            let mut m = v.clone();
            m.data_mut()[i] -= h;
            let sp: f64 = scorer.score(&p, &mut seeded(0)).unwrap();
            let sm: f64 = scorer.score(&m, &mut seeded(0)).unwrap();
            num[i] = (sp - sm) / (2.0 * h);
        }
        let diff: f64 = g.data().iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = num.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(diff / norm < 1e-4, "rel err {}", diff / norm);
    }

    #[test]
    fn value_pass_matches_gradient_pass() {
        for (seed, (t, h, w)) in [(1, (1, 1, 1)), (2, (2, 7, 5)), (3, (3, 4, 9))] {
            let v = random_video(seed, t, h, w);
            let a = analytic_features(&v);
            let mut g = vec![0.0; v.data().len()];
            let b = features_impl(v.data(), t, h, w, Some((&mut g, [1.0; 3])));
            for (x, y) in [(a.sharpness, b.sharpness), (a.noise, b.noise), (a.temporal, b.temporal)] {
                assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn score_stays_inside_open_range() {
        for seed in 0..10 {
            let v = random_video(seed, 2, 5, 5);
            let s: f64 = AnalyticScorer::new(AnalyticWeights::default()).score(&v, &mut seeded(0)).unwrap();
            assert!(s > 1.0 && s < 5.0);
        }
    }
}
