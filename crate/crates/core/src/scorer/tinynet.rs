//! A small two-branch quality network.
//!
//! Intra encoder: 3→8 channel 3×3 convolution, ReLU, per-channel mean and
//! standard deviation pooled over all sampled frames, affine to `D_intra`.
//! Inter encoder: per-segment mean absolute frame difference and difference
//! variance per colour channel, affine to `D_inter`.
//!
//! For every segment `g` the embeddings are fused with residual bottlenecks,
//! `Fi = E_intra + B₁(E_inter[g])`, `Fe[g] = E_inter[g] + B₂(E_intra)`,
//! concatenated, and mapped to a segment score by `FC(GELU(FC(·)))`. The
//! video score is the mean over segments. With the inter branch disabled
//! there is one segment and `E_inter = 0`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{gelu, gelu_backward, Bottleneck, BottleneckCache, Linear};
use crate::defense::{BranchInput, PreparedInput};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::video::CHANNELS;

pub const CONV_CHANNELS: usize = 8;
const KERNEL: usize = 3;
const PATCH_LEN: usize = KERNEL * KERNEL * CHANNELS;
const INTRA_STATS: usize = 2 * CONV_CHANNELS;
const INTER_STATS: usize = 2 * CHANNELS;
const STD_EPS: f64 = 1e-6;
const PIXEL_SCALE: f64 = 1.0 / 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TinyNetDims {
    pub d_intra: usize,
    pub d_inter: usize,
    pub d_hidden: usize,
    pub head_hidden: usize,
}

impl Default for TinyNetDims {
    fn default() -> Self {
        Self {
            d_intra: 32,
            d_inter: 16,
            d_hidden: 16,
            head_hidden: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Intra,
    Inter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVec<T> {
    pub values: Vec<T>,
    pub branch: Branch,
}

/// Fixed feature standardization `(x − shift)·scale`, fitted to data before
/// training and not updated by the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer<T> {
    pub shift: Vec<T>,
    pub scale: Vec<T>,
}

impl<T: Scalar> Standardizer<T> {
    pub fn identity(n: usize) -> Self {
        Self {
            shift: vec![T::zero(); n],
            scale: vec![T::one(); n],
        }
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        x.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(&v, (&m, &k))| (v - m) * k)
            .collect()
    }

    pub fn backward(&self, dy: &[T]) -> Vec<T> {
        dy.iter().zip(&self.scale).map(|(&g, &k)| g * k).collect()
    }

    /// Mean and inverse standard deviation of the rows; constant columns keep scale 1.
    pub fn fit(rows: &[Vec<T>]) -> Self {
        let n = rows.first().map_or(0, |r| r.len());
        let mut out = Self::identity(n);
        if rows.len() < 2 {
            return out;
        }
        let count = T::from_usize_lossy(rows.len());
        for j in 0..n {
            let mean = rows.iter().map(|r| r[j]).sum::<T>() / count;
            let var = rows.iter().map(|r| (r[j] - mean) * (r[j] - mean)).sum::<T>() / count;
            out.shift[j] = mean;
            if var > T::zero() {
                out.scale[j] = T::one() / var.sqrt();
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyNetParams<T> {
    pub dims: TinyNetDims,
    pub intra_norm: Standardizer<T>,
    pub inter_norm: Standardizer<T>,
    /// Layout `[out][ky][kx][in]`.
    pub conv_weight: Vec<T>,
    pub conv_bias: Vec<T>,
    pub intra_proj: Linear<T>,
    pub inter_proj: Linear<T>,
    /// `D_inter → D_hidden → D_hidden → D_intra`.
    pub inter_to_intra: Bottleneck<T>,
    /// `D_intra → D_hidden → D_hidden → D_inter`.
    pub intra_to_inter: Bottleneck<T>,
    pub head_hidden: Linear<T>,
    pub head_out: Linear<T>,
}

impl<T: Scalar> TinyNetParams<T> {
    pub fn init<R: Rng + ?Sized>(dims: TinyNetDims, rng: &mut R) -> Self {
        let k = 1.0 / (PATCH_LEN as f64).sqrt();
        let conv_weight = (0..CONV_CHANNELS * PATCH_LEN).map(|_| T::lit(rng.random_range(-k..=k))).collect();
        let conv_bias = (0..CONV_CHANNELS).map(|_| T::lit(rng.random_range(-k..=k))).collect();
        Self {
            dims,
            intra_norm: Standardizer::identity(INTRA_STATS),
            inter_norm: Standardizer::identity(INTER_STATS),
            conv_weight,
            conv_bias,
            intra_proj: Linear::init(INTRA_STATS, dims.d_intra, rng),
            inter_proj: Linear::init(INTER_STATS, dims.d_inter, rng),
            inter_to_intra: Bottleneck::init(dims.d_inter, dims.d_hidden, dims.d_intra, rng),
            intra_to_inter: Bottleneck::init(dims.d_intra, dims.d_hidden, dims.d_inter, rng),
            head_hidden: Linear::init(dims.d_intra + dims.d_inter, dims.head_hidden, rng),
            head_out: Linear::init(dims.head_hidden, 1, rng),
        }
    }

    pub fn zeros(dims: TinyNetDims) -> Self {
        Self {
            dims,
            intra_norm: Standardizer::identity(INTRA_STATS),
            inter_norm: Standardizer::identity(INTER_STATS),
            conv_weight: vec![T::zero(); CONV_CHANNELS * PATCH_LEN],
            conv_bias: vec![T::zero(); CONV_CHANNELS],
            intra_proj: Linear::zeros(INTRA_STATS, dims.d_intra),
            inter_proj: Linear::zeros(INTER_STATS, dims.d_inter),
            inter_to_intra: Bottleneck::zeros(dims.d_inter, dims.d_hidden, dims.d_intra),
            intra_to_inter: Bottleneck::zeros(dims.d_intra, dims.d_hidden, dims.d_inter),
            head_hidden: Linear::zeros(dims.d_intra + dims.d_inter, dims.head_hidden),
            head_out: Linear::zeros(dims.head_hidden, 1),
        }
    }

    /// Named tensors with their shapes, in serialization order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[T])> {
        let mut out: Vec<(String, Vec<usize>, &[T])> = vec![
            ("conv.weight".into(), vec![CONV_CHANNELS, KERNEL, KERNEL, CHANNELS], &self.conv_weight),
            ("conv.bias".into(), vec![CONV_CHANNELS], &self.conv_bias),
            ("intra_norm.shift".into(), vec![INTRA_STATS], &self.intra_norm.shift),
            ("intra_norm.scale".into(), vec![INTRA_STATS], &self.intra_norm.scale),
            ("inter_norm.shift".into(), vec![INTER_STATS], &self.inter_norm.shift),
            ("inter_norm.scale".into(), vec![INTER_STATS], &self.inter_norm.scale),
        ];
        for (name, l) in self.linear_layers() {
            out.push((format!("{name}.weight"), vec![l.n_out, l.n_in], l.weight.as_slice()));
            out.push((format!("{name}.bias"), vec![l.n_out], l.bias.as_slice()));
        }
        out
    }

    fn linear_layers(&self) -> Vec<(String, &Linear<T>)> {
        let mut v = vec![
            ("intra_proj".to_string(), &self.intra_proj),
            ("inter_proj".to_string(), &self.inter_proj),
        ];
        for (i, l) in self.inter_to_intra.layers.iter().enumerate() {
            v.push((format!("inter_to_intra.{i}"), l));
        }
        for (i, l) in self.intra_to_inter.layers.iter().enumerate() {
            v.push((format!("intra_to_inter.{i}"), l));
        }
        v.push(("head.0".to_string(), &self.head_hidden));
        v.push(("head.1".to_string(), &self.head_out));
        v
    }

    /// Mutable parameter slices, same order as [`tensors`](Self::tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut layers: Vec<&mut Linear<T>> = vec![&mut self.intra_proj, &mut self.inter_proj];
        layers.extend(self.inter_to_intra.layers.iter_mut());
        layers.extend(self.intra_to_inter.layers.iter_mut());
        layers.push(&mut self.head_hidden);
        layers.push(&mut self.head_out);
        let mut out: Vec<&mut [T]> = vec![
            &mut self.conv_weight,
            &mut self.conv_bias,
            &mut self.intra_norm.shift,
            &mut self.intra_norm.scale,
            &mut self.inter_norm.shift,
            &mut self.inter_norm.scale,
        ];
        for l in layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, _, v)| v.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, v)| v.iter().all(|x| x.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> TinyNetParams<U> {
        let mut out = TinyNetParams::<U>::zeros(self.dims);
        for (dst, (_, _, src)) in out.tensors_mut().into_iter().zip(self.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = U::lit(s.as_f64());
            }
        }
        out
    }

    fn check(&self) -> Result<()> {
        let d = &self.dims;
        let ok = self.conv_weight.len() == CONV_CHANNELS * PATCH_LEN
            && self.conv_bias.len() == CONV_CHANNELS
            && self.intra_norm.shift.len() == INTRA_STATS
            && self.intra_norm.scale.len() == INTRA_STATS
            && self.inter_norm.shift.len() == INTER_STATS
            && self.inter_norm.scale.len() == INTER_STATS
            && (self.intra_proj.n_in, self.intra_proj.n_out) == (INTRA_STATS, d.d_intra)
            && (self.inter_proj.n_in, self.inter_proj.n_out) == (INTER_STATS, d.d_inter)
            && self.inter_to_intra.layers[0].n_in == d.d_inter
            && self.inter_to_intra.layers[2].n_out == d.d_intra
            && self.intra_to_inter.layers[0].n_in == d.d_intra
            && self.intra_to_inter.layers[2].n_out == d.d_inter
            && self.head_hidden.n_in == d.d_intra + d.d_inter
            && self.head_out.n_in == self.head_hidden.n_out
            && self.head_out.n_out == 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Model("parameter shapes inconsistent with dims".into()))
        }
    }
}

/// Result of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyNetOutput<T> {
    pub score: T,
    /// Pre-fusion intra embedding.
    pub intra: EmbeddingVec<T>,
    /// Pre-fusion inter embedding, averaged over segments.
    pub inter: EmbeddingVec<T>,
    /// Fused intra embedding, averaged over segments.
    pub fused_intra: Vec<T>,
    /// Fused inter embedding, averaged over segments.
    pub fused_inter: Vec<T>,
    pub segment_scores: Vec<T>,
}

struct IntraCache<T> {
    /// Conv pre-activations, `[frame][oy][ox][channel]`.
    pre: Vec<T>,
    out_h: usize,
    out_w: usize,
    mean: Vec<T>,
    std: Vec<T>,
    stats: Vec<T>,
}

struct InterCache<T> {
    segment_of: Vec<usize>,
    counts: Vec<T>,
    /// `[segment][channel]` mean of the differences.
    means: Vec<T>,
    stats: Vec<Vec<T>>,
}

struct SegmentCache<T> {
    b1: BottleneckCache<T>,
    cat: Vec<T>,
    hidden_pre: Vec<T>,
    hidden_act: Vec<T>,
}

pub struct ForwardCache<T> {
    intra: IntraCache<T>,
    inter: Option<InterCache<T>>,
    b2: BottleneckCache<T>,
    segments: Vec<SegmentCache<T>>,
}

/// Gradients of one backward pass with respect to the branch inputs (pixel units).
pub struct InputGradients<T> {
    pub intra: Vec<T>,
    pub inter: Option<Vec<T>>,
}

fn mean_of<T: Scalar>(rows: &[Vec<T>]) -> Vec<T> {
    let n = T::from_usize_lossy(rows.len());
    let mut out = vec![T::zero(); rows[0].len()];
    for r in rows {
        for (o, &v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= n);
    out
}

fn gather_patch<T: Scalar>(frame: &[T], width: usize, oy: usize, ox: usize, patch: &mut [T; PATCH_LEN]) {
    let scale = T::lit(PIXEL_SCALE);
    let half = T::lit(0.5);
    let mut j = 0;
    for ky in 0..KERNEL {
        let row = ((oy + ky) * width + ox) * CHANNELS;
        for v in &frame[row..row + KERNEL * CHANNELS] {
            patch[j] = *v * scale - half;
            j += 1;
        }
    }
}

impl<T: Scalar> TinyNetParams<T> {
    fn intra_forward(&self, input: &BranchInput<T>) -> Result<IntraCache<T>> {
        if input.height < KERNEL || input.width < KERNEL {
            return Err(Error::Model(format!(
                "intra frames {}x{} smaller than the {KERNEL}x{KERNEL} kernel",
                input.height, input.width
            )));
        }
        let (out_h, out_w) = (input.height - KERNEL + 1, input.width - KERNEL + 1);
        let mut pre = Vec::with_capacity(input.frames * out_h * out_w * CONV_CHANNELS);
        let mut patch = [T::zero(); PATCH_LEN];
        let mut sum = [T::zero(); CONV_CHANNELS];
        let mut sum_sq = [T::zero(); CONV_CHANNELS];
        for k in 0..input.frames {
            let frame = input.frame(k);
            for oy in 0..out_h {
                for ox in 0..out_w {
                    gather_patch(frame, input.width, oy, ox, &mut patch);
                    for o in 0..CONV_CHANNELS {
                        let w = &self.conv_weight[o * PATCH_LEN..(o + 1) * PATCH_LEN];
                        let z = w.iter().zip(&patch).fold(self.conv_bias[o], |acc, (&a, &b)| acc + a * b);
                        pre.push(z);
                        let a = z.max(T::zero());
                        sum[o] += a;
                        sum_sq[o] += a * a;
                    }
                }
            }
        }
        let n = T::from_usize_lossy(input.frames * out_h * out_w);
        let mut mean = vec![T::zero(); CONV_CHANNELS];
        let mut std = vec![T::zero(); CONV_CHANNELS];
        for o in 0..CONV_CHANNELS {
            mean[o] = sum[o] / n;
            // centered second pass for the variance
            std[o] = T::zero();
        }
        let mut var = vec![T::zero(); CONV_CHANNELS];
        for chunk in pre.chunks_exact(CONV_CHANNELS) {
            for o in 0..CONV_CHANNELS {
                let d = chunk[o].max(T::zero()) - mean[o];
                var[o] += d * d;
            }
        }
        for o in 0..CONV_CHANNELS {
            std[o] = (var[o] / n + T::lit(STD_EPS)).sqrt();
        }
        let mut raw = mean.clone();
        raw.extend_from_slice(&std);
        let stats = self.intra_norm.apply(&raw);
        Ok(IntraCache {
            pre,
            out_h,
            out_w,
            mean,
            std,
            stats,
        })
    }

    fn intra_backward(
        &self,
        input: &BranchInput<T>,
        cache: &IntraCache<T>,
        d_stats: &[T],
        grad: Option<&mut TinyNetParams<T>>,
        want_input: bool,
    ) -> Option<Vec<T>> {
        let n = T::from_usize_lossy(input.frames * cache.out_h * cache.out_w);
        let d_mean: Vec<T> = d_stats[..CONV_CHANNELS].iter().map(|&g| g / n).collect();
        let d_std: Vec<T> = (0..CONV_CHANNELS)
            .map(|o| d_stats[CONV_CHANNELS + o] / (n * cache.std[o]))
            .collect();
        let mut grad = grad;
        let mut d_input = want_input.then(|| vec![T::zero(); input.data.len()]);
        let scale = T::lit(PIXEL_SCALE);
        let mut patch = [T::zero(); PATCH_LEN];
        let mut dz = [T::zero(); CONV_CHANNELS];
        let mut idx = 0;
        for k in 0..input.frames {
            let frame = input.frame(k);
            let frame_off = k * input.frame_len();
            for oy in 0..cache.out_h {
                for ox in 0..cache.out_w {
                    let mut any = false;
                    for o in 0..CONV_CHANNELS {
                        let z = cache.pre[idx + o];
                        dz[o] = if z > T::zero() {
                            any = true;
                            d_mean[o] + d_std[o] * (z - cache.mean[o])
                        } else {
                            T::zero()
                        };
                    }
                    idx += CONV_CHANNELS;
                    if !any {
                        continue;
                    }
                    if let Some(g) = grad.as_deref_mut() {
                        gather_patch(frame, input.width, oy, ox, &mut patch);
                        for o in 0..CONV_CHANNELS {
                            if dz[o] == T::zero() {
                                continue;
                            }
                            g.conv_bias[o] += dz[o];
                            let gw = &mut g.conv_weight[o * PATCH_LEN..(o + 1) * PATCH_LEN];
                            for (w, &p) in gw.iter_mut().zip(&patch) {
                                *w += dz[o] * p;
                            }
                        }
                    }
                    if let Some(di) = d_input.as_mut() {
                        let mut j = 0;
                        for ky in 0..KERNEL {
                            let row = frame_off + ((oy + ky) * input.width + ox) * CHANNELS;
                            for e in 0..KERNEL * CHANNELS {
                                let mut acc = T::zero();
                                for o in 0..CONV_CHANNELS {
                                    acc += dz[o] * self.conv_weight[o * PATCH_LEN + j];
                                }
                                di[row + e] += acc * scale;
                                j += 1;
                            }
                        }
                    }
                }
            }
        }
        d_input
    }

    fn inter_forward(&self, input: &BranchInput<T>, max_segments: usize) -> Result<InterCache<T>> {
        if input.frames < 2 {
            return Err(Error::Model("inter branch needs at least two frames".into()));
        }
        let diffs = input.frames - 1;
        let segments = max_segments.min(diffs).max(1);
        let segment_of: Vec<usize> = (0..diffs).map(|j| j * segments / diffs).collect();
        let n = input.frame_len();
        let scale = T::lit(PIXEL_SCALE);
        let mut sum = vec![T::zero(); segments * CHANNELS];
        let mut abs = vec![T::zero(); segments * CHANNELS];
        let mut counts = vec![T::zero(); segments];
        let per_channel = T::from_usize_lossy(n / CHANNELS);
        for j in 0..diffs {
            let g = segment_of[j];
            counts[g] += per_channel;
            let (a, b) = (input.frame(j), input.frame(j + 1));
            for i in 0..n {
                let d = (b[i] - a[i]) * scale;
                sum[g * CHANNELS + i % CHANNELS] += d;
                abs[g * CHANNELS + i % CHANNELS] += d.abs();
            }
        }
        let means: Vec<T> = (0..segments * CHANNELS).map(|i| sum[i] / counts[i / CHANNELS]).collect();
        let mut var = vec![T::zero(); segments * CHANNELS];
        for j in 0..diffs {
            let g = segment_of[j];
            let (a, b) = (input.frame(j), input.frame(j + 1));
            for i in 0..n {
                let c = g * CHANNELS + i % CHANNELS;
                let d = (b[i] - a[i]) * scale - means[c];
                var[c] += d * d;
            }
        }
        let stats = (0..segments)
            .map(|g| {
                let mut s: Vec<T> = (0..CHANNELS).map(|c| abs[g * CHANNELS + c] / counts[g]).collect();
                s.extend((0..CHANNELS).map(|c| var[g * CHANNELS + c] / counts[g]));
                self.inter_norm.apply(&s)
            })
            .collect();
        Ok(InterCache {
            segment_of,
            counts,
            means,
            stats,
        })
    }

    fn inter_backward(&self, input: &BranchInput<T>, cache: &InterCache<T>, d_stats: &[Vec<T>]) -> Vec<T> {
        let n = input.frame_len();
        let scale = T::lit(PIXEL_SCALE);
        let two = T::lit(2.0);
        let mut d_input = vec![T::zero(); input.data.len()];
        for (j, &g) in cache.segment_of.iter().enumerate() {
            let ds = &d_stats[g];
            let count = cache.counts[g];
            let (a, b) = (input.frame(j), input.frame(j + 1));
            for i in 0..n {
                let c = i % CHANNELS;
                let d = (b[i] - a[i]) * scale;
                let sign = if d > T::zero() {
                    T::one()
                } else if d < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                };
                // the mean term of the variance gradient sums to zero over the segment
                let gd = (ds[c] * sign + ds[CHANNELS + c] * two * (d - cache.means[g * CHANNELS + c])) / count * scale;
                d_input[(j + 1) * n + i] += gd;
                d_input[j * n + i] -= gd;
            }
        }
        d_input
    }

    /// Raw (unstandardized) intra statistics and per-segment inter statistics.
    pub fn raw_features(&self, input: &PreparedInput<T>, max_segments: usize) -> Result<(Vec<T>, Vec<Vec<T>>)> {
        let mut plain = self.clone();
        plain.intra_norm = Standardizer::identity(INTRA_STATS);
        plain.inter_norm = Standardizer::identity(INTER_STATS);
        let intra = plain.intra_forward(&input.intra)?.stats;
        let inter = match &input.inter {
            Some(b) => plain.inter_forward(b, max_segments)?.stats,
            None => Vec::new(),
        };
        Ok((intra, inter))
    }

    /// Forward pass over prepared branch inputs.
    pub fn forward_cached(&self, input: &PreparedInput<T>, max_segments: usize) -> Result<(TinyNetOutput<T>, ForwardCache<T>)> {
        self.check()?;
        let intra = self.intra_forward(&input.intra)?;
        let e_intra = self.intra_proj.forward(&intra.stats);
        let (inter, e_inter) = match &input.inter {
            Some(branch) => {
                let cache = self.inter_forward(branch, max_segments)?;
                let e: Vec<Vec<T>> = cache.stats.iter().map(|s| self.inter_proj.forward(s)).collect();
                (Some(cache), e)
            }
            None => (None, vec![vec![T::zero(); self.dims.d_inter]]),
        };

        let (b2_out, b2) = self.intra_to_inter.forward(&e_intra);
        let mut segments = Vec::with_capacity(e_inter.len());
        let mut scores = Vec::with_capacity(e_inter.len());
        let mut fused_intra = Vec::with_capacity(e_inter.len());
        let mut fused_inter = Vec::with_capacity(e_inter.len());
        for e in &e_inter {
            let (b1_out, b1) = self.inter_to_intra.forward(e);
            let fi: Vec<T> = e_intra.iter().zip(&b1_out).map(|(&a, &b)| a + b).collect();
            let fe: Vec<T> = e.iter().zip(&b2_out).map(|(&a, &b)| a + b).collect();
            let mut cat = fi.clone();
            cat.extend_from_slice(&fe);
            let hidden_pre = self.head_hidden.forward(&cat);
            let hidden_act = gelu(&hidden_pre);
            scores.push(self.head_out.forward(&hidden_act)[0]);
            fused_intra.push(fi);
            fused_inter.push(fe);
            segments.push(SegmentCache {
                b1,
                cat,
                hidden_pre,
                hidden_act,
            });
        }
        let score = scores.iter().copied().sum::<T>() / T::from_usize_lossy(scores.len());
        let output = TinyNetOutput {
            score,
            intra: EmbeddingVec {
                values: e_intra.clone(),
                branch: Branch::Intra,
            },
            inter: EmbeddingVec {
                values: mean_of(&e_inter),
                branch: Branch::Inter,
            },
            fused_intra: mean_of(&fused_intra),
            fused_inter: mean_of(&fused_inter),
            segment_scores: scores,
        };
        Ok((
            output,
            ForwardCache {
                intra,
                inter,
                b2,
                segments,
            },
        ))
    }

    /// Backpropagates `d_score = ∂L/∂score`. Parameter gradients are
    /// accumulated into `grad` when given; branch-input gradients are
    /// returned when `want_input` is set.
    pub fn backward(
        &self,
        input: &PreparedInput<T>,
        cache: &ForwardCache<T>,
        d_score: T,
        mut grad: Option<&mut TinyNetParams<T>>,
        want_input: bool,
    ) -> Option<InputGradients<T>> {
        let dims = self.dims;
        let m = cache.segments.len();
        let d_seg = d_score / T::from_usize_lossy(m);
        let mut scratch = TinyNetParams::zeros(dims);
        let mut d_e_intra = vec![T::zero(); dims.d_intra];
        let mut d_b2_out = vec![T::zero(); dims.d_inter];
        let mut d_e_inter = Vec::with_capacity(m);

        for seg in &cache.segments {
            let target = grad.as_deref_mut().unwrap_or(&mut scratch);
            let d_act = self.head_out.backward(&seg.hidden_act, &[d_seg], &mut target.head_out);
            let d_pre = gelu_backward(&seg.hidden_pre, &d_act);
            let d_cat = self.head_hidden.backward(&seg.cat, &d_pre, &mut target.head_hidden);
            let (d_fi, d_fe) = d_cat.split_at(dims.d_intra);
            // Fi = E_intra + B1(E_inter[g])
            for (a, &b) in d_e_intra.iter_mut().zip(d_fi) {
                *a += b;
            }
            let d_e = self.inter_to_intra.backward(&seg.b1, d_fi, &mut target.inter_to_intra);
            // Fe[g] = E_inter[g] + B2(E_intra)
            let mut d_inter_g = d_fe.to_vec();
            for (a, &b) in d_inter_g.iter_mut().zip(&d_e) {
                *a += b;
            }
            for (a, &b) in d_b2_out.iter_mut().zip(d_fe) {
                *a += b;
            }
            d_e_inter.push(d_inter_g);
        }
        let target = grad.as_deref_mut().unwrap_or(&mut scratch);
        let d_from_b2 = self.intra_to_inter.backward(&cache.b2, &d_b2_out, &mut target.intra_to_inter);
        for (a, &b) in d_e_intra.iter_mut().zip(&d_from_b2) {
            *a += b;
        }

        let d_intra_stats = self
            .intra_norm
            .backward(&self.intra_proj.backward(&cache.intra.stats, &d_e_intra, &mut target.intra_proj));
        let d_inter_input = match (&cache.inter, &input.inter) {
            (Some(ic), Some(branch)) => {
                let d_stats: Vec<Vec<T>> = ic
                    .stats
                    .iter()
                    .zip(&d_e_inter)
                    .map(|(s, d)| self.inter_norm.backward(&self.inter_proj.backward(s, d, &mut target.inter_proj)))
                    .collect();
                want_input.then(|| self.inter_backward(branch, ic, &d_stats))
            }
            _ => None,
        };
        let param_grad = grad.is_some();
        let d_intra_input = self.intra_backward(
            &input.intra,
            &cache.intra,
            &d_intra_stats,
            if param_grad { grad } else { None },
            want_input,
        );
        d_intra_input.map(|intra| InputGradients {
            intra,
            inter: d_inter_input,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::defense::{DefenseConfig, DefensePipeline, PipelineParams};
    use crate::rng::seeded;
    use crate::video::FloatVideo;
    use rand::Rng;

    fn params() -> PipelineParams {
        PipelineParams {
            skip_interval: 2,
            frames: 3,
            grids: 2,
            patch: 5,
            resize: (8, 8),
            segments: 16,
        }
    }

    fn video(seed: u64) -> FloatVideo<f64> {
        let mut rng = seeded(seed);
        let data = (0..6 * 12 * 12 * 3).map(|_| rng.random_range(10.0..245.0)).collect();
        FloatVideo::new(6, 12, 12, data).unwrap()
    }

    fn prepared(cfg: DefenseConfig, seed: u64) -> PreparedInput<f64> {
        let pipe = DefensePipeline::new(params(), cfg);
        let v = video(seed);
        let real = pipe.draw(6, 12, 12, &mut seeded(seed)).unwrap();
        pipe.prepare(&v, &real, None).unwrap()
    }

    #[test]
    fn zero_bottlenecks_leave_embeddings_unchanged() {
        let dims = TinyNetDims::default();
        let mut p = TinyNetParams::<f64>::init(dims, &mut seeded(1));
        p.inter_to_intra = Bottleneck::zeros(dims.d_inter, dims.d_hidden, dims.d_intra);
        p.intra_to_inter = Bottleneck::zeros(dims.d_intra, dims.d_hidden, dims.d_inter);
        let (out, _) = p.forward_cached(&prepared(DefenseConfig::full(), 3), 16).unwrap();
        assert_eq!(out.fused_intra, out.intra.values);
        assert_eq!(out.fused_inter, out.inter.values);
        assert_eq!(out.intra.values.len(), 32);
        assert_eq!(out.inter.values.len(), 16);
        assert_eq!(out.segment_scores.len(), 2);
    }

    #[test]
    fn parameter_gradient_matches_fd() {
        let p = TinyNetParams::<f64>::init(TinyNetDims::default(), &mut seeded(2));
        let input = prepared(DefenseConfig::full(), 4);
        let (_, cache) = p.forward_cached(&input, 16).unwrap();
        let mut grad = TinyNetParams::zeros(p.dims);
        p.backward(&input, &cache, 1.0, Some(&mut grad), false);
        let analytic: Vec<(String, Vec<f64>)> = grad.tensors().iter().map(|(n, _, v)| (n.clone(), v.to_vec())).collect();
        for (ti, (name, tensor)) in analytic.iter().enumerate() {
            if name.contains("_norm.") {
                continue;
            }
            for i in [0, tensor.len() / 2, tensor.len() - 1] {
                let eval = |delta: f64| {
                    let mut q = p.clone();
                    q.tensors_mut()[ti][i] += delta;
                    q.forward_cached(&input, 16).unwrap().0.score
                };
                let num = (eval(1e-6) - eval(-1e-6)) / 2e-6;
                assert!((num - tensor[i]).abs() < 1e-6 * (1.0 + num.abs()), "tensor {ti} idx {i}: {num} vs {}", tensor[i]);
            }
        }
    }

    #[test]
    fn scaling_final_weight_scales_input_gradient() {
        let mut p = TinyNetParams::<f64>::init(TinyNetDims::default(), &mut seeded(5));
        let input = prepared(DefenseConfig::none(), 6);
        let (_, c) = p.forward_cached(&input, 16).unwrap();
        let g1 = p.backward(&input, &c, 1.0, None, true).unwrap();
        p.head_out.weight.iter_mut().for_each(|w| *w *= 2.0);
        let (_, c) = p.forward_cached(&input, 16).unwrap();
        let g2 = p.backward(&input, &c, 1.0, None, true).unwrap();
        for (a, b) in g1.intra.iter().zip(&g2.intra) {
            assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn shape_mismatch_is_a_model_error() {
        let mut p = TinyNetParams::<f64>::zeros(TinyNetDims::default());
        p.head_out = Linear::zeros(7, 1);
        let err = p.forward_cached(&prepared(DefenseConfig::none(), 1), 16).err().unwrap();
        assert!(matches!(err, Error::Model(_)));
    }

    #[test]
    fn cast_preserves_values() {
        let p = TinyNetParams::<f64>::init(TinyNetDims::default(), &mut seeded(8));
        let q: TinyNetParams<f32> = p.cast();
        assert_eq!(q.parameter_count(), p.parameter_count());
        assert_eq!(q.conv_weight[3], p.conv_weight[3] as f32);
    }
}
