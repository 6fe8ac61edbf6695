//! Training with a `1 − PLCC` batch loss and Adam, followed by a least-squares
//! calibration of the output to the MOS scale.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::tinynet::{Standardizer, TinyNetDims, TinyNetParams};
use crate::defense::DefensePipeline;
use crate::error::{Error, Result};
use crate::metrics::plcc;
use crate::rng::{substream, tag, StreamRng};
use crate::scalar::Scalar;
use crate::video::{FloatVideo, LabeledVideo};

const PLCC_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Keep the inter-branch projection at its initial values.
    pub freeze_inter: bool,
    /// Fit `mos ≈ a·score + b` after training and fold it into the head.
    pub calibrate: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 12,
            epochs: 30,
            seed: 0,
            freeze_inter: false,
            calibrate: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::constraint("learning_rate", "must be > 0"));
        }
        if self.batch_size < 1 {
            return Err(Error::constraint("batch_size", "must be >= 1"));
        }
        Ok(())
    }
}

/// Adam with `β₁ = 0.9`, `β₂ = 0.999`, `ε = 10⁻⁸`.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, shapes: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    /// One update. Tensors with `frozen[i]` set are left untouched.
    pub fn update(&mut self, params: Vec<&mut [T]>, grads: &[&[T]], frozen: &[bool]) {
        self.step += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::one() - b1.powi(self.step);
        let c2 = T::one() - b2.powi(self.step);
        let (lr, eps) = (T::lit(self.lr), T::lit(self.eps));
        for (i, p) in params.into_iter().enumerate() {
            if frozen.get(i).copied().unwrap_or(false) {
                continue;
            }
            for ((w, &g), (m, v)) in p.iter_mut().zip(grads[i]).zip(self.m[i].iter_mut().zip(self.v[i].iter_mut())) {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport<T> {
    pub params: TinyNetParams<T>,
    /// Mean batch loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// PLCC of the final model against MOS over the whole training set.
    pub train_plcc: f64,
}

/// `1 − PLCC(p, y)` and its gradient with respect to `p`.
fn plcc_loss_grad(p: &[f64], y: &[f64]) -> (f64, Vec<f64>) {
    let n = p.len() as f64;
    let pm = p.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let pc: Vec<f64> = p.iter().map(|v| v - pm).collect();
    let yc: Vec<f64> = y.iter().map(|v| v - ym).collect();
    let sxy: f64 = pc.iter().zip(&yc).map(|(a, b)| a * b).sum();
    let sxx: f64 = pc.iter().map(|a| a * a).sum::<f64>() + PLCC_EPS;
    let syy: f64 = yc.iter().map(|b| b * b).sum::<f64>() + PLCC_EPS;
    let denom = (sxx * syy).sqrt();
    let r = sxy / denom;
    let grad = pc.iter().zip(&yc).map(|(a, b)| -(b / denom - r * a / sxx)).collect();
    (1.0 - r, grad)
}

/// Scores every video once with one draw each from `rng`.
fn score_all<T: Scalar>(
    params: &TinyNetParams<T>,
    pipeline: &DefensePipeline,
    videos: &[FloatVideo<T>],
    rng: &mut StreamRng,
) -> Result<Vec<f64>> {
    videos
        .iter()
        .map(|v| {
            let real = pipeline.draw(v.frames(), v.height(), v.width(), rng)?;
            let prepared = pipeline.prepare(v, &real, None)?;
            Ok(params.forward_cached(&prepared, pipeline.params.segments)?.0.score.as_f64())
        })
        .collect()
}

/// Sets both feature standardizers from one draw per video.
pub fn fit_normalization<T: Scalar>(
    params: &mut TinyNetParams<T>,
    pipeline: &DefensePipeline,
    videos: &[FloatVideo<T>],
    rng: &mut StreamRng,
) -> Result<()> {
    let mut intra = Vec::with_capacity(videos.len());
    let mut inter = Vec::new();
    for v in videos {
        let real = pipeline.draw(v.frames(), v.height(), v.width(), rng)?;
        let prepared = pipeline.prepare(v, &real, None)?;
        let (a, b) = params.raw_features(&prepared, pipeline.params.segments)?;
        intra.push(a);
        inter.extend(b);
    }
    params.intra_norm = Standardizer::fit(&intra);
    if !inter.is_empty() {
        params.inter_norm = Standardizer::fit(&inter);
    }
    Ok(())
}

/// Least-squares fit of `targets ≈ a·scores + b`, folded into the final layer.
pub fn calibrate<T: Scalar>(params: &mut TinyNetParams<T>, scores: &[f64], targets: &[f64]) -> Result<(f64, f64)> {
    let n = scores.len() as f64;
    let sm = scores.iter().sum::<f64>() / n;
    let tm = targets.iter().sum::<f64>() / n;
    let sxx: f64 = scores.iter().map(|s| (s - sm).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Degenerate("calibration scores have zero variance".into()));
    }
    let sxy: f64 = scores.iter().zip(targets).map(|(s, t)| (s - sm) * (t - tm)).sum();
    let a = sxy / sxx;
    let b = tm - a * sm;
    let head = &mut params.head_out;
    head.weight.iter_mut().for_each(|w| *w = T::lit(w.as_f64() * a));
    head.bias[0] = T::lit(head.bias[0].as_f64() * a + b);
    Ok((a, b))
}

/// Trains from a fresh initialization seeded by `cfg.seed`. The pipeline's
/// random transforms are drawn afresh for every sample.
pub fn train_tinynet<T: Scalar>(
    dataset: &[LabeledVideo],
    cfg: &TrainConfig,
    dims: TinyNetDims,
    pipeline: &DefensePipeline,
) -> Result<TrainReport<T>> {
    cfg.validate()?;
    if dataset.len() < cfg.batch_size {
        return Err(Error::constraint(
            "batch_size",
            format!("dataset has {} videos, fewer than the batch size {}", dataset.len(), cfg.batch_size),
        ));
    }
    let mos: Vec<f64> = dataset.iter().map(|l| l.mos).collect();
    if mos.iter().all(|&m| m == mos[0]) {
        return Err(Error::DegenerateDataset("all MOS values are identical".into()));
    }
    let videos: Vec<FloatVideo<T>> = dataset.iter().map(|l| l.video.to_float()).collect();

    let mut params = TinyNetParams::<T>::init(dims, &mut substream(cfg.seed, tag::INIT, 0));
    fit_normalization(&mut params, pipeline, &videos, &mut substream(cfg.seed, tag::TRAIN, 2))?;
    let shapes: Vec<usize> = params.tensors().iter().map(|(_, _, v)| v.len()).collect();
    let frozen: Vec<bool> = params
        .tensors()
        .iter()
        .map(|(name, _, _)| name.contains("_norm.") || (cfg.freeze_inter && name.starts_with("inter_proj.")))
        .collect();
    let mut adam = Adam::<T>::new(cfg.learning_rate, &shapes);
    let mut rng = substream(cfg.seed, tag::TRAIN, 0);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut losses = Vec::new();
        for batch in order.chunks(cfg.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let mut prepared = Vec::with_capacity(batch.len());
            let mut caches = Vec::with_capacity(batch.len());
            let mut preds = Vec::with_capacity(batch.len());
            for &i in batch {
                let v = &videos[i];
                let real = pipeline.draw(v.frames(), v.height(), v.width(), &mut rng)?;
                let p = pipeline.prepare(v, &real, None)?;
                let (out, cache) = params.forward_cached(&p, pipeline.params.segments)?;
                preds.push(out.score.as_f64());
                prepared.push(p);
                caches.push(cache);
            }
            let targets: Vec<f64> = batch.iter().map(|&i| mos[i]).collect();
            let (loss, d_pred) = plcc_loss_grad(&preds, &targets);
            losses.push(loss);
            let mut grad = TinyNetParams::<T>::zeros(dims);
            for ((p, cache), &d) in prepared.iter().zip(&caches).zip(&d_pred) {
                params.backward(p, cache, T::lit(d), Some(&mut grad), false);
            }
            let g: Vec<&[T]> = grad.tensors().into_iter().map(|(_, _, v)| v).collect();
            adam.update(params.tensors_mut(), &g, &frozen);
        }
        epoch_loss.push(losses.iter().sum::<f64>() / losses.len().max(1) as f64);
    }
    if !params.is_finite() {
        return Err(Error::Model("training diverged to non-finite parameters".into()));
    }

    let mut eval_rng = substream(cfg.seed, tag::TRAIN, 1);
    let mut scores = score_all(&params, pipeline, &videos, &mut eval_rng)?;
    if cfg.calibrate {
        let (a, b) = calibrate(&mut params, &scores, &mos)?;
        scores.iter_mut().for_each(|s| *s = a * *s + b);
    }
    let train_plcc = plcc(&scores, &mos)?;
    Ok(TrainReport {
        params,
        epoch_loss,
        train_plcc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plcc_gradient_matches_fd() {
        let p = [0.3, 1.2, -0.4, 0.8, 2.0];
        let y = [1.5, 4.0, 2.2, 3.1, 4.8];
        let (_, g) = plcc_loss_grad(&p, &y);
        for i in 0..p.len() {
            let mut a = p;
            let mut b = p;
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let num = (plcc_loss_grad(&a, &y).0 - plcc_loss_grad(&b, &y).0) / 2e-6;
            assert!((num - g[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut w = vec![1.0f64, -2.0];
        let mut adam = Adam::new(0.001, &[2]);
        adam.update(vec![w.as_mut_slice()], &[&[0.5, -3.0]], &[]);
        assert!((w[0] - 0.999).abs() < 1e-9);
        assert!((w[1] + 1.999).abs() < 1e-9);
    }
}
