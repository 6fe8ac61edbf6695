//! Quality scorers over float videos.

mod analytic;
mod layers;
mod serialize;
mod tinynet;
mod train;

pub use analytic::{analytic_features, AnalyticFeatures, AnalyticScorer, AnalyticWeights};
pub use layers::{gelu, gelu_backward, relu, relu_backward, Bottleneck, Linear};
pub use serialize::{read_params, read_params_file, write_params, write_params_file, SVQP_MAGIC, SVQP_VERSION};
pub use tinynet::{
    Branch, EmbeddingVec, ForwardCache, InputGradients, Standardizer, TinyNetDims, TinyNetOutput, TinyNetParams,
    CONV_CHANNELS,
};
pub use train::{calibrate, fit_normalization, train_tinynet, Adam, TrainConfig, TrainReport};

use std::sync::Arc;

use crate::defense::{DefensePipeline, RegionMask};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::scalar::Scalar;
use crate::video::FloatVideo;

/// A video quality model. All randomness comes from `rng`.
pub trait Scorer<T: Scalar>: Send + Sync {
    fn score(&self, video: &FloatVideo<T>, rng: &mut StreamRng) -> Result<T>;

    fn has_input_gradient(&self) -> bool {
        false
    }

    /// Score and `∂score/∂pixels` from the same random draws.
    fn score_and_gradient(&self, _video: &FloatVideo<T>, _rng: &mut StreamRng) -> Result<(T, FloatVideo<T>)> {
        Err(Error::Capability(format!("scorer {} exposes no input gradient", self.name())))
    }

    fn input_gradient(&self, video: &FloatVideo<T>, rng: &mut StreamRng) -> Result<FloatVideo<T>> {
        self.score_and_gradient(video, rng).map(|(_, g)| g)
    }

    fn name(&self) -> String;
}

/// Mean of all pixel values. Linear, deterministic.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanPixelScorer;

impl<T: Scalar> Scorer<T> for MeanPixelScorer {
    fn score(&self, video: &FloatVideo<T>, _rng: &mut StreamRng) -> Result<T> {
        let n = T::from_usize_lossy(video.data().len());
        Ok(video.data().iter().copied().sum::<T>() / n)
    }

    fn has_input_gradient(&self) -> bool {
        true
    }

    fn score_and_gradient(&self, video: &FloatVideo<T>, rng: &mut StreamRng) -> Result<(T, FloatVideo<T>)> {
        let s = self.score(video, rng)?;
        let g = T::one() / T::from_usize_lossy(video.data().len());
        let mut grad = video.zeros_like();
        grad.data_mut().iter_mut().for_each(|v| *v = g);
        Ok((s, grad))
    }

    fn name(&self) -> String {
        "mean_pixel".into()
    }
}

/// The two-branch network behind a defense pipeline.
#[derive(Debug, Clone)]
pub struct TinyNetScorer<T> {
    pub params: Arc<TinyNetParams<T>>,
    pub pipeline: DefensePipeline,
    /// Required when the guardian region is not `Full`.
    pub region: Option<Arc<RegionMask>>,
}

impl<T: Scalar> TinyNetScorer<T> {
    pub fn new(params: Arc<TinyNetParams<T>>, pipeline: DefensePipeline) -> Self {
        Self {
            params,
            pipeline,
            region: None,
        }
    }

    pub fn with_region(mut self, region: Arc<RegionMask>) -> Self {
        self.region = Some(region);
        self
    }

    fn passes(&self) -> usize {
        self.pipeline.config.stochastic_passes.max(1)
    }

    /// One forward pass with a single draw, exposing the embeddings.
    pub fn forward(&self, video: &FloatVideo<T>, rng: &mut StreamRng) -> Result<TinyNetOutput<T>> {
        let real = self.pipeline.draw(video.frames(), video.height(), video.width(), rng)?;
        let prepared = self.pipeline.prepare(video, &real, self.region.as_deref())?;
        Ok(self.params.forward_cached(&prepared, self.pipeline.params.segments)?.0)
    }
}

impl<T: Scalar> Scorer<T> for TinyNetScorer<T> {
    fn score(&self, video: &FloatVideo<T>, rng: &mut StreamRng) -> Result<T> {
        let passes = self.passes();
        let mut total = T::zero();
        for _ in 0..passes {
            total += self.forward(video, rng)?.score;
        }
        Ok(total / T::from_usize_lossy(passes))
    }

    fn has_input_gradient(&self) -> bool {
        true
    }

    fn score_and_gradient(&self, video: &FloatVideo<T>, rng: &mut StreamRng) -> Result<(T, FloatVideo<T>)> {
        let passes = self.passes();
        let weight = T::one() / T::from_usize_lossy(passes);
        let mut total = T::zero();
        let mut grad = video.zeros_like();
        for _ in 0..passes {
            let real = self.pipeline.draw(video.frames(), video.height(), video.width(), rng)?;
            let prepared = self.pipeline.prepare(video, &real, self.region.as_deref())?;
            let (out, cache) = self.params.forward_cached(&prepared, self.pipeline.params.segments)?;
            total += out.score;
            let ig = self
                .params
                .backward(&prepared, &cache, weight, None, true)
                .ok_or_else(|| Error::Model("input gradient unavailable".into()))?;
            let g = self.pipeline.backward(&prepared, &ig.intra, ig.inter.as_deref())?;
            for (a, &b) in grad.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        Ok((total * weight, grad))
    }

    fn name(&self) -> String {
        "tinynet".into()
    }
}
