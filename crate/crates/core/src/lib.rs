//! Randomized input-transformation defenses for video quality models, the
//! attacks they are meant to resist, and a harness that measures both.

pub mod attack;
pub mod defense;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod rng;
pub mod scalar;
pub mod scorer;
pub mod video;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type FloatVideo64 = video::FloatVideo<f64>;
pub type FloatVideo32 = video::FloatVideo<f32>;
pub type TinyNet64 = scorer::TinyNetParams<f64>;
pub type TinyNet32 = scorer::TinyNetParams<f32>;
pub type TinyNetScorer64 = scorer::TinyNetScorer<f64>;
pub type TinyNetScorer32 = scorer::TinyNetScorer<f32>;
