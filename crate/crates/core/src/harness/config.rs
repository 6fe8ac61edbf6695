//! Experiment configuration and its strict TOML reader.
//!
//! Top level keys: `seed`, `preset` (`"desk"` or `"paper"`). Sections:
//! `[dataset]`, `[pipeline]`, `[scorer]`, `[analytic]`, `[train]`,
//! `[defense]`, `[attack]`, `[experiment]`, `[output]`. Every key is
//! optional and defaults to the preset value. Unknown keys are errors.

use std::path::PathBuf;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::attack::AttackConfig;
use crate::defense::{DefenseConfig, PipelineParams};
use crate::error::{Error, Result};
use crate::scorer::{AnalyticWeights, TrainConfig};
use crate::video::DegradationRanges;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Small videos and a reduced pipeline; runs in seconds.
    Desk,
    /// n=2, d=32, G=7, S=32, 224×224 resize, 56-pixel patches.
    Paper,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::constraint("preset", format!("expected desk or paper, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub count: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub noise_sigma_max: f64,
    pub blur_radius_max: u32,
    pub block_size_max: u32,
    pub temporal_jitter_max: f64,
    pub active_probability: f64,
    /// Load videos from a `path,mos` manifest instead of generating them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
}

impl DatasetSpec {
    pub fn ranges(&self) -> DegradationRanges {
        DegradationRanges {
            noise_sigma_max: self.noise_sigma_max,
            blur_radius_max: self.blur_radius_max,
            block_size_max: self.block_size_max,
            temporal_jitter_max: self.temporal_jitter_max,
            active_probability: self.active_probability,
        }
    }

    pub fn name(&self) -> String {
        match &self.manifest {
            Some(p) => p.file_stem().map_or("manifest".into(), |s| s.to_string_lossy().into_owned()),
            None => "synthetic".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    Tinynet,
    Analytic,
}

impl ScorerKind {
    pub fn label(&self) -> &'static str {
        match self {
            ScorerKind::Tinynet => "tinynet",
            ScorerKind::Analytic => "analytic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerSpec {
    pub kind: ScorerKind,
    /// Load trained parameters instead of training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Upper bound on the number of attacked videos.
    pub subset: usize,
    /// Write one trace CSV per attacked video.
    pub traces: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub preset: Preset,
    pub dataset: DatasetSpec,
    pub pipeline: PipelineParams,
    pub scorer: ScorerSpec,
    pub analytic: AnalyticWeights,
    pub train: TrainConfig,
    pub defense: DefenseConfig,
    pub attack: AttackConfig,
    pub experiment: ExperimentSpec,
    pub output: OutputSpec,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset, seed: u64) -> Self {
        let ranges = DegradationRanges::default();
        let (pipeline, frames, side, patch_side, query_amplitude) = match preset {
            Preset::Desk => (PipelineParams::DESK, 16, 64, 16, 16.0),
            Preset::Paper => (PipelineParams::PAPER, 64, 256, 56, 8.0),
        };
        Self {
            seed,
            preset,
            dataset: DatasetSpec {
                count: 60,
                frames,
                height: side,
                width: side,
                noise_sigma_max: ranges.noise_sigma_max,
                blur_radius_max: ranges.blur_radius_max,
                block_size_max: ranges.block_size_max,
                temporal_jitter_max: ranges.temporal_jitter_max,
                active_probability: ranges.active_probability,
                manifest: None,
            },
            pipeline,
            scorer: ScorerSpec {
                kind: ScorerKind::Tinynet,
                params: None,
            },
            analytic: AnalyticWeights::default(),
            train: TrainConfig::default(),
            defense: DefenseConfig::full(),
            attack: AttackConfig {
                patch_side,
                query_amplitude,
                ..AttackConfig::default()
            },
            experiment: ExperimentSpec {
                subset: 50,
                traces: true,
            },
            output: OutputSpec { dir: PathBuf::from("out") },
        }
    }

    pub fn validate(&self) -> Result<()> {
        qualify("pipeline", self.pipeline.validate())?;
        qualify("train", self.train.validate())?;
        qualify("defense", self.defense.validate())?;
        qualify("attack", self.attack.validate())?;
        qualify("analytic", self.analytic.validate())?;
        let d = &self.dataset;
        if d.manifest.is_none() {
            for (name, v) in [("dataset.count", d.count), ("dataset.height", d.height), ("dataset.width", d.width)] {
                if v == 0 {
                    return Err(Error::constraint(name, "must be >= 1"));
                }
            }
            if d.count < 2 {
                return Err(Error::constraint("dataset.count", "must be >= 2"));
            }
            if d.frames < self.pipeline.min_frames() {
                return Err(Error::constraint(
                    "dataset.frames",
                    format!("must be >= {} for the configured sampling", self.pipeline.min_frames()),
                ));
            }
            if !(d.noise_sigma_max >= 0.0 && d.temporal_jitter_max >= 0.0) {
                return Err(Error::constraint("dataset", "degradation maxima must be >= 0"));
            }
            if !(0.0..=1.0).contains(&d.active_probability) {
                return Err(Error::constraint("dataset.active_probability", "must lie in [0, 1]"));
            }
        }
        if self.experiment.subset == 0 {
            return Err(Error::constraint("experiment.subset", "must be >= 1"));
        }
        Ok(())
    }
}

fn qualify(section: &str, r: Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        Error::Constraint { field, message } if !field.contains('.') => Error::Constraint {
            field: format!("{section}.{field}"),
            message,
        },
        other => other,
    })
}

/// Keys that may appear although their default is absent.
const OPTIONAL_KEYS: &[(&str, &str)] = &[
    ("dataset", "manifest"),
    ("scorer", "params"),
    ("attack", "global_budget"),
];

/// Keys derived from the master seed and therefore not settable.
const DERIVED_KEYS: &[(&str, &str)] = &[("train", "seed"), ("attack", "seed")];

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn overlay<T: Serialize + DeserializeOwned>(section: &str, default: &T, user: toml::Table) -> Result<T> {
    let base = toml::Table::try_from(default).map_err(|e| Error::constraint(section, e.to_string()))?;
    for key in user.keys() {
        let known = base.contains_key(key) || OPTIONAL_KEYS.contains(&(section, key.as_str()));
        if !known || DERIVED_KEYS.contains(&(section, key.as_str())) {
            return Err(Error::UnknownKey(format!("{section}.{key}")));
        }
    }
    let mut merged = base.clone();
    merged.extend(user.clone());
    match toml::Value::Table(merged).try_into::<T>() {
        Ok(v) => Ok(v),
        Err(err) => {
            // find the offending key to name it
            for (key, value) in user {
                let mut single = base.clone();
                single.insert(key.clone(), value);
                if let Err(e) = toml::Value::Table(single).try_into::<T>() {
                    return Err(Error::constraint(format!("{section}.{key}"), e.message().trim().to_string()));
                }
            }
            Err(Error::constraint(section, err.message().trim().to_string()))
        }
    }
}

/// Parses a config document. `preset` and `seed` from the command line take
/// precedence over the document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_with(text, None, None)
}

pub fn parse_config_with(text: &str, preset: Option<Preset>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::ConfigSyntax {
        line: e.span().map_or(1, |s| line_of(text, s.start)),
        message: e.message().trim().to_string(),
    })?;

    let doc_seed = match doc.remove("seed") {
        None => None,
        Some(toml::Value::Integer(v)) if v >= 0 => Some(v as u64),
        Some(other) => return Err(Error::constraint("seed", format!("expected a non-negative integer, got {other}"))),
    };
    let doc_preset = match doc.remove("preset") {
        None => None,
        Some(toml::Value::String(s)) => Some(s.parse()?),
        Some(other) => return Err(Error::constraint("preset", format!("expected a string, got {other}"))),
    };
    let preset = preset.or(doc_preset).unwrap_or(Preset::Paper);
    let seed = seed.or(doc_seed).unwrap_or(0);
    let mut cfg = ExperimentConfig::preset(preset, seed);

    for (section, value) in doc {
        let table = match value {
            toml::Value::Table(t) => t,
            _ => return Err(Error::UnknownKey(section)),
        };
        match section.as_str() {
            "dataset" => cfg.dataset = overlay("dataset", &cfg.dataset, table)?,
            "pipeline" => cfg.pipeline = overlay("pipeline", &cfg.pipeline, table)?,
            "scorer" => cfg.scorer = overlay("scorer", &cfg.scorer, table)?,
            "analytic" => cfg.analytic = overlay("analytic", &cfg.analytic, table)?,
            "train" => cfg.train = overlay("train", &cfg.train, table)?,
            "defense" => cfg.defense = overlay("defense", &cfg.defense, table)?,
            "attack" => cfg.attack = overlay("attack", &cfg.attack, table)?,
            "experiment" => cfg.experiment = overlay("experiment", &cfg.experiment, table)?,
            "output" => cfg.output = overlay("output", &cfg.output, table)?,
            _ => return Err(Error::UnknownKey(section)),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Renders a config as a document that [`parse_config`] reads back unchanged.
pub fn render_config(cfg: &ExperimentConfig) -> Result<String> {
    let mut table = toml::Table::try_from(cfg).map_err(|e| Error::Format(e.to_string()))?;
    for (section, key) in DERIVED_KEYS {
        if let Some(toml::Value::Table(t)) = table.get_mut(*section) {
            t.remove(*key);
        }
    }
    toml::to_string(&table).map_err(|e| Error::Format(e.to_string()))
}
