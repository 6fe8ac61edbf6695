//! Dataset → scorer → clean scores → attacks → metrics.

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ScorerKind};
use crate::attack::{run_attack, target_score, AttackConfig, AttackMode, AttackResult, TraceRecord};
use crate::defense::{DefenseConfig, DefensePipeline, GuardianRegion, RegionMask};
use crate::error::{Error, Result};
use crate::metrics::{plcc, r_metric, srcc, RobustnessRecord};
use crate::rng::{substream, substream_seed, tag};
use crate::scorer::{
    read_params_file, train_tinynet, AnalyticScorer, AnalyticWeights, Scorer, TinyNetDims, TinyNetParams,
    TinyNetScorer, TrainConfig,
};
use crate::video::{read_manifest, read_video_file, synth_video, LabeledVideo};

/// Score range shared by MOS and calibrated scorers.
pub const SCORE_MIN: f64 = 1.0;
pub const SCORE_MAX: f64 = 5.0;

/// The videos of one experiment.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub videos: Vec<LabeledVideo>,
}

impl Dataset {
    pub fn video_id(&self, index: usize) -> String {
        format!("v{index:04}")
    }
}

/// Generates the synthetic dataset, or loads it from the configured manifest.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let spec = &cfg.dataset;
    let videos = match &spec.manifest {
        Some(path) => load_manifest(path)?,
        None => {
            let ranges = spec.ranges();
            (0..spec.count)
                .into_par_iter()
                .map(|i| {
                    let degradation = ranges.sample(&mut substream(cfg.seed, tag::DATASET, i as u64));
                    synth_video(&degradation, spec.frames, spec.height, spec.width)
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    if videos.len() < 2 {
        return Err(Error::DegenerateDataset(format!("{} videos, need at least 2", videos.len())));
    }
    Ok(Dataset {
        name: spec.name(),
        videos,
    })
}

fn load_manifest(path: &Path) -> Result<Vec<LabeledVideo>> {
    read_manifest(path)?
        .into_iter()
        .map(|(p, mos)| LabeledVideo::new(read_video_file(&p)?, mos))
        .collect()
}

/// A scorer independent of any defense setting.
#[derive(Debug, Clone)]
pub enum Model {
    TinyNet {
        params: Arc<TinyNetParams<f64>>,
        /// PLCC on the training set after calibration; absent for loaded params.
        train_plcc: Option<f64>,
    },
    Analytic(AnalyticWeights),
}

impl Model {
    pub fn kind(&self) -> ScorerKind {
        match self {
            Model::TinyNet { .. } => ScorerKind::Tinynet,
            Model::Analytic(_) => ScorerKind::Analytic,
        }
    }

    pub fn train_plcc(&self) -> Option<f64> {
        match self {
            Model::TinyNet { train_plcc, .. } => *train_plcc,
            Model::Analytic(_) => None,
        }
    }

    /// Binds the model to a defense pipeline and an optional guardian region.
    pub fn scorer(&self, pipeline: DefensePipeline, region: Option<Arc<RegionMask>>) -> Box<dyn Scorer<f64>> {
        match self {
            Model::TinyNet { params, .. } => {
                let s = TinyNetScorer::new(Arc::clone(params), pipeline);
                Box::new(match region {
                    Some(r) => s.with_region(r),
                    None => s,
                })
            }
            Model::Analytic(w) => {
                let mut s = AnalyticScorer::defended(*w, pipeline);
                s.region = region;
                Box::new(s)
            }
        }
    }
}

/// Training seed for a run: derived from the master seed.
pub fn train_config(cfg: &ExperimentConfig) -> TrainConfig {
    TrainConfig {
        seed: substream_seed(cfg.seed, tag::TRAIN, 0),
        ..cfg.train
    }
}

/// Trains (or loads) the configured scorer. Training runs under `defense`
/// with the guardian applied everywhere, since region masks exist only
/// after an attack.
pub fn build_model(cfg: &ExperimentConfig, dataset: &Dataset, defense: &DefenseConfig) -> Result<Model> {
    match cfg.scorer.kind {
        ScorerKind::Analytic => Ok(Model::Analytic(cfg.analytic)),
        ScorerKind::Tinynet => {
            if let Some(path) = &cfg.scorer.params {
                return Ok(Model::TinyNet {
                    params: Arc::new(read_params_file(path)?),
                    train_plcc: None,
                });
            }
            let training = DefenseConfig {
                guardian_region: GuardianRegion::Full,
                ..*defense
            };
            let pipeline = DefensePipeline::new(cfg.pipeline, training);
            let report = train_tinynet::<f64>(&dataset.videos, &train_config(cfg), TinyNetDims::default(), &pipeline)?;
            Ok(Model::TinyNet {
                params: Arc::new(report.params),
                train_plcc: Some(report.train_plcc),
            })
        }
    }
}

/// Indices of the attacked videos: a seeded draw of `min(subset, n)`, sorted.
pub fn attack_subset(cfg: &ExperimentConfig, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(cfg.seed, tag::SUBSET, 0));
    idx.truncate(cfg.experiment.subset.min(n));
    idx.sort_unstable();
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video_id: String,
    pub mos: f64,
    pub score_before: f64,
    pub score_after: f64,
    pub target: f64,
    pub accepted_queries: usize,
    pub queries_used: usize,
}

impl VideoRecord {
    /// Movement toward the target; negative when the score moved away.
    pub fn shift_toward_target(&self) -> f64 {
        (self.score_after - self.score_before) * (self.target - self.score_before).signum()
    }

    pub fn abs_shift(&self) -> f64 {
        (self.score_after - self.score_before).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state", content = "message")]
pub enum RunStatus {
    Complete,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoTrace {
    pub video_id: String,
    pub records: Vec<TraceRecord>,
}

/// Results of one run. Correlations are over the attacked subset; the
/// `clean_*_all` fields cover the whole dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub status: RunStatus,
    pub dataset: String,
    pub scorer: String,
    pub defense: String,
    pub attack: String,
    #[serde(with = "nan_as_null")]
    pub srcc_before: f64,
    #[serde(with = "nan_as_null")]
    pub plcc_before: f64,
    #[serde(with = "nan_as_null")]
    pub srcc_after: f64,
    #[serde(with = "nan_as_null")]
    pub plcc_after: f64,
    #[serde(with = "nan_as_null")]
    pub r_value: f64,
    pub r_excluded: usize,
    #[serde(with = "nan_as_null")]
    pub clean_srcc_all: f64,
    #[serde(with = "nan_as_null")]
    pub clean_plcc_all: f64,
    pub train_plcc: Option<f64>,
    #[serde(with = "nan_as_null")]
    pub median_shift_toward_target: f64,
    #[serde(with = "nan_as_null")]
    pub median_abs_shift: f64,
    pub queries_or_iters: usize,
    pub seed: u64,
    /// How the guardian region was obtained, for region-restricted runs.
    pub region_note: Option<String>,
    pub videos: Vec<VideoRecord>,
    pub traces: Vec<VideoTrace>,
    pub config: ExperimentConfig,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl ExperimentReport {
    pub fn is_complete(&self) -> bool {
        self.status == RunStatus::Complete
    }
}

/// JSON has no NaN; undefined metrics round-trip through `null`.
mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn correlation(f: fn(&[f64], &[f64]) -> Result<f64>, a: &[f64], b: &[f64]) -> f64 {
    f(a, b).unwrap_or(f64::NAN)
}

struct Outcome {
    record: VideoRecord,
    trace: Vec<TraceRecord>,
    mask: Option<RegionMask>,
}

/// A dataset with its configuration, reusable across defense settings.
pub struct Workspace {
    pub cfg: ExperimentConfig,
    pub dataset: Dataset,
}

impl Workspace {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let dataset = build_dataset(&cfg)?;
        Ok(Self { cfg, dataset })
    }

    pub fn with_dataset(cfg: ExperimentConfig, dataset: Dataset) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, dataset })
    }

    pub fn model(&self, defense: &DefenseConfig) -> Result<Model> {
        build_model(&self.cfg, &self.dataset, defense)
    }

    fn attack_config(&self, index: usize, round: u64) -> AttackConfig {
        let seed = substream_seed(self.cfg.seed, tag::ATTACK, index as u64);
        AttackConfig {
            seed: if round == 0 { seed } else { substream_seed(seed, tag::ATTACK, round) },
            ..self.cfg.attack
        }
    }

    fn score_clean(&self, scorer: &dyn Scorer<f64>, index: usize) -> Result<f64> {
        let video = self.dataset.videos[index].video.to_float::<f64>();
        scorer.score(&video, &mut substream(self.cfg.seed, tag::CLEAN_SCORE, index as u64))
    }

    /// Attacks video `index` with `scorer`; both scores share the clean draws,
    /// so an unchanged video scores identically.
    pub fn attack_video(&self, scorer: &dyn Scorer<f64>, index: usize) -> Result<(VideoRecord, AttackResult)> {
        self.attack_video_round(scorer, index, 0)
    }

    fn attack_video_round(&self, scorer: &dyn Scorer<f64>, index: usize, round: u64) -> Result<(VideoRecord, AttackResult)> {
        let lv = self
            .dataset
            .videos
            .get(index)
            .ok_or_else(|| Error::constraint("index", format!("{index} outside the {} videos", self.dataset.videos.len())))?;
        let score_before = self.score_clean(scorer, index)?;
        let target = target_score(lv.mos, SCORE_MIN, SCORE_MAX);
        let result = run_attack(scorer, &lv.video, target, &self.attack_config(index, round))?;
        let score_after = scorer.score(
            &result.adversarial.to_float(),
            &mut substream(self.cfg.seed, tag::CLEAN_SCORE, index as u64),
        )?;
        let record = VideoRecord {
            video_id: self.dataset.video_id(index),
            mos: lv.mos,
            score_before,
            score_after,
            target,
            accepted_queries: result.accepted(),
            queries_used: result.queries_used,
        };
        Ok((record, result))
    }

    fn attack_one(&self, scorer: &dyn Scorer<f64>, index: usize, round: u64) -> Result<Outcome> {
        let (record, result) = self.attack_video_round(scorer, index, round)?;
        Ok(Outcome {
            record,
            trace: result.trace,
            mask: result.patch_mask,
        })
    }

    /// Runs the attack on the subset under `defense`. With `regions`, the
    /// scorer of the i-th attacked video restricts the guardian to `regions[i]`.
    pub fn evaluate(&self, model: &Model, defense: DefenseConfig, regions: Option<&[Arc<RegionMask>]>) -> Result<ExperimentReport> {
        Ok(self.evaluate_inner(model, defense, regions, 0)?.0)
    }

    fn evaluate_inner(
        &self,
        model: &Model,
        defense: DefenseConfig,
        regions: Option<&[Arc<RegionMask>]>,
        round: u64,
    ) -> Result<(ExperimentReport, Vec<Option<RegionMask>>)> {
        let start = Instant::now();
        defense.validate()?;
        let cfg = &self.cfg;
        let subset = attack_subset(cfg, self.dataset.videos.len());
        if defense.guardian_region != GuardianRegion::Full {
            match regions {
                Some(r) if r.len() == subset.len() => {}
                _ => {
                    return Err(Error::constraint(
                        "defense.guardian_region",
                        "a restricted guardian region needs one patch mask per attacked video",
                    ))
                }
            }
        }
        let pipeline = DefensePipeline::new(cfg.pipeline, defense);
        let plain = model.scorer(pipeline.clone(), None);

        // masks exist only for attacked videos, so a restricted guardian has no
        // whole-dataset clean score
        let clean: Vec<f64> = if defense.guardian_region == GuardianRegion::Full {
            (0..self.dataset.videos.len())
                .into_par_iter()
                .map(|i| self.score_clean(plain.as_ref(), i))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let mos: Vec<f64> = self.dataset.videos.iter().map(|l| l.mos).collect();

        let outcomes: Vec<Result<Outcome>> = subset
            .par_iter()
            .enumerate()
            .map(|(k, &i)| match regions {
                Some(r) if defense.guardian_region != GuardianRegion::Full => {
                    let scorer = model.scorer(pipeline.clone(), Some(Arc::clone(&r[k])));
                    self.attack_one(scorer.as_ref(), i, round)
                }
                _ => self.attack_one(plain.as_ref(), i, round),
            })
            .collect();

        let mut status = RunStatus::Complete;
        let mut done = Vec::with_capacity(outcomes.len());
        for o in outcomes {
            match o {
                Ok(o) => done.push(o),
                Err(e) => {
                    status = RunStatus::Failed(e.to_string());
                    break;
                }
            }
        }

        let videos: Vec<VideoRecord> = done.iter().map(|o| o.record.clone()).collect();
        let before: Vec<f64> = videos.iter().map(|v| v.score_before).collect();
        let after: Vec<f64> = videos.iter().map(|v| v.score_after).collect();
        let sub_mos: Vec<f64> = videos.iter().map(|v| v.mos).collect();
        let records: Vec<RobustnessRecord> = videos
            .iter()
            .map(|v| RobustnessRecord {
                f_orig: v.score_before,
                f_adv: v.score_after,
                tar: v.target,
            })
            .collect();
        let r = r_metric(&records).ok();
        let shifts: Vec<f64> = videos.iter().map(VideoRecord::shift_toward_target).collect();
        let abs_shifts: Vec<f64> = videos.iter().map(VideoRecord::abs_shift).collect();

        let region_note = (defense.guardian_region != GuardianRegion::Full).then(|| {
            "guardian region taken from the union of accepted patches of an independent black-box attack on the unguarded scorer".to_string()
        });
        let mut config = cfg.clone();
        config.defense = defense;
        let report = ExperimentReport {
            status,
            dataset: self.dataset.name.clone(),
            scorer: model.kind().label().to_string(),
            defense: defense.label(),
            attack: cfg.attack.mode.label().to_string(),
            srcc_before: correlation(srcc, &before, &sub_mos),
            plcc_before: correlation(plcc, &before, &sub_mos),
            srcc_after: correlation(srcc, &after, &sub_mos),
            plcc_after: correlation(plcc, &after, &sub_mos),
            r_value: r.map_or(f64::NAN, |r| r.value),
            r_excluded: r.map_or(records.len(), |r| r.excluded),
            clean_srcc_all: correlation(srcc, &clean, &mos),
            clean_plcc_all: correlation(plcc, &clean, &mos),
            train_plcc: model.train_plcc(),
            median_shift_toward_target: median(&shifts),
            median_abs_shift: median(&abs_shifts),
            queries_or_iters: cfg.attack.steps(),
            seed: cfg.seed,
            region_note,
            videos,
            traces: done
                .iter()
                .map(|o| VideoTrace {
                    video_id: o.record.video_id.clone(),
                    records: if cfg.experiment.traces { o.trace.clone() } else { Vec::new() },
                })
                .filter(|t| !t.records.is_empty())
                .collect(),
            config,
            wall_time: start.elapsed(),
        };
        let masks = done.into_iter().map(|o| o.mask).collect();
        Ok((report, masks))
    }
}

/// Full run of the configured experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    let ws = Workspace::new(cfg.clone())?;
    let model = ws.model(&cfg.defense)?;
    let mut report = ws.evaluate(&model, cfg.defense, None)?;
    report.wall_time = start.elapsed();
    Ok(report)
}

/// Defense settings of the ablation study, keyed by label.
pub fn ablation_settings(base: &DefenseConfig) -> Vec<DefenseConfig> {
    let keep = |d: DefenseConfig| DefenseConfig {
        stochastic_passes: base.stochastic_passes,
        per_frame_guardian: base.per_frame_guardian,
        ..d
    };
    vec![
        keep(DefenseConfig::none()),
        keep(DefenseConfig::guardian_only()),
        keep(DefenseConfig::grid_only()),
        keep(DefenseConfig::inter_only()),
        keep(DefenseConfig::full()),
    ]
}

/// One run per defense setting over a shared dataset. Each setting trains
/// its own scorer.
pub fn run_ablation(ws: &Workspace, settings: &[DefenseConfig]) -> Result<Vec<ExperimentReport>> {
    settings
        .iter()
        .map(|d| {
            let model = ws.model(d)?;
            ws.evaluate(&model, *d, None)
        })
        .collect()
}

/// Attack round of the reconnaissance run behind the region study's masks.
const RECON_ROUND: u64 = 1;

/// Guardian-region study: one scorer trained with the intra guardian and no
/// other transform, attacked without the guardian, then with the guardian
/// restricted to the attacked patches, to their complement, and everywhere.
/// Returns the reports in that order.
///
/// The attacked region of each video is the union of accepted patches of a
/// reconnaissance attack on the unguarded scorer, run with its own attack
/// seeds so that its proposals are independent of the evaluated attacks.
pub fn run_region_study(ws: &Workspace) -> Result<Vec<ExperimentReport>> {
    if ws.cfg.attack.mode != AttackMode::Blackbox {
        return Err(Error::constraint("attack.mode", "the region study needs black-box patch masks"));
    }
    let guarded = DefenseConfig {
        stochastic_passes: ws.cfg.defense.stochastic_passes,
        per_frame_guardian: ws.cfg.defense.per_frame_guardian,
        ..DefenseConfig::guardian_only()
    };
    let model = ws.model(&guarded)?;
    let unguarded = DefenseConfig {
        intra_guardian: false,
        ..guarded
    };
    let (_, masks) = ws.evaluate_inner(&model, unguarded, None, RECON_ROUND)?;
    let masks: Vec<Arc<RegionMask>> = masks
        .into_iter()
        .map(|m| m.map(Arc::new).ok_or_else(|| Error::Capability("attack exported no patch mask".into())))
        .collect::<Result<_>>()?;
    let mut reports = vec![ws.evaluate(&model, unguarded, None)?];
    for region in [GuardianRegion::AttackedOnly, GuardianRegion::UntouchedOnly, GuardianRegion::Full] {
        let defense = DefenseConfig {
            guardian_region: region,
            ..guarded
        };
        reports.push(ws.evaluate(&model, defense, Some(&masks))?);
    }
    Ok(reports)
}
