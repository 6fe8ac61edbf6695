use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use vqa_defense::attack::write_trace_file;
use vqa_defense::defense::DefensePipeline;
use vqa_defense::harness::config::{parse_config_with, render_config, ExperimentConfig, Preset};
use vqa_defense::harness::{
    ablation_settings, build_dataset, emit_failure, emit_report, emit_study, load_report, run_ablation,
    run_experiment, run_region_study, Dataset, Model, Workspace,
};
use vqa_defense::scorer::write_params_file;
use vqa_defense::video::{read_video_file, write_manifest, write_video_file, LabeledVideo, ManifestRow};
use vqa_defense::{Error, Result};

#[derive(Parser)]
#[command(name = "vqalab", version, about = "Attack and defense experiments on video quality scorers")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `[output] dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Default values for every key the config leaves out.
    #[arg(long, global = true, value_enum)]
    preset: Option<PresetArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Desk,
    Paper,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Desk => Preset::Desk,
            PresetArg::Paper => Preset::Paper,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Study {
    /// The configured defense only.
    Single,
    /// No defense, each strategy alone, and all strategies.
    Ablation,
    /// Guardian restricted to attacked or untouched regions.
    Regions,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset as RVID files plus a manifest.
    Gen,
    /// Train the scorer under the configured defense and write its parameters.
    Train,
    /// Attack one video and write its trace and adversarial copy.
    Attack {
        /// Dataset index of the video to attack.
        #[arg(long, default_value_t = 0, conflicts_with = "video")]
        index: usize,
        /// Attack an RVID file instead of a dataset video.
        #[arg(long, requires = "mos")]
        video: Option<PathBuf>,
        /// Mean opinion score of `--video`, on [1, 5].
        #[arg(long)]
        mos: Option<f64>,
    },
    /// Run the full experiment and write its report.
    Eval {
        #[arg(long, value_enum, default_value_t = Study::Single)]
        study: Study,
    },
    /// Re-render the CSV files of a report from its JSON dump.
    Report {
        /// A `report.json` written by `eval`.
        #[arg(long)]
        from: PathBuf,
    },
}

fn load_config(g: &Global) -> Result<ExperimentConfig> {
    let preset = g.preset.map(Preset::from);
    let mut cfg = match &g.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::PathIo {
                path: path.clone(),
                source: e,
            })?;
            parse_config_with(&text, preset, g.seed)?
        }
        None => parse_config_with("", preset, g.seed)?,
    };
    if let Some(out) = &g.out {
        cfg.output.dir = out.clone();
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::PathIo {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn gen(cfg: &ExperimentConfig) -> Result<()> {
    let dataset = build_dataset(cfg)?;
    let dir = &cfg.output.dir;
    create_dir(dir)?;
    let mut rows = Vec::with_capacity(dataset.videos.len());
    for (i, lv) in dataset.videos.iter().enumerate() {
        let name = format!("{}.rvid", dataset.video_id(i));
        write_video_file(&lv.video, &dir.join(&name))?;
        rows.push(ManifestRow { path: name, mos: lv.mos });
    }
    let manifest = dir.join("manifest.csv");
    write_manifest(&manifest, &rows)?;
    println!("wrote {} videos and {}", rows.len(), manifest.display());
    Ok(())
}

fn train(cfg: &ExperimentConfig) -> Result<()> {
    let ws = Workspace::new(cfg.clone())?;
    let model = ws.model(&cfg.defense)?;
    let Model::TinyNet { params, train_plcc } = model else {
        return Err(Error::Capability("the analytic scorer has no trainable parameters".into()));
    };
    create_dir(&cfg.output.dir)?;
    let path = cfg.output.dir.join("params.svqp");
    write_params_file(&params, &path)?;
    let rendered = render_config(cfg)?;
    let cfg_path = cfg.output.dir.join("config.toml");
    std::fs::write(&cfg_path, rendered).map_err(|e| Error::PathIo { path: cfg_path, source: e })?;
    match train_plcc {
        Some(p) => println!("wrote {} (training PLCC {p:.4})", path.display()),
        None => println!("wrote {}", path.display()),
    }
    Ok(())
}

fn attack(cfg: &ExperimentConfig, index: usize, video: Option<&Path>, mos: Option<f64>) -> Result<()> {
    let ws = Workspace::new(cfg.clone())?;
    let model = ws.model(&cfg.defense)?;
    let (ws, index) = match (video, mos) {
        (Some(path), Some(mos)) => {
            let lv = LabeledVideo::new(read_video_file(path)?, mos)?;
            let name = path.file_stem().map_or("video".into(), |s| s.to_string_lossy().into_owned());
            (Workspace::with_dataset(cfg.clone(), Dataset { name, videos: vec![lv] })?, 0)
        }
        _ => (ws, index),
    };
    let scorer = model.scorer(DefensePipeline::new(cfg.pipeline, cfg.defense), None);
    let (record, result) = ws.attack_video(scorer.as_ref(), index)?;
    let dir = &cfg.output.dir;
    create_dir(dir)?;
    let trace = dir.join(format!("{}_trace.csv", record.video_id));
    write_trace_file(&result.trace, &trace)?;
    write_video_file(&result.adversarial, &dir.join(format!("{}_adv.rvid", record.video_id)))?;
    println!(
        "{}: mos {:.3} target {} score {:.4} -> {:.4}, {} of {} queries accepted; trace in {}",
        record.video_id,
        record.mos,
        record.target,
        record.score_before,
        record.score_after,
        record.accepted_queries,
        record.queries_used,
        trace.display()
    );
    Ok(())
}

fn eval(cfg: &ExperimentConfig, study: Study) -> Result<()> {
    let dir = &cfg.output.dir;
    let outcome = match study {
        Study::Single => run_experiment(cfg).and_then(|r| {
            emit_report(&r, dir)?;
            Ok(vec![r])
        }),
        Study::Ablation => Workspace::new(cfg.clone())
            .and_then(|ws| run_ablation(&ws, &ablation_settings(&cfg.defense)))
            .and_then(|rs| emit_study(&rs, dir).map(|_| rs)),
        Study::Regions => Workspace::new(cfg.clone())
            .and_then(|ws| run_region_study(&ws))
            .and_then(|rs| emit_study(&rs, dir).map(|_| rs)),
    };
    let reports = match outcome {
        Ok(r) => r,
        Err(e) => {
            emit_failure(dir, &e)?;
            return Err(e);
        }
    };
    for r in &reports {
        println!(
            "{:<16} srcc {:.4} -> {:.4}  plcc {:.4} -> {:.4}  R {:.4}  ({:.1?})",
            r.defense, r.srcc_before, r.srcc_after, r.plcc_before, r.plcc_after, r.r_value, r.wall_time
        );
    }
    println!("report written to {}", dir.display());
    if let Some(failed) = reports.iter().find(|r| !r.is_complete()) {
        return Err(Error::Model(format!("run {} did not complete", failed.defense)));
    }
    Ok(())
}

fn report(from: &Path, out: &Path) -> Result<()> {
    let r = load_report(from)?;
    let paths = emit_report(&r, out)?;
    println!("wrote {} and {}", paths.summary.display(), paths.per_video.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Report { from } => {
            let out = cli.global.out.clone().unwrap_or_else(|| from.parent().unwrap_or(Path::new(".")).to_path_buf());
            report(from, &out)
        }
        cmd => {
            let cfg = load_config(&cli.global)?;
            match cmd {
                Command::Gen => gen(&cfg),
                Command::Train => train(&cfg),
                Command::Attack { index, video, mos } => attack(&cfg, *index, video.as_deref(), *mos),
                Command::Eval { study } => eval(&cfg, *study),
                Command::Report { .. } => unreachable!(),
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
