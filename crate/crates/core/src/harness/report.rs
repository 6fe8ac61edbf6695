//! Report files: summary CSV, per-video CSV, JSON dump and traces.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::experiment::ExperimentReport;
use crate::attack::write_trace_file;
use crate::error::{Error, Result};

pub const SUMMARY_HEADER: &str =
    "dataset,scorer,defense,attack,srcc_before,plcc_before,srcc_after,plcc_after,r_value,queries_or_iters,seed";
pub const PER_VIDEO_HEADER: &str = "video_id,mos,score_before,score_after,target,accepted_queries";

pub const SUMMARY_FILE: &str = "summary.csv";
pub const PER_VIDEO_FILE: &str = "per_video.csv";
pub const REPORT_FILE: &str = "report.json";
pub const TRACE_DIR: &str = "traces";
pub const FAILED_FILE: &str = "FAILED";

fn writer<W: Write>(sink: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink)
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::path_io(path, e))
}

fn finish<W: Write>(mut w: csv::Writer<W>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::path_io(path, e))
}

pub fn write_summary<W: Write>(reports: &[ExperimentReport], sink: W) -> Result<csv::Writer<W>> {
    let mut w = writer(sink);
    w.write_record(SUMMARY_HEADER.split(','))?;
    for r in reports {
        w.write_record([
            r.dataset.clone(),
            r.scorer.clone(),
            r.defense.clone(),
            r.attack.clone(),
            r.srcc_before.to_string(),
            r.plcc_before.to_string(),
            r.srcc_after.to_string(),
            r.plcc_after.to_string(),
            r.r_value.to_string(),
            r.queries_or_iters.to_string(),
            r.seed.to_string(),
        ])?;
    }
    Ok(w)
}

pub fn write_per_video<W: Write>(report: &ExperimentReport, sink: W) -> Result<csv::Writer<W>> {
    let mut w = writer(sink);
    w.write_record(PER_VIDEO_HEADER.split(','))?;
    for v in &report.videos {
        w.write_record([
            v.video_id.clone(),
            v.mos.to_string(),
            v.score_before.to_string(),
            v.score_after.to_string(),
            v.target.to_string(),
            v.accepted_queries.to_string(),
        ])?;
    }
    Ok(w)
}

/// Files written for one report.
#[derive(Debug, Clone)]
pub struct ReportPaths {
    pub summary: PathBuf,
    pub per_video: PathBuf,
    pub dump: PathBuf,
    pub traces: Vec<PathBuf>,
}

/// Writes all files of `report` into `dir`, plus a `FAILED` marker when the
/// run did not complete.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<ReportPaths> {
    fs::create_dir_all(dir).map_err(|e| Error::path_io(dir, e))?;
    let summary = dir.join(SUMMARY_FILE);
    finish(write_summary(std::slice::from_ref(report), create(&summary)?)?, &summary)?;
    let per_video = dir.join(PER_VIDEO_FILE);
    finish(write_per_video(report, create(&per_video)?)?, &per_video)?;

    let dump = dir.join(REPORT_FILE);
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    fs::write(&dump, text).map_err(|e| Error::path_io(&dump, e))?;

    let mut traces = Vec::new();
    if !report.traces.is_empty() {
        let tdir = dir.join(TRACE_DIR);
        fs::create_dir_all(&tdir).map_err(|e| Error::path_io(&tdir, e))?;
        for t in &report.traces {
            let path = tdir.join(format!("{}.csv", t.video_id));
            write_trace_file(&t.records, &path)?;
            traces.push(path);
        }
    }

    let marker = dir.join(FAILED_FILE);
    match &report.status {
        super::experiment::RunStatus::Failed(msg) => {
            fs::write(&marker, format!("{msg}\n")).map_err(|e| Error::path_io(&marker, e))?
        }
        super::experiment::RunStatus::Complete if marker.exists() => {
            fs::remove_file(&marker).map_err(|e| Error::path_io(&marker, e))?
        }
        _ => {}
    }
    Ok(ReportPaths {
        summary,
        per_video,
        dump,
        traces,
    })
}

/// Writes each report into `dir/<defense label>/` and a combined summary
/// into `dir/summary.csv`.
pub fn emit_study(reports: &[ExperimentReport], dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::path_io(dir, e))?;
    for r in reports {
        emit_report(r, &dir.join(&r.defense))?;
    }
    let summary = dir.join(SUMMARY_FILE);
    finish(write_summary(reports, create(&summary)?)?, &summary)?;
    Ok(summary)
}

/// Writes a marker for a run that failed before producing any report.
pub fn emit_failure(dir: &Path, error: &Error) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::path_io(dir, e))?;
    let marker = dir.join(FAILED_FILE);
    fs::write(&marker, format!("{error}\n")).map_err(|e| Error::path_io(&marker, e))?;
    Ok(marker)
}

pub fn load_report(path: &Path) -> Result<ExperimentReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::path_io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
