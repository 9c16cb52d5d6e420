//! End-to-end steps shared by the command-line tool and tests.

use std::path::{Path, PathBuf};

use log::info;

use crate::baseline::{build_baseline, BaselineStats};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::frame::{parse_log_file, AttackLabel, FormatHint, FrameStream};
use crate::qa::{generate_dataset, GenerationReport, QaItem};
use crate::store::{manifest_path, write_dataset, DatasetManifest, ManifestContext};
use crate::window::{segment, Window};

/// Parse every input trace. Labels come from file names unless `label` is
/// given.
pub fn load_streams(paths: &[PathBuf], hint: FormatHint, label: Option<AttackLabel>) -> Result<Vec<FrameStream>> {
    if paths.is_empty() {
        return Err(Error::Config("no input traces given".to_string()));
    }
    paths
        .iter()
        .map(|p| {
            let stream = parse_log_file(p, hint, label)?;
            info!("{}: {} frames, {} rejected", p.display(), stream.len(), stream.rejected_count);
            Ok(stream)
        })
        .collect()
}

/// Learn the baseline from the attack-free frames of `stream`.
pub fn baseline_from_stream(stream: &FrameStream, cfg: &RunConfig) -> Result<BaselineStats> {
    cfg.validate()?;
    build_baseline(stream, cfg.window_len, &cfg.thresholds)
}

/// Fail unless `baseline` was built with the window length and thresholds of
/// `cfg`.
pub fn check_compatible(baseline: &BaselineStats, cfg: &RunConfig) -> Result<()> {
    let have = baseline.ground_truth();
    let want = cfg.ground_truth();
    if have.digest() != want.digest() {
        return Err(Error::Incompatible(format!(
            "baseline was built with window length {} and config digest {}, but this run uses window length {} and digest {}",
            have.window_len,
            &have.digest()[..12],
            want.window_len,
            &want.digest()[..12]
        )));
    }
    Ok(())
}

pub fn windows_of(streams: &[FrameStream], window_len: usize) -> Result<Vec<Window>> {
    let mut windows = Vec::new();
    for stream in streams {
        windows.extend(segment(stream, window_len)?);
    }
    Ok(windows)
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub items: Vec<QaItem>,
    pub report: GenerationReport,
}

pub fn generate(streams: &[FrameStream], baseline: &BaselineStats, cfg: &RunConfig) -> Result<Generated> {
    cfg.validate()?;
    check_compatible(baseline, cfg)?;
    let windows = windows_of(streams, cfg.window_len)?;
    let (items, report) = generate_dataset(&windows, baseline, &cfg.plan, cfg.seed)?;
    info!(
        "{} windows -> {} TF + {} MCQ, {} skips",
        report.windows,
        report.per_format.tf,
        report.per_format.mcq,
        report.skips.len()
    );
    Ok(Generated { items, report })
}

/// `data/qa.jsonl` -> `data/qa.report.json`.
pub fn report_path(dataset: &Path) -> PathBuf {
    let stem = dataset.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    dataset.with_file_name(format!("{stem}.report.json"))
}

/// Write dataset, manifest and generation report.
pub fn write_generated(
    generated: &Generated,
    path: &Path,
    baseline: &BaselineStats,
    cfg: &RunConfig,
) -> Result<DatasetManifest> {
    let ctx = ManifestContext {
        seed: Some(cfg.seed),
        window_len: Some(cfg.window_len),
        config_digest: Some(cfg.ground_truth().digest()),
        baseline_digest: Some(baseline.digest()),
    };
    let manifest = write_dataset(&generated.items, path, &ctx)?;
    let report_file = report_path(path);
    let mut json = serde_json::to_vec_pretty(&generated.report).map_err(|e| Error::json("generation report", e))?;
    json.push(b'\n');
    std::fs::write(&report_file, json).map_err(|e| Error::io(&report_file, e))?;
    info!("wrote {} and {}", path.display(), manifest_path(path).display());
    Ok(manifest)
}
