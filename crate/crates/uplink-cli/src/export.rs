//! Machine-readable run outputs with stable, documented layouts.
//!
//! `frames.csv` carries one row per frame record, `epochs.csv` one row per
//! epoch trace point, and `summary.json` the whole [`RunSummary`]. All
//! numbers use Rust's shortest-round-trip float formatting, so reruns with
//! the same seed produce byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use uplink_core::metrics::{EpochTrace, FrameRecord, RunSummary};
use uplink_core::sim::SimOutput;

pub const FRAMES_CSV_HEADER: &str = "stream_id,frame_seq,capture_time,size_bytes,keyframe,width,height,completion_time,detection_start,detection_finish,navigation_start,navigation_finish,vlm_start,vlm_finish,feedback_time,rtt,e2e,outcome";

pub const EPOCHS_CSV_HEADER: &str = "epoch,capacity_bps,estimate_bps,estimate_no_data,prediction_bps,encoder_bitrate_bps,width,height,secondary_active";

fn opt(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

pub fn frames_csv(records: &[FrameRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 96 + 256);
    out.push_str(FRAMES_CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.stream_id,
            r.frame_seq,
            r.capture_time,
            r.size_bytes,
            r.is_keyframe,
            r.resolution.width,
            r.resolution.height,
            opt(r.completion_time),
            opt(r.detection_start),
            opt(r.detection_finish),
            opt(r.navigation_start),
            opt(r.navigation_finish),
            opt(r.vlm_start),
            opt(r.vlm_finish),
            opt(r.feedback_delivery_time),
            opt(r.rtt()),
            opt(r.e2e()),
            r.outcome.as_str(),
        );
    }
    out
}

pub fn epochs_csv(epochs: &[EpochTrace]) -> String {
    let mut out = String::with_capacity(epochs.len() * 64 + 128);
    out.push_str(EPOCHS_CSV_HEADER);
    out.push('\n');
    for e in epochs {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            e.epoch_index,
            e.capacity_bps,
            opt(e.estimate_bps),
            e.estimate_no_data,
            opt(e.prediction_bps),
            e.encoder_bitrate_bps,
            e.resolution.width,
            e.resolution.height,
            e.secondary_active,
        );
    }
    out
}

pub fn summary_json(summary: &RunSummary) -> Result<String> {
    let mut json = serde_json::to_string_pretty(summary).context("serializing summary")?;
    json.push('\n');
    Ok(json)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Paths produced by [`write_run`].
#[derive(Debug, Clone)]
pub struct RunFiles {
    pub frames: PathBuf,
    pub epochs: PathBuf,
    pub summary: PathBuf,
}

/// Write frames.csv, epochs.csv, and summary.json under `dir`.
pub fn write_run(dir: &Path, output: &SimOutput) -> Result<RunFiles> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let files = RunFiles {
        frames: dir.join("frames.csv"),
        epochs: dir.join("epochs.csv"),
        summary: dir.join("summary.json"),
    };
    write(&files.frames, &frames_csv(&output.records))?;
    write(&files.epochs, &epochs_csv(&output.summary.epochs))?;
    write(&files.summary, &summary_json(&output.summary)?)?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use uplink_core::scenario::Scenario;
    use uplink_core::sim::run_sim;

    #[test]
    fn row_counts_match_run_shape() {
        let mut s = Scenario::default();
        s.run_length = 3.0;
        s.primary.gop_length = 1;
        let out = run_sim(&s).unwrap();
        let frames = frames_csv(&out.records);
        // 3 s at 30 fps: 90 primary rows plus the header line.
        assert_eq!(frames.lines().count(), 1 + 90);
        let epochs = epochs_csv(&out.summary.epochs);
        assert_eq!(epochs.lines().count(), 1 + 3);
        assert!(frames.starts_with(FRAMES_CSV_HEADER));
        assert!(epochs.starts_with(EPOCHS_CSV_HEADER));
    }

    #[test]
    fn unwritable_path_reports_the_path() {
        let mut s = Scenario::default();
        s.run_length = 1.0;
        let out = run_sim(&s).unwrap();
        let err = write_run(Path::new("/proc/uplink-no-such-dir"), &out).unwrap_err();
        assert!(format!("{err:#}").contains("/proc/uplink-no-such-dir"));
    }
}
