//! Per-frame records, per-epoch traces, and run summary statistics.
//!
//! Percentiles use the nearest-rank definition (no interpolation) so every
//! reported value is an observed sample and tests can be exact. Lost,
//! expired, and stale-dropped frames are excluded from latency statistics and
//! reported separately; jitter is defined here as the standard deviation of
//! the per-frame network round trip.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::math;
use crate::media::Resolution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrameOutcome {
    /// Delivered and (for primary frames) detection completed.
    Ok,
    /// No fragment survived the network.
    Lost,
    /// Some fragments arrived but the frame timed out in reassembly.
    Expired,
    /// Delivered, but its detection job was superseded by a newer frame.
    StaleDropped,
}

impl FrameOutcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            FrameOutcome::Ok => "ok",
            FrameOutcome::Lost => "lost",
            FrameOutcome::Expired => "expired",
            FrameOutcome::StaleDropped => "stale-dropped",
        }
    }
}

/// Timeline of one frame from capture to feedback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub stream_id: u8,
    pub frame_seq: u64,
    pub capture_time: f64,
    pub size_bytes: u64,
    pub is_keyframe: bool,
    pub resolution: Resolution,
    /// Arrival of the final fragment at the server.
    pub completion_time: Option<f64>,
    pub detection_start: Option<f64>,
    pub detection_finish: Option<f64>,
    pub navigation_start: Option<f64>,
    pub navigation_finish: Option<f64>,
    pub vlm_start: Option<f64>,
    pub vlm_finish: Option<f64>,
    /// Detection result delivered back to the client.
    pub feedback_delivery_time: Option<f64>,
    pub outcome: FrameOutcome,
}

impl FrameRecord {
    pub fn new(
        stream_id: u8,
        frame_seq: u64,
        capture_time: f64,
        size_bytes: u64,
        is_keyframe: bool,
        resolution: Resolution,
    ) -> Self {
        FrameRecord {
            stream_id,
            frame_seq,
            capture_time,
            size_bytes,
            is_keyframe,
            resolution,
            completion_time: None,
            detection_start: None,
            detection_finish: None,
            navigation_start: None,
            navigation_finish: None,
            vlm_start: None,
            vlm_finish: None,
            feedback_delivery_time: None,
            outcome: FrameOutcome::Lost,
        }
    }

    /// Network round trip: uplink transfer plus the feedback downlink leg.
    pub fn rtt(&self) -> Option<f64> {
        let completion = self.completion_time?;
        let det_finish = self.detection_finish?;
        let feedback = self.feedback_delivery_time?;
        Some((completion - self.capture_time) + (feedback - det_finish))
    }

    /// End-to-end detection latency; see [`crate::edge::e2e_latency`].
    pub fn e2e(&self) -> Option<f64> {
        crate::edge::e2e_latency(self)
    }
}

/// One per-epoch trace point (the rate plot data).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch_index: u64,
    /// Scheduled link capacity at the epoch start.
    pub capacity_bps: f64,
    /// Server-side estimate for this epoch.
    pub estimate_bps: Option<f64>,
    pub estimate_no_data: bool,
    /// Client prediction in force for this epoch (adaptation runs only).
    pub prediction_bps: Option<f64>,
    /// Total encoder budget in force for this epoch.
    pub encoder_bitrate_bps: f64,
    pub resolution: Resolution,
    pub secondary_active: bool,
}

/// Aggregate statistics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub adaptation_enabled: bool,
    pub seed: u64,
    pub run_length: f64,
    pub qos_budget: f64,
    /// One-way times derived from a shared clock (simulation) or estimated
    /// from round trips (live mode).
    pub one_way_times_estimated: bool,

    pub frames_total: u64,
    pub frames_completed: u64,
    pub frames_lost: u64,
    pub frames_expired: u64,
    pub frames_stale_dropped: u64,
    /// Completed primary-stream frames with a full detection path.
    pub completed_detection_frames: u64,

    pub rtt_mean: Option<f64>,
    pub rtt_median: Option<f64>,
    pub rtt_p25: Option<f64>,
    pub rtt_p75: Option<f64>,
    pub rtt_max: Option<f64>,
    /// Standard deviation of the RTT samples.
    pub jitter: Option<f64>,

    /// End-to-end latency CDF over completed detection frames.
    pub e2e_cdf: Vec<(f64, f64)>,
    pub violations: u64,
    pub violation_fraction: f64,
    pub loss_fraction: f64,

    pub feedback_messages: u64,
    pub stale_feedback: u64,
    pub detection_jobs: u64,
    pub detection_jobs_from_secondary: u64,
    pub navigation_jobs: u64,
    pub vlm_jobs: u64,

    pub epochs: Vec<EpochTrace>,
}

/// Nearest-rank percentile of a sorted slice, `p` in (0, 100].
pub fn percentile_nearest_rank(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = libm::ceil(p / 100.0 * sorted.len() as f64) as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

fn stddev(values: &[f64]) -> Option<f64> {
    let m = mean(values)?;
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
    Some(math::sqrt(var))
}

/// Cumulative distribution points of the given samples: one point per
/// distinct value, non-decreasing from >0 to 1.
pub fn cdf_points(samples: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted: Vec<f64> = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (i, v) in sorted.iter().enumerate() {
        let fraction = (i + 1) as f64 / n as f64;
        match points.last_mut() {
            Some(last) if last.0 == *v => last.1 = fraction,
            _ => points.push((*v, fraction)),
        }
    }
    points
}

/// Inputs to [`summarize`] beyond the frame records.
#[derive(Debug, Clone, Default)]
pub struct RunContext {
    pub adaptation_enabled: bool,
    pub seed: u64,
    pub run_length: f64,
    pub qos_budget: f64,
    pub one_way_times_estimated: bool,
    pub feedback_messages: u64,
    pub stale_feedback: u64,
    pub detection_jobs: u64,
    pub detection_jobs_from_secondary: u64,
    pub navigation_jobs: u64,
    pub vlm_jobs: u64,
    pub epochs: Vec<EpochTrace>,
}

/// Reduce per-frame records to the run summary.
pub fn summarize(records: &[FrameRecord], ctx: RunContext) -> RunSummary {
    let frames_total = records.len() as u64;
    let mut frames_completed = 0;
    let mut frames_lost = 0;
    let mut frames_expired = 0;
    let mut frames_stale_dropped = 0;
    let mut rtts: Vec<f64> = Vec::new();
    let mut e2es: Vec<f64> = Vec::new();
    for record in records {
        match record.outcome {
            FrameOutcome::Ok => frames_completed += 1,
            FrameOutcome::Lost => frames_lost += 1,
            FrameOutcome::Expired => frames_expired += 1,
            FrameOutcome::StaleDropped => {
                frames_stale_dropped += 1;
                frames_completed += 1;
            }
        }
        if record.outcome == FrameOutcome::Ok {
            if let Some(rtt) = record.rtt() {
                rtts.push(rtt);
            }
            if let Some(e2e) = record.e2e() {
                e2es.push(e2e);
            }
        }
    }
    rtts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let completed_detection = e2es.len() as u64;
    let violations = e2es.iter().filter(|v| **v > ctx.qos_budget).count() as u64;
    let violation_fraction = if completed_detection > 0 {
        violations as f64 / completed_detection as f64
    } else {
        0.0
    };
    let loss_fraction = if frames_total > 0 {
        (frames_lost + frames_expired) as f64 / frames_total as f64
    } else {
        1.0
    };
    RunSummary {
        adaptation_enabled: ctx.adaptation_enabled,
        seed: ctx.seed,
        run_length: ctx.run_length,
        qos_budget: ctx.qos_budget,
        one_way_times_estimated: ctx.one_way_times_estimated,
        frames_total,
        frames_completed,
        frames_lost,
        frames_expired,
        frames_stale_dropped,
        completed_detection_frames: completed_detection,
        rtt_mean: mean(&rtts),
        rtt_median: percentile_nearest_rank(&rtts, 50.0),
        rtt_p25: percentile_nearest_rank(&rtts, 25.0),
        rtt_p75: percentile_nearest_rank(&rtts, 75.0),
        rtt_max: rtts.last().copied(),
        jitter: stddev(&rtts),
        e2e_cdf: cdf_points(&e2es),
        violations,
        violation_fraction,
        loss_fraction,
        feedback_messages: ctx.feedback_messages,
        stale_feedback: ctx.stale_feedback,
        detection_jobs: ctx.detection_jobs,
        detection_jobs_from_secondary: ctx.detection_jobs_from_secondary,
        navigation_jobs: ctx.navigation_jobs,
        vlm_jobs: ctx.vlm_jobs,
        epochs: ctx.epochs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ok_record(seq: u64, e2e_ms: f64) -> FrameRecord {
        let capture = seq as f64 / 30.0;
        let mut r = FrameRecord::new(0, seq, capture, 10_000, false, Resolution::FULL_HD);
        // Split the target e2e into uplink + exec + downlink parts.
        let uplink = e2e_ms / 1000.0 - 0.030;
        r.completion_time = Some(capture + uplink);
        r.detection_start = Some(capture + uplink);
        r.detection_finish = Some(capture + uplink + 0.020);
        r.feedback_delivery_time = Some(capture + uplink + 0.030);
        r.outcome = FrameOutcome::Ok;
        r
    }

    #[test]
    fn violation_fraction_count() {
        let records: Vec<FrameRecord> = [50.0, 120.0, 90.0, 101.0]
            .iter()
            .enumerate()
            .map(|(i, ms)| ok_record(i as u64, *ms))
            .collect();
        let summary = summarize(
            &records,
            RunContext {
                qos_budget: 0.100,
                ..RunContext::default()
            },
        );
        assert_eq!(summary.completed_detection_frames, 4);
        assert_eq!(summary.violations, 2);
        assert_eq!(summary.violation_fraction, 0.5);
    }

    #[test]
    fn nearest_rank_percentiles() {
        let sorted = [0.030, 0.040, 0.050];
        assert_eq!(percentile_nearest_rank(&sorted, 50.0), Some(0.040));
        assert_eq!(percentile_nearest_rank(&sorted, 25.0), Some(0.030));
        assert_eq!(percentile_nearest_rank(&sorted, 75.0), Some(0.050));
        assert_eq!(percentile_nearest_rank(&sorted, 100.0), Some(0.050));
        assert_eq!(percentile_nearest_rank(&[], 50.0), None);
    }

    #[test]
    fn all_frames_lost_degenerates() {
        let mut records = Vec::new();
        for seq in 0..5 {
            records.push(FrameRecord::new(
                0,
                seq,
                seq as f64 / 30.0,
                10_000,
                false,
                Resolution::FULL_HD,
            ));
        }
        let summary = summarize(&records, RunContext::default());
        assert_eq!(summary.loss_fraction, 1.0);
        assert!(summary.e2e_cdf.is_empty());
        assert_eq!(summary.violation_fraction, 0.0);
        assert!(summary.rtt_median.is_none());
    }

    #[test]
    fn cdf_is_monotone_and_complete() {
        let samples = [0.05, 0.03, 0.05, 0.08, 0.01];
        let points = cdf_points(&samples);
        assert!(points
            .windows(2)
            .all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1));
        assert_eq!(points.last().unwrap().1, 1.0);
        // Duplicate values collapse into one point at the higher fraction.
        assert_eq!(points.iter().filter(|p| p.0 == 0.05).count(), 1);
    }

    #[test]
    fn violation_plus_within_budget_is_one() {
        let records: Vec<FrameRecord> = (0..50)
            .map(|i| ok_record(i, 60.0 + (i as f64 * 7.0) % 80.0))
            .collect();
        let summary = summarize(
            &records,
            RunContext {
                qos_budget: 0.100,
                ..RunContext::default()
            },
        );
        let within = records
            .iter()
            .filter(|r| r.e2e().map(|v| v <= 0.100).unwrap_or(false))
            .count() as u64;
        assert_eq!(
            within + summary.violations,
            summary.completed_detection_frames
        );
    }

    #[test]
    fn jitter_is_rtt_stddev() {
        let records: Vec<FrameRecord> = (0..10).map(|i| ok_record(i, 80.0)).collect();
        let summary = summarize(&records, RunContext::default());
        assert!(summary.jitter.unwrap() < 1e-12);
    }
}
