//! Two-arm comparison: the same scenario and seed with adaptation on and
//! off, plus a delta report between the arms.

use std::path::Path;

use anyhow::Result;
use serde::{Deserialize, Serialize};
use uplink_core::metrics::RunSummary;
use uplink_core::scenario::Scenario;
use uplink_core::sim::{run_sim, SimOutput};

use crate::export;

/// Headline numbers of one arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmDigest {
    pub violation_fraction: f64,
    pub median_rtt: Option<f64>,
    pub rtt_iqr: Option<f64>,
    pub jitter: Option<f64>,
    pub loss_fraction: f64,
    pub frames_completed: u64,
}

impl ArmDigest {
    pub fn of(summary: &RunSummary) -> ArmDigest {
        ArmDigest {
            violation_fraction: summary.violation_fraction,
            median_rtt: summary.rtt_median,
            rtt_iqr: match (summary.rtt_p75, summary.rtt_p25) {
                (Some(hi), Some(lo)) => Some(hi - lo),
                _ => None,
            },
            jitter: summary.jitter,
            loss_fraction: summary.loss_fraction,
            frames_completed: summary.frames_completed,
        }
    }
}

/// Paired summaries plus adaptation-minus-no-adaptation deltas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub adaptation: ArmDigest,
    pub no_adaptation: ArmDigest,
    pub median_rtt_delta: Option<f64>,
    pub violation_fraction_delta: f64,
    pub loss_fraction_delta: f64,
    pub jitter_delta: Option<f64>,
}

impl DeltaReport {
    pub fn of(adaptation: &RunSummary, no_adaptation: &RunSummary) -> DeltaReport {
        let a = ArmDigest::of(adaptation);
        let b = ArmDigest::of(no_adaptation);
        DeltaReport {
            adaptation: a,
            no_adaptation: b,
            median_rtt_delta: match (a.median_rtt, b.median_rtt) {
                (Some(x), Some(y)) => Some(x - y),
                _ => None,
            },
            violation_fraction_delta: a.violation_fraction - b.violation_fraction,
            loss_fraction_delta: a.loss_fraction - b.loss_fraction,
            jitter_delta: match (a.jitter, b.jitter) {
                (Some(x), Some(y)) => Some(x - y),
                _ => None,
            },
        }
    }
}

/// Run both arms of a scenario (identical seed and schedule).
pub fn run_both(scenario: &Scenario) -> Result<(SimOutput, SimOutput)> {
    let mut on = scenario.clone();
    on.adaptation = true;
    let mut off = scenario.clone();
    off.adaptation = false;
    let adaptation = run_sim(&on)?;
    let no_adaptation = run_sim(&off)?;
    Ok((adaptation, no_adaptation))
}

/// Run both arms and write `adaptation/`, `no_adaptation/`, and
/// `delta.json` under `dir`.
pub fn run_and_export(scenario: &Scenario, dir: &Path) -> Result<DeltaReport> {
    let (adaptation, no_adaptation) = run_both(scenario)?;
    export::write_run(&dir.join("adaptation"), &adaptation)?;
    export::write_run(&dir.join("no_adaptation"), &no_adaptation)?;
    let report = DeltaReport::of(&adaptation.summary, &no_adaptation.summary);
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    let path = dir.join("delta.json");
    std::fs::write(&path, json).map_err(|e| anyhow::anyhow!("writing {}: {e}", path.display()))?;
    Ok(report)
}
