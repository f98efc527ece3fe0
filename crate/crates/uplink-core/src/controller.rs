//! Client-side adaptation: link-rate prediction and encoder decisions.
//!
//! The predictor keeps a ring of recent per-epoch estimates and runs a
//! normalized adaptive linear filter (NLMS) over the last `taps` of them,
//! updated each epoch against the realized estimate; the prediction is
//! `gamma * max(floor, filter output)`. Around that core sit three guards
//! driven by comparing each estimate with what the encoder actually offered
//! that epoch:
//!
//! * send-limited epochs (estimate ~= offered) measure the sender, not the
//!   link, so the last estimate acts as a prediction floor (header overhead
//!   removed), optionally ramped upward after a quiet spell to probe for
//!   recovered capacity;
//! * queue-drain epochs (estimate > offered) floor the prediction at the
//!   previous belief;
//! * a queue-debt term (offered minus measured, cleared whenever the link
//!   proves empty) is subtracted so backlogs built during a capacity drop
//!   drain within an epoch.
//!
//! The prediction is clamped at the maximum encoder bitrate: anything above
//! it is unusable and unverifiable from throughput measurements.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::media::Resolution;
use crate::transport::FeedbackMessage;

/// Tuning constants for the predictor. Every value is scenario-configurable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    /// Safety factor applied to the filter output, in (0, 1].
    pub gamma: f64,
    /// Filter order P.
    pub taps: usize,
    /// History ring size W (>= taps).
    pub window: usize,
    /// NLMS step size.
    pub step_size: f64,
    /// Prediction floor in bits/second.
    pub floor_bps: f64,
    /// Prediction returned before the first real estimate arrives.
    pub initial_rate_bps: f64,
    /// Hard encoder ceiling in bits/second.
    pub max_encoder_bps: f64,
    /// Epoch length in seconds (for debt accounting).
    pub epoch_length: f64,
    /// Relative gap below the offered rate that counts as link-limited.
    pub saturation_threshold: f64,
    /// Fraction of the tracked queue debt repaid per epoch.
    pub debt_gain: f64,
    /// Upper bound on tracked debt, in bits (a queue cannot owe more).
    pub debt_cap_bits: f64,
    /// Send-limited epochs to wait before probing upward.
    pub recovery_after: u32,
    /// Multiplicative probe gain per epoch once probing.
    pub recovery_gain: f64,
    /// Multiplicative decay per silent epoch after feedback goes missing.
    pub silence_decay: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            gamma: 0.9,
            taps: 4,
            window: 10,
            step_size: 0.05,
            floor_bps: 100_000.0,
            initial_rate_bps: 20e6,
            max_encoder_bps: 20e6,
            epoch_length: 1.0,
            saturation_threshold: 0.005,
            debt_gain: 1.0,
            debt_cap_bits: 16e6,
            recovery_after: 4,
            recovery_gain: 1.025,
            silence_decay: 0.8,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Validation(format!(
                "gamma must be in (0, 1], got {}",
                self.gamma
            )));
        }
        if self.taps == 0 || self.window < self.taps {
            return Err(Error::Validation(format!(
                "need window >= taps >= 1, got window {} taps {}",
                self.window, self.taps
            )));
        }
        if !(self.floor_bps > 0.0) || !(self.max_encoder_bps > 0.0) {
            return Err(Error::Validation(
                "rate floors and caps must be positive".into(),
            ));
        }
        if !(self.epoch_length > 0.0) {
            return Err(Error::Validation("epoch_length must be positive".into()));
        }
        if !(self.step_size > 0.0 && self.step_size < 2.0) {
            return Err(Error::Validation(format!(
                "NLMS step size must be in (0, 2), got {}",
                self.step_size
            )));
        }
        if !(self.recovery_gain >= 1.0) {
            return Err(Error::Validation("recovery_gain must be >= 1".into()));
        }
        if !(self.silence_decay > 0.0 && self.silence_decay <= 1.0) {
            return Err(Error::Validation("silence_decay must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// How an epoch's measurement relates to what the encoder offered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EpochClass {
    /// No real estimate ingested yet, or a no-data epoch.
    Missing,
    /// Estimate well below offered: the link was the constraint.
    Saturated,
    /// Estimate matches offered: measurement limited by the sender.
    SendLimited,
    /// Estimate above offered: a standing queue drained through.
    Drain,
}

/// Rates the encoder offered during one epoch, as the controller knows them.
#[derive(Debug, Clone, Copy, PartialEq)]
struct OfferedRates {
    goodput_bps: f64,
    onwire_bps: f64,
}

/// Link-rate predictor state.
#[derive(Debug, Clone)]
pub struct Predictor {
    cfg: PredictorConfig,
    /// Last `window` (estimate_bps, no_data) pairs.
    history: VecDeque<(f64, bool)>,
    /// Filter inputs; no-data epochs hold the previous value.
    inputs: VecDeque<f64>,
    /// NLMS coefficients, most-recent tap first. Starts as passthrough.
    weights: Vec<f64>,
    offered: VecDeque<(u64, OfferedRates)>,
    last_seen_epoch: Option<u64>,
    last_estimate: Option<f64>,
    last_offered: Option<OfferedRates>,
    last_class: EpochClass,
    last_prediction_raw: f64,
    debt_bits: f64,
    send_limited_run: u32,
    silent_epochs: u32,
    stale_feedback: u64,
    seen_real_estimate: bool,
}

impl Predictor {
    pub fn new(cfg: PredictorConfig) -> Result<Self> {
        cfg.validate()?;
        let mut weights = alloc::vec![0.0; cfg.taps];
        weights[0] = 1.0;
        Ok(Predictor {
            last_prediction_raw: cfg.initial_rate_bps,
            cfg,
            history: VecDeque::new(),
            inputs: VecDeque::new(),
            weights,
            offered: VecDeque::new(),
            last_seen_epoch: None,
            last_estimate: None,
            last_offered: None,
            last_class: EpochClass::Missing,
            debt_bits: 0.0,
            send_limited_run: 0,
            silent_epochs: 0,
            stale_feedback: 0,
            seen_real_estimate: false,
        })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.cfg
    }

    /// Messages discarded as stale or duplicate.
    pub fn stale_feedback(&self) -> u64 {
        self.stale_feedback
    }

    /// Highest epoch index whose feedback has been ingested.
    pub fn last_seen_epoch(&self) -> Option<u64> {
        self.last_seen_epoch
    }

    /// Record the rates the encoder offers during `epoch` so the matching
    /// estimate can be classified when its feedback arrives.
    pub fn note_offered(&mut self, epoch: u64, goodput_bps: f64, onwire_bps: f64) {
        self.offered.push_back((
            epoch,
            OfferedRates {
                goodput_bps,
                onwire_bps,
            },
        ));
        while self.offered.len() > 64 {
            self.offered.pop_front();
        }
    }

    fn offered_for(&self, epoch: u64) -> Option<OfferedRates> {
        self.offered
            .iter()
            .rev()
            .find(|(e, _)| *e == epoch)
            .map(|(_, r)| *r)
    }

    /// Ingest one feedback message. Returns false when the message is stale
    /// or a duplicate and was ignored.
    pub fn ingest_feedback(&mut self, msg: &FeedbackMessage) -> bool {
        let epoch = msg.epoch_index as u64;
        if let Some(last) = self.last_seen_epoch {
            if epoch <= last {
                self.stale_feedback += 1;
                return false;
            }
        }
        self.last_seen_epoch = Some(epoch);
        self.silent_epochs = 0;
        if msg.no_data() {
            let held = self.inputs.back().copied().unwrap_or(0.0);
            self.push_input(held);
            self.push_history(0.0, true);
            if let Some(rates) = self.offered_for(epoch) {
                self.debt_bits = (self.debt_bits + rates.onwire_bps * self.cfg.epoch_length)
                    .clamp(0.0, self.cfg.debt_cap_bits);
            }
            self.last_class = EpochClass::Missing;
            return true;
        }

        let estimate = msg.estimate_bps as f64;
        self.update_filter(estimate);
        self.push_input(estimate);
        self.push_history(estimate, false);
        self.seen_real_estimate = true;

        match self.offered_for(epoch) {
            Some(rates) => {
                let ratio = estimate / rates.onwire_bps.max(1.0);
                self.last_class = if ratio < 1.0 - self.cfg.saturation_threshold {
                    EpochClass::Saturated
                } else if ratio > 1.0 + self.cfg.saturation_threshold {
                    EpochClass::Drain
                } else {
                    EpochClass::SendLimited
                };
                match self.last_class {
                    EpochClass::SendLimited => self.debt_bits = 0.0,
                    _ => {
                        self.debt_bits = (self.debt_bits
                            + (rates.onwire_bps - estimate) * self.cfg.epoch_length)
                            .clamp(0.0, self.cfg.debt_cap_bits)
                    }
                }
                self.last_offered = Some(rates);
            }
            None => {
                // No record of what was offered (open-loop use): trust the
                // measurement as a plain link sample.
                self.last_class = EpochClass::Saturated;
                self.last_offered = None;
            }
        }
        self.send_limited_run = match self.last_class {
            EpochClass::SendLimited => self.send_limited_run + 1,
            _ => 0,
        };
        self.last_estimate = Some(estimate);
        true
    }

    /// Note an epoch boundary that passed with no feedback at all.
    pub fn on_silent_epoch(&mut self) {
        self.silent_epochs += 1;
    }

    fn push_history(&mut self, estimate: f64, missing: bool) {
        self.history.push_back((estimate, missing));
        while self.history.len() > self.cfg.window {
            self.history.pop_front();
        }
    }

    fn push_input(&mut self, value: f64) {
        self.inputs.push_back(value);
        while self.inputs.len() > self.cfg.window.max(self.cfg.taps) {
            self.inputs.pop_front();
        }
    }

    /// Tap vector, most recent input first, once `taps` inputs exist.
    fn tap_vector(&self) -> Option<Vec<f64>> {
        if self.inputs.len() < self.cfg.taps {
            return None;
        }
        Some(
            self.inputs
                .iter()
                .rev()
                .take(self.cfg.taps)
                .copied()
                .collect(),
        )
    }

    fn filter_output(&self) -> Option<f64> {
        let x = self.tap_vector()?;
        Some(x.iter().zip(&self.weights).map(|(a, b)| a * b).sum())
    }

    /// NLMS update against the realized estimate, using the taps that
    /// produced the prediction for this epoch.
    fn update_filter(&mut self, realized: f64) {
        if let Some(x) = self.tap_vector() {
            let predicted: f64 = x.iter().zip(&self.weights).map(|(a, b)| a * b).sum();
            let err = realized - predicted;
            let norm: f64 = x.iter().map(|v| v * v).sum::<f64>() + 1e-9;
            for (w, xi) in self.weights.iter_mut().zip(&x) {
                *w += self.cfg.step_size * err * xi / norm;
            }
        }
    }

    /// Predict the link rate for the next epoch, in bits/second.
    pub fn predict_next(&mut self) -> f64 {
        if !self.seen_real_estimate {
            return self
                .cfg
                .initial_rate_bps
                .min(self.cfg.max_encoder_bps)
                .max(self.cfg.floor_bps);
        }
        let filter_out = self
            .filter_output()
            .or(self.inputs.back().copied())
            .unwrap_or(self.cfg.floor_bps);
        let mut prediction = self.cfg.gamma * filter_out.max(self.cfg.floor_bps);
        let last_est = self.last_estimate.unwrap_or(0.0);
        match self.last_class {
            EpochClass::Saturated => {}
            EpochClass::SendLimited => {
                // The link delivered everything offered: the measurement is a
                // lower bound. Continue at the same goodput, probing upward
                // after a quiet spell.
                let overhead = self
                    .last_offered
                    .map(|r| r.goodput_bps / r.onwire_bps.max(1.0))
                    .unwrap_or(1.0);
                let mut candidate = last_est * overhead;
                if self.send_limited_run > self.cfg.recovery_after {
                    candidate *= self.cfg.recovery_gain;
                }
                prediction = prediction.max(candidate);
            }
            EpochClass::Drain => {
                // A backlog flushed through: evidence of capacity at least
                // `last_est`, but do not leap above the standing belief.
                let capped = last_est.min(self.last_prediction_raw.max(self.cfg.gamma * last_est));
                prediction = prediction.max(capped);
            }
            EpochClass::Missing => {
                prediction = prediction.max(self.last_prediction_raw);
            }
        }
        prediction = prediction.min(self.cfg.max_encoder_bps);
        self.last_prediction_raw = prediction;
        let mut adjusted = prediction - self.cfg.debt_gain * self.debt_bits / self.cfg.epoch_length;
        if self.silent_epochs >= 2 {
            let decay = crate::math::powf(self.cfg.silence_decay, (self.silent_epochs - 1) as f64);
            adjusted *= decay;
        }
        adjusted.clamp(self.cfg.floor_bps, self.cfg.max_encoder_bps)
    }
}

/// One rung of the resolution ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolutionTier {
    /// Minimum predicted rate for this tier, bits/second.
    pub min_bps: f64,
    pub resolution: Resolution,
}

/// Ordered resolution ladder with hysteresis on upward switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionLadder {
    /// Tiers in ascending `min_bps` order; the first must start at 0.
    pub tiers: Vec<ResolutionTier>,
    /// Fractional margin a prediction must exceed a threshold by to move up.
    pub hysteresis_margin: f64,
}

impl Default for ResolutionLadder {
    fn default() -> Self {
        ResolutionLadder {
            tiers: alloc::vec![
                ResolutionTier {
                    min_bps: 0.0,
                    resolution: Resolution::SD,
                },
                ResolutionTier {
                    min_bps: 5e6,
                    resolution: Resolution::HD,
                },
                ResolutionTier {
                    min_bps: 10e6,
                    resolution: Resolution::FULL_HD,
                },
            ],
            hysteresis_margin: 0.10,
        }
    }
}

impl ResolutionLadder {
    pub fn validate(&self) -> Result<()> {
        if self.tiers.is_empty() {
            return Err(Error::Validation("resolution ladder is empty".into()));
        }
        if self.tiers[0].min_bps != 0.0 {
            return Err(Error::Validation(
                "the lowest ladder tier must start at 0 bps".into(),
            ));
        }
        for pair in self.tiers.windows(2) {
            if pair[1].min_bps <= pair[0].min_bps {
                return Err(Error::Validation(
                    "ladder thresholds must strictly increase".into(),
                ));
            }
        }
        for tier in &self.tiers {
            tier.resolution.validate()?;
        }
        let top = self.tiers.last().unwrap().resolution;
        if top != Resolution::FULL_HD {
            return Err(Error::Validation(format!(
                "top ladder tier must be 1920x1080, got {top}"
            )));
        }
        if !(0.0..1.0).contains(&self.hysteresis_margin) {
            return Err(Error::Validation(
                "hysteresis_margin must be in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// Index of the tier a rate falls into, ignoring hysteresis.
    pub fn tier_for(&self, rate_bps: f64) -> usize {
        let mut idx = 0;
        for (i, tier) in self.tiers.iter().enumerate() {
            if rate_bps >= tier.min_bps {
                idx = i;
            }
        }
        idx
    }

    fn tier_of_resolution(&self, resolution: Resolution) -> Option<usize> {
        self.tiers.iter().position(|t| t.resolution == resolution)
    }

    /// Tier after applying hysteresis: moving up requires clearing the new
    /// threshold by the margin, moving down is immediate.
    pub fn tier_with_hysteresis(&self, rate_bps: f64, current: usize) -> usize {
        let target = self.tier_for(rate_bps);
        if target <= current {
            return target;
        }
        let mut chosen = current;
        for idx in (current + 1)..=target {
            if rate_bps >= self.tiers[idx].min_bps * (1.0 + self.hysteresis_margin) {
                chosen = idx;
            }
        }
        chosen
    }
}

/// Hard limits and secondary-stream policy for decisions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionLimits {
    pub max_encoder_bps: f64,
    /// Predicted rate below which the secondary stream activates.
    pub secondary_threshold_bps: f64,
    /// Rate budget reserved for the secondary stream when active.
    pub secondary_allocation_bps: f64,
    /// Floor for the primary stream's share.
    pub floor_bps: f64,
}

impl Default for DecisionLimits {
    fn default() -> Self {
        DecisionLimits {
            max_encoder_bps: 20e6,
            secondary_threshold_bps: 5e6,
            secondary_allocation_bps: 1.5e6,
            floor_bps: 100_000.0,
        }
    }
}

/// Whether the secondary stream runs, with hysteresis: it activates strictly
/// below the threshold and deactivates only above `threshold * (1 + margin)`.
pub fn secondary_active(
    predicted_bps: f64,
    currently_active: bool,
    threshold_bps: f64,
    margin: f64,
) -> bool {
    if currently_active {
        predicted_bps < threshold_bps * (1.0 + margin)
    } else {
        predicted_bps < threshold_bps
    }
}

/// Encoder settings chosen for one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptationDecision {
    pub epoch_index: u64,
    /// Total encoder budget in bits/second, `min(prediction, max)` exactly.
    pub encoder_bitrate: f64,
    pub resolution: Resolution,
    pub secondary_active: bool,
}

impl AdaptationDecision {
    /// Primary stream's share of the budget: the secondary allocation comes
    /// off the top while the secondary stream runs.
    pub fn primary_share(&self, limits: &DecisionLimits) -> f64 {
        if self.secondary_active {
            (self.encoder_bitrate - limits.secondary_allocation_bps).max(limits.floor_bps)
        } else {
            self.encoder_bitrate
        }
    }
}

/// Map a prediction to the encoder settings for the next epoch.
pub fn decide(
    predicted_bps: f64,
    ladder: &ResolutionLadder,
    limits: &DecisionLimits,
    previous: &AdaptationDecision,
    epoch_index: u64,
) -> AdaptationDecision {
    let encoder_bitrate = predicted_bps.min(limits.max_encoder_bps);
    let current_tier = ladder
        .tier_of_resolution(previous.resolution)
        .unwrap_or_else(|| ladder.tier_for(predicted_bps));
    let tier = ladder.tier_with_hysteresis(predicted_bps, current_tier);
    AdaptationDecision {
        epoch_index,
        encoder_bitrate,
        resolution: ladder.tiers[tier].resolution,
        secondary_active: secondary_active(
            predicted_bps,
            previous.secondary_active,
            limits.secondary_threshold_bps,
            ladder.hysteresis_margin,
        ),
    }
}
