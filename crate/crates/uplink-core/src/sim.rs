//! Deterministic single-loop simulation wiring all modules together.
//!
//! Events at equal timestamps run in a documented fixed order: link
//! deliveries, reassembly expiry, edge job completions, epoch finalization,
//! feedback delivery, controller decision (inline after its feedback), frame
//! generation. Ties inside a class break by insertion order, so a scenario
//! and seed fully determine the run.

use alloc::collections::{BTreeMap, BinaryHeap};
use alloc::vec::Vec;
use core::cmp::Reverse;

use crate::controller::{decide, AdaptationDecision, DecisionLimits, Predictor};
use crate::edge::{route_frame, ServiceKind, WorkerPool};
use crate::error::Result;
use crate::estimator::EpochAccumulator;
use crate::math;
use crate::media::{FrameGenerator, Resolution, PRIMARY_STREAM, SECONDARY_STREAM};
use crate::metrics::{summarize, EpochTrace, FrameOutcome, FrameRecord, RunContext, RunSummary};
use crate::netem::Bottleneck;
use crate::scenario::Scenario;
use crate::transport::{
    packetize, stream_wire_rates, FeedbackMessage, MediaPacket, Reassembler, FEEDBACK_LEN,
};

/// Event priorities at equal timestamps. Link deliveries use [`PRIO_LINK`]
/// and are merged in from the bottleneck's own queue.
const PRIO_LINK: u8 = 10;
const PRIO_EXPIRY: u8 = 12;
const PRIO_JOB: u8 = 15;
const PRIO_EPOCH: u8 = 20;
const PRIO_FEEDBACK: u8 = 30;
const PRIO_CAPTURE: u8 = 50;

/// The latency-critical primary frame enters the link first when both
/// streams capture at the same instant.
fn capture_priority(stream: u8) -> u8 {
    PRIO_CAPTURE + stream
}

#[derive(Debug, Clone, PartialEq)]
enum EventKind {
    ExpiryProbe,
    JobProbe,
    EpochEnd { epoch: u64 },
    FeedbackArrival { msg: FeedbackMessage },
    FrameCapture { stream: u8, seq: u64 },
}

#[derive(Debug, Clone, PartialEq)]
struct Event {
    time: f64,
    priority: u8,
    order: u64,
    kind: EventKind,
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<core::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> core::cmp::Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.priority.cmp(&other.priority))
            .then(self.order.cmp(&other.order))
    }
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub summary: RunSummary,
    pub records: Vec<FrameRecord>,
}

struct Sim<'a> {
    scenario: &'a Scenario,
    heap: BinaryHeap<Reverse<Event>>,
    order: u64,
    link: Bottleneck<MediaPacket>,
    reassembler: Reassembler,
    estimator: EpochAccumulator,
    pool: WorkerPool,
    predictor: Predictor,
    limits: DecisionLimits,
    generators: [FrameGenerator; 2],
    secondary_on: bool,
    last_decision: AdaptationDecision,
    records: Vec<FrameRecord>,
    index: BTreeMap<(u8, u64), usize>,
    epochs: Vec<EpochTrace>,
    feedback_messages: u64,
    detection_jobs: u64,
    detection_jobs_from_secondary: u64,
    navigation_jobs: u64,
    vlm_jobs: u64,
}

impl<'a> Sim<'a> {
    fn new(scenario: &'a Scenario) -> Result<Self> {
        scenario.validate()?;
        let seed = scenario.seed;
        let primary_cfg = if scenario.adaptation {
            scenario.primary_config()
        } else {
            scenario.no_adaptation_config()
        };
        let generators = [
            FrameGenerator::new(primary_cfg, derive_seed(seed, 0x70))?,
            FrameGenerator::new(scenario.secondary_config(), derive_seed(seed, 0x71))?,
        ];
        let link = Bottleneck::new(
            scenario.capacity.clone(),
            scenario.link.prop_delay_up,
            scenario.link.queue_limit,
        )?;
        let pool = WorkerPool::new(
            scenario.edge.worker_count,
            scenario.edge.stale_drop,
            scenario.edge.models(),
            derive_seed(seed, 0xed),
        )?;
        let predictor = Predictor::new(scenario.predictor_config())?;
        let epoch_count = scenario.epoch_count();
        let mut epochs = Vec::with_capacity(epoch_count as usize);
        for epoch in 0..epoch_count {
            let start = epoch as f64 * scenario.estimator.epoch_length;
            epochs.push(EpochTrace {
                epoch_index: epoch,
                capacity_bps: scenario.capacity.capacity_at(start),
                estimate_bps: None,
                estimate_no_data: false,
                prediction_bps: None,
                encoder_bitrate_bps: primary_cfg.target_bitrate as f64,
                resolution: primary_cfg.resolution,
                secondary_active: false,
            });
        }
        let last_decision = AdaptationDecision {
            epoch_index: 0,
            encoder_bitrate: primary_cfg.target_bitrate as f64,
            resolution: primary_cfg.resolution,
            secondary_active: false,
        };
        Ok(Sim {
            scenario,
            heap: BinaryHeap::new(),
            order: 0,
            link,
            reassembler: Reassembler::new(scenario.transport.reassembly_expiry),
            estimator: EpochAccumulator::new(scenario.estimator.epoch_length)?,
            pool,
            predictor,
            limits: scenario.decision_limits(),
            generators,
            secondary_on: false,
            last_decision,
            records: Vec::new(),
            index: BTreeMap::new(),
            epochs,
            feedback_messages: 0,
            detection_jobs: 0,
            detection_jobs_from_secondary: 0,
            navigation_jobs: 0,
            vlm_jobs: 0,
        })
    }

    fn push(&mut self, time: f64, priority: u8, kind: EventKind) {
        let order = self.order;
        self.order += 1;
        self.heap.push(Reverse(Event {
            time,
            priority,
            order,
            kind,
        }));
    }

    fn record_mut(&mut self, stream: u8, seq: u64) -> Option<&mut FrameRecord> {
        let idx = *self.index.get(&(stream, seq))?;
        self.records.get_mut(idx)
    }

    /// Offered goodput/on-wire rates for the epoch a decision governs.
    /// The secondary stream counts when it generates during that epoch,
    /// which is governed by the flag in force at the epoch's first tick.
    fn note_offered(&mut self, epoch: u64, secondary_at_tick: bool) -> Result<()> {
        let mtu = self.scenario.transport.mtu;
        let (mut good, mut wire) = stream_wire_rates(self.generators[0].config(), mtu)?;
        if secondary_at_tick {
            let (g, w) = stream_wire_rates(self.generators[1].config(), mtu)?;
            good += g;
            wire += w;
        }
        self.predictor.note_offered(epoch, good, wire);
        Ok(())
    }

    fn apply_decision(&mut self, decision: AdaptationDecision) {
        let primary = AdaptationDecision {
            encoder_bitrate: decision.primary_share(&self.limits),
            ..decision
        };
        self.generators[0].apply(&primary);
        self.secondary_on = decision.secondary_active;
        self.last_decision = decision;
    }

    fn trace_decision(&mut self, epoch: u64, prediction: f64, decision: &AdaptationDecision) {
        if let Some(row) = self.epochs.get_mut(epoch as usize) {
            row.prediction_bps = Some(prediction);
            row.encoder_bitrate_bps = decision.encoder_bitrate;
            row.resolution = decision.resolution;
            row.secondary_active = decision.secondary_active;
        }
    }

    fn bootstrap(&mut self) -> Result<()> {
        if self.scenario.adaptation {
            let prediction = self.predictor.predict_next();
            let decision = decide(
                prediction,
                &self.scenario.ladder,
                &self.limits,
                &self.last_decision,
                0,
            );
            self.apply_decision(decision);
            self.trace_decision(0, prediction, &decision);
            self.note_offered(0, false)?;
        }
        self.push(
            0.0,
            capture_priority(PRIMARY_STREAM),
            EventKind::FrameCapture {
                stream: PRIMARY_STREAM,
                seq: 0,
            },
        );
        self.push(
            0.0,
            capture_priority(SECONDARY_STREAM),
            EventKind::FrameCapture {
                stream: SECONDARY_STREAM,
                seq: 0,
            },
        );
        let epoch_len = self.scenario.estimator.epoch_length;
        for epoch in 0..self.scenario.epoch_count() {
            self.push(
                (epoch + 1) as f64 * epoch_len,
                PRIO_EPOCH,
                EventKind::EpochEnd { epoch },
            );
        }
        Ok(())
    }

    fn handle_capture(&mut self, stream: u8, seq: u64, now: f64) -> Result<()> {
        let fps = self.generators[stream as usize].config().fps;
        let next_time = (seq + 1) as f64 / fps as f64;
        if next_time < self.scenario.run_length - 1e-9 {
            self.push(
                next_time,
                capture_priority(stream),
                EventKind::FrameCapture {
                    stream,
                    seq: seq + 1,
                },
            );
        }
        if stream == SECONDARY_STREAM && !self.secondary_on {
            return Ok(());
        }
        let frame = self.generators[stream as usize].emit(seq)?;
        debug_assert!((frame.capture_time - now).abs() < 1e-9);
        let record = FrameRecord::new(
            frame.stream_id,
            frame.frame_seq,
            frame.capture_time,
            frame.size,
            frame.is_keyframe,
            frame.resolution,
        );
        self.index
            .insert((frame.stream_id, frame.frame_seq), self.records.len());
        self.records.push(record);
        for packet in packetize(&frame, self.scenario.transport.mtu)? {
            // Drops surface as frames that never complete reassembly.
            let _ = self.link.offer(packet, packet.wire_len(), now)?;
        }
        Ok(())
    }

    fn handle_delivery(&mut self) -> Result<()> {
        let event = self.link.pop_delivery().expect("delivery scheduled");
        let now = event.deliver_time;
        let packet = event.payload;
        // The measurement window closes with the last scheduled epoch;
        // deliveries during the post-run drain only feed reassembly.
        if self.estimator.epoch_of(now) < self.scenario.epoch_count() {
            self.estimator.observe(event.size_bytes, now)?;
        }
        let before = self.reassembler.pending_frames();
        let arrival = self.reassembler.insert(&packet, now)?;
        if self.reassembler.pending_frames() > before {
            if let Some(expiry) = self.reassembler.next_expiry() {
                self.push(expiry, PRIO_EXPIRY, EventKind::ExpiryProbe);
            }
        }
        if let Some(arrival) = arrival {
            let resolution = self
                .record_mut(arrival.stream_id, arrival.frame_seq)
                .map(|r| {
                    r.completion_time = Some(arrival.completion_time);
                    if arrival.stream_id == SECONDARY_STREAM {
                        r.outcome = FrameOutcome::Ok;
                    }
                    r.resolution
                })
                .unwrap_or(Resolution::FULL_HD);
            let services = route_frame(&arrival, self.secondary_on, self.scenario.primary.fps)?;
            for service in services {
                match service {
                    ServiceKind::Detection => {
                        self.detection_jobs += 1;
                        if arrival.stream_id == SECONDARY_STREAM {
                            self.detection_jobs_from_secondary += 1;
                        }
                    }
                    ServiceKind::Navigation => self.navigation_jobs += 1,
                    ServiceKind::Vlm => self.vlm_jobs += 1,
                }
                let stale = self.pool.enqueue(
                    service,
                    arrival.stream_id,
                    arrival.frame_seq,
                    resolution,
                    now,
                );
                for drop in stale {
                    if let Some(record) = self.record_mut(drop.stream_id, drop.frame_seq) {
                        record.outcome = FrameOutcome::StaleDropped;
                    }
                }
            }
            if let Some(next) = self.pool.next_completion() {
                self.push(next, PRIO_JOB, EventKind::JobProbe);
            }
        }
        Ok(())
    }

    fn handle_expiry(&mut self, now: f64) {
        for expired in self.reassembler.expire(now) {
            if let Some(record) = self.record_mut(expired.stream_id, expired.frame_seq) {
                record.outcome = FrameOutcome::Expired;
            }
        }
        if let Some(next) = self.reassembler.next_expiry() {
            // Never reschedule at or before the current instant.
            self.push(next.max(now + 1e-6), PRIO_EXPIRY, EventKind::ExpiryProbe);
        }
    }

    fn handle_jobs(&mut self, now: f64) {
        let feedback_params = self.scenario.link.params();
        for job in self.pool.pop_completions(now) {
            if let Some(record) = self.record_mut(job.stream_id, job.frame_seq) {
                match job.service {
                    ServiceKind::Detection => {
                        record.detection_start = Some(job.start_time);
                        record.detection_finish = Some(job.finish_time);
                        record.feedback_delivery_time = Some(
                            feedback_params
                                .feedback_delivery_time(FEEDBACK_LEN as u64, job.finish_time),
                        );
                        if record.outcome != FrameOutcome::StaleDropped {
                            record.outcome = FrameOutcome::Ok;
                        }
                    }
                    ServiceKind::Navigation => {
                        record.navigation_start = Some(job.start_time);
                        record.navigation_finish = Some(job.finish_time);
                    }
                    ServiceKind::Vlm => {
                        record.vlm_start = Some(job.start_time);
                        record.vlm_finish = Some(job.finish_time);
                    }
                }
            }
        }
        if let Some(next) = self.pool.next_completion() {
            self.push(next, PRIO_JOB, EventKind::JobProbe);
        }
    }

    fn handle_epoch_end(&mut self, epoch: u64, now: f64) -> Result<()> {
        let estimate = self.estimator.finalize_epoch(now)?;
        if let Some(row) = self.epochs.get_mut(epoch as usize) {
            row.estimate_bps = Some(estimate.estimate_bps);
            row.estimate_no_data = estimate.no_data;
        }
        self.feedback_messages += 1;
        let msg = FeedbackMessage {
            epoch_index: epoch as u32,
            estimate_bps: math::round(estimate.estimate_bps) as u64,
            server_time_us: math::round(now * 1e6) as u64,
        };
        let deliver = self
            .scenario
            .link
            .params()
            .feedback_delivery_time(FEEDBACK_LEN as u64, now);
        self.push(deliver, PRIO_FEEDBACK, EventKind::FeedbackArrival { msg });
        Ok(())
    }

    fn handle_feedback(&mut self, msg: FeedbackMessage) -> Result<()> {
        if !self.scenario.adaptation {
            return Ok(());
        }
        if !self.predictor.ingest_feedback(&msg) {
            return Ok(());
        }
        let secondary_at_tick = self.last_decision.secondary_active;
        let prediction = self.predictor.predict_next();
        let governed_epoch = msg.epoch_index as u64 + 1;
        let decision = decide(
            prediction,
            &self.scenario.ladder,
            &self.limits,
            &self.last_decision,
            governed_epoch,
        );
        self.apply_decision(decision);
        self.trace_decision(governed_epoch, prediction, &decision);
        self.note_offered(governed_epoch, secondary_at_tick)?;
        Ok(())
    }

    fn run(mut self) -> Result<SimOutput> {
        self.bootstrap()?;
        loop {
            let link_next = self.link.next_delivery();
            let heap_next = self.heap.peek().map(|Reverse(e)| (e.time, e.priority));
            let take_link = match (link_next, heap_next) {
                (Some(lt), Some((ht, hp))) => match lt.total_cmp(&ht) {
                    core::cmp::Ordering::Less => true,
                    core::cmp::Ordering::Greater => false,
                    core::cmp::Ordering::Equal => PRIO_LINK < hp,
                },
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (None, None) => break,
            };
            if take_link {
                self.handle_delivery()?;
                continue;
            }
            let Reverse(event) = self.heap.pop().unwrap();
            match event.kind {
                EventKind::ExpiryProbe => self.handle_expiry(event.time),
                EventKind::JobProbe => self.handle_jobs(event.time),
                EventKind::EpochEnd { epoch } => self.handle_epoch_end(epoch, event.time)?,
                EventKind::FeedbackArrival { msg } => self.handle_feedback(msg)?,
                EventKind::FrameCapture { stream, seq } => {
                    self.handle_capture(stream, seq, event.time)?
                }
            }
        }
        // Drain stragglers: any jobs still running and frames still pending.
        self.handle_jobs(f64::INFINITY);
        for expired in self.reassembler.drain_pending() {
            if let Some(record) = self.record_mut(expired.stream_id, expired.frame_seq) {
                record.outcome = FrameOutcome::Expired;
            }
        }
        self.records.sort_by_key(|r| (r.stream_id, r.frame_seq));
        let ctx = RunContext {
            adaptation_enabled: self.scenario.adaptation,
            seed: self.scenario.seed,
            run_length: self.scenario.run_length,
            qos_budget: self.scenario.edge.qos_budget,
            one_way_times_estimated: false,
            feedback_messages: self.feedback_messages,
            stale_feedback: self.predictor.stale_feedback(),
            detection_jobs: self.detection_jobs,
            detection_jobs_from_secondary: self.detection_jobs_from_secondary,
            navigation_jobs: self.navigation_jobs,
            vlm_jobs: self.vlm_jobs,
            epochs: self.epochs,
        };
        let summary = summarize(&self.records, ctx);
        Ok(SimOutput {
            summary,
            records: self.records,
        })
    }
}

/// Derive a per-component seed from the scenario seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(tag)
        .rotate_left(17)
}

/// Run one scenario to completion.
pub fn run_sim(scenario: &Scenario) -> Result<SimOutput> {
    Sim::new(scenario)?.run()
}
