//! Live mode: the same pipeline over real datagram sockets.
//!
//! The wire formats are bit-identical to the simulated mode. The client
//! streams packetized frames (optionally shaped to the scenario's capacity
//! schedule by a token bucket) and adapts from received feedback; the server
//! reassembles, estimates the link rate per epoch, feeds it back, and runs
//! the edge worker pool against wall-clock time.
//!
//! Clocks are never synchronized: the server anchors the client's capture
//! timestamps at the first packet's arrival, so one-way times are estimates
//! and every live summary is flagged `one_way_times_estimated`. On loopback
//! the anchor error is microseconds and summaries are comparable to the
//! simulator's.

use std::collections::BTreeMap;
use std::net::{SocketAddr, UdpSocket};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context, Result};
use uplink_core::controller::{decide, AdaptationDecision, Predictor};
use uplink_core::edge::{route_frame, ServiceKind, WorkerPool};
use uplink_core::media::{FrameGenerator, SECONDARY_STREAM};
use uplink_core::metrics::{
    summarize, EpochTrace, FrameOutcome, FrameRecord, RunContext, RunSummary,
};
use uplink_core::scenario::Scenario;
use uplink_core::sim::derive_seed;
use uplink_core::transport::{
    packetize, stream_wire_rates, FeedbackMessage, MediaPacket, Reassembler, FEEDBACK_LEN,
};

use crate::export;

const RECV_TIMEOUT: Duration = Duration::from_millis(5);
/// Server exits after this long without traffic once streaming started.
const QUIET_SHUTDOWN: f64 = 2.5;

/// Run the server role: bind, stream, and export on completion.
pub fn run_server(scenario: &Scenario, bind: SocketAddr, out_dir: &Path) -> Result<RunSummary> {
    Server::bind(scenario.clone(), bind)?
        .with_output(out_dir)
        .serve()
}

/// Live server with an explicit bind step so tests can learn the port.
pub struct Server {
    scenario: Scenario,
    socket: UdpSocket,
    out_dir: Option<std::path::PathBuf>,
}

impl Server {
    pub fn bind(scenario: Scenario, addr: SocketAddr) -> Result<Server> {
        scenario.validate().map_err(|e| anyhow!("{e}"))?;
        let socket =
            UdpSocket::bind(addr).with_context(|| format!("binding server socket {addr}"))?;
        socket.set_read_timeout(Some(RECV_TIMEOUT))?;
        Ok(Server {
            scenario,
            socket,
            out_dir: None,
        })
    }

    pub fn with_output(mut self, dir: &Path) -> Server {
        self.out_dir = Some(dir.to_path_buf());
        self
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.socket.local_addr()?)
    }

    pub fn serve(self) -> Result<RunSummary> {
        let scenario = &self.scenario;
        let epoch_len = scenario.estimator.epoch_length;
        let epoch_count = scenario.epoch_count();
        let link_params = scenario.link.params();
        let mut estimator =
            uplink_core::estimator::EpochAccumulator::new(epoch_len).map_err(|e| anyhow!("{e}"))?;
        let mut reassembler = Reassembler::new(scenario.transport.reassembly_expiry);
        let mut pool = WorkerPool::new(
            scenario.edge.worker_count,
            scenario.edge.stale_drop,
            scenario.edge.models(),
            derive_seed(scenario.seed, 0xed),
        )
        .map_err(|e| anyhow!("{e}"))?;
        let mut records: BTreeMap<(u8, u64), FrameRecord> = BTreeMap::new();
        let mut epochs: Vec<EpochTrace> = (0..epoch_count)
            .map(|epoch| EpochTrace {
                epoch_index: epoch,
                capacity_bps: scenario.capacity.capacity_at(epoch as f64 * epoch_len),
                estimate_bps: None,
                estimate_no_data: false,
                prediction_bps: None,
                encoder_bitrate_bps: 0.0,
                resolution: scenario.primary_config().resolution,
                secondary_active: false,
            })
            .collect();
        let mut buf = [0u8; 65_536];
        let mut start: Option<Instant> = None;
        let mut capture_anchor = 0.0_f64;
        let mut client: Option<SocketAddr> = None;
        let mut next_epoch = 0u64;
        let mut last_packet_elapsed = 0.0_f64;
        let mut last_secondary_seen: Option<f64> = None;
        let mut detection_jobs = 0u64;
        let mut detection_jobs_from_secondary = 0u64;
        let mut navigation_jobs = 0u64;
        let mut vlm_jobs = 0u64;

        let boot = Instant::now();
        loop {
            let recv = self.socket.recv_from(&mut buf);
            match recv {
                Ok((len, src)) => {
                    let t0 = *start.get_or_insert_with(Instant::now);
                    let now = t0.elapsed().as_secs_f64();
                    client = Some(src);
                    last_packet_elapsed = now;
                    if let Ok(packet) = MediaPacket::decode(&buf[..len]) {
                        if capture_anchor == 0.0 {
                            capture_anchor = packet.capture_time_us as f64 / 1e6;
                        }
                        if estimator.epoch_of(now) < epoch_count {
                            estimator
                                .observe(len as u64, now)
                                .map_err(|e| anyhow!("{e}"))?;
                        }
                        let capture_rel = packet.capture_time_us as f64 / 1e6 - capture_anchor;
                        records
                            .entry((packet.stream_id, packet.frame_seq as u64))
                            .or_insert_with(|| {
                                FrameRecord::new(
                                    packet.stream_id,
                                    packet.frame_seq as u64,
                                    capture_rel,
                                    0,
                                    packet.is_keyframe(),
                                    scenario.primary_config().resolution,
                                )
                            });
                        if let Some(mut arrival) = reassembler
                            .insert(&packet, now)
                            .map_err(|e| anyhow!("{e}"))?
                        {
                            arrival.capture_time -= capture_anchor;
                            if packet.stream_id == SECONDARY_STREAM {
                                last_secondary_seen = Some(now);
                            }
                            let secondary_active =
                                last_secondary_seen.map(|t| now - t < 1.5).unwrap_or(false);
                            if let Some(record) =
                                records.get_mut(&(packet.stream_id, packet.frame_seq as u64))
                            {
                                record.completion_time = Some(arrival.completion_time);
                                record.size_bytes = arrival.total_bytes;
                                if packet.stream_id == SECONDARY_STREAM {
                                    record.outcome = FrameOutcome::Ok;
                                }
                            }
                            let services =
                                route_frame(&arrival, secondary_active, scenario.primary.fps)
                                    .map_err(|e| anyhow!("{e}"))?;
                            for service in services {
                                match service {
                                    ServiceKind::Detection => {
                                        detection_jobs += 1;
                                        if arrival.stream_id == SECONDARY_STREAM {
                                            detection_jobs_from_secondary += 1;
                                        }
                                    }
                                    ServiceKind::Navigation => navigation_jobs += 1,
                                    ServiceKind::Vlm => vlm_jobs += 1,
                                }
                                let resolution = records
                                    .get(&(arrival.stream_id, arrival.frame_seq))
                                    .map(|r| r.resolution)
                                    .unwrap_or(scenario.primary_config().resolution);
                                let stale = pool.enqueue(
                                    service,
                                    arrival.stream_id,
                                    arrival.frame_seq,
                                    resolution,
                                    now,
                                );
                                for drop in stale {
                                    if let Some(r) =
                                        records.get_mut(&(drop.stream_id, drop.frame_seq))
                                    {
                                        r.outcome = FrameOutcome::StaleDropped;
                                    }
                                }
                            }
                        }
                    }
                }
                Err(e)
                    if e.kind() == std::io::ErrorKind::WouldBlock
                        || e.kind() == std::io::ErrorKind::TimedOut => {}
                Err(e) => {
                    bail!(
                        "server socket error{}: {e}",
                        client.map(|c| format!(" (peer {c})")).unwrap_or_default()
                    )
                }
            }

            if let Some(t0) = start {
                let now = t0.elapsed().as_secs_f64();
                // Epoch ticks: finalize and feed the estimate back.
                while next_epoch < epoch_count && now >= (next_epoch + 1) as f64 * epoch_len {
                    let end = (next_epoch + 1) as f64 * epoch_len;
                    let estimate = estimator.finalize_epoch(end).map_err(|e| anyhow!("{e}"))?;
                    if let Some(row) = epochs.get_mut(next_epoch as usize) {
                        row.estimate_bps = Some(estimate.estimate_bps);
                        row.estimate_no_data = estimate.no_data;
                    }
                    if let Some(peer) = client {
                        let msg = FeedbackMessage {
                            epoch_index: next_epoch as u32,
                            estimate_bps: estimate.estimate_bps.round() as u64,
                            server_time_us: (now * 1e6).round() as u64,
                        };
                        self.socket
                            .send_to(&msg.encode(), peer)
                            .with_context(|| format!("sending feedback to {peer}"))?;
                    }
                    next_epoch += 1;
                }
                for job in pool.pop_completions(now) {
                    apply_job(&mut records, &job, &link_params);
                }
                for expired in reassembler.expire(now) {
                    if let Some(r) = records.get_mut(&(expired.stream_id, expired.frame_seq)) {
                        r.outcome = FrameOutcome::Expired;
                    }
                }
                let streaming_done = now > scenario.run_length;
                let quiet = now - last_packet_elapsed > QUIET_SHUTDOWN;
                if (streaming_done && quiet) || now > scenario.run_length + 10.0 {
                    break;
                }
            } else if boot.elapsed().as_secs_f64() > scenario.run_length + 30.0 {
                bail!("no client traffic arrived");
            }
        }

        for job in pool.pop_completions(f64::INFINITY) {
            apply_job(&mut records, &job, &link_params);
        }
        for expired in reassembler.drain_pending() {
            if let Some(r) = records.get_mut(&(expired.stream_id, expired.frame_seq)) {
                r.outcome = FrameOutcome::Expired;
            }
        }
        let records: Vec<FrameRecord> = records.into_values().collect();
        let summary = summarize(
            &records,
            RunContext {
                adaptation_enabled: scenario.adaptation,
                seed: scenario.seed,
                run_length: scenario.run_length,
                qos_budget: scenario.edge.qos_budget,
                one_way_times_estimated: true,
                feedback_messages: next_epoch,
                stale_feedback: 0,
                detection_jobs,
                detection_jobs_from_secondary,
                navigation_jobs,
                vlm_jobs,
                epochs,
            },
        );
        if let Some(dir) = &self.out_dir {
            let output = uplink_core::sim::SimOutput {
                summary: summary.clone(),
                records,
            };
            export::write_run(dir, &output)?;
        }
        Ok(summary)
    }
}

fn apply_job(
    records: &mut BTreeMap<(u8, u64), FrameRecord>,
    job: &uplink_core::edge::InferenceJob,
    link_params: &uplink_core::netem::LinkParams,
) {
    if let Some(record) = records.get_mut(&(job.stream_id, job.frame_seq)) {
        match job.service {
            ServiceKind::Detection => {
                record.detection_start = Some(job.start_time);
                record.detection_finish = Some(job.finish_time);
                record.feedback_delivery_time =
                    Some(link_params.feedback_delivery_time(FEEDBACK_LEN as u64, job.finish_time));
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

struct ClientShared {
    predictor: Predictor,
    decision: AdaptationDecision,
    secondary_on: bool,
    got_feedback: bool,
    epochs: Vec<EpochTrace>,
}

/// Token-bucket shaper enforcing the capacity schedule client-side.
struct Shaper {
    enabled: bool,
    tokens: f64,
    last_refill: Instant,
}

impl Shaper {
    fn new(enabled: bool) -> Shaper {
        Shaper {
            enabled,
            tokens: 0.0,
            last_refill: Instant::now(),
        }
    }

    fn send(&mut self, socket: &UdpSocket, bytes: &[u8], rate_bps: f64) -> Result<()> {
        if self.enabled {
            let need = bytes.len() as f64;
            // The bucket must hold at least one packet or a slow link could
            // never accumulate enough tokens to send anything.
            let burst = (rate_bps / 8.0 * 0.004).max(need);
            loop {
                let dt = self.last_refill.elapsed().as_secs_f64();
                self.last_refill = Instant::now();
                self.tokens = (self.tokens + dt * rate_bps / 8.0).min(burst);
                if self.tokens >= need {
                    self.tokens -= need;
                    break;
                }
                // 1 ms shaper granularity.
                std::thread::sleep(Duration::from_micros(1_000));
            }
        }
        match socket.send(bytes) {
            Ok(_) => Ok(()),
            // A refused datagram just means the peer is not up (yet); the
            // connect timeout decides whether to give up.
            Err(e) if e.kind() == std::io::ErrorKind::ConnectionRefused => Ok(()),
            Err(e) => Err(e).context("sending media packet"),
        }
    }
}

/// Run the client role against `peer`. Returns the client-side summary
/// (decision trace and send counters; latency metrics live on the server).
pub fn run_client(
    scenario: &Scenario,
    peer: SocketAddr,
    out_dir: Option<&Path>,
) -> Result<RunSummary> {
    scenario.validate().map_err(|e| anyhow!("{e}"))?;
    let socket = UdpSocket::bind(("0.0.0.0", 0)).context("binding client socket")?;
    socket
        .connect(peer)
        .with_context(|| format!("connecting to {peer}"))?;
    socket.set_read_timeout(Some(RECV_TIMEOUT))?;

    let epoch_len = scenario.estimator.epoch_length;
    let epoch_count = scenario.epoch_count();
    let limits = scenario.decision_limits();
    let primary_cfg = if scenario.adaptation {
        scenario.primary_config()
    } else {
        scenario.no_adaptation_config()
    };
    let initial_decision = AdaptationDecision {
        epoch_index: 0,
        encoder_bitrate: primary_cfg.target_bitrate as f64,
        resolution: primary_cfg.resolution,
        secondary_active: false,
    };
    let mut predictor = Predictor::new(scenario.predictor_config()).map_err(|e| anyhow!("{e}"))?;
    let mtu = scenario.transport.mtu;
    let (good, wire) = stream_wire_rates(&primary_cfg, mtu).map_err(|e| anyhow!("{e}"))?;
    predictor.note_offered(0, good, wire);
    let shared = Arc::new(Mutex::new(ClientShared {
        predictor,
        decision: initial_decision,
        secondary_on: false,
        got_feedback: false,
        epochs: (0..epoch_count)
            .map(|epoch| EpochTrace {
                epoch_index: epoch,
                capacity_bps: scenario.capacity.capacity_at(epoch as f64 * epoch_len),
                estimate_bps: None,
                estimate_no_data: false,
                prediction_bps: None,
                encoder_bitrate_bps: primary_cfg.target_bitrate as f64,
                resolution: primary_cfg.resolution,
                secondary_active: false,
            })
            .collect(),
    }));
    let stop = Arc::new(AtomicBool::new(false));

    // Feedback receiver: ingest, predict, decide.
    let recv_handle = {
        let socket = socket.try_clone().context("cloning client socket")?;
        let shared = Arc::clone(&shared);
        let stop = Arc::clone(&stop);
        let scenario = scenario.clone();
        std::thread::spawn(move || {
            let mut buf = [0u8; 2_048];
            while !stop.load(Ordering::Relaxed) {
                match socket.recv(&mut buf) {
                    Ok(len) => {
                        let Ok(msg) = FeedbackMessage::decode(&buf[..len]) else {
                            continue;
                        };
                        let mut state = shared.lock().unwrap();
                        state.got_feedback = true;
                        if let Some(row) = state.epochs.get_mut(msg.epoch_index as usize) {
                            row.estimate_bps = Some(msg.estimate_bps as f64);
                            row.estimate_no_data = msg.no_data();
                        }
                        if !scenario.adaptation {
                            continue;
                        }
                        if !state.predictor.ingest_feedback(&msg) {
                            continue;
                        }
                        let prediction = state.predictor.predict_next();
                        let governed = msg.epoch_index as u64 + 1;
                        let decision = decide(
                            prediction,
                            &scenario.ladder,
                            &limits,
                            &state.decision,
                            governed,
                        );
                        state.decision = decision;
                        state.secondary_on = decision.secondary_active;
                        // Record what the encoder will offer during the
                        // governed epoch so its estimate can be classified.
                        let mut cfg = primary_cfg;
                        cfg.target_bitrate =
                            (decision.primary_share(&limits).round() as u64).max(1);
                        if let Ok((mut good, mut wire)) = stream_wire_rates(&cfg, mtu) {
                            if decision.secondary_active {
                                if let Ok((g, w)) =
                                    stream_wire_rates(&scenario.secondary_config(), mtu)
                                {
                                    good += g;
                                    wire += w;
                                }
                            }
                            state.predictor.note_offered(governed, good, wire);
                        }
                        if let Some(row) = state.epochs.get_mut(governed as usize) {
                            row.prediction_bps = Some(prediction);
                            row.encoder_bitrate_bps = decision.encoder_bitrate;
                            row.resolution = decision.resolution;
                            row.secondary_active = decision.secondary_active;
                        }
                    }
                    Err(e)
                        if e.kind() == std::io::ErrorKind::WouldBlock
                            || e.kind() == std::io::ErrorKind::TimedOut => {}
                    Err(_) => {}
                }
            }
        })
    };

    let mut generators = [
        FrameGenerator::new(primary_cfg, derive_seed(scenario.seed, 0x70))
            .map_err(|e| anyhow!("{e}"))?,
        FrameGenerator::new(
            scenario.secondary_config(),
            derive_seed(scenario.seed, 0x71),
        )
        .map_err(|e| anyhow!("{e}"))?,
    ];
    let mut shaper = Shaper::new(scenario.live.emulate_link);
    let start = Instant::now();
    let mut frames_sent = 0u64;
    let mut next_seq = [0u64; 2];
    let mut silent_check_epoch = 0u64;
    let fps = [scenario.primary.fps as f64, scenario.secondary.fps as f64];

    loop {
        let now = start.elapsed().as_secs_f64();
        if now >= scenario.run_length {
            break;
        }
        if now > scenario.live.connect_timeout && !shared.lock().unwrap().got_feedback {
            stop.store(true, Ordering::Relaxed);
            let _ = recv_handle.join();
            bail!(
                "server {peer} unreachable: no feedback within {:.0} s",
                scenario.live.connect_timeout
            );
        }
        // Missed-feedback decay at epoch boundaries.
        let current_epoch = (now / epoch_len) as u64;
        while silent_check_epoch < current_epoch {
            silent_check_epoch += 1;
            let mut state = shared.lock().unwrap();
            let seen = state
                .predictor
                .last_seen_epoch()
                .map(|e| e + 1)
                .unwrap_or(0);
            if scenario.adaptation && seen + 1 < silent_check_epoch {
                state.predictor.on_silent_epoch();
                let prediction = state.predictor.predict_next();
                let decision = decide(
                    prediction,
                    &scenario.ladder,
                    &limits,
                    &state.decision,
                    silent_check_epoch,
                );
                state.decision = decision;
                state.secondary_on = decision.secondary_active;
            }
        }
        // Next capture over both stream grids.
        let due = |stream: usize, seq: u64| seq as f64 / fps[stream];
        let (stream, seq) = if due(0, next_seq[0]) <= due(1, next_seq[1]) {
            (0usize, next_seq[0])
        } else {
            (1usize, next_seq[1])
        };
        let capture_at = due(stream, seq);
        if capture_at >= scenario.run_length {
            break;
        }
        if capture_at > now {
            std::thread::sleep(Duration::from_secs_f64((capture_at - now).min(0.005)));
            continue;
        }
        next_seq[stream] = seq + 1;
        let (emit, rate_now) = {
            let state = shared.lock().unwrap();
            if stream == 0 && scenario.adaptation {
                let primary = AdaptationDecision {
                    encoder_bitrate: state.decision.primary_share(&limits),
                    ..state.decision
                };
                generators[0].apply(&primary);
            }
            (
                stream == 0 || state.secondary_on,
                scenario.capacity.capacity_at(now),
            )
        };
        if !emit {
            continue;
        }
        let frame = generators[stream].emit(seq).map_err(|e| anyhow!("{e}"))?;
        frames_sent += 1;
        for packet in packetize(&frame, mtu).map_err(|e| anyhow!("{e}"))? {
            shaper.send(&socket, &packet.encode(), rate_now)?;
        }
    }
    // Let the final feedback arrive before shutting the receiver down.
    std::thread::sleep(Duration::from_millis(300));
    stop.store(true, Ordering::Relaxed);
    recv_handle
        .join()
        .map_err(|_| anyhow!("feedback receiver panicked"))?;

    let state = Arc::try_unwrap(shared)
        .map_err(|_| anyhow!("client state still shared"))?
        .into_inner()
        .unwrap();
    let summary = summarize(
        &[],
        RunContext {
            adaptation_enabled: scenario.adaptation,
            seed: scenario.seed,
            run_length: scenario.run_length,
            qos_budget: scenario.edge.qos_budget,
            one_way_times_estimated: true,
            feedback_messages: 0,
            stale_feedback: state.predictor.stale_feedback(),
            detection_jobs: 0,
            detection_jobs_from_secondary: 0,
            navigation_jobs: 0,
            vlm_jobs: 0,
            epochs: state.epochs,
        },
    );
    let mut summary = summary;
    summary.frames_total = frames_sent;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("client_epochs.csv");
        std::fs::write(&path, export::epochs_csv(&summary.epochs))
            .with_context(|| format!("writing {}", path.display()))?;
        let path = dir.join("client_summary.json");
        std::fs::write(&path, export::summary_json(&summary)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(summary)
}
