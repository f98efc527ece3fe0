//! Edge microservice scheduler: routes completed frames to detection,
//! navigation, and vision-language job queues and runs them on a bounded
//! worker pool with per-service latency models.
//!
//! Worker 0 is dedicated to detection so obstacle alerts never wait behind
//! the heavy services; the remaining workers serve navigation and VLM jobs,
//! stealing from each other's queue when idle. Queued detection jobs are
//! superseded by newer frames (stale drop) since a stale detection is useless
//! for obstacle avoidance.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec::Vec;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::media::{Resolution, PRIMARY_STREAM, SECONDARY_STREAM};
use crate::metrics::FrameRecord;
use crate::transport::FrameArrival;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ServiceKind {
    Detection,
    Navigation,
    Vlm,
}

impl ServiceKind {
    pub const ALL: [ServiceKind; 3] = [
        ServiceKind::Detection,
        ServiceKind::Navigation,
        ServiceKind::Vlm,
    ];

    pub fn index(self) -> usize {
        match self {
            ServiceKind::Detection => 0,
            ServiceKind::Navigation => 1,
            ServiceKind::Vlm => 2,
        }
    }
}

impl core::fmt::Display for ServiceKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ServiceKind::Detection => write!(f, "detection"),
            ServiceKind::Navigation => write!(f, "navigation"),
            ServiceKind::Vlm => write!(f, "vlm"),
        }
    }
}

/// Service time distribution for one microservice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ServiceTimeModel {
    Deterministic {
        seconds: f64,
    },
    /// Log-normal in seconds with log-scale parameters.
    Lognormal {
        mu: f64,
        sigma: f64,
    },
}

impl ServiceTimeModel {
    /// Log-normal with the given mean and interquartile range (both in
    /// seconds), solved by bisection on the IQR/mean ratio.
    pub fn lognormal_from_mean_iqr(mean: f64, iqr: f64) -> Result<ServiceTimeModel> {
        if !(mean > 0.0) || !(iqr > 0.0) {
            return Err(Error::Config("mean and iqr must be positive".into()));
        }
        // IQR / mean = (e^(q*s) - e^(-q*s)) * e^(-s^2/2), q = z(0.75).
        // The ratio increases with sigma until ~1.15 and falls after; bisect
        // on the increasing branch, preferring the small-sigma solution.
        const Q3: f64 = 0.674_489_750_196_081_7;
        let target = iqr / mean;
        let ratio = |s: f64| (math::exp(Q3 * s) - math::exp(-Q3 * s)) * math::exp(-s * s / 2.0);
        let (mut lo, mut hi) = (1e-6, 1.0);
        if target >= ratio(hi) {
            return Err(Error::Config(format!(
                "iqr/mean ratio {target} too large for a log-normal fit"
            )));
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if ratio(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let sigma = 0.5 * (lo + hi);
        let mu = math::ln(mean) - sigma * sigma / 2.0;
        Ok(ServiceTimeModel::Lognormal { mu, sigma })
    }

    pub fn mean(&self) -> f64 {
        match self {
            ServiceTimeModel::Deterministic { seconds } => *seconds,
            ServiceTimeModel::Lognormal { mu, sigma } => math::exp(mu + sigma * sigma / 2.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ServiceTimeModel::Deterministic { seconds } if !(*seconds > 0.0) => Err(
                Error::Validation("deterministic service time must be positive".into()),
            ),
            ServiceTimeModel::Lognormal { sigma, .. } if !(*sigma > 0.0) => {
                Err(Error::Validation("lognormal sigma must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            ServiceTimeModel::Deterministic { seconds } => *seconds,
            ServiceTimeModel::Lognormal { mu, sigma } => {
                LogNormal::new(*mu, *sigma).unwrap().sample(rng)
            }
        }
    }
}

/// Per-service models plus optional resolution scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceModels {
    pub detection: ServiceTimeModel,
    pub navigation: ServiceTimeModel,
    pub vlm: ServiceTimeModel,
    /// When set, service times scale with frame pixels relative to this
    /// reference resolution. Off by default.
    pub pixel_scale_reference: Option<Resolution>,
}

impl Default for ServiceModels {
    fn default() -> Self {
        ServiceModels {
            // Mean 20 ms with a ~5 ms interquartile range.
            detection: ServiceTimeModel::lognormal_from_mean_iqr(0.020, 0.005).unwrap(),
            navigation: ServiceTimeModel::Deterministic { seconds: 0.300 },
            vlm: ServiceTimeModel::Deterministic { seconds: 0.800 },
            pixel_scale_reference: None,
        }
    }
}

impl ServiceModels {
    pub fn model(&self, service: ServiceKind) -> &ServiceTimeModel {
        match service {
            ServiceKind::Detection => &self.detection,
            ServiceKind::Navigation => &self.navigation,
            ServiceKind::Vlm => &self.vlm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.detection.validate()?;
        self.navigation.validate()?;
        self.vlm.validate()
    }

    fn sample(&self, service: ServiceKind, resolution: Resolution, rng: &mut ChaCha8Rng) -> f64 {
        let base = self.model(service).sample(rng);
        match self.pixel_scale_reference {
            Some(reference) => base * resolution.pixels() as f64 / reference.pixels() as f64,
            None => base,
        }
    }
}

/// Decide which services handle a completed frame.
///
/// Primary frames always get detection; they additionally feed navigation and
/// VLM once per second only while the secondary stream is off. Secondary
/// frames feed navigation and VLM only.
pub fn route_frame(
    arrival: &FrameArrival,
    secondary_active: bool,
    fps_primary: u32,
) -> Result<Vec<ServiceKind>> {
    match arrival.stream_id {
        PRIMARY_STREAM => {
            let mut jobs = alloc::vec![ServiceKind::Detection];
            if !secondary_active && arrival.frame_seq.is_multiple_of(fps_primary as u64) {
                jobs.push(ServiceKind::Navigation);
                jobs.push(ServiceKind::Vlm);
            }
            Ok(jobs)
        }
        SECONDARY_STREAM => Ok(alloc::vec![ServiceKind::Navigation, ServiceKind::Vlm]),
        other => Err(Error::Routing(format!("unknown stream id {other}"))),
    }
}

/// One inference job's lifecycle timestamps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceJob {
    pub service: ServiceKind,
    pub stream_id: u8,
    pub frame_seq: u64,
    pub enqueue_time: f64,
    pub start_time: f64,
    pub finish_time: f64,
}

#[derive(Debug, Clone, Copy)]
struct PendingJob {
    stream_id: u8,
    frame_seq: u64,
    enqueue_time: f64,
    resolution: Resolution,
    id: u64,
}

#[derive(Debug, Clone, Copy)]
struct RunningJob {
    job: InferenceJob,
    id: u64,
}

/// Frame whose queued detection job was replaced by a newer frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StaleDrop {
    pub stream_id: u8,
    pub frame_seq: u64,
}

/// Deterministic bounded worker pool.
#[derive(Debug, Clone)]
pub struct WorkerPool {
    worker_count: usize,
    stale_drop: bool,
    models: ServiceModels,
    workers: Vec<Option<RunningJob>>,
    queues: [VecDeque<PendingJob>; 3],
    rng: ChaCha8Rng,
    next_id: u64,
    created: [u64; 3],
    completed: [u64; 3],
    stale_dropped: u64,
    max_in_service: usize,
}

impl WorkerPool {
    pub fn new(
        worker_count: usize,
        stale_drop: bool,
        models: ServiceModels,
        seed: u64,
    ) -> Result<Self> {
        if worker_count < 2 {
            return Err(Error::Validation(format!(
                "worker pool needs at least 2 workers (1 dedicated to detection), got {worker_count}"
            )));
        }
        models.validate()?;
        Ok(WorkerPool {
            worker_count,
            stale_drop,
            models,
            workers: alloc::vec![None; worker_count],
            queues: [VecDeque::new(), VecDeque::new(), VecDeque::new()],
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_id: 0,
            created: [0; 3],
            completed: [0; 3],
            stale_dropped: 0,
            max_in_service: 0,
        })
    }

    pub fn jobs_created(&self, service: ServiceKind) -> u64 {
        self.created[service.index()]
    }

    pub fn jobs_completed(&self, service: ServiceKind) -> u64 {
        self.completed[service.index()]
    }

    pub fn stale_dropped(&self) -> u64 {
        self.stale_dropped
    }

    pub fn max_in_service(&self) -> usize {
        self.max_in_service
    }

    /// Submit a job; returns any queued detection jobs it made stale.
    pub fn enqueue(
        &mut self,
        service: ServiceKind,
        stream_id: u8,
        frame_seq: u64,
        resolution: Resolution,
        now: f64,
    ) -> Vec<StaleDrop> {
        self.created[service.index()] += 1;
        let mut stale = Vec::new();
        if service == ServiceKind::Detection && self.stale_drop {
            let queue = &mut self.queues[ServiceKind::Detection.index()];
            while let Some(old) = queue.front() {
                if old.frame_seq < frame_seq && old.stream_id == stream_id {
                    stale.push(StaleDrop {
                        stream_id: old.stream_id,
                        frame_seq: old.frame_seq,
                    });
                    queue.pop_front();
                } else {
                    break;
                }
            }
            self.stale_dropped += stale.len() as u64;
        }
        let id = self.next_id;
        self.next_id += 1;
        self.queues[service.index()].push_back(PendingJob {
            stream_id,
            frame_seq,
            enqueue_time: now,
            resolution,
            id,
        });
        self.dispatch(now);
        stale
    }

    fn start_job(&mut self, worker: usize, service: ServiceKind, now: f64) {
        let pending = self.queues[service.index()].pop_front().unwrap();
        let start = if pending.enqueue_time > now {
            pending.enqueue_time
        } else {
            now
        };
        let duration = self
            .models
            .sample(service, pending.resolution, &mut self.rng);
        self.workers[worker] = Some(RunningJob {
            job: InferenceJob {
                service,
                stream_id: pending.stream_id,
                frame_seq: pending.frame_seq,
                enqueue_time: pending.enqueue_time,
                start_time: start,
                finish_time: start + duration,
            },
            id: pending.id,
        });
    }

    /// Assign queued jobs to free workers. Worker 0 runs only detection;
    /// the others prefer navigation (odd index) or VLM (even index) and
    /// steal from the other queue when their own is empty.
    fn dispatch(&mut self, now: f64) {
        if self.workers[0].is_none() && !self.queues[ServiceKind::Detection.index()].is_empty() {
            self.start_job(0, ServiceKind::Detection, now);
        }
        for worker in 1..self.worker_count {
            if self.workers[worker].is_some() {
                continue;
            }
            let preferred = if worker % 2 == 1 {
                ServiceKind::Navigation
            } else {
                ServiceKind::Vlm
            };
            let other = if preferred == ServiceKind::Navigation {
                ServiceKind::Vlm
            } else {
                ServiceKind::Navigation
            };
            if !self.queues[preferred.index()].is_empty() {
                self.start_job(worker, preferred, now);
            } else if !self.queues[other.index()].is_empty() {
                self.start_job(worker, other, now);
            }
        }
        let busy = self.workers.iter().filter(|w| w.is_some()).count();
        if busy > self.max_in_service {
            self.max_in_service = busy;
        }
    }

    /// Earliest pending completion.
    pub fn next_completion(&self) -> Option<f64> {
        self.workers
            .iter()
            .flatten()
            .map(|r| r.job.finish_time)
            .min_by(|a, b| a.partial_cmp(b).unwrap())
    }

    /// Finish every job due by `now`, in (finish_time, submission) order,
    /// starting queued work as workers free up.
    pub fn pop_completions(&mut self, now: f64) -> Vec<InferenceJob> {
        let mut done = Vec::new();
        loop {
            let next = self
                .workers
                .iter()
                .enumerate()
                .filter_map(|(i, w)| w.as_ref().map(|r| (r.job.finish_time, r.id, i)))
                .min_by(|a, b| (a.0, a.1).partial_cmp(&(b.0, b.1)).unwrap());
            match next {
                Some((finish, _, worker)) if finish <= now => {
                    let running = self.workers[worker].take().unwrap();
                    self.completed[running.job.service.index()] += 1;
                    done.push(running.job);
                    self.dispatch(finish);
                }
                _ => break,
            }
        }
        done
    }

    /// Jobs still queued for a service.
    pub fn queued(&self, service: ServiceKind) -> usize {
        self.queues[service.index()].len()
    }

    pub fn is_idle(&self) -> bool {
        self.workers.iter().all(|w| w.is_none()) && self.queues.iter().all(|q| q.is_empty())
    }
}

/// End-to-end latency of a frame's detection path: uplink transfer, detection
/// queue wait and execution, and the feedback downlink leg. `None` when the
/// record is incomplete (lost, expired, or stale-dropped frames).
pub fn e2e_latency(record: &FrameRecord) -> Option<f64> {
    let completion = record.completion_time?;
    let det_start = record.detection_start?;
    let det_finish = record.detection_finish?;
    let feedback = record.feedback_delivery_time?;
    let uplink = completion - record.capture_time;
    let wait = det_start - completion;
    let exec = det_finish - det_start;
    let downlink = feedback - det_finish;
    Some(uplink + wait + exec + downlink)
}
