//! Event-driven single-bottleneck uplink emulator.
//!
//! The uplink is a FIFO tail-drop queue drained at a piecewise-constant
//! capacity, emulating a cellular link whose allocated bandwidth part
//! switches at scheduled instants, followed by a fixed propagation delay.
//! When capacity switches mid-packet the remaining bits drain at the new
//! rate. The downlink carries only small feedback messages and is modeled
//! uncongested.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One capacity segment; the final segment extends to the end of the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacitySegment {
    /// Segment start in seconds; boundaries belong to the new segment.
    pub start: f64,
    /// Capacity in bits per second.
    pub bps: f64,
}

/// Piecewise-constant uplink capacity over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacitySchedule {
    pub segments: Vec<CapacitySegment>,
}

impl CapacitySchedule {
    pub fn constant(bps: f64) -> Self {
        CapacitySchedule {
            segments: alloc::vec![CapacitySegment { start: 0.0, bps }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::Validation("capacity schedule is empty".into()));
        }
        if self.segments[0].start != 0.0 {
            return Err(Error::Validation(format!(
                "first capacity segment must start at 0, got {}",
                self.segments[0].start
            )));
        }
        for pair in self.segments.windows(2) {
            if pair[1].start <= pair[0].start {
                return Err(Error::Validation(format!(
                    "capacity segment starts must strictly increase, got {} then {}",
                    pair[0].start, pair[1].start
                )));
            }
        }
        for seg in &self.segments {
            if !(seg.bps > 0.0) || !seg.bps.is_finite() {
                return Err(Error::Validation(format!(
                    "capacity must be positive and finite, got {}",
                    seg.bps
                )));
            }
        }
        Ok(())
    }

    /// Capacity of the segment containing `t`; a boundary instant belongs to
    /// the segment that starts there.
    pub fn capacity_at(&self, t: f64) -> f64 {
        let mut bps = self.segments[0].bps;
        for seg in &self.segments {
            if seg.start <= t {
                bps = seg.bps;
            } else {
                break;
            }
        }
        bps
    }

    /// Instant at which a packet of `bits` finishes serializing when service
    /// starts at `start`, integrating across capacity switches.
    pub fn service_finish(&self, start: f64, bits: f64) -> f64 {
        let mut cursor = start;
        let mut remaining = bits;
        loop {
            let capacity = self.capacity_at(cursor);
            let boundary = self.segments.iter().map(|s| s.start).find(|s| *s > cursor);
            match boundary {
                Some(b) => {
                    let drained = capacity * (b - cursor);
                    if remaining <= drained {
                        return cursor + remaining / capacity;
                    }
                    remaining -= drained;
                    cursor = b;
                }
                None => return cursor + remaining / capacity,
            }
        }
    }

    /// Times at which the capacity changes (excluding t = 0).
    pub fn switch_times(&self) -> Vec<f64> {
        self.segments.iter().skip(1).map(|s| s.start).collect()
    }
}

/// Fixed link parameters around the bottleneck queue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    /// Uplink propagation delay, seconds.
    pub prop_delay_up: f64,
    /// Downlink propagation delay, seconds.
    pub prop_delay_down: f64,
    /// Bottleneck queue limit in bytes (tail drop).
    pub queue_limit: u64,
    /// Downlink capacity in bits per second; `f64::INFINITY` for an ideal link.
    pub downlink_bps: f64,
}

impl LinkParams {
    pub fn validate(&self, mtu: usize) -> Result<()> {
        if self.prop_delay_up < 0.0 || self.prop_delay_down < 0.0 {
            return Err(Error::Validation("propagation delays must be >= 0".into()));
        }
        if self.queue_limit <= mtu as u64 {
            return Err(Error::Validation(format!(
                "queue_limit {} must exceed the MTU {}",
                self.queue_limit, mtu
            )));
        }
        if !(self.downlink_bps > 0.0) {
            return Err(Error::Validation(
                "downlink capacity must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Delivery time of a `message_bytes` downlink message sent at `t`.
    /// The downlink has no queue.
    pub fn feedback_delivery_time(&self, message_bytes: u64, t: f64) -> f64 {
        let serialization = if self.downlink_bps.is_finite() {
            8.0 * message_bytes as f64 / self.downlink_bps
        } else {
            0.0
        };
        t + serialization + self.prop_delay_down
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkEventKind {
    Delivered,
    Dropped,
}

/// Outcome of one packet's trip through the bottleneck.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkEvent<T> {
    pub kind: LinkEventKind,
    pub payload: T,
    pub size_bytes: u64,
    pub enqueue_time: f64,
    /// Last bit leaves the serializer (equals `enqueue_time` for drops).
    pub depart_time: f64,
    /// Arrival at the receiver (equals `enqueue_time` for drops).
    pub deliver_time: f64,
}

#[derive(Debug, Clone)]
struct QueuedPacket<T> {
    payload: T,
    size_bytes: u64,
    enqueue_time: f64,
}

/// FIFO tail-drop bottleneck with piecewise-constant service capacity.
#[derive(Debug, Clone)]
pub struct Bottleneck<T> {
    schedule: CapacitySchedule,
    prop_delay: f64,
    queue_limit: u64,
    queue: VecDeque<QueuedPacket<T>>,
    /// Bytes held by packets that have not finished serializing.
    queued_bytes: u64,
    /// Departure time of the packet currently/last in service.
    last_depart: f64,
    /// Cached finish time of the head-of-line packet.
    head_finish: Option<f64>,
    /// Packets serialized but not yet handed to the caller.
    ready: VecDeque<LinkEvent<T>>,
    clock: f64,
    offered: u64,
    delivered: u64,
    dropped: u64,
}

impl<T: Clone> Bottleneck<T> {
    pub fn new(schedule: CapacitySchedule, prop_delay_up: f64, queue_limit: u64) -> Result<Self> {
        schedule.validate()?;
        Ok(Bottleneck {
            schedule,
            prop_delay: prop_delay_up,
            queue_limit,
            queue: VecDeque::new(),
            queued_bytes: 0,
            last_depart: 0.0,
            head_finish: None,
            ready: VecDeque::new(),
            clock: 0.0,
            offered: 0,
            delivered: 0,
            dropped: 0,
        })
    }

    fn recompute_head(&mut self) {
        self.head_finish = self.queue.front().map(|head| {
            let start = if head.enqueue_time > self.last_depart {
                head.enqueue_time
            } else {
                self.last_depart
            };
            self.schedule
                .service_finish(start, 8.0 * head.size_bytes as f64)
        });
    }

    /// Serialize every packet whose departure is due by `until`.
    fn run_service(&mut self, until: f64) {
        while let Some(finish) = self.head_finish {
            if finish > until {
                break;
            }
            let head = self.queue.pop_front().unwrap();
            self.queued_bytes -= head.size_bytes;
            self.last_depart = finish;
            self.delivered += 1;
            self.ready.push_back(LinkEvent {
                kind: LinkEventKind::Delivered,
                payload: head.payload,
                size_bytes: head.size_bytes,
                enqueue_time: head.enqueue_time,
                depart_time: finish,
                deliver_time: finish + self.prop_delay,
            });
            self.recompute_head();
        }
    }

    /// Offer one packet at time `t`. Returns a drop event when the queue
    /// cannot take it, `None` when it was queued.
    pub fn offer(&mut self, payload: T, size_bytes: u64, t: f64) -> Result<Option<LinkEvent<T>>> {
        if t < self.clock {
            return Err(Error::Internal(format!(
                "offer at {t} behind the link clock {}",
                self.clock
            )));
        }
        self.clock = t;
        self.run_service(t);
        self.offered += 1;
        if self.queued_bytes + size_bytes > self.queue_limit {
            self.dropped += 1;
            return Ok(Some(LinkEvent {
                kind: LinkEventKind::Dropped,
                payload,
                size_bytes,
                enqueue_time: t,
                depart_time: t,
                deliver_time: t,
            }));
        }
        self.queue.push_back(QueuedPacket {
            payload,
            size_bytes,
            enqueue_time: t,
        });
        self.queued_bytes += size_bytes;
        if self.queue.len() == 1 {
            self.recompute_head();
        }
        Ok(None)
    }

    /// Delivery time of the next packet, if any packet is in flight.
    pub fn next_delivery(&self) -> Option<f64> {
        if let Some(ev) = self.ready.front() {
            return Some(ev.deliver_time);
        }
        self.head_finish.map(|f| f + self.prop_delay)
    }

    /// Pop the next delivery in FIFO order, advancing service as needed.
    pub fn pop_delivery(&mut self) -> Option<LinkEvent<T>> {
        if self.ready.is_empty() {
            if let Some(finish) = self.head_finish {
                self.run_service(finish);
            }
        }
        self.ready.pop_front()
    }

    /// Return every delivery with `deliver_time <= to`, in order.
    pub fn advance(&mut self, to: f64) -> Result<Vec<LinkEvent<T>>> {
        if to < self.clock {
            return Err(Error::Internal(format!(
                "advance to {to} behind the link clock {}",
                self.clock
            )));
        }
        self.clock = to;
        self.run_service(to - self.prop_delay);
        let mut out = Vec::new();
        while let Some(ev) = self.ready.front() {
            if ev.deliver_time <= to {
                out.push(self.ready.pop_front().unwrap());
            } else {
                break;
            }
        }
        Ok(out)
    }

    /// Bytes currently waiting in or occupying the serializer.
    pub fn queued_bytes(&self) -> u64 {
        self.queued_bytes
    }

    /// Packets accepted but not yet handed to the caller.
    pub fn in_flight(&self) -> usize {
        self.queue.len() + self.ready.len()
    }

    pub fn counters(&self) -> (u64, u64, u64) {
        (self.offered, self.delivered, self.dropped)
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty() && self.ready.is_empty()
    }
}
