//! Media packetization, reassembly, and the feedback wire format.
//!
//! Both wire formats are fixed-layout little-endian and identical in the
//! simulated and live modes. Media payload bytes are synthetic (zero-filled);
//! only the declared lengths matter to the pipeline.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::media::{FrameDescriptor, StreamConfig};

/// Media packet header size in bytes.
pub const HEADER_LEN: usize = 20;
/// Feedback message size in bytes.
pub const FEEDBACK_LEN: usize = 20;

pub const FLAG_KEYFRAME: u8 = 0b0000_0001;
pub const FLAG_LAST_FRAGMENT: u8 = 0b0000_0010;

/// One MTU-sized fragment of an encoded frame.
///
/// Wire layout (little-endian, 20-byte header followed by `payload_len`
/// opaque zero bytes):
///
/// | offset | field           | size |
/// |--------|-----------------|------|
/// | 0      | stream_id       | 1    |
/// | 1      | flags           | 1    |
/// | 2      | frame_seq       | 4    |
/// | 6      | fragment_index  | 2    |
/// | 8      | fragment_count  | 2    |
/// | 10     | capture_time_us | 8    |
/// | 18     | payload_len     | 2    |
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MediaPacket {
    pub stream_id: u8,
    pub flags: u8,
    pub frame_seq: u32,
    pub fragment_index: u16,
    pub fragment_count: u16,
    pub capture_time_us: u64,
    pub payload_len: u16,
}

impl MediaPacket {
    pub fn is_keyframe(&self) -> bool {
        self.flags & FLAG_KEYFRAME != 0
    }

    pub fn is_last_fragment(&self) -> bool {
        self.flags & FLAG_LAST_FRAGMENT != 0
    }

    /// Total bytes this packet occupies on the wire.
    pub fn wire_len(&self) -> u64 {
        HEADER_LEN as u64 + self.payload_len as u64
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_LEN + self.payload_len as usize);
        buf.push(self.stream_id);
        buf.push(self.flags);
        buf.extend_from_slice(&self.frame_seq.to_le_bytes());
        buf.extend_from_slice(&self.fragment_index.to_le_bytes());
        buf.extend_from_slice(&self.fragment_count.to_le_bytes());
        buf.extend_from_slice(&self.capture_time_us.to_le_bytes());
        buf.extend_from_slice(&self.payload_len.to_le_bytes());
        buf.resize(HEADER_LEN + self.payload_len as usize, 0);
        buf
    }

    pub fn decode(buf: &[u8]) -> Result<MediaPacket> {
        if buf.len() < HEADER_LEN {
            return Err(Error::Framing(format!(
                "media packet needs at least {HEADER_LEN} bytes, got {}",
                buf.len()
            )));
        }
        let pkt = MediaPacket {
            stream_id: buf[0],
            flags: buf[1],
            frame_seq: u32::from_le_bytes(buf[2..6].try_into().unwrap()),
            fragment_index: u16::from_le_bytes(buf[6..8].try_into().unwrap()),
            fragment_count: u16::from_le_bytes(buf[8..10].try_into().unwrap()),
            capture_time_us: u64::from_le_bytes(buf[10..18].try_into().unwrap()),
            payload_len: u16::from_le_bytes(buf[18..20].try_into().unwrap()),
        };
        if buf.len() != HEADER_LEN + pkt.payload_len as usize {
            return Err(Error::Framing(format!(
                "payload_len {} disagrees with buffer length {}",
                pkt.payload_len,
                buf.len()
            )));
        }
        if pkt.fragment_count == 0 || pkt.fragment_index >= pkt.fragment_count {
            return Err(Error::Framing(format!(
                "fragment_index {} out of range for fragment_count {}",
                pkt.fragment_index, pkt.fragment_count
            )));
        }
        Ok(pkt)
    }
}

/// Server-to-client link rate estimate.
///
/// Fixed 20-byte little-endian layout: epoch_index (4), estimate_bps (8),
/// server_time_us (8). `estimate_bps == 0` means the epoch carried no data;
/// an epoch with any traffic always estimates above zero, so the no-data flag
/// needs no extra field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeedbackMessage {
    pub epoch_index: u32,
    pub estimate_bps: u64,
    pub server_time_us: u64,
}

impl FeedbackMessage {
    pub fn no_data(&self) -> bool {
        self.estimate_bps == 0
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(FEEDBACK_LEN);
        buf.extend_from_slice(&self.epoch_index.to_le_bytes());
        buf.extend_from_slice(&self.estimate_bps.to_le_bytes());
        buf.extend_from_slice(&self.server_time_us.to_le_bytes());
        buf
    }

    pub fn decode(buf: &[u8]) -> Result<FeedbackMessage> {
        if buf.len() != FEEDBACK_LEN {
            return Err(Error::Framing(format!(
                "feedback message must be {FEEDBACK_LEN} bytes, got {}",
                buf.len()
            )));
        }
        Ok(FeedbackMessage {
            epoch_index: u32::from_le_bytes(buf[0..4].try_into().unwrap()),
            estimate_bps: u64::from_le_bytes(buf[4..12].try_into().unwrap()),
            server_time_us: u64::from_le_bytes(buf[12..20].try_into().unwrap()),
        })
    }
}

/// Split a frame into MTU-sized packets. Payload lengths sum to the frame
/// size and the final packet carries the last-fragment flag.
pub fn packetize(frame: &FrameDescriptor, mtu: usize) -> Result<Vec<MediaPacket>> {
    if mtu <= HEADER_LEN {
        return Err(Error::Config(format!(
            "mtu {mtu} does not exceed the {HEADER_LEN}-byte header"
        )));
    }
    if frame.size == 0 {
        return Err(Error::Config("frame size must be positive".into()));
    }
    let payload_cap = (mtu - HEADER_LEN) as u64;
    let count = frame.size.div_ceil(payload_cap);
    if count > u16::MAX as u64 {
        return Err(Error::Config(format!(
            "frame of {} bytes needs {count} fragments, above the u16 limit",
            frame.size
        )));
    }
    if frame.frame_seq > u32::MAX as u64 {
        return Err(Error::Config("frame_seq exceeds the u32 wire field".into()));
    }
    let capture_time_us = math::round(frame.capture_time * 1e6) as u64;
    let base_flags = if frame.is_keyframe { FLAG_KEYFRAME } else { 0 };
    let mut packets = Vec::with_capacity(count as usize);
    let mut remaining = frame.size;
    for index in 0..count {
        let payload_len = remaining.min(payload_cap) as u16;
        remaining -= payload_len as u64;
        let last = index == count - 1;
        packets.push(MediaPacket {
            stream_id: frame.stream_id,
            flags: base_flags | if last { FLAG_LAST_FRAGMENT } else { 0 },
            frame_seq: frame.frame_seq as u32,
            fragment_index: index as u16,
            fragment_count: count as u16,
            capture_time_us,
            payload_len,
        });
    }
    debug_assert_eq!(remaining, 0);
    Ok(packets)
}

/// Average goodput and on-wire rates (bits per second) a stream config
/// realizes once packetized at `mtu`, exact for `size_jitter = 0`.
///
/// Averages frame sizes over one GoP, including the per-frame floor rounding
/// and per-packet header overhead, so a controller can compare a measured
/// on-wire estimate against what it offered.
pub fn stream_wire_rates(config: &StreamConfig, mtu: usize) -> Result<(f64, f64)> {
    config.validate()?;
    if mtu <= HEADER_LEN {
        return Err(Error::Config(format!(
            "mtu {mtu} does not exceed the {HEADER_LEN}-byte header"
        )));
    }
    let payload_cap = (mtu - HEADER_LEN) as u64;
    let g = config.gop_length as f64;
    let mean = config.target_bitrate as f64 / (8.0 * config.fps as f64);
    let non_key = g * mean / (config.i_frame_ratio + g - 1.0);
    let mut good_bytes = 0u64;
    let mut wire_bytes = 0u64;
    for position in 0..config.gop_length {
        let base = if position == 0 {
            config.i_frame_ratio * non_key
        } else {
            non_key
        };
        let size = (math::floor(base) as u64).max(1);
        let packets = size.div_ceil(payload_cap);
        good_bytes += size;
        wire_bytes += size + HEADER_LEN as u64 * packets;
    }
    let per_second = 8.0 * config.fps as f64 / g;
    Ok((
        good_bytes as f64 * per_second,
        wire_bytes as f64 * per_second,
    ))
}

/// Completed frame at the receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameArrival {
    pub stream_id: u8,
    pub frame_seq: u64,
    /// Capture time recovered from the packet header, seconds.
    pub capture_time: f64,
    /// Arrival time of the final fragment.
    pub completion_time: f64,
    /// Sum of payload lengths; equals the original frame size.
    pub total_bytes: u64,
    pub is_keyframe: bool,
}

/// Frame dropped by the reassembler after waiting too long for fragments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpiredFrame {
    pub stream_id: u8,
    pub frame_seq: u64,
    pub fragments_received: u16,
}

#[derive(Debug, Clone)]
struct PendingFrame {
    fragment_count: u16,
    received: Vec<bool>,
    received_count: u16,
    bytes: u64,
    first_fragment_time: f64,
    capture_time_us: u64,
    is_keyframe: bool,
}

/// Per-(stream, frame) fragment collector.
///
/// Duplicate fragments are idempotent, any arrival order is accepted, and a
/// frame still missing fragments `expiry` seconds after its first fragment is
/// discarded by [`Reassembler::expire`].
#[derive(Debug, Clone)]
pub struct Reassembler {
    pending: BTreeMap<(u8, u32), PendingFrame>,
    /// Recently completed frames, kept so late duplicates stay idempotent.
    completed: VecDeque<((u8, u32), f64)>,
    expiry: f64,
}

impl Reassembler {
    pub fn new(expiry: f64) -> Self {
        Reassembler {
            pending: BTreeMap::new(),
            completed: VecDeque::new(),
            expiry,
        }
    }

    /// Feed one packet; returns the completed frame exactly once, when its
    /// final missing fragment arrives.
    pub fn insert(
        &mut self,
        packet: &MediaPacket,
        arrival_time: f64,
    ) -> Result<Option<FrameArrival>> {
        if packet.fragment_count == 0 || packet.fragment_index >= packet.fragment_count {
            return Err(Error::Protocol(format!(
                "fragment_index {} out of range for fragment_count {}",
                packet.fragment_index, packet.fragment_count
            )));
        }
        let key = (packet.stream_id, packet.frame_seq);
        if self.completed.iter().any(|(k, _)| *k == key) {
            return Ok(None);
        }
        let entry = self.pending.entry(key).or_insert_with(|| PendingFrame {
            fragment_count: packet.fragment_count,
            received: alloc::vec![false; packet.fragment_count as usize],
            received_count: 0,
            bytes: 0,
            first_fragment_time: arrival_time,
            capture_time_us: packet.capture_time_us,
            is_keyframe: packet.is_keyframe(),
        });
        if entry.fragment_count != packet.fragment_count {
            return Err(Error::Protocol(format!(
                "fragment_count changed from {} to {} within frame {}/{}",
                entry.fragment_count, packet.fragment_count, packet.stream_id, packet.frame_seq
            )));
        }
        let idx = packet.fragment_index as usize;
        if entry.received[idx] {
            return Ok(None);
        }
        entry.received[idx] = true;
        entry.received_count += 1;
        entry.bytes += packet.payload_len as u64;
        if entry.received_count == entry.fragment_count {
            let done = self.pending.remove(&key).unwrap();
            self.completed.push_back((key, arrival_time));
            // Forget completions old enough that straggling duplicates have
            // expired on the link as well.
            while let Some((_, t)) = self.completed.front() {
                if arrival_time - *t > self.expiry {
                    self.completed.pop_front();
                } else {
                    break;
                }
            }
            return Ok(Some(FrameArrival {
                stream_id: packet.stream_id,
                frame_seq: packet.frame_seq as u64,
                capture_time: done.capture_time_us as f64 / 1e6,
                completion_time: arrival_time,
                total_bytes: done.bytes,
                is_keyframe: done.is_keyframe,
            }));
        }
        Ok(None)
    }

    /// Earliest instant at which a pending frame can expire.
    pub fn next_expiry(&self) -> Option<f64> {
        self.pending
            .values()
            .map(|p| p.first_fragment_time + self.expiry)
            .min_by(|a, b| a.partial_cmp(b).unwrap())
    }

    /// Discard frames whose first fragment is older than the expiry window.
    /// The small tolerance keeps `expire(first + expiry)` effective despite
    /// float rounding.
    pub fn expire(&mut self, now: f64) -> Vec<ExpiredFrame> {
        let overdue: Vec<(u8, u32)> = self
            .pending
            .iter()
            .filter(|(_, p)| now - p.first_fragment_time >= self.expiry - 1e-9)
            .map(|(k, _)| *k)
            .collect();
        overdue
            .into_iter()
            .map(|key| {
                let p = self.pending.remove(&key).unwrap();
                ExpiredFrame {
                    stream_id: key.0,
                    frame_seq: key.1 as u64,
                    fragments_received: p.received_count,
                }
            })
            .collect()
    }

    /// Remove and report every still-incomplete frame (end of run).
    pub fn drain_pending(&mut self) -> Vec<ExpiredFrame> {
        let keys: Vec<(u8, u32)> = self.pending.keys().copied().collect();
        keys.into_iter()
            .map(|key| {
                let p = self.pending.remove(&key).unwrap();
                ExpiredFrame {
                    stream_id: key.0,
                    frame_seq: key.1 as u64,
                    fragments_received: p.received_count,
                }
            })
            .collect()
    }

    pub fn pending_frames(&self) -> usize {
        self.pending.len()
    }
}
