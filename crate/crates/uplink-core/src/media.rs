//! Synthetic camera and encoder model.
//!
//! Frame sizes are synthetic but rate-accurate: over one GoP the mean frame
//! size equals `target_bitrate / (8 * fps)` bytes, with the keyframe sized
//! `i_frame_ratio` times a non-key frame and non-key frames scaled down so
//! the average holds. With `size_jitter = 0` the sequence is exact and
//! bit-reproducible for a given seed.

use alloc::format;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::AdaptationDecision;
use crate::error::{Error, Result};
use crate::math;

pub const PRIMARY_STREAM: u8 = 0;
pub const SECONDARY_STREAM: u8 = 1;

/// Frame resolution in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub width: u32,
    pub height: u32,
}

impl Resolution {
    pub const FULL_HD: Resolution = Resolution {
        width: 1920,
        height: 1080,
    };
    pub const HD: Resolution = Resolution {
        width: 1280,
        height: 720,
    };
    pub const SD: Resolution = Resolution {
        width: 854,
        height: 480,
    };

    pub fn pixels(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 {
            return Err(Error::Config(format!(
                "resolution {}x{} is below the 16x16 minimum",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

impl core::fmt::Display for Resolution {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

/// Encoder settings for one stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    /// 0 = primary (high frame rate), 1 = secondary (low frame rate).
    pub stream_id: u8,
    pub fps: u32,
    pub resolution: Resolution,
    /// Target bitrate in bits per second.
    pub target_bitrate: u64,
    /// Frames per GoP; the first frame of each GoP is the keyframe.
    pub gop_length: u32,
    /// Keyframe size relative to a non-key frame, > 1.
    pub i_frame_ratio: f64,
    /// Multiplicative per-frame size jitter, fraction in [0, 1).
    pub size_jitter: f64,
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        self.resolution.validate()?;
        if self.target_bitrate == 0 {
            return Err(Error::Config("target_bitrate must be positive".into()));
        }
        if self.fps == 0 {
            return Err(Error::Config("fps must be positive".into()));
        }
        if self.gop_length == 0 {
            return Err(Error::Config("gop_length must be at least 1".into()));
        }
        if !(self.i_frame_ratio > 1.0) {
            return Err(Error::Config(format!(
                "i_frame_ratio must be > 1, got {}",
                self.i_frame_ratio
            )));
        }
        if !(0.0..1.0).contains(&self.size_jitter) {
            return Err(Error::Config(format!(
                "size_jitter must be in [0, 1), got {}",
                self.size_jitter
            )));
        }
        Ok(())
    }

    /// Mean frame size over one GoP, in bytes.
    pub fn mean_frame_bytes(&self) -> f64 {
        self.target_bitrate as f64 / (8.0 * self.fps as f64)
    }

    /// Unrounded non-key frame size, chosen so the GoP average matches
    /// `mean_frame_bytes`: `(ratio + gop - 1) * s / gop = mean`.
    fn non_key_bytes(&self) -> f64 {
        let g = self.gop_length as f64;
        g * self.mean_frame_bytes() / (self.i_frame_ratio + g - 1.0)
    }
}

/// One encoded video frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameDescriptor {
    pub stream_id: u8,
    pub frame_seq: u64,
    /// Seconds; equals `frame_seq / fps`.
    pub capture_time: f64,
    pub resolution: Resolution,
    /// Encoded size in bytes, always > 0.
    pub size: u64,
    pub is_keyframe: bool,
}

/// Produce the descriptor for frame `frame_seq` under `config`.
///
/// Frames at `frame_seq % gop_length == 0` are keyframes. When
/// `size_jitter > 0` a multiplicative factor uniform in
/// `[1 - jitter, 1 + jitter]` is drawn from `rng`; with jitter 0 the RNG is
/// untouched.
pub fn next_frame<R: Rng>(
    config: &StreamConfig,
    frame_seq: u64,
    rng: &mut R,
) -> Result<FrameDescriptor> {
    config.validate()?;
    let is_keyframe = frame_seq.is_multiple_of(config.gop_length as u64);
    let base = if is_keyframe {
        config.i_frame_ratio * config.non_key_bytes()
    } else {
        config.non_key_bytes()
    };
    let factor = if config.size_jitter > 0.0 {
        rng.random_range(1.0 - config.size_jitter..=1.0 + config.size_jitter)
    } else {
        1.0
    };
    let size = (math::floor(base * factor) as u64).max(1);
    Ok(FrameDescriptor {
        stream_id: config.stream_id,
        frame_seq,
        capture_time: frame_seq as f64 / config.fps as f64,
        resolution: config.resolution,
        size,
        is_keyframe,
    })
}

/// Return `config` carrying the decision's bitrate and resolution.
///
/// The returned config is what the encoder uses from the next frame onward;
/// `FrameGenerator` additionally defers resolution switches to the next GoP
/// boundary.
pub fn apply_decision(config: &StreamConfig, decision: &AdaptationDecision) -> StreamConfig {
    StreamConfig {
        target_bitrate: (math::round(decision.encoder_bitrate) as u64).max(1),
        resolution: decision.resolution,
        ..*config
    }
}

/// Stateful frame source for one stream.
///
/// Bitrate changes take effect at the next emitted frame; resolution changes
/// wait for the next GoP boundary.
#[derive(Debug, Clone)]
pub struct FrameGenerator {
    config: StreamConfig,
    pending_resolution: Option<Resolution>,
    rng: ChaCha8Rng,
}

impl FrameGenerator {
    pub fn new(config: StreamConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(FrameGenerator {
            config,
            pending_resolution: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn config(&self) -> &StreamConfig {
        &self.config
    }

    /// Apply an adaptation decision: bitrate immediately, resolution at the
    /// next GoP boundary.
    pub fn apply(&mut self, decision: &AdaptationDecision) {
        self.config.target_bitrate = (math::round(decision.encoder_bitrate) as u64).max(1);
        if decision.resolution != self.config.resolution {
            self.pending_resolution = Some(decision.resolution);
        } else {
            self.pending_resolution = None;
        }
    }

    pub fn set_bitrate(&mut self, bitrate: u64) {
        self.config.target_bitrate = bitrate.max(1);
    }

    /// Emit the frame with sequence number `frame_seq`.
    pub fn emit(&mut self, frame_seq: u64) -> Result<FrameDescriptor> {
        if frame_seq.is_multiple_of(self.config.gop_length as u64) {
            if let Some(resolution) = self.pending_resolution.take() {
                self.config.resolution = resolution;
            }
        }
        next_frame(&self.config, frame_seq, &mut self.rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn cfg_20mbps() -> StreamConfig {
        StreamConfig {
            stream_id: PRIMARY_STREAM,
            fps: 30,
            resolution: Resolution::FULL_HD,
            target_bitrate: 20_000_000,
            gop_length: 1,
            i_frame_ratio: 4.0,
            size_jitter: 0.0,
        }
    }

    #[test]
    fn cbr_frame_size_exact() {
        // 20 Mbps at 30 fps, gop 1, no jitter: every frame 83,333 bytes.
        let cfg = cfg_20mbps();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seq in 0..90 {
            let f = next_frame(&cfg, seq, &mut rng).unwrap();
            assert_eq!(f.size, 83_333);
            assert!(f.is_keyframe);
        }
    }

    #[test]
    fn gop_sizes_match_hand_solution() {
        // gop 30, ratio 4: solve (4s + 29s)/30 = 83,333.3 => s ~= 75,757,
        // key ~= 303,030.
        let cfg = StreamConfig {
            gop_length: 30,
            ..cfg_20mbps()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let key = next_frame(&cfg, 0, &mut rng).unwrap();
        let non_key = next_frame(&cfg, 1, &mut rng).unwrap();
        assert_eq!(key.size, 303_030);
        assert_eq!(non_key.size, 75_757);
        assert!(key.is_keyframe);
        assert!(!non_key.is_keyframe);
    }

    #[test]
    fn capture_time_is_seq_over_fps() {
        let cfg = cfg_20mbps();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = next_frame(&cfg, 45, &mut rng).unwrap();
        assert_eq!(f.capture_time, 1.5);
    }

    #[test]
    fn gop_sum_within_rounding() {
        // Sum over a whole GoP stays within gop_length bytes of the target.
        let cfg = StreamConfig {
            gop_length: 30,
            ..cfg_20mbps()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let total: u64 = (0..30)
            .map(|s| next_frame(&cfg, s, &mut rng).unwrap().size)
            .sum();
        let target = cfg.target_bitrate as f64 / (8.0 * cfg.fps as f64) * cfg.gop_length as f64;
        assert!((target - total as f64).abs() <= cfg.gop_length as f64);
    }

    #[test]
    fn keyframe_cadence() {
        let cfg = StreamConfig {
            gop_length: 30,
            ..cfg_20mbps()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seq in 0..120 {
            let f = next_frame(&cfg, seq, &mut rng).unwrap();
            assert_eq!(f.is_keyframe, seq % 30 == 0);
        }
    }

    #[test]
    fn same_seed_same_sequence() {
        let cfg = StreamConfig {
            size_jitter: 0.2,
            ..cfg_20mbps()
        };
        let seq_a: Vec<u64> = {
            let mut g = FrameGenerator::new(cfg, 99).unwrap();
            (0..200).map(|s| g.emit(s).unwrap().size).collect()
        };
        let seq_b: Vec<u64> = {
            let mut g = FrameGenerator::new(cfg, 99).unwrap();
            (0..200).map(|s| g.emit(s).unwrap().size).collect()
        };
        assert_eq!(seq_a, seq_b);
    }

    #[test]
    fn jitter_bounds_respected() {
        let cfg = StreamConfig {
            size_jitter: 0.25,
            ..cfg_20mbps()
        };
        let mut g = FrameGenerator::new(cfg, 3).unwrap();
        let base = 83_333.33;
        for s in 0..500 {
            let f = g.emit(s).unwrap();
            assert!(f.size as f64 >= base * 0.75 - 1.0);
            assert!(f.size as f64 <= base * 1.25 + 1.0);
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bad = StreamConfig {
            target_bitrate: 0,
            ..cfg_20mbps()
        };
        assert!(matches!(
            next_frame(&bad, 0, &mut rng),
            Err(Error::Config(_))
        ));
        let bad = StreamConfig {
            fps: 0,
            ..cfg_20mbps()
        };
        assert!(matches!(
            next_frame(&bad, 0, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn apply_decision_substitutes_fields() {
        let cfg = cfg_20mbps();
        let decision = AdaptationDecision {
            epoch_index: 4,
            encoder_bitrate: 10_000_000.0,
            resolution: Resolution::HD,
            secondary_active: false,
        };
        let updated = apply_decision(&cfg, &decision);
        assert_eq!(updated.target_bitrate, 10_000_000);
        assert_eq!(updated.resolution, Resolution::HD);
        assert_eq!(updated.fps, cfg.fps);
        // A decision equal to the current config leaves it unchanged.
        let same = AdaptationDecision {
            epoch_index: 5,
            encoder_bitrate: cfg.target_bitrate as f64,
            resolution: cfg.resolution,
            secondary_active: false,
        };
        assert_eq!(apply_decision(&cfg, &same), cfg);
    }

    #[test]
    fn resolution_switch_waits_for_gop_boundary() {
        let cfg = StreamConfig {
            gop_length: 30,
            ..cfg_20mbps()
        };
        let mut g = FrameGenerator::new(cfg, 5).unwrap();
        for s in 0..10 {
            g.emit(s).unwrap();
        }
        let decision = AdaptationDecision {
            epoch_index: 1,
            encoder_bitrate: 10_000_000.0,
            resolution: Resolution::HD,
            secondary_active: false,
        };
        g.apply(&decision);
        // Mid-GoP: bitrate changes, resolution does not.
        let f = g.emit(10).unwrap();
        assert_eq!(f.resolution, Resolution::FULL_HD);
        assert!(f.size < 83_333);
        for s in 11..30 {
            assert_eq!(g.emit(s).unwrap().resolution, Resolution::FULL_HD);
        }
        // Next GoP boundary adopts the pending resolution.
        assert_eq!(g.emit(30).unwrap().resolution, Resolution::HD);
    }
}
