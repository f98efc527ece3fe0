//! Server-side per-epoch link-rate measurement.
//!
//! The receiver accumulates on-wire bytes (headers included, since that is
//! what the link drains) into fixed-length epochs and emits one rate estimate
//! per epoch: `8 * bytes / epoch_length`. An epoch with no traffic estimates
//! zero and is flagged so the client treats it as missing data rather than a
//! measured zero.

use alloc::format;

use crate::error::{Error, Result};

/// One finalized epoch measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEstimate {
    pub epoch_index: u64,
    pub estimate_bps: f64,
    pub no_data: bool,
}

/// Accumulates delivered bytes for the epoch currently open.
///
/// A packet arriving exactly on an epoch boundary counts toward the new
/// epoch (same convention as the capacity schedule), so the accumulator
/// keeps one overflow bucket for bytes observed at the boundary before the
/// finalize call runs.
#[derive(Debug, Clone)]
pub struct EpochAccumulator {
    epoch_length: f64,
    current_epoch: u64,
    bytes: u64,
    next_bytes: u64,
    first_arrival: Option<f64>,
    last_arrival: Option<f64>,
}

impl EpochAccumulator {
    pub fn new(epoch_length: f64) -> Result<Self> {
        if !(epoch_length > 0.0) {
            return Err(Error::Config(format!(
                "epoch_length must be positive, got {epoch_length}"
            )));
        }
        Ok(EpochAccumulator {
            epoch_length,
            current_epoch: 0,
            bytes: 0,
            next_bytes: 0,
            first_arrival: None,
            last_arrival: None,
        })
    }

    pub fn epoch_length(&self) -> f64 {
        self.epoch_length
    }

    pub fn current_epoch(&self) -> u64 {
        self.current_epoch
    }

    pub fn bytes_received(&self) -> u64 {
        self.bytes
    }

    /// Epoch index containing instant `t`; boundaries belong to the new epoch.
    pub fn epoch_of(&self, t: f64) -> u64 {
        libm::floor(t / self.epoch_length) as u64
    }

    /// Account one delivered packet (bytes include headers).
    pub fn observe(&mut self, packet_bytes: u64, arrival_time: f64) -> Result<()> {
        let epoch = self.epoch_of(arrival_time);
        if epoch == self.current_epoch {
            self.bytes += packet_bytes;
            if self.first_arrival.is_none() {
                self.first_arrival = Some(arrival_time);
            }
            self.last_arrival = Some(arrival_time);
            Ok(())
        } else if epoch == self.current_epoch + 1 {
            // Boundary arrival processed before this epoch's finalize call.
            self.next_bytes += packet_bytes;
            Ok(())
        } else if epoch < self.current_epoch {
            Err(Error::Accounting(format!(
                "arrival at {arrival_time} precedes epoch {}",
                self.current_epoch
            )))
        } else {
            Err(Error::Accounting(format!(
                "arrival at {arrival_time} skips past epoch {}; finalize missing",
                self.current_epoch
            )))
        }
    }

    /// Close the current epoch at its end time and emit the estimate.
    pub fn finalize_epoch(&mut self, epoch_end_time: f64) -> Result<RateEstimate> {
        let expected = (self.current_epoch + 1) as f64 * self.epoch_length;
        if (epoch_end_time - expected).abs() > 1e-9 {
            return Err(Error::Accounting(format!(
                "finalize at {epoch_end_time}, expected end of epoch {} at {expected}",
                self.current_epoch
            )));
        }
        let estimate = RateEstimate {
            epoch_index: self.current_epoch,
            estimate_bps: 8.0 * self.bytes as f64 / self.epoch_length,
            no_data: self.bytes == 0,
        };
        self.current_epoch += 1;
        self.bytes = self.next_bytes;
        self.next_bytes = 0;
        self.first_arrival = None;
        self.last_arrival = None;
        Ok(estimate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    #[test]
    fn sums_packets_within_epoch() {
        let mut acc = EpochAccumulator::new(1.0).unwrap();
        for i in 0..3 {
            acc.observe(1_220, 0.1 * (i + 1) as f64).unwrap();
        }
        assert_eq!(acc.bytes_received(), 3_660);
        let est = acc.finalize_epoch(1.0).unwrap();
        assert_eq!(est.estimate_bps, 3_660.0 * 8.0);
        assert!(!est.no_data);
    }

    #[test]
    fn boundary_packet_counts_in_new_epoch() {
        let mut acc = EpochAccumulator::new(1.0).unwrap();
        acc.observe(500, 0.5).unwrap();
        // Exactly at the boundary, before finalize runs.
        acc.observe(700, 1.0).unwrap();
        let e0 = acc.finalize_epoch(1.0).unwrap();
        assert_eq!(e0.estimate_bps, 500.0 * 8.0);
        assert_eq!(acc.bytes_received(), 700);
        let e1 = acc.finalize_epoch(2.0).unwrap();
        assert_eq!(e1.estimate_bps, 700.0 * 8.0);
    }

    #[test]
    fn empty_epoch_flags_no_data() {
        let mut acc = EpochAccumulator::new(1.0).unwrap();
        let est = acc.finalize_epoch(1.0).unwrap();
        assert_eq!(est.estimate_bps, 0.0);
        assert!(est.no_data);
    }

    #[test]
    fn rate_formula() {
        // 1.25 MB in a 1 s epoch: 10 Mbps.
        let mut acc = EpochAccumulator::new(1.0).unwrap();
        acc.observe(1_250_000, 0.4).unwrap();
        let est = acc.finalize_epoch(1.0).unwrap();
        assert_eq!(est.estimate_bps, 10e6);
    }

    #[test]
    fn double_finalize_rejected() {
        let mut acc = EpochAccumulator::new(1.0).unwrap();
        acc.finalize_epoch(1.0).unwrap();
        assert!(matches!(acc.finalize_epoch(1.0), Err(Error::Accounting(_))));
    }

    #[test]
    fn stale_arrival_rejected() {
        let mut acc = EpochAccumulator::new(1.0).unwrap();
        acc.finalize_epoch(1.0).unwrap();
        acc.finalize_epoch(2.0).unwrap();
        assert!(matches!(acc.observe(10, 0.5), Err(Error::Accounting(_))));
    }

    #[test]
    fn conservation_over_epochs() {
        // Sum of estimate * epoch_length / 8 equals the delivered bytes.
        let mut acc = EpochAccumulator::new(0.5).unwrap();
        let mut estimates: Vec<RateEstimate> = Vec::new();
        let mut total = 0u64;
        let mut t = 0.0;
        for i in 0..400u64 {
            t += 0.013;
            while acc.epoch_of(t) > acc.current_epoch() {
                let end = (acc.current_epoch() + 1) as f64 * 0.5;
                estimates.push(acc.finalize_epoch(end).unwrap());
            }
            let bytes = 200 + (i % 7) * 111;
            acc.observe(bytes, t).unwrap();
            total += bytes;
        }
        let end = (acc.current_epoch() + 1) as f64 * 0.5;
        estimates.push(acc.finalize_epoch(end).unwrap());
        let recovered: f64 = estimates.iter().map(|e| e.estimate_bps * 0.5 / 8.0).sum();
        assert_eq!(recovered, total as f64);
    }
}
