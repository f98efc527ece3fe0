//! IO side of the uplink simulator: stable file formats, scenario loading,
//! the two-arm comparison driver, and the live socket mode.

// Scenario tweaks read clearest as sequential field edits on a default.
#![allow(clippy::field_reassign_with_default)]

pub mod compare;
pub mod export;
pub mod live;
pub mod scenario_io;
