//! Key-rate engine for sending-or-not-sending twin-field QKD with a
//! redundant-space post-selection.

pub mod analytic;
pub mod baseline;
pub mod config;
pub mod counts;
pub mod decoy;
pub mod diagnostics;
pub mod keyrate;
pub mod mc;
pub mod numeric;
pub mod optimizer;
pub mod parallel;
pub mod stats;
