//! Discrete-event simulator for mmWave vehicle-to-vehicle sidelink networks.
//!
//! The crate models a group-based TDMA sidelink: a 3GPP-style V2V channel
//! (LOS/NLOSv/NLOS states, distance/frequency pathloss laws, blocker
//! shadowing, DFT beamforming gain), an NR frame structure with numerologies
//! 2 and 3, SINR-based reception with a configurable BLER table, adaptive
//! modulation and coding, and a thin RLC-UM/PDCP stack between a datagram
//! traffic layer and the MAC.
//!
//! Entry points:
//! - [`config::ScenarioConfig`] describes a scenario (TOML).
//! - [`engine::Simulation`] runs it and produces traces and metrics.
//! - The `v2vsim` binary wraps both behind `run` and `sweep` subcommands.

pub mod channel;
pub mod config;
pub mod engine;
pub mod mac;
pub mod metrics;
pub mod phy;
pub mod scenario;
pub mod sim;
pub mod stack;
pub mod trace;

pub use sim::{EventQueue, RandomStream, SimTime};
