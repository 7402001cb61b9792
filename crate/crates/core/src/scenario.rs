//! Scenario building blocks: vehicles with constant-velocity mobility,
//! groups with TDMA patterns, pairwise bearer assignment and constant-rate
//! traffic sources.

use crate::channel::AntennaArray;
use crate::mac::SlotPattern;
use crate::sim::SimTime;

/// A simulated vehicle.
#[derive(Debug, Clone)]
pub struct Vehicle {
    pub rnti: u32,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub antenna: AntennaArray,
    pub street: Option<u32>,
}

impl Vehicle {
    /// Constant-velocity position: initial + velocity * t.
    pub fn position_at(&self, t: SimTime) -> [f64; 3] {
        let secs = t.as_secs_f64();
        [
            self.position[0] + self.velocity[0] * secs,
            self.position[1] + self.velocity[1] * secs,
            self.position[2] + self.velocity[2] * secs,
        ]
    }
}

/// Instant of closest approach between two vehicles under constant velocity,
/// together with the distance reached there. The minimum of |dp + dv t| over
/// t >= 0 is at t = -dp.dv / |dv|^2.
pub fn closest_approach(a: &Vehicle, b: &Vehicle) -> (SimTime, f64) {
    let dp: Vec<f64> = (0..3).map(|i| b.position[i] - a.position[i]).collect();
    let dv: Vec<f64> = (0..3).map(|i| b.velocity[i] - a.velocity[i]).collect();
    let dv2: f64 = dv.iter().map(|x| x * x).sum();
    let t = if dv2 == 0.0 {
        0.0
    } else {
        (-(dp[0] * dv[0] + dp[1] * dv[1] + dp[2] * dv[2]) / dv2).max(0.0)
    };
    let d: f64 = (0..3)
        .map(|i| (dp[i] + dv[i] * t).powi(2))
        .sum::<f64>()
        .sqrt();
    (SimTime::from_ns((t * 1e9).round() as u64), d)
}

/// Vehicles sharing one TDMA pattern; all members are logically connected.
#[derive(Debug, Clone)]
pub struct Group {
    pub members: Vec<u32>,
    pub pattern: SlotPattern,
}

/// A directed bearer assignment produced by pairing a group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BearerPlan {
    pub bearer_id: u32,
    pub tx_rnti: u32,
    pub rx_rnti: u32,
    pub lcid: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PairingError {
    #[error("duplicate group member {0}")]
    DuplicateMember(u32),
    #[error("device {0} needs more than 255 logical channels")]
    LcidSpaceExhausted(u32),
}

/// Connects every unordered pair of group members with two directed bearers,
/// drawing globally unique bearer ids from `next_bearer_id` and per-device
/// lcids from `next_lcid`.
pub fn pair_devices(
    members: &[u32],
    next_bearer_id: &mut u32,
    next_lcid: &mut std::collections::BTreeMap<u32, u8>,
) -> Result<Vec<BearerPlan>, PairingError> {
    for (i, m) in members.iter().enumerate() {
        if members[..i].contains(m) {
            return Err(PairingError::DuplicateMember(*m));
        }
    }
    let mut plans = Vec::new();
    for i in 0..members.len() {
        for j in (i + 1)..members.len() {
            for (tx, rx) in [(members[i], members[j]), (members[j], members[i])] {
                let lcid_slot = next_lcid.entry(tx).or_insert(0);
                *lcid_slot = lcid_slot
                    .checked_add(1)
                    .ok_or(PairingError::LcidSpaceExhausted(tx))?;
                plans.push(BearerPlan {
                    bearer_id: *next_bearer_id,
                    tx_rnti: tx,
                    rx_rnti: rx,
                    lcid: *lcid_slot,
                });
                *next_bearer_id += 1;
            }
        }
    }
    Ok(plans)
}

/// Constant-bit-rate datagram source. Packets carry a sequence number and
/// the send timestamp in their first bytes, so receivers can measure
/// one-way latency; `echo` makes the destination answer each packet with an
/// equally sized one.
#[derive(Debug, Clone, PartialEq)]
pub struct CbrSource {
    pub src_rnti: u32,
    pub dst_rnti: u32,
    pub packet_bytes: usize,
    pub interval: SimTime,
    pub start: SimTime,
    pub stop: SimTime,
    pub echo: bool,
}

/// Leading bytes of every traffic payload: sequence number + send time.
pub const PACKET_HEADER_BYTES: usize = 16;

pub fn encode_packet(seq: u64, sent_at: SimTime, size: usize) -> Vec<u8> {
    debug_assert!(size >= PACKET_HEADER_BYTES);
    let mut p = vec![0u8; size];
    p[..8].copy_from_slice(&seq.to_be_bytes());
    p[8..16].copy_from_slice(&sent_at.as_ns().to_be_bytes());
    p
}

pub fn decode_packet(payload: &[u8]) -> Option<(u64, SimTime)> {
    if payload.len() < PACKET_HEADER_BYTES {
        return None;
    }
    let seq = u64::from_be_bytes(payload[..8].try_into().unwrap());
    let ns = u64::from_be_bytes(payload[8..16].try_into().unwrap());
    Some((seq, SimTime::from_ns(ns)))
}

impl CbrSource {
    /// Offered rate in Mbps.
    pub fn offered_mbps(&self) -> f64 {
        self.packet_bytes as f64 * 8.0 / (self.interval.as_ns() as f64 / 1e9) / 1e6
    }
}
