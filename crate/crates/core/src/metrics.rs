//! Per-run metric aggregation and the end-of-run summary.

use std::collections::BTreeMap;

use crate::sim::SimTime;

/// A directed traffic or radio link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct FlowKey {
    pub tx_rnti: u32,
    pub rx_rnti: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FlowStats {
    pub sent: u64,
    pub delivered: u64,
    pub delivered_bytes: u64,
    pub latency_sum_ns: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LinkStats {
    pub records: u64,
    pub corrupt: u64,
    pub sinr_db_sum: f64,
    pub mcs_sum: u64,
}

/// Counters exported with the statistics block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub corrupt_tbs: u64,
    pub rlc_tx_drops: u64,
    pub rlc_discarded_sdus: u64,
    pub rlc_duplicate_pdus: u64,
    pub pdcp_duplicates: u64,
    pub pdcp_reordered: u64,
    pub mac_malformed_tbs: u64,
    pub unmatched_tx_drops: u64,
    pub unknown_lcid_drops: u64,
    pub pathloss_clamp_warnings: u64,
}

/// Raw per-run measurements, keyed by directed flow / link.
#[derive(Debug, Clone, Default)]
pub struct RunMetrics {
    pub flows: BTreeMap<FlowKey, FlowStats>,
    pub links: BTreeMap<FlowKey, LinkStats>,
    pub counters: Counters,
}

impl RunMetrics {
    pub fn flow_mut(&mut self, key: FlowKey) -> &mut FlowStats {
        self.flows.entry(key).or_default()
    }

    pub fn link_mut(&mut self, key: FlowKey) -> &mut LinkStats {
        self.links.entry(key).or_default()
    }
}

/// One finalized flow line of the summary.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSummary {
    pub key: FlowKey,
    pub sent: u64,
    pub delivered: u64,
    pub delivered_bytes: u64,
    pub throughput_mbps: f64,
    /// Mean one-way latency; absent when nothing was delivered.
    pub mean_latency_ms: Option<f64>,
}

/// One finalized radio-link line of the summary.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkSummary {
    pub key: FlowKey,
    pub records: u64,
    pub corrupt: u64,
    pub mean_sinr_db: f64,
    pub mean_mcs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub duration: SimTime,
    pub flows: Vec<FlowSummary>,
    pub links: Vec<LinkSummary>,
    pub counters: Counters,
}

/// Folds raw measurements into the summary: throughput is delivered bytes
/// over the run duration, latency the mean over delivered packets.
pub fn finalize_metrics(raw: &RunMetrics, duration: SimTime) -> Summary {
    let secs = duration.as_secs_f64();
    let flows = raw
        .flows
        .iter()
        .map(|(&key, f)| FlowSummary {
            key,
            sent: f.sent,
            delivered: f.delivered,
            delivered_bytes: f.delivered_bytes,
            throughput_mbps: if secs > 0.0 {
                f.delivered_bytes as f64 * 8.0 / secs / 1e6
            } else {
                0.0
            },
            mean_latency_ms: if f.delivered > 0 {
                Some(f.latency_sum_ns as f64 / f.delivered as f64 / 1e6)
            } else {
                None
            },
        })
        .collect();
    let links = raw
        .links
        .iter()
        .map(|(&key, l)| LinkSummary {
            key,
            records: l.records,
            corrupt: l.corrupt,
            mean_sinr_db: if l.records > 0 {
                l.sinr_db_sum / l.records as f64
            } else {
                f64::NAN
            },
            mean_mcs: if l.records > 0 {
                l.mcs_sum as f64 / l.records as f64
            } else {
                f64::NAN
            },
        })
        .collect();
    Summary {
        duration,
        flows,
        links,
        counters: raw.counters,
    }
}
