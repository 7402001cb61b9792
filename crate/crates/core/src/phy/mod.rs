//! Sidelink PHY: NR frame timing, transport blocks on the shared spectrum,
//! interference-aware SINR, the error model and CSI generation.

pub mod mcs;

pub use mcs::{McsEntry, McsTable, MCS_MAX};

use crate::sim::{RandomStream, SimTime};

pub const SYMBOLS_PER_SLOT: u32 = 14;
pub const SUBFRAME_NS: u64 = 1_000_000;
pub const FRAME_NS: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PhyError {
    #[error("numerology must be 2 or 3, got {0}")]
    BadNumerology(u8),
    #[error("bandwidth must contain at least one resource block")]
    BandwidthTooSmall,
    #[error("device {0} already transmitting in [{1}, {2})")]
    OverlappingTransmission(u32, SimTime, SimTime),
}

/// Numerology-derived timing and frequency grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameConfig {
    numerology: u8,
    scs_khz: u32,
    slots_per_subframe: u32,
    bandwidth_hz: f64,
    n_rb: u32,
}

impl FrameConfig {
    pub fn new(numerology: u8, bandwidth_hz: f64) -> Result<Self, PhyError> {
        let (scs_khz, slots_per_subframe) = match numerology {
            2 => (60, 4),
            3 => (120, 8),
            other => return Err(PhyError::BadNumerology(other)),
        };
        let n_rb = (bandwidth_hz / (12.0 * scs_khz as f64 * 1e3)).floor();
        if n_rb.is_nan() || n_rb < 1.0 {
            return Err(PhyError::BandwidthTooSmall);
        }
        Ok(FrameConfig {
            numerology,
            scs_khz,
            slots_per_subframe,
            bandwidth_hz,
            n_rb: n_rb as u32,
        })
    }

    pub fn numerology(&self) -> u8 {
        self.numerology
    }

    pub fn scs_khz(&self) -> u32 {
        self.scs_khz
    }

    pub fn slots_per_subframe(&self) -> u32 {
        self.slots_per_subframe
    }

    pub fn bandwidth_hz(&self) -> f64 {
        self.bandwidth_hz
    }

    pub fn n_rb(&self) -> u32 {
        self.n_rb
    }

    /// Exact slot duration: 250 000 ns (numerology 2) or 125 000 ns (3).
    pub fn slot_ns(&self) -> u64 {
        SUBFRAME_NS / u64::from(self.slots_per_subframe)
    }

    pub fn slot_start(&self, slot_index: u64) -> SimTime {
        SimTime::from_ns(slot_index * self.slot_ns())
    }

    pub fn slot_index_at(&self, t: SimTime) -> u64 {
        t.as_ns() / self.slot_ns()
    }

    pub fn slot_in_subframe(&self, slot_index: u64) -> u32 {
        (slot_index % u64::from(self.slots_per_subframe)) as u32
    }

    /// Offset of symbol boundary `k` (0..=14) inside a slot, by proportional
    /// integer rounding; boundary 14 lands exactly on the next slot edge.
    pub fn symbol_offset_ns(&self, k: u32) -> u64 {
        debug_assert!(k <= SYMBOLS_PER_SLOT);
        (u64::from(k) * self.slot_ns() + u64::from(SYMBOLS_PER_SLOT) / 2)
            / u64::from(SYMBOLS_PER_SLOT)
    }
}

/// Transport-block sizing: usable payload bytes for a symbol allocation at a
/// given MCS. `overhead` is the fraction of resource elements reserved for
/// reference signals and control inside the allocation.
pub fn tbs_bytes(
    cfg: &FrameConfig,
    table: &McsTable,
    mcs: u8,
    symbol_count: u32,
    overhead: f64,
) -> usize {
    let e = table.entry(mcs);
    let re = symbol_count as f64 * cfg.n_rb as f64 * 12.0;
    let bits = re * f64::from(e.modulation_bits) * e.code_rate * (1.0 - overhead);
    (bits / 8.0).floor() as usize
}

/// MAC payload travelling through the PHY in one grant.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportBlock {
    pub payload: Vec<u8>,
    pub mcs: u8,
    pub symbol_offset: u32,
    pub symbol_count: u32,
    pub tbs_bytes: usize,
    pub tx_rnti: u32,
    pub rx_rnti: u32,
}

/// A transmission registered on the shared spectrum.
#[derive(Debug, Clone)]
pub struct SpectrumSignal {
    pub id: u64,
    pub tx_rnti: u32,
    /// Flat PSD over the whole grid, dBm per resource block.
    pub psd_dbm_per_rb: f64,
    pub start: SimTime,
    pub end: SimTime,
    pub tb: TransportBlock,
}

/// Per-channel registry of in-flight and recently ended signals. Every
/// receiver attached to the channel sees every signal, including those of
/// other groups.
#[derive(Debug, Default)]
pub struct Spectrum {
    signals: Vec<SpectrumSignal>,
    next_id: u64,
}

impl Spectrum {
    pub fn new() -> Self {
        Spectrum::default()
    }

    /// Registers a transmission. Overlapping transmissions by the same
    /// device are rejected.
    pub fn start_tx(
        &mut self,
        cfg: &FrameConfig,
        tx_rnti: u32,
        tx_power_dbm: f64,
        start: SimTime,
        tb: TransportBlock,
    ) -> Result<u64, PhyError> {
        let dur_ns = cfg.symbol_offset_ns(tb.symbol_offset + tb.symbol_count)
            - cfg.symbol_offset_ns(tb.symbol_offset);
        let slot_base = start;
        let sig_start =
            SimTime::from_ns(slot_base.as_ns() + cfg.symbol_offset_ns(tb.symbol_offset));
        let sig_end = SimTime::from_ns(sig_start.as_ns() + dur_ns);
        for s in &self.signals {
            if s.tx_rnti == tx_rnti && s.start < sig_end && sig_start < s.end {
                return Err(PhyError::OverlappingTransmission(tx_rnti, s.start, s.end));
            }
        }
        let id = self.next_id;
        self.next_id += 1;
        self.signals.push(SpectrumSignal {
            id,
            tx_rnti,
            psd_dbm_per_rb: tx_power_dbm - 10.0 * (cfg.n_rb as f64).log10(),
            start: sig_start,
            end: sig_end,
            tb,
        });
        Ok(id)
    }

    pub fn get(&self, id: u64) -> Option<&SpectrumSignal> {
        self.signals.iter().find(|s| s.id == id)
    }

    /// Signals overlapping `[start, end)` other than `exclude`.
    pub fn overlapping(
        &self,
        start: SimTime,
        end: SimTime,
        exclude: u64,
    ) -> impl Iterator<Item = &SpectrumSignal> {
        self.signals
            .iter()
            .filter(move |s| s.id != exclude && s.start < end && start < s.end)
    }

    /// Drops signals that ended before `horizon`.
    pub fn prune(&mut self, horizon: SimTime) {
        self.signals.retain(|s| s.end >= horizon);
    }

    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }
}

/// An interfering contribution overlapping the target block.
#[derive(Debug, Clone, Copy)]
pub struct Interferer {
    pub start: SimTime,
    pub end: SimTime,
    pub power_mw: f64,
}

pub fn db_to_lin_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn lin_mw_to_db(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Time-weighted SINR (dB) of a signal received with power `signal_mw` over
/// `[start, end)`, against `noise_mw` plus the given interferers.
///
/// The interval is partitioned at every interferer start/end boundary; the
/// per-segment linear SINR values are averaged weighted by segment duration.
pub fn sinr_db(
    start: SimTime,
    end: SimTime,
    signal_mw: f64,
    noise_mw: f64,
    interferers: &[Interferer],
) -> f64 {
    let total_ns = end.as_ns().saturating_sub(start.as_ns());
    if total_ns == 0 {
        return lin_mw_to_db(signal_mw / noise_mw);
    }
    let mut boundaries: Vec<u64> = vec![start.as_ns(), end.as_ns()];
    for i in interferers {
        for t in [i.start.as_ns(), i.end.as_ns()] {
            if t > start.as_ns() && t < end.as_ns() {
                boundaries.push(t);
            }
        }
    }
    boundaries.sort_unstable();
    boundaries.dedup();

    let mut weighted = 0.0;
    for w in boundaries.windows(2) {
        let (seg_start, seg_end) = (w[0], w[1]);
        let mid = seg_start + (seg_end - seg_start) / 2;
        let interference: f64 = interferers
            .iter()
            .filter(|i| i.start.as_ns() <= mid && mid < i.end.as_ns())
            .map(|i| i.power_mw)
            .sum();
        let sinr = signal_mw / (noise_mw + interference);
        weighted += sinr * (seg_end - seg_start) as f64;
    }
    lin_mw_to_db(weighted / total_ns as f64)
}

/// Outcome of the error model for one transport block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeOutcome {
    Delivered,
    Corrupt,
}

/// Applies the logistic error model: the block is corrupt when a uniform
/// draw falls below BLER(mcs, sinr).
pub fn decode(
    table: &McsTable,
    mcs: u8,
    sinr_db: f64,
    stream: &mut RandomStream,
) -> DecodeOutcome {
    if stream.uniform() < table.bler(mcs, sinr_db) {
        DecodeOutcome::Corrupt
    } else {
        DecodeOutcome::Delivered
    }
}

/// Periodic wideband CSI report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsiReport {
    pub wideband_sinr_db: f64,
    pub timestamp: SimTime,
}

/// Accumulates per-block SINR measurements between reporting instants.
#[derive(Debug, Clone, Default)]
pub struct CsiAccumulator {
    sum_lin: f64,
    count: u32,
    last: Option<CsiReport>,
}

impl CsiAccumulator {
    pub fn record(&mut self, sinr_db: f64) {
        self.sum_lin += db_to_lin_mw(sinr_db);
        self.count += 1;
    }

    /// Produces the report for the window ending at `now`: the linear
    /// average of the measurements seen since the previous tick. With no new
    /// measurement the previous report is repeated, timestamp unchanged;
    /// before any measurement ever, no report is emitted.
    pub fn tick(&mut self, now: SimTime) -> Option<CsiReport> {
        if self.count > 0 {
            let report = CsiReport {
                wideband_sinr_db: lin_mw_to_db(self.sum_lin / f64::from(self.count)),
                timestamp: now,
            };
            self.sum_lin = 0.0;
            self.count = 0;
            self.last = Some(report);
            Some(report)
        } else {
            self.last
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() < tol, "{a} != {b} (tol {tol})");
    }

    fn tb(symbol_offset: u32, symbol_count: u32) -> TransportBlock {
        TransportBlock {
            payload: vec![0; 8],
            mcs: 5,
            symbol_offset,
            symbol_count,
            tbs_bytes: 64,
            tx_rnti: 1,
            rx_rnti: 2,
        }
    }

    #[test]
    fn numerology_grid() {
        let n2 = FrameConfig::new(2, 100e6).unwrap();
        assert_eq!(n2.scs_khz(), 60);
        assert_eq!(n2.slots_per_subframe(), 4);
        assert_eq!(n2.slot_ns(), 250_000);
        assert_eq!(n2.n_rb(), 138);
        let n3 = FrameConfig::new(3, 400e6).unwrap();
        assert_eq!(n3.scs_khz(), 120);
        assert_eq!(n3.slots_per_subframe(), 8);
        assert_eq!(n3.slot_ns(), 125_000);
        assert_eq!(n3.n_rb(), 277);
        assert!(FrameConfig::new(5, 100e6).is_err());
        assert!(FrameConfig::new(2, 100.0).is_err());
    }

    #[test]
    fn slots_tile_the_subframe_exactly() {
        for numerology in [2u8, 3] {
            let cfg = FrameConfig::new(numerology, 100e6).unwrap();
            assert_eq!(u64::from(cfg.slots_per_subframe()) * cfg.slot_ns(), SUBFRAME_NS);
            assert_eq!(cfg.symbol_offset_ns(SYMBOLS_PER_SLOT), cfg.slot_ns());
            assert_eq!(cfg.symbol_offset_ns(0), 0);
            let mut prev = 0;
            for k in 1..=SYMBOLS_PER_SLOT {
                let b = cfg.symbol_offset_ns(k);
                assert!(b > prev);
                prev = b;
            }
        }
    }

    #[test]
    fn twelve_symbols_duration_rounds_proportionally() {
        let cfg = FrameConfig::new(2, 100e6).unwrap();
        assert_eq!(cfg.symbol_offset_ns(12), 214_286);
    }

    #[test]
    fn tbs_example_values() {
        // 14 symbols x 1 RB x 12 subcarriers x 2 bits x rate 0.5, no overhead
        // = 21 bytes. Use a 1-RB grid: 60 kHz SCS -> 720 kHz per RB.
        let cfg = FrameConfig::new(2, 0.8e6).unwrap();
        assert_eq!(cfg.n_rb(), 1);
        let entries: Vec<McsEntry> = (0..=MCS_MAX)
            .map(|m| McsEntry {
                modulation_bits: 2,
                code_rate: 0.5,
                threshold_db: f64::from(m),
                width_db: 0.5,
            })
            .collect();
        let table = McsTable::from_entries(entries).unwrap();
        assert_eq!(tbs_bytes(&cfg, &table, 0, 14, 0.0), 21);
        assert_eq!(tbs_bytes(&cfg, &table, 0, 0, 0.0), 0);
    }

    #[test]
    fn tbs_monotone_in_mcs_symbols_and_rb() {
        let table = McsTable::default_table();
        for bw in [20e6, 100e6, 400e6] {
            let cfg = FrameConfig::new(2, bw).unwrap();
            for sym in [1u32, 6, 12, 14] {
                for mcs in 0..MCS_MAX {
                    assert!(
                        tbs_bytes(&cfg, &table, mcs + 1, sym, 0.14)
                            >= tbs_bytes(&cfg, &table, mcs, sym, 0.14)
                    );
                }
            }
            for sym in 1..SYMBOLS_PER_SLOT {
                assert!(
                    tbs_bytes(&cfg, &table, 10, sym + 1, 0.14)
                        >= tbs_bytes(&cfg, &table, 10, sym, 0.14)
                );
            }
        }
        let small = FrameConfig::new(2, 50e6).unwrap();
        let large = FrameConfig::new(2, 100e6).unwrap();
        assert!(tbs_bytes(&large, &table, 10, 12, 0.14) >= tbs_bytes(&small, &table, 10, 12, 0.14));
    }

    #[test]
    fn same_device_overlap_rejected() {
        let cfg = FrameConfig::new(2, 100e6).unwrap();
        let mut spectrum = Spectrum::new();
        spectrum
            .start_tx(&cfg, 1, 30.0, SimTime::ZERO, tb(0, 14))
            .unwrap();
        let err = spectrum
            .start_tx(&cfg, 1, 30.0, SimTime::ZERO, tb(6, 4))
            .unwrap_err();
        assert!(matches!(err, PhyError::OverlappingTransmission(1, _, _)));
        // Different device, same interval: fine.
        spectrum
            .start_tx(&cfg, 2, 30.0, SimTime::ZERO, tb(0, 14))
            .unwrap();
        // Same device, disjoint symbols: fine.
        let mut spectrum = Spectrum::new();
        spectrum
            .start_tx(&cfg, 1, 30.0, SimTime::ZERO, tb(0, 6))
            .unwrap();
        spectrum
            .start_tx(&cfg, 1, 30.0, SimTime::ZERO, tb(6, 6))
            .unwrap();
    }

    #[test]
    fn signal_duration_follows_symbol_allocation() {
        let cfg = FrameConfig::new(2, 100e6).unwrap();
        let mut spectrum = Spectrum::new();
        let id = spectrum
            .start_tx(&cfg, 1, 30.0, SimTime::from_millis(1), tb(2, 12))
            .unwrap();
        let sig = spectrum.get(id).unwrap();
        assert_eq!(sig.start.as_ns(), 1_000_000 + cfg.symbol_offset_ns(2));
        assert_eq!(sig.end.as_ns(), 1_000_000 + cfg.symbol_offset_ns(14));
    }

    #[test]
    fn sinr_without_interference_is_snr() {
        let s = db_to_lin_mw(-59.30);
        let n = db_to_lin_mw(-89.0);
        let v = sinr_db(SimTime::ZERO, SimTime::from_micros(250), s, n, &[]);
        approx(v, 29.70, 1e-9);
    }

    #[test]
    fn interferer_equal_to_signal_caps_sinr_below_zero() {
        let s = db_to_lin_mw(-60.0);
        let n = db_to_lin_mw(-89.0);
        let i = Interferer {
            start: SimTime::ZERO,
            end: SimTime::from_micros(250),
            power_mw: s,
        };
        let v = sinr_db(SimTime::ZERO, SimTime::from_micros(250), s, n, &[i]);
        assert!(v < 0.0);
    }

    #[test]
    fn half_overlap_averages_partial_sinrs() {
        let s = 1.0;
        let n = 0.001;
        let i = Interferer {
            start: SimTime::ZERO,
            end: SimTime::from_micros(125),
            power_mw: 1.0,
        };
        let v = sinr_db(SimTime::ZERO, SimTime::from_micros(250), s, n, &[i]);
        let expected = 0.5 * (s / (n + 1.0)) + 0.5 * (s / n);
        approx(v, lin_mw_to_db(expected), 1e-9);
    }

    #[test]
    fn segment_accumulation_matches_per_ns_oracle() {
        // Randomized overlap patterns against brute-force per-nanosecond
        // integration.
        let mut stream = RandomStream::new(99, 1);
        for _ in 0..50 {
            let start = 1_000 + (stream.uniform() * 1000.0) as u64;
            let end = start + 5_000 + (stream.uniform() * 20_000.0) as u64;
            let n = db_to_lin_mw(-89.0);
            let s = db_to_lin_mw(-60.0 - stream.uniform() * 20.0);
            let mut interferers = Vec::new();
            for _ in 0..(1 + (stream.uniform() * 4.0) as usize) {
                let a = start.saturating_sub(2_000) + (stream.uniform() * 25_000.0) as u64;
                let b = a + 1 + (stream.uniform() * 10_000.0) as u64;
                interferers.push(Interferer {
                    start: SimTime::from_ns(a),
                    end: SimTime::from_ns(b),
                    power_mw: db_to_lin_mw(-55.0 - stream.uniform() * 30.0),
                });
            }
            let fast = sinr_db(
                SimTime::from_ns(start),
                SimTime::from_ns(end),
                s,
                n,
                &interferers,
            );
            let mut acc = 0.0;
            for t in start..end {
                let i: f64 = interferers
                    .iter()
                    .filter(|x| x.start.as_ns() <= t && t < x.end.as_ns())
                    .map(|x| x.power_mw)
                    .sum();
                acc += s / (n + i);
            }
            let oracle = lin_mw_to_db(acc / (end - start) as f64);
            assert!(
                (fast - oracle).abs() / oracle.abs() < 1e-9,
                "fast {fast} oracle {oracle}"
            );
        }
    }

    #[test]
    fn sinr_never_exceeds_snr() {
        let mut stream = RandomStream::new(7, 2);
        for _ in 0..200 {
            let s = db_to_lin_mw(-70.0 + stream.uniform() * 20.0);
            let n = db_to_lin_mw(-89.0);
            let snr = lin_mw_to_db(s / n);
            let interferers: Vec<Interferer> = (0..(stream.uniform() * 3.0) as usize)
                .map(|_| Interferer {
                    start: SimTime::ZERO,
                    end: SimTime::from_ns(1 + (stream.uniform() * 250_000.0) as u64),
                    power_mw: db_to_lin_mw(-90.0 + stream.uniform() * 30.0),
                })
                .collect();
            let v = sinr_db(
                SimTime::ZERO,
                SimTime::from_micros(250),
                s,
                n,
                &interferers,
            );
            if interferers.is_empty() {
                approx(v, snr, 1e-12);
            } else {
                assert!(v <= snr + 1e-12);
            }
        }
    }

    #[test]
    fn decode_fraction_at_threshold_is_half() {
        let table = McsTable::default_table();
        let thr = table.entry(10).threshold_db;
        let mut stream = RandomStream::new(21, 0);
        let n = 10_000;
        let corrupt = (0..n)
            .filter(|_| decode(&table, 10, thr, &mut stream) == DecodeOutcome::Corrupt)
            .count() as f64;
        approx(corrupt / n as f64, 0.5, 0.02);
    }

    #[test]
    fn decode_deterministic_for_seed() {
        let table = McsTable::default_table();
        let run = || {
            let mut stream = RandomStream::new(5, 9);
            (0..100)
                .map(|_| decode(&table, 3, -1.0, &mut stream))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn csi_single_measurement_reports_itself() {
        let mut acc = CsiAccumulator::default();
        acc.record(20.0);
        let r = acc.tick(SimTime::from_millis(1)).unwrap();
        assert!((r.wideband_sinr_db - 20.0).abs() < 1e-9);
        assert_eq!(r.timestamp, SimTime::from_millis(1));
    }

    #[test]
    fn csi_linear_average() {
        let mut acc = CsiAccumulator::default();
        acc.record(10.0);
        acc.record(20.0);
        let r = acc.tick(SimTime::from_millis(1)).unwrap();
        approx(r.wideband_sinr_db, 17.4036268949, 1e-9);
    }

    #[test]
    fn csi_cold_start_and_stale_repeat() {
        let mut acc = CsiAccumulator::default();
        assert!(acc.tick(SimTime::from_millis(1)).is_none());
        acc.record(15.0);
        let first = acc.tick(SimTime::from_millis(2)).unwrap();
        let repeat = acc.tick(SimTime::from_millis(3)).unwrap();
        assert_eq!(repeat.timestamp, first.timestamp);
        assert_eq!(repeat.wideband_sinr_db, first.wideband_sinr_db);
    }
}
