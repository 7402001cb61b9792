//! TDMA medium access: per-subframe slot ownership, resource division among
//! logical channels, transport-block assembly and de-multiplexing, and link
//! adaptation.

use std::collections::BTreeMap;
use std::collections::VecDeque;

use crate::phy::{CsiReport, McsTable, MCS_MAX};
use crate::sim::SimTime;

/// Per-SDU MAC subheader: 1-byte lcid + 2-byte length.
pub const MAC_SUBHEADER_BYTES: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MacError {
    #[error("slot {0} already owned by rnti {1}")]
    SlotCollision(u32, u32),
    #[error("slot index {0} outside subframe of {1} slots")]
    SlotOutOfRange(u32, u32),
    #[error("malformed MAC subheader at offset {0}")]
    MalformedSubheader(usize),
}

/// Whether a device transmits or receives in a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotRole {
    Transmit,
    Receive,
}

/// Fixed per-subframe scheduling pattern of one group: slot index -> owner.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SlotPattern {
    owners: BTreeMap<u32, u32>,
}

impl SlotPattern {
    /// Default pattern: group member `k` owns slot `k % slots_per_subframe`.
    /// Groups larger than the subframe would collide and are rejected.
    pub fn default_for(members: &[u32], slots_per_subframe: u32) -> Result<Self, MacError> {
        let mut pattern = SlotPattern::default();
        for (k, &rnti) in members.iter().enumerate() {
            pattern.assign(k as u32 % slots_per_subframe, rnti, slots_per_subframe)?;
        }
        Ok(pattern)
    }

    pub fn assign(
        &mut self,
        slot: u32,
        owner: u32,
        slots_per_subframe: u32,
    ) -> Result<(), MacError> {
        if slot >= slots_per_subframe {
            return Err(MacError::SlotOutOfRange(slot, slots_per_subframe));
        }
        if let Some(&existing) = self.owners.get(&slot) {
            return Err(MacError::SlotCollision(slot, existing));
        }
        self.owners.insert(slot, owner);
        Ok(())
    }

    pub fn owner(&self, slot_in_subframe: u32) -> Option<u32> {
        self.owners.get(&slot_in_subframe).copied()
    }

    pub fn slots_of(&self, rnti: u32) -> impl Iterator<Item = u32> + '_ {
        self.owners
            .iter()
            .filter(move |(_, &o)| o == rnti)
            .map(|(&s, _)| s)
    }

    /// Transmit iff the pattern assigns this slot to `rnti`, receive otherwise.
    pub fn slot_indication(&self, slot_in_subframe: u32, rnti: u32) -> SlotRole {
        if self.owner(slot_in_subframe) == Some(rnti) {
            SlotRole::Transmit
        } else {
            SlotRole::Receive
        }
    }
}

/// Queued bytes per logical channel at report time.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BufferStatusReport {
    pub per_lcid: BTreeMap<u8, usize>,
    pub timestamp: SimTime,
}

impl BufferStatusReport {
    pub fn queued(&self, lcid: u8) -> usize {
        self.per_lcid.get(&lcid).copied().unwrap_or(0)
    }
}

/// Link-adaptation state for one peer.
#[derive(Debug, Clone)]
pub struct AmcState {
    pub last_csi: Option<CsiReport>,
    pub target_bler: f64,
    pub fixed_mcs: Option<u8>,
    pub default_mcs: u8,
}

impl Default for AmcState {
    fn default() -> Self {
        AmcState {
            last_csi: None,
            target_bler: 0.1,
            fixed_mcs: None,
            default_mcs: 0,
        }
    }
}

impl AmcState {
    /// Highest MCS whose BLER at the last reported SINR stays within the
    /// target; MCS 0 if none qualifies, the configured default before any
    /// CSI arrives, and the fixed override when set.
    pub fn select_mcs(&self, table: &McsTable) -> u8 {
        if let Some(fixed) = self.fixed_mcs {
            return fixed.min(MCS_MAX);
        }
        let Some(csi) = self.last_csi else {
            return self.default_mcs.min(MCS_MAX);
        };
        for mcs in (0..=MCS_MAX).rev() {
            if table.bler(mcs, csi.wideband_sinr_db) <= self.target_bler {
                return mcs;
            }
        }
        0
    }
}

/// One scheduling decision: symbols and bytes granted to a logical channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grant {
    pub lcid: u8,
    pub symbols: u32,
    pub bytes: usize,
}

/// Divides `available_symbols` among the logical channels with queued data,
/// proportionally to their buffer status, remainder symbols to lower lcids
/// first. Channels with empty queues receive nothing.
pub fn schedule_resources(
    available_symbols: u32,
    bsr: &BufferStatusReport,
    tbs_for: impl Fn(u8, u32) -> usize,
) -> Vec<Grant> {
    let active: Vec<(u8, usize)> = bsr
        .per_lcid
        .iter()
        .filter(|(_, &q)| q > 0)
        .map(|(&l, &q)| (l, q))
        .collect();
    if active.is_empty() || available_symbols == 0 {
        return Vec::new();
    }
    let total: usize = active.iter().map(|(_, q)| q).sum();
    let mut shares: Vec<(u8, u32)> = active
        .iter()
        .map(|&(lcid, q)| {
            let exact = available_symbols as u64 * q as u64 / total as u64;
            (lcid, exact as u32)
        })
        .collect();
    let assigned: u32 = shares.iter().map(|(_, s)| s).sum();
    let mut remainder = available_symbols - assigned;
    for (_, share) in shares.iter_mut() {
        if remainder == 0 {
            break;
        }
        *share += 1;
        remainder -= 1;
    }
    shares
        .into_iter()
        .filter(|&(_, symbols)| symbols > 0)
        .map(|(lcid, symbols)| Grant {
            lcid,
            symbols,
            bytes: tbs_for(lcid, symbols),
        })
        .collect()
}

/// Source of MAC SDUs for one logical channel. The device path backs this
/// with the RLC entity (which segments); the plain FIFO queue packs whole
/// SDUs only.
pub trait SduSource {
    fn queued_bytes(&self) -> usize;
    /// Hands out the next SDU with at most `max_bytes`, or nothing if the
    /// head cannot be served within that budget.
    fn pull(&mut self, max_bytes: usize) -> Option<Vec<u8>>;
}

/// FIFO queue of discrete MAC SDUs; SDUs are never split here.
#[derive(Debug, Default)]
pub struct FifoSduQueue {
    queue: VecDeque<Vec<u8>>,
    starved: u64,
}

impl FifoSduQueue {
    pub fn push(&mut self, sdu: Vec<u8>) {
        self.queue.push_back(sdu);
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// SDUs that can never fit a transport block of `max_tb_bytes`.
    pub fn note_starvation(&mut self, max_tb_bytes: usize) {
        if let Some(front) = self.queue.front() {
            if front.len() + MAC_SUBHEADER_BYTES > max_tb_bytes {
                self.starved += 1;
            }
        }
    }

    pub fn starved(&self) -> u64 {
        self.starved
    }
}

impl SduSource for FifoSduQueue {
    fn queued_bytes(&self) -> usize {
        self.queue.iter().map(Vec::len).sum()
    }

    fn pull(&mut self, max_bytes: usize) -> Option<Vec<u8>> {
        if self.queue.front()?.len() <= max_bytes {
            self.queue.pop_front()
        } else {
            None
        }
    }
}

/// Packs SDUs from `source` into a transport-block payload of at most
/// `grant_bytes`, each prefixed with a MAC subheader carrying `lcid`.
/// Returns the payload and the number of SDUs packed. SDUs travel whole or
/// not at all; segmentation is the RLC's job behind `source`.
pub fn build_tb_payload_for(
    lcid: u8,
    grant_bytes: usize,
    source: &mut impl SduSource,
) -> (Vec<u8>, usize) {
    let mut payload = Vec::new();
    let mut packed = 0;
    while payload.len() + MAC_SUBHEADER_BYTES < grant_bytes {
        let room = grant_bytes - payload.len() - MAC_SUBHEADER_BYTES;
        let Some(sdu) = source.pull(room.min(u16::MAX as usize)) else {
            break;
        };
        debug_assert!(sdu.len() <= room);
        payload.push(lcid);
        payload.extend_from_slice(&(sdu.len() as u16).to_be_bytes());
        payload.extend_from_slice(&sdu);
        packed += 1;
    }
    (payload, packed)
}

/// Inverse of the packer: splits a received payload into (lcid, SDU) pairs.
pub fn demux(payload: &[u8]) -> Result<Vec<(u8, Vec<u8>)>, MacError> {
    let mut out = Vec::new();
    let mut off = 0;
    while off < payload.len() {
        if payload.len() - off < MAC_SUBHEADER_BYTES {
            return Err(MacError::MalformedSubheader(off));
        }
        let lcid = payload[off];
        let len = u16::from_be_bytes([payload[off + 1], payload[off + 2]]) as usize;
        off += MAC_SUBHEADER_BYTES;
        if payload.len() - off < len {
            return Err(MacError::MalformedSubheader(off));
        }
        out.push((lcid, payload[off..off + len].to_vec()));
        off += len;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_pattern_single_slot_each() {
        let p = SlotPattern::default_for(&[10, 11], 4).unwrap();
        assert_eq!(p.owner(0), Some(10));
        assert_eq!(p.owner(1), Some(11));
        assert_eq!(p.owner(2), None);
        assert_eq!(p.slot_indication(0, 10), SlotRole::Transmit);
        assert_eq!(p.slot_indication(1, 10), SlotRole::Receive);
        assert_eq!(p.slot_indication(3, 99), SlotRole::Receive);
    }

    #[test]
    fn custom_pattern_two_slots_one_vehicle() {
        let mut p = SlotPattern::default();
        p.assign(0, 7, 4).unwrap();
        p.assign(2, 7, 4).unwrap();
        p.assign(1, 8, 4).unwrap();
        assert_eq!(p.slots_of(7).collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn pattern_collision_rejected() {
        let mut p = SlotPattern::default();
        p.assign(0, 7, 4).unwrap();
        assert_eq!(p.assign(0, 8, 4), Err(MacError::SlotCollision(0, 7)));
        assert_eq!(p.assign(4, 8, 4), Err(MacError::SlotOutOfRange(4, 4)));
    }

    #[test]
    fn oversized_default_group_rejected() {
        assert!(SlotPattern::default_for(&[1, 2, 3, 4, 5], 4).is_err());
    }

    fn flat_tbs(bytes_per_symbol: usize) -> impl Fn(u8, u32) -> usize {
        move |_, symbols| symbols as usize * bytes_per_symbol
    }

    #[test]
    fn single_active_lcid_gets_all_symbols() {
        let mut bsr = BufferStatusReport::default();
        bsr.per_lcid.insert(1, 500);
        let grants = schedule_resources(12, &bsr, flat_tbs(100));
        assert_eq!(grants, vec![Grant { lcid: 1, symbols: 12, bytes: 1200 }]);
    }

    #[test]
    fn proportional_split_three_to_one() {
        let mut bsr = BufferStatusReport::default();
        bsr.per_lcid.insert(1, 3000);
        bsr.per_lcid.insert(2, 1000);
        let grants = schedule_resources(12, &bsr, flat_tbs(10));
        assert_eq!(
            grants,
            vec![
                Grant { lcid: 1, symbols: 9, bytes: 90 },
                Grant { lcid: 2, symbols: 3, bytes: 30 }
            ]
        );
    }

    #[test]
    fn remainder_goes_to_ascending_lcids() {
        let mut bsr = BufferStatusReport::default();
        bsr.per_lcid.insert(1, 100);
        bsr.per_lcid.insert(2, 100);
        bsr.per_lcid.insert(3, 100);
        // 3 x floor(14/3)=4 assigned, remainder 2 to lcids 1 and 2
        let grants = schedule_resources(14, &bsr, flat_tbs(1));
        let symbols: Vec<u32> = grants.iter().map(|g| g.symbols).collect();
        assert_eq!(symbols, vec![5, 5, 4]);
    }

    #[test]
    fn empty_queues_get_nothing() {
        let mut bsr = BufferStatusReport::default();
        bsr.per_lcid.insert(1, 0);
        bsr.per_lcid.insert(2, 0);
        assert!(schedule_resources(12, &bsr, flat_tbs(10)).is_empty());
        let mut bsr = BufferStatusReport::default();
        bsr.per_lcid.insert(1, 0);
        bsr.per_lcid.insert(2, 77);
        let grants = schedule_resources(12, &bsr, flat_tbs(10));
        assert_eq!(grants.len(), 1);
        assert_eq!(grants[0].lcid, 2);
    }

    #[test]
    fn build_packs_one_sdu_with_subheader() {
        let mut q = FifoSduQueue::default();
        q.push(vec![0xAB; 100]);
        let (payload, packed) = build_tb_payload_for(4, 200, &mut q);
        assert_eq!(packed, 1);
        assert_eq!(payload.len(), 103);
        assert_eq!(payload[0], 4);
        assert_eq!(u16::from_be_bytes([payload[1], payload[2]]), 100);
    }

    #[test]
    fn build_leaves_sdu_that_does_not_fit() {
        let mut q = FifoSduQueue::default();
        q.push(vec![1; 100]);
        q.push(vec![2; 50]);
        // 103 + 53 > 140: only the first fits
        let (payload, packed) = build_tb_payload_for(1, 140, &mut q);
        assert_eq!(packed, 1);
        assert_eq!(payload.len(), 103);
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn build_from_empty_queue_yields_no_tb() {
        let mut q = FifoSduQueue::default();
        let (payload, packed) = build_tb_payload_for(1, 500, &mut q);
        assert!(payload.is_empty());
        assert_eq!(packed, 0);
    }

    #[test]
    fn starvation_counted_for_oversized_sdu() {
        let mut q = FifoSduQueue::default();
        q.push(vec![0; 5000]);
        let (payload, _) = build_tb_payload_for(1, 400, &mut q);
        assert!(payload.is_empty());
        q.note_starvation(1000); // even a full TB cannot carry it
        assert_eq!(q.starved(), 1);
        q.note_starvation(6000); // would fit a fuller grant: not starved
        assert_eq!(q.starved(), 1);
    }

    #[test]
    fn demux_inverts_build() {
        let mut q = FifoSduQueue::default();
        let sdus = vec![vec![1u8; 10], vec![2u8; 333], vec![3u8; 1]];
        for s in &sdus {
            q.push(s.clone());
        }
        let (payload, packed) = build_tb_payload_for(9, 4096, &mut q);
        assert_eq!(packed, 3);
        let out = demux(&payload).unwrap();
        assert_eq!(out.len(), 3);
        for ((lcid, sdu), expected) in out.iter().zip(&sdus) {
            assert_eq!(*lcid, 9);
            assert_eq!(sdu, expected);
        }
    }

    #[test]
    fn demux_empty_payload_is_empty_list() {
        assert_eq!(demux(&[]).unwrap(), vec![]);
    }

    #[test]
    fn demux_rejects_malformed_subheader() {
        assert!(demux(&[1, 0]).is_err());
        assert!(demux(&[1, 0, 10, 0xFF]).is_err()); // declared 10, only 1 byte
    }

    fn amc_with_csi(sinr_db: f64) -> AmcState {
        AmcState {
            last_csi: Some(CsiReport {
                wideband_sinr_db: sinr_db,
                timestamp: SimTime::ZERO,
            }),
            ..AmcState::default()
        }
    }

    #[test]
    fn select_mcs_saturates() {
        let table = McsTable::default_table();
        assert_eq!(amc_with_csi(60.0).select_mcs(&table), 28);
        assert_eq!(amc_with_csi(-60.0).select_mcs(&table), 0);
    }

    #[test]
    fn select_mcs_logistic_inversion_boundary() {
        // BLER(mcs, thr + width*ln(9)) = 1/(1+9) = 0.1, exactly on target:
        // mcs 10 qualifies and nothing above it does.
        let table = McsTable::default_table();
        let e = table.entry(10);
        let csi = e.threshold_db + e.width_db * 9f64.ln();
        assert!((table.bler(10, csi) - 0.1).abs() < 1e-12);
        assert_eq!(amc_with_csi(csi).select_mcs(&table), 10);
    }

    #[test]
    fn select_mcs_cold_start_and_override() {
        let table = McsTable::default_table();
        let mut amc = AmcState::default();
        assert_eq!(amc.select_mcs(&table), 0);
        amc.default_mcs = 5;
        assert_eq!(amc.select_mcs(&table), 5);
        amc.fixed_mcs = Some(14);
        assert_eq!(amc.select_mcs(&table), 14);
        amc.fixed_mcs = Some(99);
        assert_eq!(amc.select_mcs(&table), MCS_MAX);
    }

    proptest! {
        #[test]
        fn select_mcs_monotone_in_csi(a in -20.0f64..40.0, b in -20.0f64..40.0) {
            let table = McsTable::default_table();
            let pick = |sinr: f64| {
                let amc = AmcState {
                    last_csi: Some(CsiReport { wideband_sinr_db: sinr, timestamp: SimTime::ZERO }),
                    ..AmcState::default()
                };
                amc.select_mcs(&table)
            };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(pick(lo) <= pick(hi));
        }

        #[test]
        fn demux_build_identity(sdus in proptest::collection::vec(
            proptest::collection::vec(any::<u8>(), 0..300), 0..8)) {
            let mut q = FifoSduQueue::default();
            for s in &sdus {
                q.push(s.clone());
            }
            let (payload, packed) = build_tb_payload_for(3, 1 << 16, &mut q);
            prop_assert_eq!(packed, sdus.len());
            let out = demux(&payload).unwrap();
            let recovered: Vec<Vec<u8>> = out.into_iter().map(|(_, s)| s).collect();
            prop_assert_eq!(recovered, sdus);
        }

        #[test]
        fn schedule_never_grants_empty_queues(
            queues in proptest::collection::btree_map(0u8..8, 0usize..5000, 0..8),
            symbols in 0u32..14,
        ) {
            let bsr = BufferStatusReport { per_lcid: queues.clone(), timestamp: SimTime::ZERO };
            let grants = schedule_resources(symbols, &bsr, |_, s| s as usize * 7);
            let total: u32 = grants.iter().map(|g| g.symbols).sum();
            prop_assert!(total <= symbols);
            for g in grants {
                prop_assert!(queues[&g.lcid] > 0);
                prop_assert!(g.symbols > 0);
            }
        }
    }
}
