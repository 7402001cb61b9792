//! Bearer lifecycle, RLC-UM segmentation/concatenation, PDCP sequencing,
//! packet classification and the device send/receive path.
//!
//! Framing (invented here, required for the segmentation tests):
//! - RLC PDU: 2-byte sequence number (12-bit, wrapping), 1 flags byte
//!   (bit 0: first segment continues an SDU from an earlier PDU; bit 1:
//!   last segment continues in the next PDU), then per segment a 2-byte
//!   length prefix and the bytes.
//! - PDCP PDU: 2-byte sequence number (16-bit, wrapping), then the payload.

use std::collections::{BTreeMap, VecDeque};

use crate::mac::SduSource;

pub const RLC_PDU_HEADER_BYTES: usize = 3;
pub const RLC_SEGMENT_HEADER_BYTES: usize = 2;
pub const PDCP_HEADER_BYTES: usize = 2;

const RLC_SN_MASK: u16 = 0x0FFF;
const FI_FIRST_CONTINUES: u8 = 0x01;
const FI_LAST_CONTINUES: u8 = 0x02;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StackError {
    #[error("bearer {0} already active")]
    DuplicateBearer(u32),
    #[error("logical channel {1} already in use at rnti {0}")]
    DuplicateLcid(u32, u8),
    #[error("classifier rule for {0:?} already installed")]
    DuplicateFilterRule(Endpoint),
}

/// Transmit-queue capacity: the reference configuration counts packets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RlcCapacity {
    Packets(usize),
    Bytes(usize),
}

impl Default for RlcCapacity {
    fn default() -> Self {
        RlcCapacity::Packets(500)
    }
}

/// Whether an SDU entered the RLC queue or was dropped at the door.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnqueueOutcome {
    Accepted,
    Dropped,
}

/// Unacknowledged-mode RLC entity: segmentation and concatenation, no
/// retransmissions. One instance serves one direction of one bearer.
#[derive(Debug, Clone)]
pub struct RlcUmEntity {
    capacity: RlcCapacity,
    queue: VecDeque<Vec<u8>>,
    queued_bytes: usize,
    head_sent: usize,
    tx_sn: u16,
    pub tx_drops: u64,
    pub pdus_built: u64,
    pub pdu_bytes_built: u64,

    expected_sn: Option<u16>,
    partial: Option<Vec<u8>>,
    doomed_sdu_open: bool,
    pub delivered_sdus: u64,
    pub discarded_sdus: u64,
    pub duplicate_pdus: u64,
    pub malformed_pdus: u64,
}

impl RlcUmEntity {
    pub fn new(capacity: RlcCapacity) -> Self {
        RlcUmEntity {
            capacity,
            queue: VecDeque::new(),
            queued_bytes: 0,
            head_sent: 0,
            tx_sn: 0,
            tx_drops: 0,
            pdus_built: 0,
            pdu_bytes_built: 0,
            expected_sn: None,
            partial: None,
            doomed_sdu_open: false,
            delivered_sdus: 0,
            discarded_sdus: 0,
            duplicate_pdus: 0,
            malformed_pdus: 0,
        }
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    /// Buffer status visible to the MAC: PDU header plus per-SDU segment
    /// overhead on the bytes still to send.
    pub fn buffer_status_bytes(&self) -> usize {
        if self.queue.is_empty() {
            return 0;
        }
        let pending: usize = self
            .queue
            .iter()
            .map(|s| s.len() + RLC_SEGMENT_HEADER_BYTES)
            .sum();
        RLC_PDU_HEADER_BYTES + pending - self.head_sent
    }

    /// Accepts the SDU if the queue is below capacity.
    pub fn tx_enqueue(&mut self, sdu: Vec<u8>) -> EnqueueOutcome {
        let fits = match self.capacity {
            RlcCapacity::Packets(max) => self.queue.len() < max,
            RlcCapacity::Bytes(max) => self.queued_bytes + sdu.len() <= max,
        };
        if !fits {
            self.tx_drops += 1;
            return EnqueueOutcome::Dropped;
        }
        self.queued_bytes += sdu.len();
        self.queue.push_back(sdu);
        EnqueueOutcome::Accepted
    }

    /// Builds one PDU of at most `grant_bytes`, concatenating whole SDUs plus
    /// at most one trailing segment; the remainder stays at the queue head.
    pub fn build_pdu(&mut self, grant_bytes: usize) -> Option<Vec<u8>> {
        if grant_bytes <= RLC_PDU_HEADER_BYTES + RLC_SEGMENT_HEADER_BYTES
            || self.queue.is_empty()
        {
            return None;
        }
        let mut budget = grant_bytes - RLC_PDU_HEADER_BYTES;
        let mut flags = if self.head_sent > 0 { FI_FIRST_CONTINUES } else { 0 };
        let mut body = Vec::new();
        while budget > RLC_SEGMENT_HEADER_BYTES {
            let Some(head) = self.queue.front() else {
                break;
            };
            let seg_room = budget - RLC_SEGMENT_HEADER_BYTES;
            let remaining = head.len() - self.head_sent;
            if remaining <= seg_room {
                body.extend_from_slice(&(remaining as u16).to_be_bytes());
                body.extend_from_slice(&head[self.head_sent..]);
                budget -= RLC_SEGMENT_HEADER_BYTES + remaining;
                self.queued_bytes -= remaining;
                self.head_sent = 0;
                self.queue.pop_front();
            } else {
                let take = seg_room.min(u16::MAX as usize);
                body.extend_from_slice(&(take as u16).to_be_bytes());
                body.extend_from_slice(&head[self.head_sent..self.head_sent + take]);
                self.queued_bytes -= take;
                self.head_sent += take;
                flags |= FI_LAST_CONTINUES;
                break;
            }
        }
        if body.is_empty() {
            return None;
        }
        let sn = self.tx_sn;
        self.tx_sn = (self.tx_sn + 1) & RLC_SN_MASK;
        let mut pdu = Vec::with_capacity(RLC_PDU_HEADER_BYTES + body.len());
        pdu.extend_from_slice(&sn.to_be_bytes());
        pdu.push(flags);
        pdu.extend_from_slice(&body);
        self.pdus_built += 1;
        self.pdu_bytes_built += pdu.len() as u64;
        Some(pdu)
    }

    /// Receives one PDU and returns the completed in-order SDUs. PDUs lost
    /// upstream surface as sequence gaps; every SDU with a missing segment
    /// is discarded whole.
    pub fn rx(&mut self, pdu: &[u8]) -> Vec<Vec<u8>> {
        let Some((sn, fi_first, fi_last, segments)) = parse_rlc_pdu(pdu) else {
            self.malformed_pdus += 1;
            return Vec::new();
        };
        let gap = match self.expected_sn {
            None => fi_first, // joined mid-stream inside an SDU
            Some(exp) => {
                let delta = sn.wrapping_sub(exp) & RLC_SN_MASK;
                if delta == 0 {
                    false
                } else if delta < 2048 {
                    true
                } else {
                    self.duplicate_pdus += 1;
                    return Vec::new();
                }
            }
        };
        self.expected_sn = Some((sn + 1) & RLC_SN_MASK);
        if gap && self.partial.take().is_some() {
            self.doomed_sdu_open = true;
        }

        let mut delivered = Vec::new();
        let count = segments.len();
        for (i, seg) in segments.into_iter().enumerate() {
            let continues_previous = i == 0 && fi_first;
            let incomplete = i == count - 1 && fi_last;
            if continues_previous {
                if let Some(partial) = self.partial.as_mut() {
                    partial.extend_from_slice(seg);
                    if !incomplete {
                        delivered.push(self.partial.take().expect("just extended"));
                    }
                } else {
                    // Head of this SDU was lost; keep discarding until it ends.
                    if !incomplete {
                        self.discarded_sdus += 1;
                        self.doomed_sdu_open = false;
                    } else {
                        self.doomed_sdu_open = true;
                    }
                }
            } else {
                if self.doomed_sdu_open {
                    // The damaged SDU ended inside the lost region.
                    self.discarded_sdus += 1;
                    self.doomed_sdu_open = false;
                }
                if let Some(orphan) = self.partial.take() {
                    // A new SDU starts while one is open: drop the old one.
                    let _ = orphan;
                    self.discarded_sdus += 1;
                }
                if incomplete {
                    self.partial = Some(seg.to_vec());
                } else {
                    delivered.push(seg.to_vec());
                }
            }
        }
        self.delivered_sdus += delivered.len() as u64;
        delivered
    }
}

fn parse_rlc_pdu(pdu: &[u8]) -> Option<(u16, bool, bool, Vec<&[u8]>)> {
    if pdu.len() < RLC_PDU_HEADER_BYTES {
        return None;
    }
    let sn = u16::from_be_bytes([pdu[0], pdu[1]]) & RLC_SN_MASK;
    let flags = pdu[2];
    let mut segments = Vec::new();
    let mut off = RLC_PDU_HEADER_BYTES;
    while off < pdu.len() {
        if pdu.len() - off < RLC_SEGMENT_HEADER_BYTES {
            return None;
        }
        let len = u16::from_be_bytes([pdu[off], pdu[off + 1]]) as usize;
        off += RLC_SEGMENT_HEADER_BYTES;
        if pdu.len() - off < len {
            return None;
        }
        segments.push(&pdu[off..off + len]);
        off += len;
    }
    if segments.is_empty() {
        return None;
    }
    Some((
        sn,
        flags & FI_FIRST_CONTINUES != 0,
        flags & FI_LAST_CONTINUES != 0,
        segments,
    ))
}

impl SduSource for RlcUmEntity {
    fn queued_bytes(&self) -> usize {
        self.buffer_status_bytes()
    }

    fn pull(&mut self, max_bytes: usize) -> Option<Vec<u8>> {
        self.build_pdu(max_bytes)
    }
}

/// Thin sequencing layer: 2-byte header added on send, stripped on receive.
#[derive(Debug, Clone, Default)]
pub struct PdcpEntity {
    tx_sn: u16,
    expected_rx: Option<u16>,
    last_delivered: Option<u16>,
    pub duplicates: u64,
    pub reordered: u64,
    pub truncated: u64,
}

impl PdcpEntity {
    pub fn tx(&mut self, payload: &[u8]) -> Vec<u8> {
        let mut pdu = Vec::with_capacity(PDCP_HEADER_BYTES + payload.len());
        pdu.extend_from_slice(&self.tx_sn.to_be_bytes());
        pdu.extend_from_slice(payload);
        self.tx_sn = self.tx_sn.wrapping_add(1);
        pdu
    }

    /// Strips the header and hands the payload up. Sequence gaps pass
    /// through (losses are counted below PDCP); a repeated sequence number
    /// is dropped as a duplicate, anything else behind the expected number
    /// is delivered anyway and counted as reordered.
    pub fn rx(&mut self, pdu: &[u8]) -> Option<Vec<u8>> {
        if pdu.len() < PDCP_HEADER_BYTES {
            self.truncated += 1;
            return None;
        }
        let sn = u16::from_be_bytes([pdu[0], pdu[1]]);
        if let Some(exp) = self.expected_rx {
            let delta = sn.wrapping_sub(exp);
            if delta >= 0x8000 {
                if self.last_delivered == Some(sn) {
                    self.duplicates += 1;
                    return None;
                }
                self.reordered += 1;
                self.last_delivered = Some(sn);
                return Some(pdu[PDCP_HEADER_BYTES..].to_vec());
            }
        }
        self.expected_rx = Some(sn.wrapping_add(1));
        self.last_delivered = Some(sn);
        Some(pdu[PDCP_HEADER_BYTES..].to_vec())
    }
}

/// Network-layer endpoint the classifier matches on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Endpoint {
    pub addr: u32,
    pub port: Option<u16>,
}

impl Endpoint {
    pub fn addr(addr: u32) -> Self {
        Endpoint { addr, port: None }
    }
}

/// Maps destination endpoints to bearer ids; exact (addr, port) rules win
/// over address-only rules.
#[derive(Debug, Clone, Default)]
pub struct PacketFilter {
    rules: BTreeMap<(u32, Option<u16>), u32>,
}

impl PacketFilter {
    pub fn install(&mut self, endpoint: Endpoint, bearer_id: u32) -> Result<(), StackError> {
        let key = (endpoint.addr, endpoint.port);
        if self.rules.contains_key(&key) {
            return Err(StackError::DuplicateFilterRule(endpoint));
        }
        self.rules.insert(key, bearer_id);
        Ok(())
    }

    pub fn classify(&self, endpoint: &Endpoint) -> Option<u32> {
        if let Some(&b) = self.rules.get(&(endpoint.addr, endpoint.port)) {
            return Some(b);
        }
        self.rules.get(&(endpoint.addr, None)).copied()
    }
}

/// End-to-end logical connection as seen from one endpoint.
#[derive(Debug)]
pub struct TxBearer {
    pub bearer_id: u32,
    pub lcid: u8,
    pub peer_rnti: u32,
    pub peer_addr: Endpoint,
    pub rlc: RlcUmEntity,
    pub pdcp: PdcpEntity,
}

#[derive(Debug)]
pub struct RxBearer {
    pub bearer_id: u32,
    pub lcid: u8,
    pub peer_rnti: u32,
    pub rlc: RlcUmEntity,
    pub pdcp: PdcpEntity,
}

/// Result of pushing one packet into the device.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SendOutcome {
    Enqueued { lcid: u8 },
    QueueFull { lcid: u8 },
    NoBearer,
}

/// The protocol stack of one device: classifier, per-bearer RLC/PDCP
/// entities and the MAC-facing queues.
#[derive(Debug, Default)]
pub struct DeviceStack {
    pub rnti: u32,
    tx_by_lcid: BTreeMap<u8, TxBearer>,
    rx_by_peer_lcid: BTreeMap<(u32, u8), RxBearer>,
    bearer_to_lcid: BTreeMap<u32, u8>,
    filter: PacketFilter,
    pub unmatched_tx_drops: u64,
    pub unknown_lcid_drops: u64,
}

impl DeviceStack {
    pub fn new(rnti: u32) -> Self {
        DeviceStack {
            rnti,
            ..DeviceStack::default()
        }
    }

    /// Installs the sending half of a bearer: classifier rule plus RLC and
    /// PDCP entities wired to logical channel `lcid`.
    pub fn activate_tx_bearer(
        &mut self,
        bearer_id: u32,
        lcid: u8,
        peer_rnti: u32,
        peer_addr: Endpoint,
        capacity: RlcCapacity,
    ) -> Result<(), StackError> {
        if self.tx_by_lcid.contains_key(&lcid) {
            return Err(StackError::DuplicateLcid(self.rnti, lcid));
        }
        if self.bearer_to_lcid.contains_key(&bearer_id)
            || self.rx_by_peer_lcid.values().any(|b| b.bearer_id == bearer_id)
        {
            return Err(StackError::DuplicateBearer(bearer_id));
        }
        self.filter.install(peer_addr, bearer_id)?;
        self.bearer_to_lcid.insert(bearer_id, lcid);
        self.tx_by_lcid.insert(
            lcid,
            TxBearer {
                bearer_id,
                lcid,
                peer_rnti,
                peer_addr,
                rlc: RlcUmEntity::new(capacity),
                pdcp: PdcpEntity::default(),
            },
        );
        Ok(())
    }

    /// Installs the receiving half of a bearer, keyed by the sender and its
    /// logical channel id.
    pub fn activate_rx_bearer(
        &mut self,
        bearer_id: u32,
        lcid: u8,
        peer_rnti: u32,
    ) -> Result<(), StackError> {
        if self.rx_by_peer_lcid.contains_key(&(peer_rnti, lcid)) {
            return Err(StackError::DuplicateLcid(self.rnti, lcid));
        }
        if self.bearer_to_lcid.contains_key(&bearer_id)
            || self.rx_by_peer_lcid.values().any(|b| b.bearer_id == bearer_id)
        {
            return Err(StackError::DuplicateBearer(bearer_id));
        }
        self.rx_by_peer_lcid.insert(
            (peer_rnti, lcid),
            RxBearer {
                bearer_id,
                lcid,
                peer_rnti,
                rlc: RlcUmEntity::new(RlcCapacity::default()),
                pdcp: PdcpEntity::default(),
            },
        );
        Ok(())
    }

    pub fn tx_bearers(&self) -> impl Iterator<Item = &TxBearer> {
        self.tx_by_lcid.values()
    }

    pub fn tx_bearer_mut(&mut self, lcid: u8) -> Option<&mut TxBearer> {
        self.tx_by_lcid.get_mut(&lcid)
    }

    pub fn rx_bearers(&self) -> impl Iterator<Item = &RxBearer> {
        self.rx_by_peer_lcid.values()
    }

    /// Classifies a packet, adds the PDCP header and queues it on the
    /// bearer's RLC entity.
    pub fn device_send(&mut self, dest: &Endpoint, payload: &[u8]) -> SendOutcome {
        let Some(bearer_id) = self.filter.classify(dest) else {
            self.unmatched_tx_drops += 1;
            return SendOutcome::NoBearer;
        };
        let lcid = self.bearer_to_lcid[&bearer_id];
        let bearer = self.tx_by_lcid.get_mut(&lcid).expect("bearer map in sync");
        let pdu = bearer.pdcp.tx(payload);
        match bearer.rlc.tx_enqueue(pdu) {
            EnqueueOutcome::Accepted => SendOutcome::Enqueued { lcid },
            EnqueueOutcome::Dropped => SendOutcome::QueueFull { lcid },
        }
    }

    /// Feeds one received MAC SDU (an RLC PDU) into the matching bearer and
    /// returns the application payloads that completed, with the bearer id.
    pub fn device_receive(
        &mut self,
        peer_rnti: u32,
        lcid: u8,
        mac_sdu: &[u8],
    ) -> Vec<(u32, Vec<u8>)> {
        let Some(bearer) = self.rx_by_peer_lcid.get_mut(&(peer_rnti, lcid)) else {
            self.unknown_lcid_drops += 1;
            return Vec::new();
        };
        let mut out = Vec::new();
        for sdu in bearer.rlc.rx(mac_sdu) {
            if let Some(payload) = bearer.pdcp.rx(&sdu) {
                out.push((bearer.bearer_id, payload));
            }
        }
        out
    }
}
