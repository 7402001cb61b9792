//! Per-packet trace emission: the PHY trace (one row per received transport
//! block), the application trace (one row per sent packet) and the text
//! statistics summary.
//!
//! Both traces are comma-separated text with a header row. dB values are
//! serialized with two decimals; everything is computed in double precision
//! and rounded only here, so re-running a scenario with the same seed yields
//! byte-identical files.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::Path;

use crate::metrics::Summary;
use crate::sim::SimTime;

/// One received transport block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub time: SimTime,
    pub tx_rnti: u32,
    pub rx_rnti: u32,
    pub sinr_db: f64,
    pub mcs: u8,
    pub tb_bytes: usize,
    pub corrupt: bool,
}

pub const PHY_TRACE_HEADER: &str = "time_ns,tx_rnti,rx_rnti,sinr_db,mcs,tb_bytes,corrupt";

pub fn format_phy_record(r: &TraceRecord) -> String {
    format!(
        "{},{},{},{:.2},{},{},{}",
        r.time.as_ns(),
        r.tx_rnti,
        r.rx_rnti,
        r.sinr_db,
        r.mcs,
        r.tb_bytes,
        u8::from(r.corrupt)
    )
}

/// Consumes PHY trace records as the simulation produces them.
pub trait TraceSink {
    fn on_record(&mut self, record: &TraceRecord) -> io::Result<()>;
}

/// Discards every record.
#[derive(Debug, Default)]
pub struct NullSink;

impl TraceSink for NullSink {
    fn on_record(&mut self, _record: &TraceRecord) -> io::Result<()> {
        Ok(())
    }
}

/// Buffers every record, for tests and in-process analysis.
#[derive(Debug, Default)]
pub struct CollectSink {
    pub records: Vec<TraceRecord>,
}

impl TraceSink for CollectSink {
    fn on_record(&mut self, record: &TraceRecord) -> io::Result<()> {
        self.records.push(*record);
        Ok(())
    }
}

/// Streams records to delimited text, flushing periodically.
pub struct CsvTraceWriter<W: Write> {
    out: W,
    since_flush: usize,
}

impl<W: Write> CsvTraceWriter<W> {
    pub fn new(mut out: W) -> io::Result<Self> {
        writeln!(out, "{PHY_TRACE_HEADER}")?;
        Ok(CsvTraceWriter { out, since_flush: 0 })
    }

    pub fn finish(mut self) -> io::Result<()> {
        self.out.flush()
    }
}

impl<W: Write> TraceSink for CsvTraceWriter<W> {
    fn on_record(&mut self, record: &TraceRecord) -> io::Result<()> {
        writeln!(self.out, "{}", format_phy_record(record))?;
        self.since_flush += 1;
        if self.since_flush >= 256 {
            self.out.flush()?;
            self.since_flush = 0;
        }
        Ok(())
    }
}

/// Reads a PHY trace file back, for replay checks.
pub fn read_phy_trace(path: &Path) -> io::Result<Vec<TraceRecord>> {
    let text = std::fs::read_to_string(path)?;
    parse_phy_trace(&text)
}

pub fn parse_phy_trace(text: &str) -> io::Result<Vec<TraceRecord>> {
    let bad = |line: usize| io::Error::new(io::ErrorKind::InvalidData, format!("line {line}"));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != PHY_TRACE_HEADER {
                return Err(bad(1));
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(bad(i + 1));
        }
        let parse_err = |_| bad(i + 1);
        out.push(TraceRecord {
            time: SimTime::from_ns(fields[0].parse().map_err(parse_err)?),
            tx_rnti: fields[1].parse().map_err(parse_err)?,
            rx_rnti: fields[2].parse().map_err(parse_err)?,
            sinr_db: fields[3]
                .parse()
                .map_err(|_| bad(i + 1))?,
            mcs: fields[4].parse().map_err(parse_err)?,
            tb_bytes: fields[5].parse().map_err(parse_err)?,
            corrupt: fields[6] == "1",
        });
    }
    Ok(out)
}

/// One application packet: send time always present, receive time only when
/// it was delivered within the run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppRecord {
    pub tx_time: SimTime,
    pub rx_time: Option<SimTime>,
    pub tx_rnti: u32,
    pub rx_rnti: u32,
    pub bytes: usize,
}

pub const APP_TRACE_HEADER: &str = "tx_time_ns,rx_time_ns,tx_rnti,rx_rnti,bytes";

pub fn write_app_trace(out: &mut impl Write, records: &[AppRecord]) -> io::Result<()> {
    writeln!(out, "{APP_TRACE_HEADER}")?;
    for r in records {
        let rx = r
            .rx_time
            .map(|t| t.as_ns().to_string())
            .unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{}",
            r.tx_time.as_ns(),
            rx,
            r.tx_rnti,
            r.rx_rnti,
            r.bytes
        )?;
    }
    out.flush()
}

pub fn read_app_trace(path: &Path) -> io::Result<Vec<AppRecord>> {
    let text = std::fs::read_to_string(path)?;
    let bad = |line: usize| io::Error::new(io::ErrorKind::InvalidData, format!("line {line}"));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != APP_TRACE_HEADER {
                return Err(bad(1));
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(bad(i + 1));
        }
        let parse_err = |_| bad(i + 1);
        out.push(AppRecord {
            tx_time: SimTime::from_ns(fields[0].parse().map_err(parse_err)?),
            rx_time: if fields[1].is_empty() {
                None
            } else {
                Some(SimTime::from_ns(fields[1].parse().map_err(parse_err)?))
            },
            tx_rnti: fields[2].parse().map_err(parse_err)?,
            rx_rnti: fields[3].parse().map_err(parse_err)?,
            bytes: fields[4].parse().map_err(parse_err)?,
        });
    }
    Ok(out)
}

/// Renders the statistics summary. Flow and link values are recomputable
/// from the two trace files; the counters block carries additional internal
/// counts.
pub fn render_summary(summary: &Summary) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "duration_ns = {}", summary.duration.as_ns());
    for f in &summary.flows {
        let _ = writeln!(s, "\n[flow tx={} rx={}]", f.key.tx_rnti, f.key.rx_rnti);
        let _ = writeln!(s, "sent = {}", f.sent);
        let _ = writeln!(s, "delivered = {}", f.delivered);
        let _ = writeln!(s, "delivered_bytes = {}", f.delivered_bytes);
        let _ = writeln!(s, "throughput_mbps = {:.3}", f.throughput_mbps);
        match f.mean_latency_ms {
            Some(ms) => {
                let _ = writeln!(s, "mean_latency_ms = {ms:.3}");
            }
            None => {
                let _ = writeln!(s, "mean_latency_ms = n/a");
            }
        }
    }
    for l in &summary.links {
        let _ = writeln!(s, "\n[link tx={} rx={}]", l.key.tx_rnti, l.key.rx_rnti);
        let _ = writeln!(s, "records = {}", l.records);
        let _ = writeln!(s, "corrupt = {}", l.corrupt);
        let _ = writeln!(s, "mean_sinr_db = {:.2}", l.mean_sinr_db);
        let _ = writeln!(s, "mean_mcs = {:.2}", l.mean_mcs);
    }
    let c = &summary.counters;
    let _ = writeln!(s, "\n[counters]");
    let _ = writeln!(s, "corrupt_tbs = {}", c.corrupt_tbs);
    let _ = writeln!(s, "rlc_tx_drops = {}", c.rlc_tx_drops);
    let _ = writeln!(s, "rlc_discarded_sdus = {}", c.rlc_discarded_sdus);
    let _ = writeln!(s, "rlc_duplicate_pdus = {}", c.rlc_duplicate_pdus);
    let _ = writeln!(s, "pdcp_duplicates = {}", c.pdcp_duplicates);
    let _ = writeln!(s, "pdcp_reordered = {}", c.pdcp_reordered);
    let _ = writeln!(s, "mac_malformed_tbs = {}", c.mac_malformed_tbs);
    let _ = writeln!(s, "unmatched_tx_drops = {}", c.unmatched_tx_drops);
    let _ = writeln!(s, "unknown_lcid_drops = {}", c.unknown_lcid_drops);
    let _ = writeln!(s, "pathloss_clamp_warnings = {}", c.pathloss_clamp_warnings);
    s
}
