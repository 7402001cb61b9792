//! MCS table and logistic BLER model.
//!
//! Each MCS index 0..=28 maps to a modulation order, a code rate and a
//! logistic error curve `BLER(sinr) = 1 / (1 + exp((sinr - threshold)/width))`.
//! The table ships as an editable text fixture, one row per MCS:
//! `index modulation_bits code_rate threshold_db width_db`.

use std::fmt;
use std::path::Path;

/// Highest supported MCS index.
pub const MCS_MAX: u8 = 28;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum McsTableError {
    #[error("fixture line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("table must contain exactly {expected} rows, found {found}", expected = MCS_MAX as usize + 1, found = .0)]
    WrongRowCount(usize),
    #[error("mcs {0}: modulation order must be one of 2, 4, 6, 8")]
    BadModulation(u8),
    #[error("mcs {0}: code rate must be in (0, 1)")]
    BadCodeRate(u8),
    #[error("mcs {0}: width must be positive")]
    BadWidth(u8),
    #[error("mcs {0}: thresholds must be strictly increasing")]
    NonIncreasingThreshold(u8),
    #[error("mcs {0}: spectral efficiency must be non-decreasing")]
    NonMonotoneEfficiency(u8),
    #[error("io: {0}")]
    Io(String),
}

/// One row of the table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McsEntry {
    pub modulation_bits: u8,
    pub code_rate: f64,
    pub threshold_db: f64,
    pub width_db: f64,
}

impl McsEntry {
    pub fn spectral_efficiency(&self) -> f64 {
        f64::from(self.modulation_bits) * self.code_rate
    }
}

/// Validated MCS/BLER table, indexed by MCS 0..=28.
#[derive(Debug, Clone, PartialEq)]
pub struct McsTable {
    entries: Vec<McsEntry>,
}

impl McsTable {
    /// Built-in default: QPSK/16QAM/64QAM ladder with 1024-scaled code rates
    /// and logistic thresholds `-4 + 1.03 * mcs` dB, width 0.5 dB.
    pub fn default_table() -> Self {
        const ROWS: [(u8, u32); 29] = [
            (2, 120),
            (2, 157),
            (2, 193),
            (2, 251),
            (2, 308),
            (2, 379),
            (2, 449),
            (2, 526),
            (2, 602),
            (2, 679),
            (4, 340),
            (4, 378),
            (4, 434),
            (4, 490),
            (4, 553),
            (4, 616),
            (4, 658),
            (6, 440),
            (6, 466),
            (6, 517),
            (6, 567),
            (6, 616),
            (6, 666),
            (6, 719),
            (6, 772),
            (6, 822),
            (6, 873),
            (6, 910),
            (6, 948),
        ];
        let entries = ROWS
            .iter()
            .enumerate()
            .map(|(mcs, &(bits, rate_1024))| McsEntry {
                modulation_bits: bits,
                code_rate: f64::from(rate_1024) / 1024.0,
                // -4 + 1.03 * mcs, in exact hundredths
                threshold_db: f64::from(-400 + 103 * mcs as i32) / 100.0,
                width_db: 0.5,
            })
            .collect();
        McsTable::from_entries(entries).expect("built-in table is valid")
    }

    pub fn from_entries(entries: Vec<McsEntry>) -> Result<Self, McsTableError> {
        if entries.len() != MCS_MAX as usize + 1 {
            return Err(McsTableError::WrongRowCount(entries.len()));
        }
        for (i, e) in entries.iter().enumerate() {
            let mcs = i as u8;
            if ![2, 4, 6, 8].contains(&e.modulation_bits) {
                return Err(McsTableError::BadModulation(mcs));
            }
            if e.code_rate.is_nan() || e.code_rate <= 0.0 || e.code_rate >= 1.0 {
                return Err(McsTableError::BadCodeRate(mcs));
            }
            if e.width_db.is_nan() || e.width_db <= 0.0 {
                return Err(McsTableError::BadWidth(mcs));
            }
            if i > 0 {
                if e.threshold_db <= entries[i - 1].threshold_db {
                    return Err(McsTableError::NonIncreasingThreshold(mcs));
                }
                if e.spectral_efficiency() < entries[i - 1].spectral_efficiency() {
                    return Err(McsTableError::NonMonotoneEfficiency(mcs));
                }
            }
        }
        Ok(McsTable { entries })
    }

    /// Parses the text fixture format. `#` starts a comment; fields are
    /// separated by whitespace or commas.
    pub fn from_fixture_str(text: &str) -> Result<Self, McsTableError> {
        let mut rows: Vec<(u8, McsEntry)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|f| !f.is_empty())
                .collect();
            let parse = |idx: usize| -> Result<f64, McsTableError> {
                fields
                    .get(idx)
                    .ok_or_else(|| McsTableError::Parse {
                        line: lineno + 1,
                        message: format!("expected 5 fields, found {}", fields.len()),
                    })?
                    .parse::<f64>()
                    .map_err(|e| McsTableError::Parse {
                        line: lineno + 1,
                        message: e.to_string(),
                    })
            };
            let mcs = parse(0)? as u8;
            rows.push((
                mcs,
                McsEntry {
                    modulation_bits: parse(1)? as u8,
                    code_rate: parse(2)?,
                    threshold_db: parse(3)?,
                    width_db: parse(4)?,
                },
            ));
        }
        rows.sort_by_key(|(mcs, _)| *mcs);
        for (i, (mcs, _)) in rows.iter().enumerate() {
            if usize::from(*mcs) != i {
                return Err(McsTableError::Parse {
                    line: 0,
                    message: format!("row for mcs {i} missing or duplicated"),
                });
            }
        }
        McsTable::from_entries(rows.into_iter().map(|(_, e)| e).collect())
    }

    pub fn load(path: &Path) -> Result<Self, McsTableError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| McsTableError::Io(e.to_string()))?;
        McsTable::from_fixture_str(&text)
    }

    pub fn entry(&self, mcs: u8) -> &McsEntry {
        &self.entries[usize::from(mcs.min(MCS_MAX))]
    }

    /// Block error probability for `mcs` at the given SINR.
    pub fn bler(&self, mcs: u8, sinr_db: f64) -> f64 {
        let e = self.entry(mcs);
        1.0 / (1.0 + ((sinr_db - e.threshold_db) / e.width_db).exp())
    }

    /// Serializes back to the fixture format, with round-trip precision.
    pub fn to_fixture_string(&self) -> String {
        let mut out = String::from("# mcs  modulation_bits  code_rate  threshold_db  width_db\n");
        for (mcs, e) in self.entries.iter().enumerate() {
            out.push_str(&format!(
                "{mcs} {} {} {} {}\n",
                e.modulation_bits, e.code_rate, e.threshold_db, e.width_db
            ));
        }
        out
    }
}

impl fmt::Display for McsTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_fixture_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_table_is_valid_and_complete() {
        let t = McsTable::default_table();
        assert_eq!(t.entry(0).modulation_bits, 2);
        assert_eq!(t.entry(28).modulation_bits, 6);
        assert!((t.entry(28).code_rate - 948.0 / 1024.0).abs() < 1e-12);
    }

    #[test]
    fn bler_midpoint_is_half() {
        let t = McsTable::default_table();
        for mcs in [0u8, 10, 28] {
            let thr = t.entry(mcs).threshold_db;
            assert!((t.bler(mcs, thr) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn bler_tail_below_1e4_at_ten_widths() {
        let t = McsTable::default_table();
        let e = t.entry(14);
        let bler = t.bler(14, e.threshold_db + 10.0 * e.width_db);
        assert!(bler < 1e-4, "bler {bler}");
    }

    #[test]
    fn bler_decreasing_in_sinr() {
        let t = McsTable::default_table();
        let mut prev = 1.0;
        let mut sinr = -30.0;
        while sinr < 40.0 {
            let b = t.bler(12, sinr);
            assert!(b <= prev);
            prev = b;
            sinr += 0.25;
        }
    }

    #[test]
    fn fixture_round_trip() {
        let t = McsTable::default_table();
        let text = t.to_fixture_string();
        let parsed = McsTable::from_fixture_str(&text).unwrap();
        for mcs in 0..=MCS_MAX {
            assert_eq!(t.entry(mcs), parsed.entry(mcs));
        }
    }

    #[test]
    fn shipped_fixture_matches_builtin() {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../fixtures/mcs_table.txt");
        let loaded = McsTable::load(&path).unwrap();
        assert_eq!(loaded, McsTable::default_table());
    }

    #[test]
    fn missing_row_rejected() {
        let mut text = String::new();
        for mcs in 0..MCS_MAX {
            // stops one row short
            text.push_str(&format!("{mcs} 2 0.5 {} 0.5\n", -4.0 + 1.03 * f64::from(mcs)));
        }
        assert!(McsTable::from_fixture_str(&text).is_err());
    }

    #[test]
    fn non_increasing_threshold_rejected() {
        let mut entries: Vec<McsEntry> = (0..=MCS_MAX)
            .map(|m| McsEntry {
                modulation_bits: 2,
                code_rate: 0.1 + 0.02 * f64::from(m),
                threshold_db: f64::from(m),
                width_db: 0.5,
            })
            .collect();
        entries[5].threshold_db = entries[4].threshold_db;
        assert_eq!(
            McsTable::from_entries(entries),
            Err(McsTableError::NonIncreasingThreshold(5))
        );
    }
}
