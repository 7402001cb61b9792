//! Scenario configuration: TOML schema, defaults, dotted-path overrides and
//! validation into engine-ready types.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::channel::{
    default_blockers, AntennaArray, BlockerProfile, ChannelConfig, ChannelScenario, FadingMode,
    LinkBudget, LinkState,
};
use crate::mac::SlotPattern;
use crate::phy::{FrameConfig, McsTable, MCS_MAX, SYMBOLS_PER_SLOT};
use crate::scenario::{CbrSource, Group, Vehicle, PACKET_HEADER_BYTES};
use crate::sim::SimTime;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("override '{0}': {1}")]
    Override(String, String),
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
}

/// Parses a duration literal: integer or decimal number with an
/// `ns`/`us`/`ms`/`s` suffix (`2s`, `100ms`, `250us`, `1500000ns`).
pub fn parse_duration(text: &str) -> Result<SimTime, String> {
    let text = text.trim();
    let split = text
        .find(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-' || c == '+'))
        .ok_or_else(|| format!("missing unit suffix in '{text}'"))?;
    let (num, unit) = text.split_at(split);
    let value: f64 = num.parse().map_err(|e| format!("'{text}': {e}"))?;
    if value < 0.0 {
        return Err(format!("'{text}': duration must be non-negative"));
    }
    let scale = match unit.trim() {
        "ns" => 1.0,
        "us" => 1e3,
        "ms" => 1e6,
        "s" => 1e9,
        other => return Err(format!("unknown duration unit '{other}'")),
    };
    Ok(SimTime::from_ns((value * scale).round() as u64))
}

fn default_duration() -> String {
    "2s".to_owned()
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub scenario: ChannelScenario,
    pub carrier_ghz: f64,
    pub update_period: String,
    /// Optional fixed channel condition for every link.
    pub forced_state: Option<LinkState>,
    pub fading: FadingMode,
    pub fading_sigma_db: f64,
    pub extended_urban_negated_exponent: bool,
    pub simple_interference_gain: bool,
    pub blockers: Vec<BlockerProfile>,
}

impl Default for ChannelSection {
    fn default() -> Self {
        ChannelSection {
            scenario: ChannelScenario::Highway,
            carrier_ghz: 28.0,
            update_period: "100ms".to_owned(),
            forced_state: None,
            fading: FadingMode::Off,
            fading_sigma_db: 0.0,
            extended_urban_negated_exponent: false,
            simple_interference_gain: false,
            blockers: default_blockers(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PhySection {
    pub numerology: u8,
    pub bandwidth_hz: f64,
    pub tx_power_dbm: f64,
    pub noise_figure_db: f64,
    /// Optional MCS/BLER fixture path; the built-in table otherwise.
    pub mcs_fixture: Option<PathBuf>,
    /// Symbols per slot reserved for control, not schedulable for data.
    pub control_symbols: u32,
    /// Resource-element overhead fraction inside an allocation.
    pub tbs_overhead: f64,
    pub csi_period: String,
}

impl Default for PhySection {
    fn default() -> Self {
        PhySection {
            numerology: 2,
            bandwidth_hz: 100e6,
            tx_power_dbm: 30.0,
            noise_figure_db: 5.0,
            mcs_fixture: None,
            control_symbols: 2,
            tbs_overhead: 0.14,
            csi_period: "1ms".to_owned(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct MacSection {
    pub amc: bool,
    /// Fixed MCS override; disables AMC when set.
    pub fixed_mcs: Option<u8>,
    pub target_bler: f64,
    pub default_mcs: u8,
}

impl Default for MacSection {
    fn default() -> Self {
        MacSection {
            amc: true,
            fixed_mcs: None,
            target_bler: 0.1,
            default_mcs: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct StackSection {
    pub rlc_capacity: u64,
    /// "packets" (reference configuration) or "bytes".
    pub rlc_capacity_mode: String,
}

impl Default for StackSection {
    fn default() -> Self {
        StackSection {
            rlc_capacity: 500,
            rlc_capacity_mode: "packets".to_owned(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct VehicleSection {
    pub rnti: u32,
    pub position: [f64; 3],
    #[serde(default)]
    pub velocity: [f64; 3],
    #[serde(default = "default_antenna_elements")]
    pub antenna_elements: u32,
    #[serde(default = "default_true")]
    pub isotropic_elements: bool,
    #[serde(default)]
    pub boresight_rad: f64,
    #[serde(default)]
    pub street: Option<u32>,
}

fn default_antenna_elements() -> u32 {
    1
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SlotAssignment {
    pub slot: u32,
    pub owner: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GroupSection {
    pub members: Vec<u32>,
    /// Custom slot pattern; the default gives member k slot k.
    #[serde(default)]
    pub slots: Vec<SlotAssignment>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrafficSection {
    pub source: u32,
    pub destination: u32,
    pub packet_bytes: usize,
    pub interval: String,
    #[serde(default = "default_start")]
    pub start: String,
    /// Defaults to the scenario duration.
    #[serde(default)]
    pub stop: Option<String>,
    #[serde(default)]
    pub echo: bool,
}

fn default_start() -> String {
    "0s".to_owned()
}

/// The whole scenario document. Every field has a default except vehicles,
/// groups and traffic.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub duration: String,
    pub channel: ChannelSection,
    pub phy: PhySection,
    pub mac: MacSection,
    pub stack: StackSection,
    pub vehicles: Vec<VehicleSection>,
    pub groups: Vec<GroupSection>,
    pub traffic: Vec<TrafficSection>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: String::new(),
            seed: default_seed(),
            duration: default_duration(),
            channel: ChannelSection::default(),
            phy: PhySection::default(),
            mac: MacSection::default(),
            stack: StackSection::default(),
            vehicles: Vec::new(),
            groups: Vec::new(),
            traffic: Vec::new(),
        }
    }
}

/// Fully validated scenario, ready to build a simulation.
#[derive(Debug, Clone)]
pub struct ValidatedScenario {
    pub config: ScenarioConfig,
    pub seed: u64,
    pub duration: SimTime,
    pub frame: FrameConfig,
    pub budget: LinkBudget,
    pub channel: ChannelConfig,
    pub mcs_table: McsTable,
    pub control_symbols: u32,
    pub tbs_overhead: f64,
    pub csi_period: SimTime,
    pub amc_enabled: bool,
    pub fixed_mcs: Option<u8>,
    pub target_bler: f64,
    pub default_mcs: u8,
    pub rlc_capacity: crate::stack::RlcCapacity,
    pub vehicles: Vec<Vehicle>,
    pub groups: Vec<Group>,
    pub traffic: Vec<CbrSource>,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let value: toml::Value =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Self::from_value(value)
    }

    fn from_value(value: toml::Value) -> Result<Self, ConfigError> {
        serde_path_to_error::deserialize(value)
            .map_err(|e| ConfigError::Parse(format!("{}: {}", e.path(), e.inner())))
    }

    /// Parses a document and applies `--set path=value` overrides before
    /// typed deserialization.
    pub fn from_toml_with_overrides(
        text: &str,
        overrides: &[(String, String)],
    ) -> Result<Self, ConfigError> {
        let mut value: toml::Value =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for (path, raw) in overrides {
            apply_override(&mut value, path, raw)?;
        }
        Self::from_value(value)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Validates the document and resolves every derived quantity.
    pub fn validate(&self) -> Result<ValidatedScenario, ConfigError> {
        let mut errors: Vec<String> = Vec::new();
        let mut err = |path: &str, message: String| errors.push(format!("{path}: {message}"));

        let duration = parse_duration(&self.duration)
            .map_err(|e| err("duration", e))
            .ok();
        let update_period = parse_duration(&self.channel.update_period)
            .map_err(|e| err("channel.update_period", e))
            .ok();
        let csi_period = parse_duration(&self.phy.csi_period)
            .map_err(|e| err("phy.csi_period", e))
            .ok();
        if let Some(p) = csi_period {
            if p == SimTime::ZERO {
                err("phy.csi_period", "must be positive".into());
            }
        }

        let frame = match FrameConfig::new(self.phy.numerology, self.phy.bandwidth_hz) {
            Ok(f) => Some(f),
            Err(e) => {
                err("phy", e.to_string());
                None
            }
        };
        if !(self.phy.tbs_overhead >= 0.0 && self.phy.tbs_overhead < 1.0) {
            err("phy.tbs_overhead", "must be in [0, 1)".into());
        }
        if self.phy.control_symbols >= SYMBOLS_PER_SLOT {
            err(
                "phy.control_symbols",
                format!("must leave at least one data symbol of {SYMBOLS_PER_SLOT}"),
            );
        }
        if !(0.5..=100.0).contains(&self.channel.carrier_ghz) {
            err("channel.carrier_ghz", "must be within [0.5, 100] GHz".into());
        }
        if self.channel.blockers.is_empty() {
            err("channel.blockers", "at least one blocker type required".into());
        }
        match self.channel.fading {
            FadingMode::GaussianDb if self.channel.fading_sigma_db < 0.0 => {
                err("channel.fading_sigma_db", "must be non-negative".into())
            }
            _ => {}
        }

        let mcs_table = match &self.phy.mcs_fixture {
            None => Some(McsTable::default_table()),
            Some(path) => match McsTable::load(path) {
                Ok(t) => Some(t),
                Err(e) => {
                    err("phy.mcs_fixture", e.to_string());
                    None
                }
            },
        };

        if !(self.mac.target_bler > 0.0 && self.mac.target_bler < 1.0) {
            err("mac.target_bler", "must be in (0, 1)".into());
        }
        if let Some(mcs) = self.mac.fixed_mcs {
            if mcs > MCS_MAX {
                err("mac.fixed_mcs", format!("must be at most {MCS_MAX}"));
            }
        }
        if self.mac.default_mcs > MCS_MAX {
            err("mac.default_mcs", format!("must be at most {MCS_MAX}"));
        }

        let rlc_capacity = match self.stack.rlc_capacity_mode.as_str() {
            "packets" => Some(crate::stack::RlcCapacity::Packets(
                self.stack.rlc_capacity as usize,
            )),
            "bytes" => Some(crate::stack::RlcCapacity::Bytes(
                self.stack.rlc_capacity as usize,
            )),
            other => {
                err(
                    "stack.rlc_capacity_mode",
                    format!("'{other}' is not 'packets' or 'bytes'"),
                );
                None
            }
        };
        if self.stack.rlc_capacity == 0 {
            err("stack.rlc_capacity", "must be positive".into());
        }

        // Vehicles: unique rntis, sane antennas.
        let mut rntis = BTreeSet::new();
        for (i, v) in self.vehicles.iter().enumerate() {
            if !rntis.insert(v.rnti) {
                err(&format!("vehicles[{i}].rnti"), format!("{} duplicated", v.rnti));
            }
            if v.antenna_elements == 0 {
                err(
                    &format!("vehicles[{i}].antenna_elements"),
                    "must be at least 1".into(),
                );
            }
        }
        if self.vehicles.is_empty() {
            err("vehicles", "at least one vehicle required".into());
        }

        // Groups: members exist, appear in exactly one group, patterns valid.
        let mut grouped: BTreeSet<u32> = BTreeSet::new();
        let mut groups = Vec::new();
        for (i, g) in self.groups.iter().enumerate() {
            let path = format!("groups[{i}]");
            if g.members.len() < 2 {
                err(&path, "a group needs at least two members".into());
            }
            for m in &g.members {
                if !rntis.contains(m) {
                    err(&path, format!("member {m} is not a configured vehicle"));
                }
                if !grouped.insert(*m) {
                    err(&path, format!("vehicle {m} already belongs to a group"));
                }
            }
            if let Some(frame) = &frame {
                let pattern = if g.slots.is_empty() {
                    SlotPattern::default_for(&g.members, frame.slots_per_subframe())
                        .map_err(|e| err(&path, e.to_string()))
                        .ok()
                } else {
                    let mut pattern = SlotPattern::default();
                    let mut ok = true;
                    for a in &g.slots {
                        if !g.members.contains(&a.owner) {
                            err(&path, format!("slot owner {} not a member", a.owner));
                            ok = false;
                            continue;
                        }
                        if let Err(e) =
                            pattern.assign(a.slot, a.owner, frame.slots_per_subframe())
                        {
                            err(&path, e.to_string());
                            ok = false;
                        }
                    }
                    ok.then_some(pattern)
                };
                if let Some(pattern) = pattern {
                    groups.push(Group {
                        members: g.members.clone(),
                        pattern,
                    });
                }
            }
        }

        // Traffic: endpoints exist, share a group, and each directed pair
        // carries at most one flow (echo reserves the reverse direction).
        let mut traffic = Vec::new();
        let mut flow_pairs: BTreeSet<(u32, u32)> = BTreeSet::new();
        for (i, t) in self.traffic.iter().enumerate() {
            let path = format!("traffic[{i}]");
            if t.source == t.destination {
                err(&path, "source equals destination".into());
            }
            if !flow_pairs.insert((t.source, t.destination)) {
                err(&path, "another flow already uses this directed pair".into());
            }
            if t.echo && !flow_pairs.insert((t.destination, t.source)) {
                err(&path, "echo needs the reverse directed pair free".into());
            }
            for rnti in [t.source, t.destination] {
                if !rntis.contains(&rnti) {
                    err(&path, format!("vehicle {rnti} is not configured"));
                }
            }
            let same_group = self
                .groups
                .iter()
                .any(|g| g.members.contains(&t.source) && g.members.contains(&t.destination));
            if !same_group {
                err(&path, "source and destination are not in one group".into());
            }
            if t.packet_bytes < PACKET_HEADER_BYTES {
                err(
                    &format!("{path}.packet_bytes"),
                    format!("must be at least {PACKET_HEADER_BYTES}"),
                );
            }
            let interval = parse_duration(&t.interval)
                .map_err(|e| err(&format!("{path}.interval"), e))
                .ok();
            if let Some(iv) = interval {
                if iv == SimTime::ZERO {
                    err(&format!("{path}.interval"), "must be positive".into());
                }
            }
            let start = parse_duration(&t.start)
                .map_err(|e| err(&format!("{path}.start"), e))
                .ok();
            let stop = match &t.stop {
                None => duration,
                Some(text) => parse_duration(text)
                    .map_err(|e| err(&format!("{path}.stop"), e))
                    .ok(),
            };
            if let (Some(interval), Some(start), Some(stop)) = (interval, start, stop) {
                traffic.push(CbrSource {
                    src_rnti: t.source,
                    dst_rnti: t.destination,
                    packet_bytes: t.packet_bytes,
                    interval,
                    start,
                    stop,
                    echo: t.echo,
                });
            }
        }

        if !errors.is_empty() {
            return Err(ConfigError::Invalid(errors));
        }

        let vehicles = self
            .vehicles
            .iter()
            .map(|v| Vehicle {
                rnti: v.rnti,
                position: v.position,
                velocity: v.velocity,
                antenna: AntennaArray {
                    elements: v.antenna_elements,
                    isotropic_elements: v.isotropic_elements,
                    boresight_rad: v.boresight_rad,
                },
                street: v.street,
            })
            .collect();

        Ok(ValidatedScenario {
            config: self.clone(),
            seed: self.seed,
            duration: duration.expect("checked"),
            frame: frame.expect("checked"),
            budget: LinkBudget {
                tx_power_dbm: self.phy.tx_power_dbm,
                noise_figure_db: self.phy.noise_figure_db,
                bandwidth_hz: self.phy.bandwidth_hz,
                carrier_ghz: self.channel.carrier_ghz,
            },
            channel: ChannelConfig {
                scenario: self.channel.scenario,
                carrier_ghz: self.channel.carrier_ghz,
                update_period: update_period.expect("checked"),
                forced_state: self.channel.forced_state,
                fading: self.channel.fading,
                fading_sigma_db: self.channel.fading_sigma_db,
                extended_urban_negated_exponent: self.channel.extended_urban_negated_exponent,
                simple_interference_gain: self.channel.simple_interference_gain,
                blockers: self.channel.blockers.clone(),
            },
            mcs_table: mcs_table.expect("checked"),
            control_symbols: self.phy.control_symbols,
            tbs_overhead: self.phy.tbs_overhead,
            csi_period: csi_period.expect("checked"),
            amc_enabled: self.mac.amc,
            fixed_mcs: self.mac.fixed_mcs,
            target_bler: self.mac.target_bler,
            default_mcs: self.mac.default_mcs,
            rlc_capacity: rlc_capacity.expect("checked"),
            vehicles,
            groups,
            traffic,
        })
    }
}

/// Sets `path` (dotted keys, numeric segments index arrays) to `raw`,
/// parsed as a TOML literal with a bare-string fallback.
fn apply_override(root: &mut toml::Value, path: &str, raw: &str) -> Result<(), ConfigError> {
    let parsed: toml::Value = match toml::from_str::<BTreeMap<String, toml::Value>>(&format!(
        "v = {raw}"
    )) {
        Ok(mut map) => map.remove("v").expect("key v present"),
        Err(_) => toml::Value::String(raw.to_owned()),
    };
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(ConfigError::Override(path.into(), "empty key segment".into()));
    }
    let mut cursor = root;
    for (i, segment) in segments.iter().enumerate() {
        let last = i == segments.len() - 1;
        if let Ok(index) = segment.parse::<usize>() {
            let arr = cursor.as_array_mut().ok_or_else(|| {
                ConfigError::Override(path.into(), format!("'{segment}' indexes a non-array"))
            })?;
            if index >= arr.len() {
                return Err(ConfigError::Override(
                    path.into(),
                    format!("index {index} out of bounds ({} elements)", arr.len()),
                ));
            }
            if last {
                arr[index] = parsed;
                return Ok(());
            }
            cursor = &mut arr[index];
        } else {
            let table = cursor.as_table_mut().ok_or_else(|| {
                ConfigError::Override(path.into(), format!("'{segment}' indexes a non-table"))
            })?;
            if last {
                table.insert((*segment).to_owned(), parsed);
                return Ok(());
            }
            cursor = table
                .entry((*segment).to_owned())
                .or_insert_with(|| toml::Value::Table(Default::default()));
        }
    }
    unreachable!("loop returns on the last segment")
}
