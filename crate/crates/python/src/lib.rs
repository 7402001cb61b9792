//! Python bindings: the channel closed forms, frame/TBS arithmetic, the
//! BLER model and a scenario runner that returns summary metrics as a dict.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use v2vsim::channel::{self, AntennaArray, ChannelScenario, LinkBudget, LinkState};
use v2vsim::config::ScenarioConfig;
use v2vsim::engine::Simulation;
use v2vsim::mac::AmcState;
use v2vsim::phy::{CsiReport, FrameConfig, McsTable};
use v2vsim::sim::SimTime;
use v2vsim::trace::{CollectSink, CsvTraceWriter};

fn parse_scenario(name: &str) -> PyResult<ChannelScenario> {
    match name {
        "highway" => Ok(ChannelScenario::Highway),
        "urban" => Ok(ChannelScenario::Urban),
        "extended-highway" => Ok(ChannelScenario::ExtendedHighway),
        "extended-urban" => Ok(ChannelScenario::ExtendedUrban),
        other => Err(PyValueError::new_err(format!(
            "unknown scenario '{other}' (highway, urban, extended-highway, extended-urban)"
        ))),
    }
}

fn parse_state(name: &str) -> PyResult<LinkState> {
    match name {
        "los" => Ok(LinkState::Los),
        "nlosv" => Ok(LinkState::Nlosv),
        "nlos" => Ok(LinkState::Nlos),
        other => Err(PyValueError::new_err(format!(
            "unknown link state '{other}' (los, nlosv, nlos)"
        ))),
    }
}

/// LOS/NLOSv/NLOS probabilities for a scenario at distance d (meters).
#[pyfunction]
#[pyo3(signature = (scenario, d, negated_exponent = false))]
fn state_probabilities(
    scenario: &str,
    d: f64,
    negated_exponent: bool,
) -> PyResult<(f64, f64, f64)> {
    let p = channel::state_probabilities(parse_scenario(scenario)?, d, negated_exponent)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((p.p_los, p.p_nlosv, p.p_nlos))
}

/// Pathloss in dB for (scenario, state) at distance d (m) and carrier fc (GHz).
#[pyfunction]
#[pyo3(signature = (scenario, state, d, fc_ghz, shadow_db = 0.0))]
fn pathloss_db(
    scenario: &str,
    state: &str,
    d: f64,
    fc_ghz: f64,
    shadow_db: f64,
) -> PyResult<f64> {
    Ok(channel::pathloss_db(
        parse_scenario(scenario)?,
        parse_state(state)?,
        d,
        fc_ghz,
        shadow_db,
    ))
}

/// Combined beamforming gain (dB) of aligned arrays with the given element counts.
#[pyfunction]
fn beamforming_gain_db(n_tx: u32, n_rx: u32) -> f64 {
    channel::beamforming_gain_db(
        &AntennaArray::with_elements(n_tx),
        &AntennaArray::with_elements(n_rx),
    )
}

/// Thermal noise floor (dBm) over a bandwidth with a receiver noise figure.
#[pyfunction]
fn noise_floor_dbm(bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    LinkBudget {
        bandwidth_hz,
        noise_figure_db,
        ..LinkBudget::default()
    }
    .noise_floor_dbm()
}

/// Transport block size (bytes) for an allocation on the given grid.
#[pyfunction]
#[pyo3(signature = (numerology, bandwidth_hz, mcs, symbol_count, overhead = 0.14))]
fn tbs_bytes(
    numerology: u8,
    bandwidth_hz: f64,
    mcs: u8,
    symbol_count: u32,
    overhead: f64,
) -> PyResult<usize> {
    let cfg = FrameConfig::new(numerology, bandwidth_hz)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(v2vsim::phy::tbs_bytes(
        &cfg,
        &McsTable::default_table(),
        mcs,
        symbol_count,
        overhead,
    ))
}

/// Block error probability of the built-in table at (mcs, sinr).
#[pyfunction]
fn bler(mcs: u8, sinr_db: f64) -> f64 {
    McsTable::default_table().bler(mcs, sinr_db)
}

/// MCS the link adaptation would select for a reported SINR.
#[pyfunction]
#[pyo3(signature = (sinr_db, target_bler = 0.1))]
fn select_mcs(sinr_db: f64, target_bler: f64) -> u8 {
    let amc = AmcState {
        last_csi: Some(CsiReport {
            wideband_sinr_db: sinr_db,
            timestamp: SimTime::ZERO,
        }),
        target_bler,
        fixed_mcs: None,
        default_mcs: 0,
    };
    amc.select_mcs(&McsTable::default_table())
}

fn summary_to_dict<'py>(
    py: Python<'py>,
    summary: &v2vsim::metrics::Summary,
) -> PyResult<Bound<'py, PyDict>> {
    let dict = PyDict::new(py);
    dict.set_item("duration_ns", summary.duration.as_ns())?;
    let flows = PyList::empty(py);
    for f in &summary.flows {
        let d = PyDict::new(py);
        d.set_item("tx_rnti", f.key.tx_rnti)?;
        d.set_item("rx_rnti", f.key.rx_rnti)?;
        d.set_item("sent", f.sent)?;
        d.set_item("delivered", f.delivered)?;
        d.set_item("delivered_bytes", f.delivered_bytes)?;
        d.set_item("throughput_mbps", f.throughput_mbps)?;
        d.set_item("mean_latency_ms", f.mean_latency_ms)?;
        flows.append(d)?;
    }
    dict.set_item("flows", flows)?;
    let links = PyList::empty(py);
    for l in &summary.links {
        let d = PyDict::new(py);
        d.set_item("tx_rnti", l.key.tx_rnti)?;
        d.set_item("rx_rnti", l.key.rx_rnti)?;
        d.set_item("records", l.records)?;
        d.set_item("corrupt", l.corrupt)?;
        d.set_item("mean_sinr_db", l.mean_sinr_db)?;
        d.set_item("mean_mcs", l.mean_mcs)?;
        links.append(d)?;
    }
    dict.set_item("links", links)?;
    let c = PyDict::new(py);
    c.set_item("corrupt_tbs", summary.counters.corrupt_tbs)?;
    c.set_item("rlc_tx_drops", summary.counters.rlc_tx_drops)?;
    c.set_item("rlc_discarded_sdus", summary.counters.rlc_discarded_sdus)?;
    c.set_item("pdcp_duplicates", summary.counters.pdcp_duplicates)?;
    dict.set_item("counters", c)?;
    Ok(dict)
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn run_config(
    py: Python<'_>,
    config: ScenarioConfig,
    out_dir: Option<&str>,
) -> PyResult<Py<PyDict>> {
    let validated = config.validate().map_err(value_err)?;
    let sim = Simulation::build(&validated).map_err(value_err)?;
    let output = match out_dir {
        None => {
            let mut sink = CollectSink::default();
            sim.run(&mut sink).map_err(value_err)?
        }
        Some(dir) => {
            let dir = std::path::Path::new(dir);
            std::fs::create_dir_all(dir).map_err(value_err)?;
            std::fs::write(dir.join("effective_config.toml"), config.to_toml_string())
                .map_err(value_err)?;
            let file = std::fs::File::create(dir.join("phy_trace.csv")).map_err(value_err)?;
            let mut sink =
                CsvTraceWriter::new(std::io::BufWriter::new(file)).map_err(value_err)?;
            let output = sim.run(&mut sink).map_err(value_err)?;
            sink.finish().map_err(value_err)?;
            let mut app = std::io::BufWriter::new(
                std::fs::File::create(dir.join("app_trace.csv")).map_err(value_err)?,
            );
            v2vsim::trace::write_app_trace(&mut app, &output.app_records).map_err(value_err)?;
            std::fs::write(
                dir.join("summary.txt"),
                v2vsim::trace::render_summary(&output.summary),
            )
            .map_err(value_err)?;
            output
        }
    };
    Ok(summary_to_dict(py, &output.summary)?.unbind())
}

/// Runs a scenario given as a TOML string; returns the summary as a dict.
/// `overrides` are (dotted-path, value) pairs like ("mac.fixed_mcs", "14");
/// with `out_dir` set, the trace files are written like the CLI would.
#[pyfunction]
#[pyo3(signature = (config_toml, overrides = None, out_dir = None))]
fn run_scenario(
    py: Python<'_>,
    config_toml: &str,
    overrides: Option<Vec<(String, String)>>,
    out_dir: Option<&str>,
) -> PyResult<Py<PyDict>> {
    let overrides = overrides.unwrap_or_default();
    let config =
        ScenarioConfig::from_toml_with_overrides(config_toml, &overrides).map_err(value_err)?;
    run_config(py, config, out_dir)
}

/// Like `run_scenario`, reading the config from a file path.
#[pyfunction]
#[pyo3(signature = (config_path, overrides = None, out_dir = None))]
fn run_scenario_file(
    py: Python<'_>,
    config_path: &str,
    overrides: Option<Vec<(String, String)>>,
    out_dir: Option<&str>,
) -> PyResult<Py<PyDict>> {
    let text = std::fs::read_to_string(config_path).map_err(value_err)?;
    run_scenario(py, &text, overrides, out_dir)
}

#[pymodule]
fn v2vsim_py(_py: Python<'_>, m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(state_probabilities, m)?)?;
    m.add_function(wrap_pyfunction!(pathloss_db, m)?)?;
    m.add_function(wrap_pyfunction!(beamforming_gain_db, m)?)?;
    m.add_function(wrap_pyfunction!(noise_floor_dbm, m)?)?;
    m.add_function(wrap_pyfunction!(tbs_bytes, m)?)?;
    m.add_function(wrap_pyfunction!(bler, m)?)?;
    m.add_function(wrap_pyfunction!(select_mcs, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario_file, m)?)?;
    Ok(())
}
