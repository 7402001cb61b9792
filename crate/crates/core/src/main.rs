use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use v2vsim::config::{parse_duration, ConfigError, ScenarioConfig};
use v2vsim::engine::Simulation;
use v2vsim::trace::{write_app_trace, CsvTraceWriter};

/// Discrete-event simulator for mmWave V2V sidelink networks.
#[derive(Parser)]
#[command(name = "v2vsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write traces plus a statistics summary.
    Run {
        /// Scenario config file (TOML).
        config: PathBuf,
        /// Simulated duration override, e.g. "2s" or "500ms".
        #[arg(long)]
        duration: Option<String>,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Dotted-path config override, e.g. --set mac.fixed_mcs=14.
        #[arg(long = "set", value_name = "PATH=VALUE")]
        set: Vec<String>,
        /// Output directory (default: the V2VSIM_OUT env var or "out").
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a parameter sweep: one run per parameter value per seed.
    Sweep {
        /// Scenario config file (TOML).
        config: PathBuf,
        /// Swept parameter: --param phy.bandwidth_hz=100e6,400e6
        #[arg(long = "param", value_name = "PATH=V1,V2,...")]
        params: Vec<String>,
        /// Seeds per parameter combination (seed, seed+1, ...).
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// First seed.
        #[arg(long, default_value_t = 1)]
        base_seed: u64,
        /// Simulated duration override.
        #[arg(long)]
        duration: Option<String>,
        /// Output directory (default: the V2VSIM_OUT env var or "out").
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    if let Err(e) = run_cli(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run_cli(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            duration,
            seed,
            set,
            out,
        } => {
            let overrides = collect_overrides(&set, &duration, &seed)?;
            let out_dir = resolve_out_dir(out);
            let summary_path = run_one(&config, &overrides, &out_dir)?;
            println!("{}", fs::read_to_string(summary_path)?);
            Ok(())
        }
        Command::Sweep {
            config,
            params,
            seeds,
            base_seed,
            duration,
            out,
        } => {
            let out_dir = resolve_out_dir(out);
            sweep(&config, &params, seeds, base_seed, &duration, &out_dir)
        }
    }
}

fn resolve_out_dir(cli_out: Option<PathBuf>) -> PathBuf {
    cli_out
        .or_else(|| std::env::var_os("V2VSIM_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn collect_overrides(
    set: &[String],
    duration: &Option<String>,
    seed: &Option<u64>,
) -> Result<Vec<(String, String)>> {
    let mut overrides = Vec::new();
    for entry in set {
        let (path, value) = entry
            .split_once('=')
            .with_context(|| format!("--set '{entry}' is not PATH=VALUE"))?;
        overrides.push((path.to_owned(), value.to_owned()));
    }
    if let Some(d) = duration {
        parse_duration(d).map_err(|e| anyhow::anyhow!("--duration: {e}"))?;
        overrides.push(("duration".to_owned(), format!("\"{d}\"")));
    }
    if let Some(s) = seed {
        overrides.push(("seed".to_owned(), s.to_string()));
    }
    Ok(overrides)
}

/// Runs one scenario into `out_dir`, returning the summary path.
fn run_one(
    config_path: &Path,
    overrides: &[(String, String)],
    out_dir: &Path,
) -> Result<PathBuf> {
    let text = fs::read_to_string(config_path)
        .map_err(|source| ConfigError::Io {
            path: config_path.to_owned(),
            source,
        })
        .context("loading scenario config")?;
    let config = ScenarioConfig::from_toml_with_overrides(&text, overrides)?;
    let validated = config.validate()?;

    // Nothing is written until the config is known to be good.
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    fs::write(out_dir.join("effective_config.toml"), config.to_toml_string())?;

    let sim = Simulation::build(&validated)?;
    let phy_path = out_dir.join("phy_trace.csv");
    let mut phy_sink = CsvTraceWriter::new(BufWriter::new(File::create(&phy_path)?))?;
    let output = sim.run(&mut phy_sink)?;
    phy_sink.finish()?;

    let mut app_file = BufWriter::new(File::create(out_dir.join("app_trace.csv"))?);
    write_app_trace(&mut app_file, &output.app_records)?;

    let summary_path = out_dir.join("summary.txt");
    fs::write(&summary_path, v2vsim::trace::render_summary(&output.summary))?;
    Ok(summary_path)
}

struct SweepJob {
    overrides: Vec<(String, String)>,
    dir: PathBuf,
    label: String,
    seed: u64,
}

struct SweepResult {
    label: String,
    seed: u64,
    dir: PathBuf,
    error: Option<String>,
}

fn sweep(
    config_path: &Path,
    params: &[String],
    seeds: u64,
    base_seed: u64,
    duration: &Option<String>,
    out_dir: &Path,
) -> Result<()> {
    if seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let mut axes: Vec<(String, Vec<String>)> = Vec::new();
    for p in params {
        let (path, values) = p
            .split_once('=')
            .with_context(|| format!("--param '{p}' is not PATH=V1,V2,..."))?;
        let values: Vec<String> = values.split(',').map(str::to_owned).collect();
        if values.is_empty() {
            bail!("--param '{p}' has no values");
        }
        axes.push((path.to_owned(), values));
    }
    let mut combos: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (path, values) in &axes {
        combos = combos
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut c = prefix.clone();
                    c.push((path.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }

    let mut jobs = Vec::new();
    for combo in &combos {
        let label = if combo.is_empty() {
            "base".to_owned()
        } else {
            combo
                .iter()
                .map(|(p, v)| format!("{}={}", p, sanitize(v)))
                .collect::<Vec<_>>()
                .join("__")
        };
        for k in 0..seeds {
            let seed = base_seed + k;
            let mut overrides: Vec<(String, String)> = combo.clone();
            if let Some(d) = duration {
                overrides.push(("duration".to_owned(), format!("\"{d}\"")));
            }
            overrides.push(("seed".to_owned(), seed.to_string()));
            jobs.push(SweepJob {
                overrides,
                dir: out_dir.join(&label).join(format!("seed{seed}")),
                label: label.clone(),
                seed,
            });
        }
    }

    // Independent runs, fanned out over the available cores.
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<SweepResult>> = Mutex::new(Vec::new());
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(idx) else { break };
                let outcome = run_one(config_path, &job.overrides, &job.dir);
                results.lock().unwrap().push(SweepResult {
                    label: job.label.clone(),
                    seed: job.seed,
                    dir: job.dir.clone(),
                    error: outcome.as_ref().err().map(|e| format!("{e:#}")),
                });
            });
        }
    });

    let mut rows = results.into_inner().unwrap();
    rows.sort_by(|a, b| (&a.label, a.seed).cmp(&(&b.label, b.seed)));
    let mut index = String::from("label,seed,dir,status\n");
    let mut failures = 0;
    for r in &rows {
        let status = match &r.error {
            None => "ok",
            Some(e) => {
                failures += 1;
                eprintln!("run {} seed {} failed: {e}", r.label, r.seed);
                "failed"
            }
        };
        index.push_str(&format!(
            "{},{},{},{status}\n",
            r.label,
            r.seed,
            r.dir.display()
        ));
    }
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("sweep_index.csv"), index)?;
    println!("{} runs, {} failed, index at {}", rows.len(), failures, out_dir.display());
    if failures > 0 {
        bail!("{failures} sweep runs failed");
    }
    Ok(())
}

fn sanitize(value: &str) -> String {
    value
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}
