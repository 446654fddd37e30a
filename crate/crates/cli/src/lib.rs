//! Scenario and suite runner behind the `shqpsk` binary.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use shqpsk::scenario::{self, ScenarioConfig, ScenarioError, ScenarioOutput};

pub const EXIT_OK: i32 = 0;
pub const EXIT_SCENARIO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// Command-line overrides applied on top of every loaded config.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub no_eq: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if self.no_eq {
            cfg.equalizer.enabled = false;
        }
    }
}

/// Load a config from a JSON file, or from a bundled preset when `arg`
/// names one and no such file exists.
pub fn load_config(arg: &str) -> Result<ScenarioConfig, ScenarioError> {
    let path = Path::new(arg);
    if path.exists() {
        return ScenarioConfig::from_path(path);
    }
    scenario::preset(arg).ok_or_else(|| {
        ScenarioError::ConfigInvalid(format!(
            "{arg}: no such file and not a preset ({})",
            scenario::PRESET_NAMES.join(", ")
        ))
    })
}

/// Run one scenario and write its files under `out`.
pub fn run_one(cfg: &ScenarioConfig, out: &Path) -> Result<ScenarioOutput, ScenarioError> {
    let output = scenario::run_scenario(cfg)?;
    output.write_to(out)?;
    Ok(output)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scenario: String,
    pub fiber_length_km: f64,
    pub equalizer: bool,
    pub ber: f64,
    pub bit_errors: u64,
    pub bits_compared: u64,
    pub evm_percent: f64,
}

impl SummaryRow {
    pub fn from_output(out: &ScenarioOutput) -> Self {
        let r = &out.report;
        Self {
            scenario: r.scenario.clone(),
            fiber_length_km: r.fiber_length_km,
            equalizer: r.equalizer_enabled,
            ber: r.ber.ber,
            bit_errors: r.ber.bit_errors as u64,
            bits_compared: r.ber.bits_compared as u64,
            evm_percent: r.evm_percent,
        }
    }
}

/// A suite input that could not produce a row.
#[derive(Debug)]
pub struct Failure {
    pub source: String,
    pub error: ScenarioError,
}

#[derive(Debug, Default)]
pub struct SuiteOutcome {
    pub rows: Vec<SummaryRow>,
    pub failures: Vec<Failure>,
}

impl SuiteOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.failures.iter().any(|f| f.error.is_config_error()) {
            EXIT_CONFIG
        } else if self.failures.is_empty() {
            EXIT_OK
        } else {
            EXIT_SCENARIO
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

pub const SUMMARY_HEADER: &str =
    "scenario,fiber_length_km,equalizer,ber,bit_errors,bits_compared,evm_percent";

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:?},{},{:e},{},{},{:.4}",
            r.scenario,
            r.fiber_length_km,
            if r.equalizer { "on" } else { "off" },
            r.ber,
            r.bit_errors,
            r.bits_compared,
            r.evm_percent
        );
    }
    s
}

pub fn summary_table(rows: &[SummaryRow]) -> String {
    let mut s = format!(
        "{:<16} {:>9} {:>4} {:>11} {:>10} {:>8}\n",
        "scenario", "length_km", "eq", "ber", "errors", "evm_%"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<16} {:>9.1} {:>4} {:>11.3e} {:>10} {:>8.2}",
            r.scenario,
            r.fiber_length_km,
            if r.equalizer { "on" } else { "off" },
            r.ber,
            r.bit_errors,
            r.evm_percent
        );
    }
    s
}

/// Run every config in `inputs` on up to `jobs` threads.
///
/// Inputs that fail to load are reported as failures and skipped; the rest
/// still run and their files and summary rows are written. Rows keep input
/// order regardless of `jobs`.
pub fn run_suite(
    inputs: &[String],
    jobs: usize,
    out: &Path,
    overrides: Overrides,
) -> Result<SuiteOutcome, CliError> {
    if inputs.is_empty() {
        return Err(CliError::Usage("suite needs at least one config".into()));
    }
    let mut failures = Vec::new();
    let mut configs: Vec<(String, ScenarioConfig)> = Vec::new();
    for arg in inputs {
        match load_config(arg) {
            Ok(mut cfg) => {
                overrides.apply(&mut cfg);
                if configs.iter().any(|(_, c)| c.name == cfg.name) {
                    failures.push(Failure {
                        source: arg.clone(),
                        error: ScenarioError::ConfigInvalid(format!(
                            "{arg}: duplicate scenario name {:?}",
                            cfg.name
                        )),
                    });
                } else {
                    configs.push((arg.clone(), cfg));
                }
            }
            Err(error) => failures.push(Failure {
                source: arg.clone(),
                error,
            }),
        }
    }

    fs::create_dir_all(out)?;
    let results: Vec<Mutex<Option<Result<SummaryRow, ScenarioError>>>> =
        configs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = jobs.clamp(1, configs.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some((_, cfg)) = configs.get(k) else { break };
                let res = run_one(cfg, out).map(|o| SummaryRow::from_output(&o));
                *results[k].lock().expect("result slot") = Some(res);
            });
        }
    });

    let mut rows = Vec::new();
    for ((arg, _), slot) in configs.iter().zip(results) {
        match slot.into_inner().expect("result slot") {
            Some(Ok(row)) => rows.push(row),
            Some(Err(error)) => failures.push(Failure {
                source: arg.clone(),
                error,
            }),
            None => unreachable!("every config is claimed by a worker"),
        }
    }
    fs::write(out.join("summary.csv"), summary_csv(&rows))?;
    fs::write(out.join("summary.txt"), summary_table(&rows))?;
    Ok(SuiteOutcome { rows, failures })
}

/// Write every bundled preset as `<dir>/<name>.json`.
pub fn export_presets(dir: &Path) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for cfg in scenario::presets() {
        let path = dir.join(format!("{}.json", cfg.name));
        fs::write(&path, cfg.to_json() + "\n")?;
        written.push(path);
    }
    Ok(written)
}
