//! Declarative scenario runner: one JSON config describes the whole link,
//! and [`run_scenario`] turns it into a metrics report, a constellation dump
//! and a tap trajectory.
//!
//! A master seed expands into independent per-stage seeds
//! ([`sub_seed`]), so toggling a stage such as the equalizer never changes
//! another stage's random draws.

use std::fs;
use std::io;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cmaeq::{self, ButterflyTaps, EqConfig, EqError, TapSnapshot};
use crate::fiberchan::{self, EdfaConfig, FiberConfig, FiberError};
use crate::linkmetrics::{self, AlignConfig, BerReport, ConstellationDump, MetricsError};
use crate::rxfront::{self, PolSearchResult, ReceiverConfig, RxError};
use crate::sigcore::{
    self, Bitstream, ComplexWaveform, DualPolWaveform, PulseShape, RealWaveform, SignalError,
    SymbolStream,
};
use crate::txchain::{self, DriverConfig, LaserConfig, ModulatorConfig, TxError};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Tx(#[from] TxError),
    #[error(transparent)]
    Fiber(#[from] FiberError),
    #[error(transparent)]
    Rx(#[from] RxError),
    #[error(transparent)]
    Eq(#[from] EqError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("scenario '{scenario}': {source}")]
    Stage {
        scenario: String,
        #[source]
        source: StageError,
    },
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

impl ScenarioError {
    pub fn is_config_error(&self) -> bool {
        matches!(self, ScenarioError::ConfigInvalid(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalConfig {
    pub symbol_rate_hz: f64,
    pub samples_per_symbol: usize,
    pub pulse: PulseShape,
    pub prbs_order: u32,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            symbol_rate_hz: sigcore::DEFAULT_SYMBOL_RATE,
            samples_per_symbol: sigcore::DEFAULT_SPS,
            pulse: PulseShape::Nrz,
            prbs_order: 7,
        }
    }
}

impl SignalConfig {
    pub fn sample_rate(&self) -> f64 {
        self.symbol_rate_hz * self.samples_per_symbol as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EqualizerSection {
    pub enabled: bool,
    pub config: EqConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    /// Leading fraction of the record excluded from metrics on both the
    /// equalized and unequalized paths.
    pub warmup_fraction: f64,
    /// Samples dropped at each record edge (circular filtering wrap-around).
    pub guard_samples: usize,
    pub align_window_symbols: usize,
    pub max_delay_symbols: usize,
    /// Sampling phase within the symbol; `null` picks the phase with the
    /// lowest EVM over the alignment window.
    pub sample_offset: Option<usize>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            warmup_fraction: 0.25,
            guard_samples: 512,
            align_window_symbols: 4096,
            max_delay_symbols: 32,
            sample_offset: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    pub n_symbols: usize,
    pub seed: u64,
    pub signal: SignalConfig,
    pub laser: LaserConfig,
    pub modulator: ModulatorConfig,
    pub driver: DriverConfig,
    pub fiber: FiberConfig,
    pub edfa: EdfaConfig,
    pub sop_seed: u64,
    pub receiver: ReceiverConfig,
    pub equalizer: EqualizerSection,
    pub metrics: MetricsConfig,
}

/// Smallest record accepted for a BER scenario.
pub const MIN_SYMBOLS: usize = 10_000;

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| ScenarioError::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ScenarioError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
            .map_err(|e| ScenarioError::ConfigInvalid(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::ConfigInvalid(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return bad(format!("name {:?} must be non-empty [A-Za-z0-9_-]", self.name));
        }
        if self.n_symbols < MIN_SYMBOLS {
            return bad(format!("n_symbols must be >= {MIN_SYMBOLS}"));
        }
        if self.signal.samples_per_symbol < 2 {
            return bad("samples_per_symbol must be >= 2".into());
        }
        if !(self.signal.symbol_rate_hz > 0.0) {
            return bad("symbol_rate_hz must be > 0".into());
        }
        if !sigcore::SUPPORTED_PRBS_ORDERS.contains(&self.signal.prbs_order) {
            return bad(format!("prbs_order {} unsupported", self.signal.prbs_order));
        }
        let wrap = |e: String| ScenarioError::ConfigInvalid(e);
        self.laser.validate().map_err(|e| wrap(e.to_string()))?;
        self.modulator.validate().map_err(|e| wrap(e.to_string()))?;
        self.driver.validate().map_err(|e| wrap(e.to_string()))?;
        self.fiber.validate().map_err(|e| wrap(e.to_string()))?;
        self.edfa.validate().map_err(|e| wrap(e.to_string()))?;
        self.receiver.validate().map_err(|e| wrap(e.to_string()))?;
        self.equalizer.config.validate().map_err(|e| wrap(e.to_string()))?;
        if self.equalizer.enabled {
            self.equalizer
                .config
                .tap_delay_samples(self.signal.sample_rate())
                .map_err(|e| wrap(e.to_string()))?;
        }
        let m = &self.metrics;
        if !(0.0..0.9).contains(&m.warmup_fraction) {
            return bad("warmup_fraction must lie in [0, 0.9)".into());
        }
        if let Some(o) = m.sample_offset {
            if o >= self.signal.samples_per_symbol {
                return bad(format!("sample_offset {o} >= samples_per_symbol"));
            }
        }
        if m.align_window_symbols == 0 {
            return bad("align_window_symbols must be >= 1".into());
        }
        let usable = self.usable_symbols();
        if usable < m.align_window_symbols + m.max_delay_symbols {
            return bad(format!(
                "only {usable} symbols remain after warm-up and guard; alignment needs {}",
                m.align_window_symbols + m.max_delay_symbols
            ));
        }
        Ok(())
    }

    fn n_samples(&self) -> usize {
        self.n_symbols * self.signal.samples_per_symbol
    }

    /// Symbol index range `[start, end)` that enters the metrics.
    pub fn metric_symbol_range(&self) -> (usize, usize) {
        let sps = self.signal.samples_per_symbol;
        let n = self.n_samples();
        let warm = (self.metrics.warmup_fraction * n as f64).floor() as usize;
        let lead = warm.max(self.metrics.guard_samples);
        let start = lead.div_ceil(sps) + self.metrics.max_delay_symbols / 2;
        let end = n.saturating_sub(self.metrics.guard_samples) / sps;
        (start, end.max(start))
    }

    fn usable_symbols(&self) -> usize {
        let (s, e) = self.metric_symbol_range();
        e - s
    }
}

/// Random stages, each drawing from its own seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    PrbsI = 0,
    PrbsQ = 1,
    LaserPhase = 2,
    Ase = 3,
    ReceiverNoise = 4,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `splitmix64(master ^ splitmix64(stage + 1))`.
pub fn sub_seed(master: u64, stage: Stage) -> u64 {
    splitmix64(master ^ splitmix64(stage as u64 + 1))
}

/// Nonzero LFSR seed in `[1, 2^order - 1]`.
pub fn prbs_seed(master: u64, stage: Stage, order: u32) -> u64 {
    let period = (1u64 << order) - 1;
    sub_seed(master, stage) % period + 1
}

/// Transmitted bits and the dual-polarization launch field.
pub struct Transmission {
    pub bits_i: Bitstream,
    pub bits_q: Bitstream,
    pub field: DualPolWaveform,
}

fn stage<E: Into<StageError>>(name: &str) -> impl Fn(E) -> ScenarioError + '_ {
    move |e| ScenarioError::Stage {
        scenario: name.to_string(),
        source: e.into(),
    }
}

pub fn transmit(cfg: &ScenarioConfig) -> Result<Transmission, ScenarioError> {
    let err = stage::<StageError>(&cfg.name);
    let sig = &cfg.signal;
    let order = sig.prbs_order;
    let n = cfg.n_symbols;
    let bits_i = sigcore::prbs_generate(order, n, prbs_seed(cfg.seed, Stage::PrbsI, order))
        .map_err(|e| err(e.into()))?;
    let bits_q = sigcore::prbs_generate(order, n, prbs_seed(cfg.seed, Stage::PrbsQ, order))
        .map_err(|e| err(e.into()))?;
    let symbols = sigcore::qpsk_gray_map(&bits_i, &bits_q).map_err(|e| err(e.into()))?;
    // Unit-energy symbols put each axis at +-1/sqrt(2); scale to +-Vpi/2.
    let swing = std::f64::consts::SQRT_2 * cfg.modulator.v_pi_v / 2.0;
    let drive = sigcore::build_waveform(&symbols, sig.samples_per_symbol, sig.pulse, sig.symbol_rate_hz)
        .map_err(|e| err(e.into()))?
        .scaled(swing);
    drop(symbols);
    let drive = txchain::driver_lowpass(&drive, &cfg.driver);
    let fs = sig.sample_rate();
    let laser = txchain::laser_field(
        &cfg.laser,
        drive.len(),
        fs,
        sub_seed(cfg.seed, Stage::LaserPhase),
    );
    let (to_modulator, carrier) = txchain::carrier_split(&laser, cfg.modulator.carrier_split_ratio);
    drop(laser);
    let signal = txchain::mzm_iq_modulate(&to_modulator, &drive.re(), &drive.im(), &cfg.modulator)
        .map_err(|e| err(e.into()))?;
    drop(to_modulator);
    let field = txchain::pol_mux(&signal, &carrier).map_err(|e| err(e.into()))?;
    Ok(Transmission {
        bits_i,
        bits_q,
        field,
    })
}

/// Dispersion, SOP rotation, loss, optional EDFA, then the receiver VOA.
pub fn propagate(cfg: &ScenarioConfig, field: &DualPolWaveform) -> Result<DualPolWaveform, ScenarioError> {
    let err = stage::<StageError>(&cfg.name);
    let mut f = fiberchan::apply_cd(field, &cfg.fiber);
    f = fiberchan::pol_transform(&f, &fiberchan::random_sop_rotation(cfg.sop_seed));
    f = fiberchan::attenuate(&f, &cfg.fiber);
    if cfg.edfa.enabled {
        f = fiberchan::edfa_amplify(&f, &cfg.edfa, sub_seed(cfg.seed, Stage::Ase))
            .map_err(|e| err(e.into()))?;
    }
    if cfg.receiver.voa_db > 0.0 {
        f = fiberchan::attenuate_db(&f, cfg.receiver.voa_db);
    }
    Ok(f)
}

pub struct Detection {
    pub i: RealWaveform,
    pub q: RealWaveform,
    pub pol: PolSearchResult,
}

/// Polarization control, PBS and balanced detection (volts, before AGC).
pub fn detect(cfg: &ScenarioConfig, field: &DualPolWaveform) -> Result<Detection, ScenarioError> {
    let err = stage::<StageError>(&cfg.name);
    let pol = rxfront::pol_control_search(field, cfg.receiver.pol_objective).map_err(|e| err(e.into()))?;
    let (signal, lo) = rxfront::pbs_split(field, &pol.matrix);
    let (i, q) = rxfront::hybrid_balanced_detect(
        &signal,
        &lo,
        &cfg.receiver,
        sub_seed(cfg.seed, Stage::ReceiverNoise),
    )
    .map_err(|e| err(e.into()))?;
    Ok(Detection { i, q, pol })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolSummary {
    pub extinction_db: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TapSummary {
    pub final_taps: ButterflyTaps,
    pub max_magnitude: f64,
}

/// Work counters. Wall-clock time is left out so reports stay reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub samples_simulated: usize,
    pub equalizer_samples: usize,
    pub symbols_compared: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub scenario: String,
    pub fiber_length_km: f64,
    pub equalizer_enabled: bool,
    pub ber: BerReport,
    pub evm_percent: f64,
    pub cma_cost_final: Option<f64>,
    pub tap_summary: Option<TapSummary>,
    pub pol_search: PolSummary,
    /// Factor mapping AGC output volts onto the unit-RMS equalizer input.
    pub volts_to_normalized: f64,
    pub sample_offset: usize,
    pub runtime: RuntimeStats,
    pub config: ScenarioConfig,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub struct ScenarioOutput {
    pub report: MetricsReport,
    pub constellation: ConstellationDump,
    pub taps: Vec<TapSnapshot>,
}

fn normalize_rms(v: &[Complex64]) -> Vec<Complex64> {
    let p = sigcore::mean_power(v);
    if p > 0.0 {
        let k = 1.0 / p.sqrt();
        v.iter().map(|s| s * k).collect()
    } else {
        v.to_vec()
    }
}

/// Sampling phase with the lowest blind-derotated EVM over `window` symbols
/// starting at symbol `start`.
pub fn best_sample_offset(wave: &[Complex64], sps: usize, start: usize, window: usize) -> usize {
    let mut best = (f64::INFINITY, 0);
    for offset in 0..sps {
        let syms: Vec<Complex64> = (start..start + window)
            .filter_map(|k| wave.get(k * sps + offset).copied())
            .collect();
        if syms.is_empty() {
            continue;
        }
        let syms = normalize_rms(&syms);
        let rot = Complex64::from_polar(1.0, -linkmetrics::fourth_power_phase(&syms));
        let derot: Vec<Complex64> = syms.iter().map(|s| s * rot).collect();
        let evm = linkmetrics::evm_measure(&SymbolStream::new(derot)).unwrap_or(f64::INFINITY);
        if evm < best.0 {
            best = (evm, offset);
        }
    }
    best.1
}

/// Full pipeline for one scenario. Identical configs give identical outputs.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutput, ScenarioError> {
    cfg.validate()?;
    let err = stage::<StageError>(&cfg.name);
    let sps = cfg.signal.samples_per_symbol;

    let tx = transmit(cfg)?;
    let n_samples = tx.field.len();
    let rx_field = propagate(cfg, &tx.field)?;
    drop(tx.field);
    let det = detect(cfg, &rx_field)?;
    drop(rx_field);

    let target = cfg.receiver.agc_target_vpp;
    let i = rxfront::agc_normalize(&det.i, target).map_err(|e| err(e.into()))?;
    let q = rxfront::agc_normalize(&det.q, target).map_err(|e| err(e.into()))?;
    let volts = i.with_quadrature(&q).map_err(|e| err(e.into()))?;
    drop((i, q));
    let rms = volts.mean_power().sqrt();
    let volts_to_normalized = 1.0 / rms;
    let x_in = volts.scaled(volts_to_normalized);
    drop(volts);

    let (x_eq, eq_run) = if cfg.equalizer.enabled {
        // The Y chip inputs carry no data in the self-homodyne receiver and
        // are left terminated.
        let y_in = ComplexWaveform {
            samples: vec![Complex64::new(0.0, 0.0); x_in.len()],
            sample_rate: x_in.sample_rate,
        };
        let eq_cfg = EqConfig {
            warmup_samples: Some(0),
            ..cfg.equalizer.config.clone()
        };
        let taps0 = cmaeq::reset_taps(&eq_cfg);
        let run = cmaeq::equalizer_run(&x_in, &y_in, &eq_cfg, &taps0, true).map_err(|e| err(e.into()))?;
        (run.x_eq.samples.clone(), Some(run))
    } else {
        (x_in.samples, None)
    };

    let m = &cfg.metrics;
    let (start, end) = cfg.metric_symbol_range();
    let offset = m
        .sample_offset
        .unwrap_or_else(|| best_sample_offset(&x_eq, sps, start, m.align_window_symbols));
    let lead = m.max_delay_symbols / 2;
    let rx_syms: Vec<Complex64> = ((start - lead)..end).map(|k| x_eq[k * sps + offset]).collect();
    let ref_i = tx.bits_i.slice(start, end).expect("validated range");
    let ref_q = tx.bits_q.slice(start, end).expect("validated range");
    let align = AlignConfig {
        window: m.align_window_symbols,
        max_delay: m.max_delay_symbols,
        ..AlignConfig::default()
    };
    let (aligned, alignment) =
        linkmetrics::resolve_ambiguity_with(&SymbolStream::new(rx_syms), &ref_i, &ref_q, &align)
            .map_err(|e| err(e.into()))?;
    let compared = aligned.len().min(end - start);
    let aligned = normalize_rms(&aligned.symbols[..compared]);
    let aligned = SymbolStream::new(aligned);
    let (rx_i, rx_q) = sigcore::qpsk_demap(&aligned).map_err(|e| err(e.into()))?;
    let ref_i = ref_i.slice(0, compared).expect("nonempty");
    let ref_q = ref_q.slice(0, compared).expect("nonempty");
    let mut ber = linkmetrics::ber_measure(&rx_i, &rx_q, &ref_i, &ref_q).map_err(|e| err(e.into()))?;
    ber.alignment = Some(alignment);
    let evm_percent = linkmetrics::evm_measure(&aligned).map_err(|e| err(e.into()))?;

    let (cma_cost_final, tap_summary, taps) = match eq_run {
        Some(run) => (
            run.cost_trace.last().copied(),
            Some(TapSummary {
                max_magnitude: run.final_taps.max_magnitude(),
                final_taps: run.final_taps,
            }),
            run.tap_trajectory,
        ),
        None => (None, None, Vec::new()),
    };

    let report = MetricsReport {
        schema_version: SCHEMA_VERSION,
        tool_version: TOOL_VERSION.to_string(),
        scenario: cfg.name.clone(),
        fiber_length_km: cfg.fiber.length_km,
        equalizer_enabled: cfg.equalizer.enabled,
        ber,
        evm_percent,
        cma_cost_final,
        tap_summary,
        pol_search: PolSummary {
            extinction_db: det.pol.extinction_db,
            iterations: det.pol.iterations,
            evaluations: det.pol.evaluations,
        },
        volts_to_normalized,
        sample_offset: offset,
        runtime: RuntimeStats {
            samples_simulated: n_samples,
            equalizer_samples: if cfg.equalizer.enabled { n_samples } else { 0 },
            symbols_compared: compared,
        },
        config: cfg.clone(),
    };
    let constellation = ConstellationDump {
        scenario: cfg.name.clone(),
        scale: volts_to_normalized,
        x: aligned.symbols,
        y: None,
    };
    Ok(ScenarioOutput {
        report,
        constellation,
        taps,
    })
}

impl ScenarioOutput {
    /// Write `<out>/<scenario>/{report.json, constellation.csv, taps.csv}`.
    pub fn write_to(&self, out_dir: &Path) -> Result<(), ScenarioError> {
        let dir = out_dir.join(&self.report.scenario);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("report.json"), self.report.to_json() + "\n")?;
        let mut c = Vec::new();
        linkmetrics::write_constellation(&self.constellation, &mut c)?;
        fs::write(dir.join("constellation.csv"), c)?;
        let mut t = Vec::new();
        cmaeq::write_taps_csv(&self.taps, &mut t)?;
        fs::write(dir.join("taps.csv"), t)?;
        Ok(())
    }
}

pub const PRESET_NAMES: [&str; 6] = ["b2b", "b2b-eq", "l20km", "l20km-eq", "l80km", "l80km-eq"];

/// Attenuation from the launch to the receiver input shared by every
/// preset: the VOA takes up whatever the span and EDFA leave over.
pub const PRESET_RX_ATTENUATION_DB: f64 = 23.0;

fn base_preset(name: &str, length_km: f64, equalize: bool) -> ScenarioConfig {
    let fiber = FiberConfig {
        length_km,
        ..FiberConfig::default()
    };
    let amplified = length_km >= 50.0;
    let edfa_gain_db = fiber.total_loss_db();
    let net_loss_db = if amplified { 0.0 } else { fiber.total_loss_db() };
    ScenarioConfig {
        schema_version: SCHEMA_VERSION,
        name: name.to_string(),
        n_symbols: 1_000_000,
        seed: 20_190_001,
        signal: SignalConfig {
            prbs_order: 15,
            ..SignalConfig::default()
        },
        laser: LaserConfig::default(),
        modulator: ModulatorConfig::default(),
        driver: DriverConfig::default(),
        fiber,
        edfa: EdfaConfig {
            enabled: amplified,
            gain_db: edfa_gain_db,
            ..EdfaConfig::default()
        },
        sop_seed: 7,
        receiver: ReceiverConfig {
            voa_db: PRESET_RX_ATTENUATION_DB - net_loss_db,
            ..ReceiverConfig::default()
        },
        equalizer: EqualizerSection {
            enabled: equalize,
            config: EqConfig::default(),
        },
        metrics: MetricsConfig::default(),
    }
}

/// Bundled presets: back-to-back, 20 km and 80 km, each with the equalizer
/// off and on. The 80 km pair adds an EDFA that makes up the span loss, and
/// the receiver VOA holds the received power at the same level for all.
pub fn preset(name: &str) -> Option<ScenarioConfig> {
    let (len, eq) = match name {
        "b2b" => (0.0, false),
        "b2b-eq" => (0.0, true),
        "l20km" => (20.0, false),
        "l20km-eq" => (20.0, true),
        "l80km" => (80.0, false),
        "l80km-eq" => (80.0, true),
        _ => return None,
    };
    Some(base_preset(name, len, eq))
}

pub fn presets() -> Vec<ScenarioConfig> {
    PRESET_NAMES.iter().filter_map(|n| preset(n)).collect()
}
