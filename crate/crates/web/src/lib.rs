//! wasm-bindgen entry points for the static demo page in `www/`.

use shqpsk::cmaeq::{self, EqConfig};
use shqpsk::fiberchan::{self, FiberConfig};
use shqpsk::scenario::{self, ScenarioConfig};
use shqpsk::sigcore::{ComplexWaveform, DualPolWaveform};
use shqpsk::Complex64;
use wasm_bindgen::prelude::*;

const DEMO_SYMBOLS: usize = 20_000;
const DEMO_SPS: usize = 10;
const DEMO_RATE: f64 = 10e9;

/// Outcome of a short link run: BER, EVM and the equalized constellation.
#[wasm_bindgen]
pub struct LinkRun {
    ber: f64,
    bit_errors: usize,
    evm_percent: f64,
    points: Vec<f64>,
}

#[wasm_bindgen]
impl LinkRun {
    #[wasm_bindgen(getter)]
    pub fn ber(&self) -> f64 {
        self.ber
    }

    #[wasm_bindgen(getter)]
    pub fn bit_errors(&self) -> usize {
        self.bit_errors
    }

    #[wasm_bindgen(getter)]
    pub fn evm_percent(&self) -> f64 {
        self.evm_percent
    }

    /// Interleaved `re, im` pairs of the received symbols.
    #[wasm_bindgen(getter)]
    pub fn points(&self) -> Vec<f64> {
        self.points.clone()
    }
}

fn demo_config(length_km: f64, equalize: bool, attenuation_db: f64, seed: u64) -> ScenarioConfig {
    let name = if length_km >= 50.0 { "l80km" } else { "b2b" };
    let mut cfg = scenario::preset(name).expect("bundled preset");
    cfg.name = "demo".into();
    cfg.n_symbols = DEMO_SYMBOLS;
    cfg.seed = seed;
    cfg.fiber.length_km = length_km.max(0.0);
    cfg.edfa.enabled = length_km >= 50.0;
    cfg.edfa.gain_db = cfg.fiber.total_loss_db();
    let net_loss = if cfg.edfa.enabled { 0.0 } else { cfg.fiber.total_loss_db() };
    cfg.receiver.voa_db = (attenuation_db - net_loss).max(0.0);
    cfg.equalizer.enabled = equalize;
    cfg
}

/// Simulate a short link and return its metrics and constellation.
/// `attenuation_db` is the launch-to-receiver loss; the VOA supplies the
/// part the fiber does not.
#[wasm_bindgen]
pub fn run_link(length_km: f64, equalize: bool, attenuation_db: f64, seed: u32) -> Result<LinkRun, JsError> {
    let cfg = demo_config(length_km, equalize, attenuation_db, seed as u64);
    let out = scenario::run_scenario(&cfg).map_err(|e| JsError::new(&e.to_string()))?;
    let points = out
        .constellation
        .x
        .iter()
        .take(4000)
        .flat_map(|z| [z.re, z.im])
        .collect();
    Ok(LinkRun {
        ber: out.report.ber.ber,
        bit_errors: out.report.ber.bit_errors,
        evm_percent: out.report.evm_percent,
        points,
    })
}

/// Windowed CMA cost for a one-tap equalizer facing the complex gain
/// `gain·e^{j·phase}` on a constant-modulus input.
#[wasm_bindgen]
pub fn cma_convergence(gain: f64, phase_rad: f64, mu: f64, n_symbols: usize) -> Result<Vec<f64>, JsError> {
    let n = n_symbols.clamp(100, 200_000) * DEMO_SPS;
    let g = Complex64::from_polar(gain, phase_rad);
    let fs = DEMO_RATE * DEMO_SPS as f64;
    let x: Vec<Complex64> = (0..n)
        .map(|k| {
            let q = (k / DEMO_SPS).wrapping_mul(2_654_435_761) >> 7 & 3;
            g * Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_4 + q as f64 * std::f64::consts::FRAC_PI_2)
        })
        .collect();
    let cfg = EqConfig {
        mu,
        n_taps: 1,
        warmup_samples: Some(0),
        cost_window_samples: (n / 200).max(1),
        ..EqConfig::default()
    };
    let wave = |samples| ComplexWaveform {
        samples,
        sample_rate: fs,
    };
    let zeros = wave(vec![Complex64::new(0.0, 0.0); n]);
    let run = cmaeq::equalizer_run(&wave(x), &zeros, &cfg, &cmaeq::reset_taps(&cfg), true)
        .map_err(|e| JsError::new(&e.to_string()))?;
    Ok(run.cost_trace)
}

/// Intensity of a single 100 ps pulse after `length_km` of dispersive fiber.
#[wasm_bindgen]
pub fn dispersed_pulse(length_km: f64) -> Vec<f64> {
    let n = 1024;
    let fs = DEMO_RATE * DEMO_SPS as f64;
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    for s in &mut x[n / 2 - DEMO_SPS / 2..n / 2 + DEMO_SPS / 2] {
        *s = Complex64::new(1.0, 0.0);
    }
    let y = vec![Complex64::new(0.0, 0.0); n];
    let field = DualPolWaveform::new(
        ComplexWaveform {
            samples: x,
            sample_rate: fs,
        },
        ComplexWaveform {
            samples: y,
            sample_rate: fs,
        },
    )
    .expect("equal lengths");
    let cfg = FiberConfig {
        length_km: length_km.max(0.0),
        ..FiberConfig::default()
    };
    fiberchan::apply_cd(&field, &cfg).x.samples.iter().map(|z| z.norm_sqr()).collect()
}
