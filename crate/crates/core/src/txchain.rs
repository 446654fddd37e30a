//! Transmitter: laser, carrier split, bandwidth-limited drivers, nested IQ
//! Mach-Zehnder modulator and polarization multiplexing of the modulated
//! signal with the unmodulated carrier.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sigcore::{check_len, ComplexWaveform, DualPolWaveform, RealWaveform, SignalError};
use crate::spectral;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TxError {
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("invalid transmitter config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaserConfig {
    pub power_dbm: f64,
    pub wavelength_nm: f64,
    pub linewidth_hz: f64,
}

impl Default for LaserConfig {
    fn default() -> Self {
        Self {
            power_dbm: 13.4,
            wavelength_nm: 1550.0,
            linewidth_hz: 100e3,
        }
    }
}

impl LaserConfig {
    pub fn validate(&self) -> Result<(), TxError> {
        if !(self.wavelength_nm > 0.0) {
            return Err(TxError::InvalidConfig("wavelength_nm must be > 0".into()));
        }
        if !(self.linewidth_hz >= 0.0) || !self.linewidth_hz.is_finite() {
            return Err(TxError::InvalidConfig("linewidth_hz must be >= 0".into()));
        }
        if !self.power_dbm.is_finite() {
            return Err(TxError::InvalidConfig("power_dbm must be finite".into()));
        }
        Ok(())
    }

    pub fn power_mw(&self) -> f64 {
        dbm_to_mw(self.power_dbm)
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModulatorBias {
    /// Child MZMs at transmission null, parent at quadrature.
    #[default]
    Null,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulatorConfig {
    pub v_pi_v: f64,
    #[serde(default)]
    pub bias: ModulatorBias,
    pub insertion_loss_db: f64,
    /// Fraction of laser power sent to the modulated polarization.
    pub carrier_split_ratio: f64,
}

impl Default for ModulatorConfig {
    fn default() -> Self {
        Self {
            v_pi_v: 3.5,
            bias: ModulatorBias::Null,
            insertion_loss_db: 5.0,
            carrier_split_ratio: 0.5,
        }
    }
}

impl ModulatorConfig {
    pub fn validate(&self) -> Result<(), TxError> {
        if !(self.v_pi_v > 0.0) {
            return Err(TxError::InvalidConfig("v_pi_v must be > 0".into()));
        }
        if !(self.carrier_split_ratio > 0.0 && self.carrier_split_ratio < 1.0) {
            return Err(TxError::InvalidConfig(
                "carrier_split_ratio must lie strictly between 0 and 1".into(),
            ));
        }
        if !(self.insertion_loss_db >= 0.0) {
            return Err(TxError::InvalidConfig("insertion_loss_db must be >= 0".into()));
        }
        Ok(())
    }
}

/// Modulator driver amplifier. `f3db_hz = None` bypasses the roll-off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverConfig {
    pub f3db_hz: Option<f64>,
    pub gain: f64,
}

impl Default for DriverConfig {
    fn default() -> Self {
        Self {
            f3db_hz: Some(7e9),
            gain: 1.0,
        }
    }
}

impl DriverConfig {
    pub fn validate(&self) -> Result<(), TxError> {
        if let Some(f) = self.f3db_hz {
            if !(f > 0.0) {
                return Err(TxError::InvalidConfig("f3db_hz must be > 0 or null".into()));
            }
        }
        if !self.gain.is_finite() {
            return Err(TxError::InvalidConfig("driver gain must be finite".into()));
        }
        Ok(())
    }
}

/// CW laser with Wiener phase noise. Phase starts at zero.
pub fn laser_field(cfg: &LaserConfig, n_samples: usize, sample_rate: f64, seed: u64) -> ComplexWaveform {
    let amp = cfg.power_mw().sqrt();
    let sigma = (2.0 * PI * cfg.linewidth_hz / sample_rate).sqrt();
    let mut samples = Vec::with_capacity(n_samples);
    if sigma == 0.0 {
        samples.resize(n_samples, Complex64::new(amp, 0.0));
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        let mut phase = 0.0f64;
        for n in 0..n_samples {
            if n > 0 {
                phase += normal.sample(&mut rng);
            }
            samples.push(Complex64::from_polar(amp, phase));
        }
    }
    ComplexWaveform {
        samples,
        sample_rate,
    }
}

/// Split the laser into (modulator path, carrier path) by power ratio.
pub fn carrier_split(laser: &ComplexWaveform, ratio: f64) -> (ComplexWaveform, ComplexWaveform) {
    (laser.scaled(ratio.sqrt()), laser.scaled((1.0 - ratio).sqrt()))
}

/// Nested MZM with push-pull, null-biased children and a quadrature parent:
/// `E_out = E_in/2 * [sin(pi vI / 2Vpi) + j sin(pi vQ / 2Vpi)] * 10^(-IL/20)`.
pub fn mzm_iq_modulate(
    carrier: &ComplexWaveform,
    drive_i: &RealWaveform,
    drive_q: &RealWaveform,
    cfg: &ModulatorConfig,
) -> Result<ComplexWaveform, TxError> {
    check_len(carrier.len(), drive_i.len())?;
    check_len(carrier.len(), drive_q.len())?;
    let loss = 10f64.powf(-cfg.insertion_loss_db / 20.0);
    let k = PI / (2.0 * cfg.v_pi_v);
    let samples = carrier
        .samples
        .iter()
        .zip(drive_i.samples.iter().zip(&drive_q.samples))
        .map(|(&e, (&vi, &vq))| e * 0.5 * loss * Complex64::new((k * vi).sin(), (k * vq).sin()))
        .collect();
    Ok(ComplexWaveform {
        samples,
        sample_rate: carrier.sample_rate,
    })
}

/// Driver gain followed by a single-pole roll-off, applied over the whole
/// record in the frequency domain.
pub fn driver_lowpass(wave: &ComplexWaveform, cfg: &DriverConfig) -> ComplexWaveform {
    let mut out = wave.scaled(cfg.gain);
    if let Some(f3db) = cfg.f3db_hz.filter(|f| f.is_finite()) {
        spectral::apply_response(&mut out.samples, wave.sample_rate, |f| {
            spectral::single_pole(f, f3db)
        });
    }
    out
}

/// Signal on X, carrier on Y.
pub fn pol_mux(signal: &ComplexWaveform, carrier: &ComplexWaveform) -> Result<DualPolWaveform, TxError> {
    Ok(DualPolWaveform::new(signal.clone(), carrier.clone())?)
}
