//! Bit sources, QPSK mapping and oversampled baseband waveforms.
//!
//! All waveforms in the crate live on one uniform time grid. The default grid
//! is 10 GBd at 10 samples per symbol (100 GS/s), which puts the equalizer's
//! 20 ps tap spacing at exactly two samples.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default symbol rate per tributary pair (20 Gb/s QPSK).
pub const DEFAULT_SYMBOL_RATE: f64 = 10e9;
/// Default oversampling factor.
pub const DEFAULT_SPS: usize = 10;
/// PRBS orders with a built-in feedback polynomial.
pub const SUPPORTED_PRBS_ORDERS: [u32; 5] = [7, 9, 15, 23, 31];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("LFSR seed is zero after masking to the register width")]
    SeedZero,
    #[error("unsupported PRBS order {0}")]
    UnsupportedOrder(u32),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("symbol stream is empty")]
    EmptySymbols,
    #[error("bitstream is empty")]
    EmptyBits,
    #[error("bit value {0} is not 0 or 1")]
    InvalidBit(u8),
    #[error("samples per symbol must be at least 2, got {0}")]
    InvalidSamplesPerSymbol(usize),
    #[error("sample rate must be positive and finite, got {0}")]
    InvalidSampleRate(f64),
    #[error("raised-cosine rolloff must lie in [0, 1], got {0}")]
    InvalidRolloff(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BitOrigin {
    Prbs { order: u32, seed: u64 },
    Explicit,
}

/// Ordered bits with provenance. Never empty; every element is 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitstream {
    bits: Vec<u8>,
    origin: BitOrigin,
}

impl Bitstream {
    pub fn from_bits(bits: Vec<u8>) -> Result<Self, SignalError> {
        if bits.is_empty() {
            return Err(SignalError::EmptyBits);
        }
        if let Some(&b) = bits.iter().find(|&&b| b > 1) {
            return Err(SignalError::InvalidBit(b));
        }
        Ok(Self {
            bits,
            origin: BitOrigin::Explicit,
        })
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn origin(&self) -> BitOrigin {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    /// Sub-range as a new stream; `None` if the range is empty or out of bounds.
    pub fn slice(&self, start: usize, end: usize) -> Option<Self> {
        if start >= end || end > self.bits.len() {
            return None;
        }
        Some(Self {
            bits: self.bits[start..end].to_vec(),
            origin: self.origin,
        })
    }
}

fn prbs_taps(order: u32) -> Option<u32> {
    // Second feedback tap of x^order + x^tap + 1.
    match order {
        7 => Some(6),
        9 => Some(5),
        15 => Some(14),
        23 => Some(18),
        31 => Some(28),
        _ => None,
    }
}

/// Fibonacci LFSR over the polynomial `x^order + x^tap + 1`.
#[derive(Debug, Clone)]
pub struct Lfsr {
    state: u64,
    order: u32,
    tap: u32,
    mask: u64,
}

impl Lfsr {
    pub fn new(order: u32, seed: u64) -> Result<Self, SignalError> {
        let tap = prbs_taps(order).ok_or(SignalError::UnsupportedOrder(order))?;
        let mask = (1u64 << order) - 1;
        let state = seed & mask;
        if state == 0 {
            return Err(SignalError::SeedZero);
        }
        Ok(Self {
            state,
            order,
            tap,
            mask,
        })
    }

    pub fn next_bit(&mut self) -> u8 {
        let fb = ((self.state >> (self.order - 1)) ^ (self.state >> (self.tap - 1))) & 1;
        self.state = ((self.state << 1) | fb) & self.mask;
        fb as u8
    }
}

/// First `n_bits` of the maximal-length sequence for `(order, seed)`.
pub fn prbs_generate(order: u32, n_bits: usize, seed: u64) -> Result<Bitstream, SignalError> {
    let mut lfsr = Lfsr::new(order, seed)?;
    if n_bits == 0 {
        return Err(SignalError::EmptyBits);
    }
    let bits = (0..n_bits).map(|_| lfsr.next_bit()).collect();
    Ok(Bitstream {
        bits,
        origin: BitOrigin::Prbs { order, seed },
    })
}

/// Complex symbols. Streams produced by [`qpsk_gray_map`] are unit-magnitude;
/// received streams carry whatever the channel left.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolStream {
    pub symbols: Vec<Complex64>,
}

impl SymbolStream {
    pub fn new(symbols: Vec<Complex64>) -> Self {
        Self { symbols }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn mean_power(&self) -> f64 {
        mean_power(&self.symbols)
    }
}

/// Gray QPSK: bit 0 maps to +1/sqrt(2) on its axis, bit 1 to -1/sqrt(2).
pub fn qpsk_gray_map(bits_i: &Bitstream, bits_q: &Bitstream) -> Result<SymbolStream, SignalError> {
    if bits_i.len() != bits_q.len() {
        return Err(SignalError::LengthMismatch {
            left: bits_i.len(),
            right: bits_q.len(),
        });
    }
    let symbols = bits_i
        .bits
        .iter()
        .zip(&bits_q.bits)
        .map(|(&bi, &bq)| {
            Complex64::new(
                (1.0 - 2.0 * bi as f64) * FRAC_1_SQRT_2,
                (1.0 - 2.0 * bq as f64) * FRAC_1_SQRT_2,
            )
        })
        .collect();
    Ok(SymbolStream { symbols })
}

/// Quadrant decision. Zero on either axis decides bit 0.
pub fn decide_bits(s: Complex64) -> (u8, u8) {
    ((s.re < 0.0) as u8, (s.im < 0.0) as u8)
}

/// Hard-decision demapper. An empty input yields `EmptySymbols`.
pub fn qpsk_demap(symbols: &SymbolStream) -> Result<(Bitstream, Bitstream), SignalError> {
    if symbols.is_empty() {
        return Err(SignalError::EmptySymbols);
    }
    let (bi, bq): (Vec<u8>, Vec<u8>) = symbols.symbols.iter().map(|&s| decide_bits(s)).unzip();
    Ok((
        Bitstream {
            bits: bi,
            origin: BitOrigin::Explicit,
        },
        Bitstream {
            bits: bq,
            origin: BitOrigin::Explicit,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexWaveform {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
}

impl ComplexWaveform {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64) -> Result<Self, SignalError> {
        validate_rate(sample_rate)?;
        if samples.is_empty() {
            return Err(SignalError::EmptySymbols);
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }

    pub fn mean_power(&self) -> f64 {
        mean_power(&self.samples)
    }

    pub fn re(&self) -> RealWaveform {
        RealWaveform {
            samples: self.samples.iter().map(|s| s.re).collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn im(&self) -> RealWaveform {
        RealWaveform {
            samples: self.samples.iter().map(|s| s.im).collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * k).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Real-valued waveform: modulator drives and photodetector outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct RealWaveform {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
}

impl RealWaveform {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self, SignalError> {
        validate_rate(sample_rate)?;
        if samples.is_empty() {
            return Err(SignalError::EmptySymbols);
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Combine as `self + j*q`.
    pub fn with_quadrature(&self, q: &RealWaveform) -> Result<ComplexWaveform, SignalError> {
        check_len(self.len(), q.len())?;
        Ok(ComplexWaveform {
            samples: self
                .samples
                .iter()
                .zip(&q.samples)
                .map(|(&i, &q)| Complex64::new(i, q))
                .collect(),
            sample_rate: self.sample_rate,
        })
    }
}

/// Two polarization components on a shared grid. Field unit is sqrt(mW), so
/// `|x|^2 + |y|^2` is the instantaneous optical power in mW.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPolWaveform {
    pub x: ComplexWaveform,
    pub y: ComplexWaveform,
}

impl DualPolWaveform {
    pub fn new(x: ComplexWaveform, y: ComplexWaveform) -> Result<Self, SignalError> {
        check_len(x.len(), y.len())?;
        if x.sample_rate != y.sample_rate {
            return Err(SignalError::InvalidSampleRate(y.sample_rate));
        }
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn sample_rate(&self) -> f64 {
        self.x.sample_rate
    }

    pub fn power_at(&self, n: usize) -> f64 {
        self.x.samples[n].norm_sqr() + self.y.samples[n].norm_sqr()
    }

    pub fn energy(&self) -> f64 {
        self.x.energy() + self.y.energy()
    }

    pub fn mean_power(&self) -> f64 {
        self.energy() / self.len() as f64
    }

    pub(crate) fn map_both(&self, k: f64) -> Self {
        Self {
            x: self.x.scaled(k),
            y: self.y.scaled(k),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PulseShape {
    Nrz,
    RaisedCosine { rolloff: f64 },
}

/// Half-length of the truncated raised-cosine pulse, in symbols.
pub const RC_SPAN_SYMBOLS: usize = 8;

/// Raised-cosine pulse at `t` symbol periods; unit peak at `t = 0`.
pub fn raised_cosine(t: f64, rolloff: f64) -> f64 {
    let sinc = if t.abs() < 1e-12 {
        1.0
    } else {
        (PI * t).sin() / (PI * t)
    };
    let denom = 1.0 - (2.0 * rolloff * t).powi(2);
    if rolloff > 0.0 && denom.abs() < 1e-10 {
        // Removable singularity at t = +-1/(2 rolloff).
        let x = 1.0 / (2.0 * rolloff);
        return PI / 4.0 * (PI * x).sin() / (PI * x);
    }
    sinc * (PI * rolloff * t).cos() / denom
}

/// Oversample a symbol stream. Symbol `k` occupies samples
/// `[k*sps, (k+1)*sps)`; its nominal centre is sample `k*sps + sps/2`.
pub fn build_waveform(
    symbols: &SymbolStream,
    samples_per_symbol: usize,
    pulse: PulseShape,
    symbol_rate: f64,
) -> Result<ComplexWaveform, SignalError> {
    if samples_per_symbol < 2 {
        return Err(SignalError::InvalidSamplesPerSymbol(samples_per_symbol));
    }
    if symbols.is_empty() {
        return Err(SignalError::EmptySymbols);
    }
    validate_rate(symbol_rate)?;
    let sps = samples_per_symbol;
    let n = symbols.len() * sps;
    let samples = match pulse {
        PulseShape::Nrz => symbols
            .symbols
            .iter()
            .flat_map(|&s| std::iter::repeat(s).take(sps))
            .collect(),
        PulseShape::RaisedCosine { rolloff } => {
            if !(0.0..=1.0).contains(&rolloff) {
                return Err(SignalError::InvalidRolloff(rolloff));
            }
            let half = (RC_SPAN_SYMBOLS * sps) as isize;
            let kernel: Vec<f64> = (-half..=half)
                .map(|m| raised_cosine(m as f64 / sps as f64, rolloff))
                .collect();
            let mut out = vec![Complex64::new(0.0, 0.0); n];
            for (k, &s) in symbols.symbols.iter().enumerate() {
                let centre = (k * sps + sps / 2) as isize;
                for (j, &p) in kernel.iter().enumerate() {
                    let idx = centre + j as isize - half;
                    if idx >= 0 && (idx as usize) < n {
                        out[idx as usize] += s * p;
                    }
                }
            }
            out
        }
    };
    Ok(ComplexWaveform {
        samples,
        sample_rate: symbol_rate * sps as f64,
    })
}

pub(crate) fn mean_power(v: &[Complex64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().map(|s| s.norm_sqr()).sum::<f64>() / v.len() as f64
}

pub(crate) fn check_len(a: usize, b: usize) -> Result<(), SignalError> {
    if a != b {
        return Err(SignalError::LengthMismatch { left: a, right: b });
    }
    Ok(())
}

fn validate_rate(rate: f64) -> Result<(), SignalError> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(SignalError::InvalidSampleRate(rate));
    }
    Ok(())
}
