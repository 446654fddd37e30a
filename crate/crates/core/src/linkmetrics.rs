//! Symbol decisions, phase-ambiguity resolution, BER/EVM and constellation
//! export.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2};
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sigcore::{decide_bits, Bitstream, ComplexWaveform, SymbolStream};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("sampling offset {offset} outside [0, {sps})")]
    OffsetOutOfRange { offset: usize, sps: usize },
    #[error("no alignment found: best window BER {best_ber:.3} exceeds threshold")]
    NoAlignment { best_ber: f64 },
    #[error("stream too short: need {needed} symbols, have {available}")]
    InsufficientSymbols { needed: usize, available: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty streams")]
    EmptyStreams,
    #[error("i/o failure: {0}")]
    IoFailure(#[from] io::Error),
    #[error("malformed constellation file: {0}")]
    Parse(String),
}

/// One sample per symbol at `offset` within each symbol period. A trailing
/// partial symbol is dropped.
pub fn symbol_sample(wave: &ComplexWaveform, sps: usize, offset: usize) -> Result<SymbolStream, MetricsError> {
    if offset >= sps {
        return Err(MetricsError::OffsetOutOfRange { offset, sps });
    }
    let n_sym = wave.len() / sps;
    Ok(SymbolStream::new(
        (0..n_sym).map(|k| wave.samples[k * sps + offset]).collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// Symbols by which the received stream lags the reference.
    pub delay: usize,
    /// Quarter-turn rotation found in the received stream, degrees.
    pub rotation_deg: u32,
    /// Fine phase removed before the quarter-turn search, radians.
    pub fine_derotation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignConfig {
    pub window: usize,
    pub max_delay: usize,
    pub fail_threshold: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            window: 4096,
            max_delay: 32,
            fail_threshold: 0.45,
        }
    }
}

/// Blind QPSK phase estimate: `arg(-mean s^4) / 4`, in (-pi/4, pi/4].
pub fn fourth_power_phase(symbols: &[Complex64]) -> f64 {
    let m: Complex64 = symbols.iter().map(|s| s.powu(4)).sum();
    (-m).arg() / 4.0
}

fn window_errors(rx: &[Complex64], rot: Complex64, ref_i: &[u8], ref_q: &[u8]) -> usize {
    rx.iter()
        .zip(ref_i.iter().zip(ref_q))
        .map(|(&s, (&bi, &bq))| {
            let (di, dq) = decide_bits(s * rot);
            (di != bi) as usize + (dq != bq) as usize
        })
        .sum()
}

pub fn resolve_ambiguity(
    symbols: &SymbolStream,
    ref_i: &Bitstream,
    ref_q: &Bitstream,
) -> Result<(SymbolStream, Alignment), MetricsError> {
    resolve_ambiguity_with(symbols, ref_i, ref_q, &AlignConfig::default())
}

/// Fourth-power fine derotation, then an exhaustive search over quarter
/// turns and delays minimizing window BER. Returns the derotated stream with
/// the first `delay` symbols removed, so that index `k` lines up with
/// reference bit `k`.
pub fn resolve_ambiguity_with(
    symbols: &SymbolStream,
    ref_i: &Bitstream,
    ref_q: &Bitstream,
    cfg: &AlignConfig,
) -> Result<(SymbolStream, Alignment), MetricsError> {
    if ref_i.len() != ref_q.len() {
        return Err(MetricsError::LengthMismatch {
            left: ref_i.len(),
            right: ref_q.len(),
        });
    }
    let window = cfg.window;
    if ref_i.len() < window {
        return Err(MetricsError::InsufficientSymbols {
            needed: window,
            available: ref_i.len(),
        });
    }
    let needed = window + cfg.max_delay;
    if symbols.len() < needed {
        return Err(MetricsError::InsufficientSymbols {
            needed,
            available: symbols.len(),
        });
    }
    let rx = &symbols.symbols;
    let fine = fourth_power_phase(&rx[..needed]);
    let fine_rot = Complex64::from_polar(1.0, -fine);
    let derotated: Vec<Complex64> = rx[..needed].iter().map(|s| s * fine_rot).collect();
    let (ri, rq) = (&ref_i.bits()[..window], &ref_q.bits()[..window]);

    let mut best = (usize::MAX, 0usize, 0u32);
    for delay in 0..=cfg.max_delay {
        for quarter in 0..4u32 {
            let undo = Complex64::from_polar(1.0, -(quarter as f64) * FRAC_PI_2);
            let errs = window_errors(&derotated[delay..delay + window], undo, ri, rq);
            if errs < best.0 {
                best = (errs, delay, quarter);
            }
        }
    }
    let (errs, delay, quarter) = best;
    let best_ber = errs as f64 / (2 * window) as f64;
    if best_ber > cfg.fail_threshold {
        return Err(MetricsError::NoAlignment { best_ber });
    }
    let total = fine_rot * Complex64::from_polar(1.0, -(quarter as f64) * FRAC_PI_2);
    let aligned = rx[delay..].iter().map(|s| s * total).collect();
    Ok((
        SymbolStream::new(aligned),
        Alignment {
            delay,
            rotation_deg: quarter * 90,
            fine_derotation: fine,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerReport {
    pub bit_errors: usize,
    pub bits_compared: usize,
    pub ber: f64,
    pub alignment: Option<Alignment>,
}

impl BerReport {
    /// Upper bound to quote when no errors were seen.
    pub fn resolution(&self) -> f64 {
        1.0 / self.bits_compared as f64
    }
}

pub fn ber_measure(
    rx_i: &Bitstream,
    rx_q: &Bitstream,
    ref_i: &Bitstream,
    ref_q: &Bitstream,
) -> Result<BerReport, MetricsError> {
    for (a, b) in [(rx_i, ref_i), (rx_q, ref_q), (rx_i, rx_q)] {
        if a.len() != b.len() {
            return Err(MetricsError::LengthMismatch {
                left: a.len(),
                right: b.len(),
            });
        }
    }
    let count = |a: &Bitstream, b: &Bitstream| {
        a.bits().iter().zip(b.bits()).filter(|(x, y)| x != y).count()
    };
    let bit_errors = count(rx_i, ref_i) + count(rx_q, ref_q);
    let bits_compared = rx_i.len() + rx_q.len();
    if bits_compared == 0 {
        return Err(MetricsError::EmptyStreams);
    }
    Ok(BerReport {
        bit_errors,
        bits_compared,
        ber: bit_errors as f64 / bits_compared as f64,
        alignment: None,
    })
}

/// Nearest point of the unit-energy QPSK constellation.
pub fn nearest_qpsk(s: Complex64) -> Complex64 {
    let (bi, bq) = decide_bits(s);
    Complex64::new(
        if bi == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 },
        if bq == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 },
    )
}

/// RMS error vector over RMS ideal magnitude, in percent.
pub fn evm_measure(symbols: &SymbolStream) -> Result<f64, MetricsError> {
    if symbols.is_empty() {
        return Err(MetricsError::EmptyStreams);
    }
    let (mut err, mut ideal) = (0.0, 0.0);
    for &s in &symbols.symbols {
        let p = nearest_qpsk(s);
        err += (s - p).norm_sqr();
        ideal += p.norm_sqr();
    }
    Ok((err / ideal).sqrt() * 100.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstellationDump {
    pub scenario: String,
    /// Volts-to-normalized factor applied ahead of the equalizer.
    pub scale: f64,
    pub x: Vec<Complex64>,
    pub y: Option<Vec<Complex64>>,
}

/// Write `# scenario=<id> scale=<v>` then `index,re,im` rows. Values use the
/// shortest round-trip decimal form.
pub fn write_constellation<W: Write>(dump: &ConstellationDump, mut w: W) -> io::Result<()> {
    writeln!(w, "# scenario={} scale={:?}", dump.scenario, dump.scale)?;
    writeln!(w, "index,re,im")?;
    for (k, s) in dump.x.iter().enumerate() {
        writeln!(w, "{},{:?},{:?}", k, s.re, s.im)?;
    }
    Ok(())
}

pub fn export_constellation(dump: &ConstellationDump, destination: &Path) -> Result<(), MetricsError> {
    if dump.x.is_empty() {
        return Err(MetricsError::EmptyStreams);
    }
    let mut buf = Vec::with_capacity(dump.x.len() * 48);
    write_constellation(dump, &mut buf)?;
    fs::write(destination, buf)?;
    Ok(())
}

/// Parse a constellation CSV back into `(scenario, scale, points)`.
pub fn read_constellation<R: BufRead>(r: R) -> Result<ConstellationDump, MetricsError> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| MetricsError::Parse("missing header".into()))??;
    let rest = header
        .strip_prefix("# scenario=")
        .ok_or_else(|| MetricsError::Parse("bad header".into()))?;
    let (scenario, scale) = rest
        .rsplit_once(" scale=")
        .ok_or_else(|| MetricsError::Parse("bad header".into()))?;
    let scale: f64 = scale.parse().map_err(|_| MetricsError::Parse("bad scale".into()))?;
    let cols = lines
        .next()
        .ok_or_else(|| MetricsError::Parse("missing column row".into()))??;
    if cols != "index,re,im" {
        return Err(MetricsError::Parse(format!("unexpected columns {cols:?}")));
    }
    let mut x = Vec::new();
    for line in lines {
        let line = line?;
        let mut f = line.split(',');
        let (_, re, im) = match (f.next(), f.next(), f.next()) {
            (Some(i), Some(re), Some(im)) => (i, re, im),
            _ => return Err(MetricsError::Parse(format!("bad row {line:?}"))),
        };
        let p = |s: &str| s.parse::<f64>().map_err(|_| MetricsError::Parse(format!("bad value {s:?}")));
        x.push(Complex64::new(p(re)?, p(im)?));
    }
    Ok(ConstellationDump {
        scenario: scenario.to_string(),
        scale,
        x,
        y: None,
    })
}
