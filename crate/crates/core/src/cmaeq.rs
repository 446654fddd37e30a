//! Analog CMA butterfly equalizer, discretized on the simulation grid.
//!
//! Each lane is a short tapped delay line over both inputs:
//!
//! ```text
//! x_eq[n] = sum_k h_xx[k] x[n - k d] + h_xy[k] y[n - k d]
//! y_eq[n] = sum_k h_yx[k] x[n - k d] + h_yy[k] y[n - k d]
//! ```
//!
//! with `d` the tap spacing in samples. The chip integrates
//! `e_x = x_eq (A^2 - |x_eq|^2)` times the conjugated tap input; here that
//! integrator is a forward-Euler step of size `mu / sample_rate`.

use std::io::{self, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sigcore::ComplexWaveform;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EqError {
    #[error("length mismatch: x has {x} samples, y has {y}")]
    LengthMismatch { x: usize, y: usize },
    #[error("tap spacing {spacing_s} s is not a positive integer number of samples at {sample_rate} S/s")]
    NonIntegerTapSpacing { spacing_s: f64, sample_rate: f64 },
    #[error("tap magnitude {magnitude} exceeded ceiling at sample {sample}")]
    Divergence { sample: usize, magnitude: f64 },
    #[error("empty segment")]
    EmptySegment,
    #[error("invalid equalizer config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EqConfig {
    /// Integrator gain in 1/(V^2 s); the per-sample step is `mu / sample_rate`.
    pub mu: f64,
    pub target_a: f64,
    pub n_taps: usize,
    pub tap_spacing_s: f64,
    #[serde(default)]
    pub leak: f64,
    #[serde(default = "default_ceiling")]
    pub tap_ceiling: f64,
    /// Leading fraction of samples excluded from the returned outputs.
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    /// Overrides `warmup_fraction` when set.
    #[serde(default)]
    pub warmup_samples: Option<usize>,
    #[serde(default = "default_window")]
    pub cost_window_samples: usize,
    #[serde(default = "default_window")]
    pub snapshot_interval_samples: usize,
}

fn default_ceiling() -> f64 {
    1e3
}

fn default_warmup() -> f64 {
    0.25
}

fn default_window() -> usize {
    10_000
}

impl Default for EqConfig {
    fn default() -> Self {
        Self {
            mu: 5e6,
            target_a: 1.0,
            n_taps: 2,
            tap_spacing_s: 20e-12,
            leak: 0.0,
            tap_ceiling: default_ceiling(),
            warmup_fraction: default_warmup(),
            warmup_samples: None,
            cost_window_samples: default_window(),
            snapshot_interval_samples: default_window(),
        }
    }
}

impl EqConfig {
    pub fn validate(&self) -> Result<(), EqError> {
        let bad = |m: &str| Err(EqError::InvalidConfig(m.into()));
        if !(self.mu >= 0.0) || !self.mu.is_finite() {
            return bad("mu must be finite and >= 0");
        }
        if !(self.target_a > 0.0) {
            return bad("target_a must be > 0");
        }
        if self.n_taps == 0 {
            return bad("n_taps must be >= 1");
        }
        if !(0.0..1.0).contains(&self.leak) {
            return bad("leak must lie in [0, 1)");
        }
        if !(self.tap_ceiling > 0.0) {
            return bad("tap_ceiling must be > 0");
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must lie in [0, 1)");
        }
        if self.cost_window_samples == 0 || self.snapshot_interval_samples == 0 {
            return bad("cost and snapshot windows must be >= 1 sample");
        }
        Ok(())
    }

    /// Tap spacing in whole samples. Single-tap filters need no spacing.
    pub fn tap_delay_samples(&self, sample_rate: f64) -> Result<usize, EqError> {
        if self.n_taps == 1 {
            return Ok(0);
        }
        let d = self.tap_spacing_s * sample_rate;
        let r = d.round();
        if !(r >= 1.0) || (d - r).abs() > 1e-6 {
            return Err(EqError::NonIntegerTapSpacing {
                spacing_s: self.tap_spacing_s,
                sample_rate,
            });
        }
        Ok(r as usize)
    }

    pub fn warmup_for(&self, n: usize) -> usize {
        self.warmup_samples
            .unwrap_or((self.warmup_fraction * n as f64).floor() as usize)
            .min(n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ButterflyTaps {
    pub h_xx: Vec<Complex64>,
    pub h_xy: Vec<Complex64>,
    pub h_yx: Vec<Complex64>,
    pub h_yy: Vec<Complex64>,
}

impl ButterflyTaps {
    pub fn zeros(n_taps: usize) -> Self {
        let z = vec![Complex64::new(0.0, 0.0); n_taps];
        Self {
            h_xx: z.clone(),
            h_xy: z.clone(),
            h_yx: z.clone(),
            h_yy: z,
        }
    }

    pub fn n_taps(&self) -> usize {
        self.h_xx.len()
    }

    pub fn is_consistent(&self) -> bool {
        let n = self.h_xx.len();
        n >= 1 && self.h_xy.len() == n && self.h_yx.len() == n && self.h_yy.len() == n
    }

    pub fn max_magnitude(&self) -> f64 {
        self.named()
            .iter()
            .flat_map(|(_, v)| v.iter())
            .map(|h| h.norm())
            .fold(0.0, f64::max)
    }

    pub fn named(&self) -> [(&'static str, &[Complex64]); 4] {
        [
            ("h_xx", &self.h_xx),
            ("h_xy", &self.h_xy),
            ("h_yx", &self.h_yx),
            ("h_yy", &self.h_yy),
        ]
    }
}

/// Centre-spike initialization, the state after the reset switch.
pub fn reset_taps(cfg: &EqConfig) -> ButterflyTaps {
    let mut t = ButterflyTaps::zeros(cfg.n_taps.max(1));
    t.h_xx[0] = Complex64::new(1.0, 0.0);
    t.h_yy[0] = Complex64::new(1.0, 0.0);
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct TapSnapshot {
    pub sample_index: usize,
    pub taps: ButterflyTaps,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EqRunResult {
    /// Equalized outputs after discarding `warmup_samples`.
    pub x_eq: ComplexWaveform,
    pub y_eq: ComplexWaveform,
    pub warmup_samples: usize,
    pub final_taps: ButterflyTaps,
    pub tap_trajectory: Vec<TapSnapshot>,
    /// CMA cost of the X lane per window of `cost_window_samples`.
    pub cost_trace: Vec<f64>,
    pub cost_trace_y: Vec<f64>,
}

/// `mean((A^2 - |v|^2)^2)`.
pub fn cma_cost(segment: &[Complex64], a: f64) -> Result<f64, EqError> {
    if segment.is_empty() {
        return Err(EqError::EmptySegment);
    }
    let a2 = a * a;
    Ok(segment.iter().map(|v| (a2 - v.norm_sqr()).powi(2)).sum::<f64>() / segment.len() as f64)
}

/// CMA error `v (A^2 - |v|^2)`.
#[inline]
pub fn cma_error(v: Complex64, a2: f64) -> Complex64 {
    v * (a2 - v.norm_sqr())
}

struct WindowCost {
    sum: f64,
    count: usize,
    out: Vec<f64>,
    window: usize,
}

impl WindowCost {
    fn new(window: usize) -> Self {
        Self {
            sum: 0.0,
            count: 0,
            out: Vec::new(),
            window,
        }
    }

    fn push(&mut self, c: f64) {
        self.sum += c;
        self.count += 1;
        if self.count == self.window {
            self.out.push(self.sum / self.count as f64);
            self.sum = 0.0;
            self.count = 0;
        }
    }

    fn finish(mut self) -> Vec<f64> {
        if self.count > 0 {
            self.out.push(self.sum / self.count as f64);
        }
        self.out
    }
}

/// Run the butterfly over the inputs, adapting taps sample by sample when
/// `adapt` is set. Outputs at sample `n` use the taps before the update at `n`.
pub fn equalizer_run(
    x_in: &ComplexWaveform,
    y_in: &ComplexWaveform,
    cfg: &EqConfig,
    taps0: &ButterflyTaps,
    adapt: bool,
) -> Result<EqRunResult, EqError> {
    cfg.validate()?;
    if x_in.len() != y_in.len() {
        return Err(EqError::LengthMismatch {
            x: x_in.len(),
            y: y_in.len(),
        });
    }
    if !taps0.is_consistent() {
        return Err(EqError::InvalidConfig("tap vectors must share a length >= 1".into()));
    }
    let fs = x_in.sample_rate;
    let d = cfg.tap_delay_samples(fs)?;
    let n_taps = taps0.n_taps();
    let n = x_in.len();
    let a2 = cfg.target_a * cfg.target_a;
    let step = if adapt { cfg.mu / fs } else { 0.0 };
    let keep = 1.0 - cfg.leak;
    let xs = &x_in.samples;
    let ys = &y_in.samples;
    let zero = Complex64::new(0.0, 0.0);

    let mut t = taps0.clone();
    let mut x_out = Vec::with_capacity(n);
    let mut y_out = Vec::with_capacity(n);
    let mut ux = vec![zero; n_taps];
    let mut uy = vec![zero; n_taps];
    let mut trajectory = vec![TapSnapshot {
        sample_index: 0,
        taps: t.clone(),
    }];
    let mut cost_x = WindowCost::new(cfg.cost_window_samples);
    let mut cost_y = WindowCost::new(cfg.cost_window_samples);

    for i in 0..n {
        for k in 0..n_taps {
            let lag = k * d;
            (ux[k], uy[k]) = if i >= lag {
                (xs[i - lag], ys[i - lag])
            } else {
                (zero, zero)
            };
        }
        let mut xe = zero;
        let mut ye = zero;
        for k in 0..n_taps {
            xe += t.h_xx[k] * ux[k] + t.h_xy[k] * uy[k];
            ye += t.h_yx[k] * ux[k] + t.h_yy[k] * uy[k];
        }
        x_out.push(xe);
        y_out.push(ye);
        cost_x.push((a2 - xe.norm_sqr()).powi(2));
        cost_y.push((a2 - ye.norm_sqr()).powi(2));

        if adapt {
            let ex = cma_error(xe, a2) * step;
            let ey = cma_error(ye, a2) * step;
            let mut worst = 0.0f64;
            for k in 0..n_taps {
                let (cx, cy) = (ux[k].conj(), uy[k].conj());
                t.h_xx[k] = t.h_xx[k] * keep + ex * cx;
                t.h_xy[k] = t.h_xy[k] * keep + ex * cy;
                t.h_yx[k] = t.h_yx[k] * keep + ey * cx;
                t.h_yy[k] = t.h_yy[k] * keep + ey * cy;
                worst = worst
                    .max(t.h_xx[k].norm_sqr())
                    .max(t.h_xy[k].norm_sqr())
                    .max(t.h_yx[k].norm_sqr())
                    .max(t.h_yy[k].norm_sqr());
            }
            if !(worst.sqrt() <= cfg.tap_ceiling) {
                return Err(EqError::Divergence {
                    sample: i,
                    magnitude: worst.sqrt(),
                });
            }
        }
        if (i + 1) % cfg.snapshot_interval_samples == 0 {
            trajectory.push(TapSnapshot {
                sample_index: i + 1,
                taps: t.clone(),
            });
        }
    }

    let warmup = cfg.warmup_for(n);
    Ok(EqRunResult {
        x_eq: ComplexWaveform {
            samples: x_out.split_off(warmup),
            sample_rate: fs,
        },
        y_eq: ComplexWaveform {
            samples: y_out.split_off(warmup),
            sample_rate: fs,
        },
        warmup_samples: warmup,
        final_taps: t,
        tap_trajectory: trajectory,
        cost_trace: cost_x.finish(),
        cost_trace_y: cost_y.finish(),
    })
}

/// Tap trajectory as CSV: `sample_index,tap_name,re,im`, one row per tap.
pub fn write_taps_csv<W: Write>(trajectory: &[TapSnapshot], mut w: W) -> io::Result<()> {
    writeln!(w, "sample_index,tap_name,re,im")?;
    for snap in trajectory {
        for (name, taps) in snap.taps.named() {
            for (k, h) in taps.iter().enumerate() {
                writeln!(w, "{},{}[{}],{:?},{:?}", snap.sample_index, name, k, h.re, h.im)?;
            }
        }
    }
    Ok(())
}
