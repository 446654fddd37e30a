//! LO-less receiver front end: polarization controller, PBS separation of
//! the carrier (used as LO) from the signal, ideal 90 degree hybrid with
//! balanced photodiodes, thermal noise, and AGC.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fiberchan::{pol_transform, JonesMatrix};
use crate::sigcore::{check_len, ComplexWaveform, DualPolWaveform, RealWaveform, SignalError};
use crate::spectral;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RxError {
    #[error("input field has zero power")]
    ZeroPower,
    #[error("waveform has zero peak-to-peak span")]
    DegenerateSignal,
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("invalid receiver config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiverConfig {
    pub responsivity_a_per_w: f64,
    pub thermal_noise_a_per_sqrt_hz: f64,
    pub electrical_bandwidth_hz: f64,
    pub agc_target_vpp: f64,
    pub tia_transimpedance_ohm: f64,
    /// Optical attenuation ahead of the polarization controller.
    #[serde(default)]
    pub voa_db: f64,
    #[serde(default)]
    pub pol_objective: PolObjective,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        Self {
            responsivity_a_per_w: 0.8,
            thermal_noise_a_per_sqrt_hz: 20e-12,
            electrical_bandwidth_hz: 16e9,
            agc_target_vpp: 0.4,
            tia_transimpedance_ohm: 500.0,
            voa_db: 0.0,
            pol_objective: PolObjective::MaxPowerRatio,
        }
    }
}

impl ReceiverConfig {
    pub fn validate(&self) -> Result<(), RxError> {
        let bad = |m: &str| Err(RxError::InvalidConfig(m.into()));
        if !(self.responsivity_a_per_w > 0.0) {
            return bad("responsivity_a_per_w must be > 0");
        }
        if !(self.agc_target_vpp > 0.0) {
            return bad("agc_target_vpp must be > 0");
        }
        if !(self.thermal_noise_a_per_sqrt_hz >= 0.0) {
            return bad("thermal_noise_a_per_sqrt_hz must be >= 0");
        }
        if !(self.electrical_bandwidth_hz > 0.0) {
            return bad("electrical_bandwidth_hz must be > 0");
        }
        if !(self.tia_transimpedance_ohm > 0.0) {
            return bad("tia_transimpedance_ohm must be > 0");
        }
        if !(self.voa_db >= 0.0) {
            return bad("voa_db must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolObjective {
    /// Maximize `P_y / P_x` at the PBS outputs.
    #[default]
    MaxPowerRatio,
    /// Minimize the normalized intensity variance of the carrier port.
    MinCarrierIntensityVariance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolSearchConfig {
    pub initial_step_rad: f64,
    pub min_step_rad: f64,
    pub max_evaluations: usize,
    /// Samples kept (by uniform decimation) for the variance objective.
    pub variance_samples: usize,
    pub starts: Vec<[f64; 3]>,
}

impl Default for PolSearchConfig {
    fn default() -> Self {
        Self {
            initial_step_rad: 0.5,
            min_step_rad: 1e-10,
            max_evaluations: 20_000,
            variance_samples: 16_384,
            starts: vec![
                [0.0, 0.0, 0.0],
                [PI / 4.0, 0.0, 0.0],
                [PI / 4.0, PI / 2.0, 0.0],
                [PI / 3.0, PI, PI / 2.0],
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolSearchResult {
    pub matrix: JonesMatrix,
    /// Carrier-mode purity at the PBS: power of the dominant polarization
    /// mode routed to the carrier port over its leak into the signal port.
    pub extinction_db: f64,
    /// Accepted moves summed over all restarts.
    pub iterations: usize,
    pub evaluations: usize,
    pub objective: f64,
    /// Objective after each accepted move, one trace per restart.
    pub restart_traces: Vec<Vec<f64>>,
}

/// Time-averaged coherency matrix `<E E^H>`.
pub fn coherency(field: &DualPolWaveform) -> [[Complex64; 2]; 2] {
    let mut c = [[Complex64::new(0.0, 0.0); 2]; 2];
    for (&x, &y) in field.x.samples.iter().zip(&field.y.samples) {
        c[0][0] += x * x.conj();
        c[0][1] += x * y.conj();
        c[1][1] += y * y.conj();
    }
    let n = field.len() as f64;
    c[0][0] /= n;
    c[0][1] /= n;
    c[1][1] /= n;
    c[1][0] = c[0][1].conj();
    c
}

fn rotate_coherency(j: &JonesMatrix, c: &[[Complex64; 2]; 2]) -> [[Complex64; 2]; 2] {
    let cm = JonesMatrix::new(*c);
    (*j * cm * j.adjoint()).m
}

/// Extinction from the residual off-diagonal coherency after `j`.
pub fn extinction_db(j: &JonesMatrix, c: &[[Complex64; 2]; 2]) -> f64 {
    let r = rotate_coherency(j, c);
    let theta = 0.5 * (2.0 * r[0][1].norm()).atan2(r[1][1].re - r[0][0].re);
    let leak = theta.sin().powi(2).max(1e-30);
    let kept = theta.cos().powi(2).max(1e-30);
    10.0 * (kept / leak).log10()
}

enum Evaluator {
    PowerRatio([[Complex64; 2]; 2]),
    Variance(Vec<(Complex64, Complex64)>),
}

impl Evaluator {
    fn eval(&self, p: &[f64; 3]) -> f64 {
        let j = JonesMatrix::from_angles(p[0], p[1], p[2]);
        match self {
            Evaluator::PowerRatio(c) => {
                let r = rotate_coherency(&j, c);
                let total = r[0][0].re + r[1][1].re;
                let floor = 1e-30 * total.max(1e-300);
                10.0 * (r[1][1].re.max(floor) / r[0][0].re.max(floor)).log10()
            }
            Evaluator::Variance(samples) => {
                let n = samples.len() as f64;
                let (mut s1, mut s2) = (0.0, 0.0);
                for &(x, y) in samples {
                    let p = (j.m[1][0] * x + j.m[1][1] * y).norm_sqr();
                    s1 += p;
                    s2 += p * p;
                }
                let mean = s1 / n;
                let var = (s2 / n - mean * mean).max(0.0);
                -var / (mean * mean).max(1e-300)
            }
        }
    }
}

pub fn pol_control_search(
    field: &DualPolWaveform,
    objective: PolObjective,
) -> Result<PolSearchResult, RxError> {
    pol_control_search_with(field, objective, &PolSearchConfig::default())
}

/// Derivative-free coordinate ascent over the three SU(2) angles, with a
/// halving step and several fixed starting points. The Y output is the
/// carrier (LO) port.
pub fn pol_control_search_with(
    field: &DualPolWaveform,
    objective: PolObjective,
    cfg: &PolSearchConfig,
) -> Result<PolSearchResult, RxError> {
    let c = coherency(field);
    let total = c[0][0].re + c[1][1].re;
    if !(total > 0.0) {
        return Err(RxError::ZeroPower);
    }
    let evaluator = match objective {
        PolObjective::MaxPowerRatio => Evaluator::PowerRatio(c),
        PolObjective::MinCarrierIntensityVariance => {
            let stride = (field.len() / cfg.variance_samples.max(1)).max(1);
            Evaluator::Variance(
                field
                    .x
                    .samples
                    .iter()
                    .zip(&field.y.samples)
                    .step_by(stride)
                    .map(|(&x, &y)| (x, y))
                    .collect(),
            )
        }
    };

    let mut best: Option<([f64; 3], f64)> = None;
    let mut traces = Vec::with_capacity(cfg.starts.len());
    let mut iterations = 0;
    let mut evaluations = 0;
    let budget = cfg.max_evaluations / cfg.starts.len().max(1);
    for start in &cfg.starts {
        let mut p = *start;
        let mut f = evaluator.eval(&p);
        let mut used = 1;
        let mut trace = vec![f];
        let mut step = cfg.initial_step_rad;
        while step > cfg.min_step_rad && used < budget {
            let mut moved = false;
            'coords: for k in 0..3 {
                for dir in [1.0, -1.0] {
                    let mut q = p;
                    q[k] += dir * step;
                    let fq = evaluator.eval(&q);
                    used += 1;
                    if fq > f {
                        p = q;
                        f = fq;
                        trace.push(f);
                        iterations += 1;
                        moved = true;
                        break 'coords;
                    }
                }
            }
            if !moved {
                step *= 0.5;
            }
        }
        evaluations += used;
        traces.push(trace);
        if best.map_or(true, |(_, bf)| f > bf) {
            best = Some((p, f));
        }
    }
    let (p, f) = best.expect("at least one start");
    let matrix = JonesMatrix::from_angles(p[0], p[1], p[2]);
    Ok(PolSearchResult {
        matrix,
        extinction_db: extinction_db(&matrix, &c),
        iterations,
        evaluations,
        objective: f,
        restart_traces: traces,
    })
}

/// Apply the controller and split at the PBS into (signal, LO).
pub fn pbs_split(field: &DualPolWaveform, j: &JonesMatrix) -> (ComplexWaveform, ComplexWaveform) {
    let out = pol_transform(field, j);
    (out.x, out.y)
}

/// Ideal 90 degree hybrid with balanced detection:
/// `i + j q = Z_tia * LPF[R * E_s conj(E_lo) + n_th]`.
///
/// Fields are in sqrt(mW); outputs are volts. Thermal noise is white with the
/// configured one-sided density across the simulated band and is shaped by
/// the same single-pole electrical response as the signal.
pub fn hybrid_balanced_detect(
    signal: &ComplexWaveform,
    lo: &ComplexWaveform,
    cfg: &ReceiverConfig,
    seed: u64,
) -> Result<(RealWaveform, RealWaveform), RxError> {
    check_len(signal.len(), lo.len())?;
    let fs = signal.sample_rate;
    let r = cfg.responsivity_a_per_w * 1e-3;
    let mut current: Vec<Complex64> = signal
        .samples
        .iter()
        .zip(&lo.samples)
        .map(|(&s, &l)| s * l.conj() * r)
        .collect();
    let sigma = cfg.thermal_noise_a_per_sqrt_hz * (fs / 2.0).sqrt();
    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for c in current.iter_mut() {
            let ni: f64 = StandardNormal.sample(&mut rng);
            let nq: f64 = StandardNormal.sample(&mut rng);
            *c += Complex64::new(ni, nq) * sigma;
        }
    }
    let bw = cfg.electrical_bandwidth_hz;
    if bw.is_finite() {
        spectral::apply_response(&mut current, fs, |f| spectral::single_pole(f, bw));
    }
    let z = cfg.tia_transimpedance_ohm;
    let (i, q) = current.iter().map(|c| (c.re * z, c.im * z)).unzip();
    Ok((
        RealWaveform {
            samples: i,
            sample_rate: fs,
        },
        RealWaveform {
            samples: q,
            sample_rate: fs,
        },
    ))
}

/// Lower and upper percentiles used to measure the AGC swing.
pub const AGC_PERCENTILES: (f64, f64) = (0.001, 0.999);

/// Linearly interpolated percentile of already sorted data, `p` in [0, 1].
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// 0.1st to 99.9th percentile span.
pub fn percentile_span(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    percentile_sorted(&sorted, AGC_PERCENTILES.1) - percentile_sorted(&sorted, AGC_PERCENTILES.0)
}

/// Remove the mean and scale so the percentile span equals `target_vpp`.
/// Returns the normalized waveform and the applied gain.
pub fn agc_normalize_with_gain(wave: &RealWaveform, target_vpp: f64) -> Result<(RealWaveform, f64), RxError> {
    if wave.is_empty() {
        return Err(RxError::DegenerateSignal);
    }
    let mean = wave.samples.iter().sum::<f64>() / wave.len() as f64;
    let centred: Vec<f64> = wave.samples.iter().map(|v| v - mean).collect();
    let span = percentile_span(&centred);
    if !(span > 0.0) || !span.is_finite() {
        return Err(RxError::DegenerateSignal);
    }
    let gain = target_vpp / span;
    Ok((
        RealWaveform {
            samples: centred.into_iter().map(|v| v * gain).collect(),
            sample_rate: wave.sample_rate,
        },
        gain,
    ))
}

pub fn agc_normalize(wave: &RealWaveform, target_vpp: f64) -> Result<RealWaveform, RxError> {
    agc_normalize_with_gain(wave, target_vpp).map(|(w, _)| w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fiberchan::random_sop_rotation;
    use rand::Rng;

    fn cw(v: Complex64, n: usize) -> ComplexWaveform {
        ComplexWaveform::new(vec![v; n], 1e11).unwrap()
    }

    fn noiseless() -> ReceiverConfig {
        ReceiverConfig {
            thermal_noise_a_per_sqrt_hz: 0.0,
            electrical_bandwidth_hz: f64::INFINITY,
            ..Default::default()
        }
    }

    fn sh_field(n: usize, seed: u64) -> DualPolWaveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = 0.5f64.sqrt();
        let sig: Vec<Complex64> = (0..n)
            .map(|_| {
                Complex64::new(
                    if rng.gen::<bool>() { s } else { -s },
                    if rng.gen::<bool>() { s } else { -s },
                ) * 0.5
            })
            .collect();
        DualPolWaveform::new(
            ComplexWaveform::new(sig, 1e11).unwrap(),
            cw(Complex64::new(1.0, 0.0), n),
        )
        .unwrap()
    }

    #[test]
    fn detect_in_phase_and_quadrature() {
        let cfg = noiseless();
        let e = Complex64::new(0.6, 0.8) * 2.0;
        let (i, q) = hybrid_balanced_detect(&cw(e, 16), &cw(e, 16), &cfg, 0).unwrap();
        let expected = 0.8 * 4.0 * 1e-3 * 500.0;
        assert!(q.samples.iter().all(|v| v.abs() < 1e-15));
        assert!(i.samples.iter().all(|v| (v - expected).abs() < 1e-12));
        let (i, q) = hybrid_balanced_detect(&cw(e * Complex64::i(), 16), &cw(e, 16), &cfg, 0).unwrap();
        assert!(i.samples.iter().all(|v| v.abs() < 1e-15));
        assert!(q.samples.iter().all(|v| (v - expected).abs() < 1e-12));
    }

    #[test]
    fn common_phase_cancels() {
        let cfg = ReceiverConfig::default();
        let f = sh_field(4096, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut phi = 0.0;
        let rot: Vec<Complex64> = (0..f.len())
            .map(|_| {
                phi += (rng.gen::<f64>() - 0.5) * 0.3;
                Complex64::from_polar(1.0, phi)
            })
            .collect();
        let apply = |w: &ComplexWaveform| {
            ComplexWaveform::new(w.samples.iter().zip(&rot).map(|(a, b)| a * b).collect(), 1e11).unwrap()
        };
        let (i0, q0) = hybrid_balanced_detect(&f.x, &f.y, &cfg, 5).unwrap();
        let (i1, q1) = hybrid_balanced_detect(&apply(&f.x), &apply(&f.y), &cfg, 5).unwrap();
        for n in 0..f.len() {
            assert!((i0.samples[n] - i1.samples[n]).abs() < 1e-12);
            assert!((q0.samples[n] - q1.samples[n]).abs() < 1e-12);
        }
    }

    #[test]
    fn detection_is_linear_in_signal() {
        let cfg = ReceiverConfig {
            thermal_noise_a_per_sqrt_hz: 0.0,
            ..Default::default()
        };
        let a = sh_field(512, 1);
        let b = sh_field(512, 2);
        let lo = cw(Complex64::new(0.3, -1.1), 512);
        let sum = ComplexWaveform::new(
            a.x.samples.iter().zip(&b.x.samples).map(|(u, v)| u + v * 2.0).collect(),
            1e11,
        )
        .unwrap();
        let (ia, qa) = hybrid_balanced_detect(&a.x, &lo, &cfg, 0).unwrap();
        let (ib, qb) = hybrid_balanced_detect(&b.x, &lo, &cfg, 0).unwrap();
        let (is, qs) = hybrid_balanced_detect(&sum, &lo, &cfg, 0).unwrap();
        for n in 0..512 {
            assert!((is.samples[n] - ia.samples[n] - 2.0 * ib.samples[n]).abs() < 1e-12);
            assert!((qs.samples[n] - qa.samples[n] - 2.0 * qb.samples[n]).abs() < 1e-12);
        }
    }

    #[test]
    fn detect_length_mismatch() {
        let r = hybrid_balanced_detect(&cw(Complex64::new(1.0, 0.0), 3), &cw(Complex64::new(1.0, 0.0), 4), &noiseless(), 0);
        assert!(matches!(r, Err(RxError::Signal(SignalError::LengthMismatch { .. }))));
    }

    #[test]
    fn thermal_noise_variance_after_filter() {
        let cfg = ReceiverConfig {
            tia_transimpedance_ohm: 1.0,
            ..Default::default()
        };
        let n = 1 << 18;
        let z = cw(Complex64::new(0.0, 0.0), n);
        let (i, _) = hybrid_balanced_detect(&z, &z, &cfg, 17).unwrap();
        let var = i.samples.iter().map(|v| v * v).sum::<f64>() / n as f64;
        // Two-sided density d^2/2 over [-fs/2, fs/2] through |H|^2 = 1/(1+(f/B)^2).
        let b = cfg.electrical_bandwidth_hz;
        let expected = cfg.thermal_noise_a_per_sqrt_hz.powi(2) * b * (1e11 / (2.0 * b)).atan();
        assert!((var / expected - 1.0).abs() < 0.05, "{var} vs {expected}");
    }

    #[test]
    fn search_keeps_separated_field() {
        let f = sh_field(8192, 4);
        let id = JonesMatrix::identity();
        let c = coherency(&f);
        let res = pol_control_search(&f, PolObjective::MaxPowerRatio).unwrap();
        assert!(res.matrix.is_unitary(1e-12));
        assert!(res.extinction_db >= extinction_db(&id, &c));
        let lo_before = f.y.mean_power();
        let (_, lo) = pbs_split(&f, &res.matrix);
        assert!((10.0 * (lo.mean_power() / lo_before).log10()).abs() < 0.01);
    }

    #[test]
    fn search_undoes_scrambling() {
        let f = sh_field(8192, 5);
        for seed in 0..10 {
            let u = random_sop_rotation(seed);
            let scrambled = pol_transform(&f, &u);
            let res = pol_control_search(&scrambled, PolObjective::MaxPowerRatio).unwrap();
            assert!(res.extinction_db >= 30.0, "seed {seed}: {}", res.extinction_db);
            let m = res.matrix * u;
            let cross = m.m[1][0].norm_sqr().max(m.m[0][1].norm_sqr());
            assert!(10.0 * cross.log10() < -30.0, "seed {seed}: {cross}");
            for t in &res.restart_traces {
                assert!(t.windows(2).all(|w| w[1] >= w[0]));
            }
        }
    }

    #[test]
    fn variance_objective_finds_carrier() {
        let f = sh_field(8192, 6);
        let u = random_sop_rotation(99);
        let res = pol_control_search(&pol_transform(&f, &u), PolObjective::MinCarrierIntensityVariance).unwrap();
        let m = res.matrix * u;
        assert!(m.m[1][1].norm_sqr() > 0.999, "{:?}", m);
    }

    #[test]
    fn search_zero_power() {
        let z = cw(Complex64::new(0.0, 0.0), 8);
        let f = DualPolWaveform::new(z.clone(), z).unwrap();
        assert_eq!(pol_control_search(&f, PolObjective::MaxPowerRatio), Err(RxError::ZeroPower));
    }

    #[test]
    fn agc_span_and_scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..10_000).map(|_| rng.gen::<f64>() * 3.0 + 1.0).collect();
        let w = RealWaveform::new(x.clone(), 1e11).unwrap();
        let a = agc_normalize(&w, 0.4).unwrap();
        assert!((percentile_span(&a.samples) - 0.4).abs() < 1e-9);
        let w5 = RealWaveform::new(x.iter().map(|v| v * 5.0).collect(), 1e11).unwrap();
        let b = agc_normalize(&w5, 0.4).unwrap();
        for (u, v) in a.samples.iter().zip(&b.samples) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn agc_rejects_constant() {
        let w = RealWaveform::new(vec![0.3; 100], 1e11).unwrap();
        assert_eq!(agc_normalize(&w, 0.4), Err(RxError::DegenerateSignal));
    }

    #[test]
    fn percentile_interpolates() {
        let v: Vec<f64> = (0..=10).map(|k| k as f64).collect();
        assert_eq!(percentile_sorted(&v, 0.0), 0.0);
        assert_eq!(percentile_sorted(&v, 1.0), 10.0);
        assert!((percentile_sorted(&v, 0.25) - 2.5).abs() < 1e-12);
    }
}
