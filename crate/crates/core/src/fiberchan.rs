//! Standard single-mode fiber: chromatic dispersion, loss, an optional
//! in-line EDFA with ASE, and a static polarization rotation.

use std::f64::consts::PI;
use std::ops::Mul;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sigcore::{ComplexWaveform, DualPolWaveform};
use crate::spectral;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Planck constant, J s.
pub const PLANCK: f64 = 6.626_070_15e-34;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FiberError {
    #[error("EDFA is disabled")]
    DisabledAmplifier,
    #[error("invalid fiber config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberConfig {
    pub length_km: f64,
    pub dispersion_ps_nm_km: f64,
    pub attenuation_db_km: f64,
    pub wavelength_nm: f64,
}

impl Default for FiberConfig {
    fn default() -> Self {
        Self {
            length_km: 0.0,
            dispersion_ps_nm_km: 17.0,
            attenuation_db_km: 0.2,
            wavelength_nm: 1550.0,
        }
    }
}

impl FiberConfig {
    pub fn validate(&self) -> Result<(), FiberError> {
        if !(self.length_km >= 0.0) || !self.length_km.is_finite() {
            return Err(FiberError::InvalidConfig("length_km must be >= 0".into()));
        }
        if !(self.attenuation_db_km >= 0.0) {
            return Err(FiberError::InvalidConfig("attenuation_db_km must be >= 0".into()));
        }
        if !(self.wavelength_nm > 0.0) {
            return Err(FiberError::InvalidConfig("wavelength_nm must be > 0".into()));
        }
        if !self.dispersion_ps_nm_km.is_finite() {
            return Err(FiberError::InvalidConfig("dispersion must be finite".into()));
        }
        Ok(())
    }

    /// Group-velocity dispersion in s^2/m: `beta2 = -D lambda^2 / (2 pi c)`.
    pub fn beta2(&self) -> f64 {
        let d = self.dispersion_ps_nm_km * 1e-6; // s/m^2
        let lambda = self.wavelength_nm * 1e-9;
        -d * lambda * lambda / (2.0 * PI * SPEED_OF_LIGHT)
    }

    pub fn total_loss_db(&self) -> f64 {
        self.attenuation_db_km * self.length_km
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdfaConfig {
    pub enabled: bool,
    pub gain_db: f64,
    pub noise_figure_db: f64,
    /// Carrier wavelength, sets the photon energy of the ASE.
    #[serde(default = "default_wavelength")]
    pub wavelength_nm: f64,
}

fn default_wavelength() -> f64 {
    1550.0
}

impl Default for EdfaConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            gain_db: 16.0,
            noise_figure_db: 5.0,
            wavelength_nm: 1550.0,
        }
    }
}

impl EdfaConfig {
    pub fn validate(&self) -> Result<(), FiberError> {
        if self.enabled {
            if !(self.gain_db >= 0.0) {
                return Err(FiberError::InvalidConfig("EDFA gain_db must be >= 0".into()));
            }
            if !(self.noise_figure_db >= 3.0) {
                return Err(FiberError::InvalidConfig(
                    "EDFA noise_figure_db must be >= 3".into(),
                ));
            }
            if !(self.wavelength_nm > 0.0) {
                return Err(FiberError::InvalidConfig("EDFA wavelength_nm must be > 0".into()));
            }
        }
        Ok(())
    }

    pub fn linear_gain(&self) -> f64 {
        10f64.powf(self.gain_db / 10.0)
    }

    /// One-polarization ASE power spectral density in mW/Hz:
    /// `(G - 1) n_sp h nu` with `n_sp = NF / 2`.
    pub fn ase_psd_mw_per_hz(&self) -> f64 {
        let nsp = 10f64.powf(self.noise_figure_db / 10.0) / 2.0;
        let nu = SPEED_OF_LIGHT / (self.wavelength_nm * 1e-9);
        (self.linear_gain() - 1.0) * nsp * PLANCK * nu * 1e3
    }
}

/// Multiply both polarizations by `exp(-j beta2/2 w^2 L)`.
pub fn apply_cd(field: &DualPolWaveform, cfg: &FiberConfig) -> DualPolWaveform {
    let bl = cfg.beta2() * cfg.length_km * 1e3;
    if bl == 0.0 {
        return field.clone();
    }
    let fs = field.sample_rate();
    let response = |f: f64| {
        let w = 2.0 * PI * f;
        Complex64::from_polar(1.0, -0.5 * bl * w * w)
    };
    let mut out = field.clone();
    spectral::apply_response(&mut out.x.samples, fs, response);
    spectral::apply_response(&mut out.y.samples, fs, response);
    out
}

/// Scale fields by `10^(-alpha L / 20)`.
pub fn attenuate(field: &DualPolWaveform, cfg: &FiberConfig) -> DualPolWaveform {
    field.map_both(10f64.powf(-cfg.total_loss_db() / 20.0))
}

/// Lumped optical attenuation in dB (a VOA).
pub fn attenuate_db(field: &DualPolWaveform, loss_db: f64) -> DualPolWaveform {
    field.map_both(10f64.powf(-loss_db / 20.0))
}

/// Amplify by `sqrt(G)` and add white circular Gaussian ASE on each
/// polarization, with power `S_ASE * sample_rate`.
pub fn edfa_amplify(
    field: &DualPolWaveform,
    cfg: &EdfaConfig,
    seed: u64,
) -> Result<DualPolWaveform, FiberError> {
    if !cfg.enabled {
        return Err(FiberError::DisabledAmplifier);
    }
    cfg.validate()?;
    let g = cfg.linear_gain();
    let mut out = field.map_both(g.sqrt());
    let noise_power = cfg.ase_psd_mw_per_hz() * field.sample_rate();
    if noise_power > 0.0 {
        let sigma = (noise_power / 2.0).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for pol in [&mut out.x, &mut out.y] {
            for s in pol.samples.iter_mut() {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                *s += Complex64::new(re, im) * sigma;
            }
        }
    }
    Ok(out)
}

/// 2x2 complex Jones matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JonesMatrix {
    pub m: [[Complex64; 2]; 2],
}

impl JonesMatrix {
    pub fn new(m: [[Complex64; 2]; 2]) -> Self {
        Self { m }
    }

    pub fn identity() -> Self {
        let (o, z) = (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
        Self { m: [[o, z], [z, o]] }
    }

    pub fn swap() -> Self {
        let (o, z) = (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
        Self { m: [[z, o], [o, z]] }
    }

    /// SU(2) element
    /// `[[e^{j p1} cos t, e^{j p2} sin t], [-e^{-j p2} sin t, e^{-j p1} cos t]]`.
    pub fn from_angles(theta: f64, phi1: f64, phi2: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self {
            m: [
                [Complex64::from_polar(c, phi1), Complex64::from_polar(s, phi2)],
                [-Complex64::from_polar(s, -phi2), Complex64::from_polar(c, -phi1)],
            ],
        }
    }

    pub fn adjoint(&self) -> Self {
        let m = &self.m;
        Self {
            m: [
                [m[0][0].conj(), m[1][0].conj()],
                [m[0][1].conj(), m[1][1].conj()],
            ],
        }
    }

    pub fn apply(&self, x: Complex64, y: Complex64) -> (Complex64, Complex64) {
        (
            self.m[0][0] * x + self.m[0][1] * y,
            self.m[1][0] * x + self.m[1][1] * y,
        )
    }

    /// Largest entry magnitude of `J J^H - I`.
    pub fn unitarity_error(&self) -> f64 {
        let p = *self * self.adjoint();
        let id = Self::identity();
        let mut worst = 0.0f64;
        for r in 0..2 {
            for c in 0..2 {
                worst = worst.max((p.m[r][c] - id.m[r][c]).norm());
            }
        }
        worst
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.unitarity_error() <= tol
    }
}

impl Mul for JonesMatrix {
    type Output = JonesMatrix;

    fn mul(self, rhs: JonesMatrix) -> JonesMatrix {
        let (a, b) = (&self.m, &rhs.m);
        let mut m = [[Complex64::new(0.0, 0.0); 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                m[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c];
            }
        }
        JonesMatrix { m }
    }
}

/// Haar-random SU(2) rotation: `cos^2 theta` uniform on [0, 1], both phases
/// uniform on [0, 2 pi).
pub fn random_sop_rotation(seed: u64) -> JonesMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: f64 = rng.gen();
    let theta = u.sqrt().acos();
    let phi1 = rng.gen::<f64>() * 2.0 * PI;
    let phi2 = rng.gen::<f64>() * 2.0 * PI;
    JonesMatrix::from_angles(theta, phi1, phi2)
}

/// `(x', y') = J (x, y)` sample by sample.
pub fn pol_transform(field: &DualPolWaveform, j: &JonesMatrix) -> DualPolWaveform {
    let (x, y): (Vec<Complex64>, Vec<Complex64>) = field
        .x
        .samples
        .iter()
        .zip(&field.y.samples)
        .map(|(&x, &y)| j.apply(x, y))
        .unzip();
    let fs = field.sample_rate();
    DualPolWaveform {
        x: ComplexWaveform {
            samples: x,
            sample_rate: fs,
        },
        y: ComplexWaveform {
            samples: y,
            sample_rate: fs,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, proptest};

    fn random_field(n: usize, seed: u64) -> DualPolWaveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pol = || {
            ComplexWaveform::new(
                (0..n)
                    .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
                    .collect(),
                1e11,
            )
            .unwrap()
        };
        let x = pol();
        let y = pol();
        DualPolWaveform::new(x, y).unwrap()
    }

    fn rel_rms(a: &DualPolWaveform, b: &DualPolWaveform) -> f64 {
        let mut num = 0.0;
        for (p, q) in [(&a.x, &b.x), (&a.y, &b.y)] {
            num += p
                .samples
                .iter()
                .zip(&q.samples)
                .map(|(u, v)| (u - v).norm_sqr())
                .sum::<f64>();
        }
        (num / b.energy()).sqrt()
    }

    #[test]
    fn cd_zero_length_identity() {
        let f = random_field(100, 1);
        assert_eq!(apply_cd(&f, &FiberConfig::default()), f);
    }

    #[test]
    fn cd_is_all_pass_and_invertible() {
        let f = random_field(4096, 2);
        let cfg = FiberConfig {
            length_km: 80.0,
            ..Default::default()
        };
        let out = apply_cd(&f, &cfg);
        assert!((out.energy() - f.energy()).abs() < 1e-12 * f.energy());
        let inv = FiberConfig {
            dispersion_ps_nm_km: -cfg.dispersion_ps_nm_km,
            ..cfg
        };
        assert!(rel_rms(&apply_cd(&out, &inv), &f) < 1e-9);
    }

    #[test]
    fn cd_commutes_with_rotation() {
        let f = random_field(2048, 3);
        let cfg = FiberConfig {
            length_km: 20.0,
            ..Default::default()
        };
        let j = random_sop_rotation(11);
        let a = pol_transform(&apply_cd(&f, &cfg), &j);
        let b = apply_cd(&pol_transform(&f, &j), &cfg);
        assert!(rel_rms(&a, &b) < 1e-9);
    }

    #[test]
    fn beta2_of_ssmf() {
        // About -21.7 ps^2/km at 17 ps/(nm km), 1550 nm.
        let b2 = FiberConfig::default().beta2() * 1e24 * 1e3;
        assert!((b2 + 21.68).abs() < 0.05, "{b2}");
    }

    #[test]
    fn attenuation_20km() {
        let f = random_field(64, 4);
        let cfg = FiberConfig {
            length_km: 20.0,
            ..Default::default()
        };
        let out = attenuate(&f, &cfg);
        assert!((out.energy() / f.energy() - 10f64.powf(-0.4)).abs() < 1e-9);
        assert_eq!(attenuate(&f, &FiberConfig::default()), f);
    }

    #[test]
    fn edfa_disabled_and_unity_gain() {
        let f = random_field(64, 5);
        assert_eq!(
            edfa_amplify(&f, &EdfaConfig::default(), 1),
            Err(FiberError::DisabledAmplifier)
        );
        let unity = EdfaConfig {
            enabled: true,
            gain_db: 0.0,
            ..Default::default()
        };
        assert_eq!(edfa_amplify(&f, &unity, 1).unwrap(), f);
    }

    #[test]
    fn edfa_signal_gain() {
        let n = 200_000;
        let tone = ComplexWaveform::new(vec![Complex64::new(0.1, 0.0); n], 1e11).unwrap();
        let f = DualPolWaveform::new(tone.clone(), tone).unwrap();
        let cfg = EdfaConfig {
            enabled: true,
            gain_db: 16.0,
            noise_figure_db: 5.0,
            wavelength_nm: 1550.0,
        };
        let out = edfa_amplify(&f, &cfg, 77).unwrap();
        let ase = cfg.ase_psd_mw_per_hz() * 1e11 * 2.0;
        let ratio = (out.mean_power() - ase) / f.mean_power();
        assert!((ratio / 10f64.powf(1.6) - 1.0).abs() < 0.01, "{ratio}");
    }

    #[test]
    fn edfa_ase_power_at_quantum_limit() {
        let n = 200_000;
        let zero = ComplexWaveform::new(vec![Complex64::new(0.0, 0.0); n], 1e11).unwrap();
        let f = DualPolWaveform::new(zero.clone(), zero).unwrap();
        let cfg = EdfaConfig {
            enabled: true,
            gain_db: 20.0,
            noise_figure_db: 3.0,
            wavelength_nm: 1550.0,
        };
        let out = edfa_amplify(&f, &cfg, 5).unwrap();
        let nsp = 10f64.powf(0.3) / 2.0;
        let nu = SPEED_OF_LIGHT / 1550e-9;
        let expected = 99.0 * nsp * PLANCK * nu * 1e3 * 1e11;
        for pol in [&out.x, &out.y] {
            assert!((pol.mean_power() / expected - 1.0).abs() < 0.1);
        }
    }

    #[test]
    fn sop_rotation_is_unitary_and_deterministic() {
        for seed in 0..200 {
            let j = random_sop_rotation(seed);
            assert!(j.is_unitary(1e-12));
            assert_eq!(j, random_sop_rotation(seed));
        }
    }

    #[test]
    fn sop_haar_mean_transfer() {
        let n = 10_000;
        let mean: f64 = (0..n).map(|s| random_sop_rotation(s).m[0][0].norm_sqr()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
    }

    #[test]
    fn pol_transform_identity_and_swap() {
        let f = random_field(32, 6);
        assert_eq!(pol_transform(&f, &JonesMatrix::identity()), f);
        let s = pol_transform(&f, &JonesMatrix::swap());
        assert_eq!(s.x, f.y);
        assert_eq!(s.y, f.x);
    }

    #[test]
    fn invalid_configs() {
        assert!(FiberConfig { length_km: -1.0, ..Default::default() }.validate().is_err());
        assert!(FiberConfig { attenuation_db_km: -0.1, ..Default::default() }.validate().is_err());
        let e = EdfaConfig { enabled: true, noise_figure_db: 2.0, ..Default::default() };
        assert!(e.validate().is_err());
        let e = EdfaConfig { enabled: true, gain_db: -1.0, ..Default::default() };
        assert!(e.validate().is_err());
    }

    proptest! {
        #[test]
        fn unitary_rotation_preserves_power(seed in any::<u64>(), fseed in 0u64..1000) {
            let f = random_field(16, fseed);
            let out = pol_transform(&f, &random_sop_rotation(seed));
            for n in 0..f.len() {
                prop_assert!((out.power_at(n) - f.power_at(n)).abs() < 1e-12);
            }
        }

        #[test]
        fn attenuation_never_gains(alpha in 0.0f64..1.0, len in 0.0f64..200.0) {
            let f = random_field(16, 9);
            let cfg = FiberConfig { length_km: len, attenuation_db_km: alpha, ..Default::default() };
            prop_assert!(attenuate(&f, &cfg).energy() <= f.energy() * (1.0 + 1e-15));
        }
    }
}
