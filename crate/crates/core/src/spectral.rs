//! Full-record frequency-domain filtering. The record is treated as one
//! period of a circular signal.

use num_complex::Complex64;
use rustfft::FftPlanner;

/// Signed frequency of FFT bin `k` for an `n`-point transform at rate `fs`.
pub fn bin_frequency(k: usize, n: usize, fs: f64) -> f64 {
    let k = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    k * fs / n as f64
}

/// Multiply the spectrum of `samples` by `response(f)` in place.
pub fn apply_response<F>(samples: &mut [Complex64], fs: f64, response: F)
where
    F: Fn(f64) -> Complex64,
{
    let n = samples.len();
    if n == 0 {
        return;
    }
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    fwd.process(samples);
    let scale = 1.0 / n as f64;
    for (k, s) in samples.iter_mut().enumerate() {
        *s *= response(bin_frequency(k, n, fs)) * scale;
    }
    inv.process(samples);
}

/// Single-pole low-pass `1 / (1 + j f / f3db)`.
pub fn single_pole(f: f64, f3db: f64) -> Complex64 {
    Complex64::new(1.0, f / f3db).inv()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn bins_are_signed() {
        assert_eq!(bin_frequency(0, 8, 8.0), 0.0);
        assert_eq!(bin_frequency(3, 8, 8.0), 3.0);
        assert_eq!(bin_frequency(4, 8, 8.0), 4.0);
        assert_eq!(bin_frequency(5, 8, 8.0), -3.0);
    }

    #[test]
    fn unit_response_is_identity() {
        let orig: Vec<Complex64> = (0..37)
            .map(|n| Complex64::new((n as f64 * 0.3).sin(), (n as f64).cos()))
            .collect();
        let mut v = orig.clone();
        apply_response(&mut v, 1.0, |_| Complex64::new(1.0, 0.0));
        for (a, b) in v.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn tone_picks_up_response() {
        let n = 64;
        let fs = 64.0;
        let f0 = 5.0;
        let mut v: Vec<Complex64> = (0..n)
            .map(|k| Complex64::from_polar(1.0, 2.0 * PI * f0 * k as f64 / fs))
            .collect();
        apply_response(&mut v, fs, |f| single_pole(f, f0));
        for s in &v {
            assert!((s.norm() - 0.5f64.sqrt()).abs() < 1e-12);
        }
    }
}
