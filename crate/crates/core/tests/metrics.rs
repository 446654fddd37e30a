use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use shqpsk::linkmetrics::{self, AlignConfig};
use shqpsk::sigcore::{self, Bitstream, SymbolStream};
use shqpsk::Complex64;

fn random_bits(n: usize, rng: &mut ChaCha8Rng) -> Bitstream {
    Bitstream::from_bits((0..n).map(|_| rng.gen_range(0..2)).collect()).unwrap()
}

fn noisy(symbols: &SymbolStream, sigma: f64, rng: &mut ChaCha8Rng) -> SymbolStream {
    SymbolStream::new(
        symbols
            .symbols
            .iter()
            .map(|s| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                s + Complex64::new(re, im) * sigma
            })
            .collect(),
    )
}

fn flip(bits: &Bitstream, p: f64, rng: &mut ChaCha8Rng) -> Bitstream {
    Bitstream::from_bits(bits.bits().iter().map(|b| b ^ u8::from(rng.gen_bool(p))).collect()).unwrap()
}

#[test]
fn injected_error_rates_have_nominal_coverage() {
    let n = 50_000;
    let trials = 400;
    for p in [1e-1, 1e-2, 1e-3] {
        let mut inside = 0;
        for t in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(t);
            let (ri, rq) = (random_bits(n, &mut rng), random_bits(n, &mut rng));
            let (xi, xq) = (flip(&ri, p, &mut rng), flip(&rq, p, &mut rng));
            let r = linkmetrics::ber_measure(&xi, &xq, &ri, &rq).unwrap();
            let half = 1.96 * (p * (1.0 - p) / r.bits_compared as f64).sqrt();
            inside += usize::from((r.ber - p).abs() <= half);
        }
        let coverage = inside as f64 / trials as f64;
        assert!((0.92..=0.98).contains(&coverage), "p={p}: coverage {coverage}");
    }
}

#[test]
fn evm_of_gaussian_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 200_000;
    let (bi, bq) = (random_bits(n, &mut rng), random_bits(n, &mut rng));
    let clean = sigcore::qpsk_gray_map(&bi, &bq).unwrap();
    let sigma = 0.05;
    let evm = linkmetrics::evm_measure(&noisy(&clean, sigma, &mut rng)).unwrap();
    let expected = 100.0 * sigma * 2f64.sqrt();
    assert!((evm - expected).abs() / expected < 0.01, "{evm} vs {expected}");
}

#[test]
fn evm_and_ber_order_agree_over_noise_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let n = 100_000;
    let (bi, bq) = (random_bits(n, &mut rng), random_bits(n, &mut rng));
    let clean = sigcore::qpsk_gray_map(&bi, &bq).unwrap();
    let mut points = Vec::new();
    for sigma in [0.40, 0.25, 0.30, 0.20, 0.35] {
        let rx = noisy(&clean, sigma, &mut rng);
        let evm = linkmetrics::evm_measure(&rx).unwrap();
        let (di, dq) = sigcore::qpsk_demap(&rx).unwrap();
        let ber = linkmetrics::ber_measure(&di, &dq, &bi, &bq).unwrap().ber;
        points.push((evm, ber));
    }
    let mut by_evm: Vec<usize> = (0..points.len()).collect();
    let mut by_ber = by_evm.clone();
    by_evm.sort_by(|&a, &b| points[a].0.total_cmp(&points[b].0));
    by_ber.sort_by(|&a, &b| points[a].1.total_cmp(&points[b].1));
    assert_eq!(by_evm, by_ber, "{points:?}");
}

fn rotations_and_delays_ber(rx: &SymbolStream, ri: &Bitstream, rq: &Bitstream, max_delay: usize) -> f64 {
    let mut best = f64::INFINITY;
    let n = ri.len() - max_delay;
    for d in 0..=max_delay {
        for k in 0..4 {
            let rot = Complex64::from_polar(1.0, k as f64 * std::f64::consts::FRAC_PI_2);
            let s = SymbolStream::new(rx.symbols[d..d + n].iter().map(|z| z * rot).collect());
            let (di, dq) = sigcore::qpsk_demap(&s).unwrap();
            let r = linkmetrics::ber_measure(&di, &dq, &ri.slice(0, n).unwrap(), &rq.slice(0, n).unwrap())
                .unwrap();
            best = best.min(r.ber);
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ber_is_invariant_under_common_delay(seed in any::<u64>(), delay in 0usize..64, p in 0.0f64..0.3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 2000;
        let (ri, rq) = (random_bits(n, &mut rng), random_bits(n, &mut rng));
        let (xi, xq) = (flip(&ri, p, &mut rng), flip(&rq, p, &mut rng));
        let base = linkmetrics::ber_measure(&xi, &xq, &ri, &rq).unwrap();
        let shift = |b: &Bitstream| {
            let mut v = vec![0u8; delay];
            v.extend_from_slice(b.bits());
            Bitstream::from_bits(v).unwrap()
        };
        let shifted = linkmetrics::ber_measure(&shift(&xi), &shift(&xq), &shift(&ri), &shift(&rq)).unwrap();
        prop_assert_eq!(base.bit_errors, shifted.bit_errors);
        prop_assert!(shifted.ber <= base.ber);
    }

    #[test]
    fn alignment_is_no_worse_than_any_tested_candidate(
        seed in any::<u64>(),
        delay in 0usize..8,
        quarter in 0u32..4,
        sigma in 0.05f64..0.6,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 1200;
        let (ri, rq) = (random_bits(n, &mut rng), random_bits(n, &mut rng));
        let tx = sigcore::qpsk_gray_map(&ri, &rq).unwrap();
        let rot = Complex64::from_polar(1.0, quarter as f64 * std::f64::consts::FRAC_PI_2);
        let mut rx: Vec<Complex64> = (0..delay).map(|_| Complex64::new(0.7, 0.7)).collect();
        rx.extend(tx.symbols.iter().map(|s| s * rot));
        let rx = noisy(&SymbolStream::new(rx), sigma, &mut rng);
        let max_delay = 8;
        let cfg = AlignConfig { window: n - max_delay, max_delay, fail_threshold: 1.0 };
        let Ok((aligned, found)) = linkmetrics::resolve_ambiguity_with(&rx, &ri, &rq, &cfg) else {
            return Ok(());
        };
        let m = n - max_delay;
        let seg = SymbolStream::new(aligned.symbols[..m].to_vec());
        let (di, dq) = sigcore::qpsk_demap(&seg).unwrap();
        let chosen = linkmetrics::ber_measure(&di, &dq, &ri.slice(0, m).unwrap(), &rq.slice(0, m).unwrap()).unwrap();
        let fine = Complex64::from_polar(1.0, -found.fine_derotation);
        let derotated = SymbolStream::new(rx.symbols.iter().map(|z| z * fine).collect());
        let exhaustive = rotations_and_delays_ber(&derotated, &ri, &rq, max_delay);
        prop_assert!(chosen.ber <= exhaustive + 1e-12, "chosen {} exhaustive {}", chosen.ber, exhaustive);
    }
}
