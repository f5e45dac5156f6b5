use std::f64::consts::PI;

use jscc_core::channel::{apply_channel, convolve, convolve_adjoint, freq_response, NoiseSpec};
use jscc_core::ofdm::{
    add_cp, assemble_packet, clip, dft, disassemble_packet, idft, make_pilots, mean_power, normalize_power, papr_db,
    remove_cp, transmit, ComplexGrid, OfdmConfig,
};
use jscc_core::receiver::{equalize_mmse, estimate_channel_mmse};
use jscc_core::rng::{complex_gaussian, seeded};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn naive_dft(x: &[Complex64], sign: f64) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(t, v)| v * Complex64::from_polar(1.0, sign * 2.0 * PI * (k * t) as f64 / n as f64))
                .sum::<Complex64>()
                / (n as f64).sqrt()
        })
        .collect()
}

fn naive_response(taps: &[Complex64], n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|k| {
            taps.iter()
                .enumerate()
                .map(|(l, h)| h * Complex64::from_polar(1.0, -2.0 * PI * (k * l) as f64 / n as f64))
                .sum()
        })
        .collect()
}

fn max_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn random_vec(seed: u64, n: usize) -> Vec<Complex64> {
    let mut rng = seeded(seed);
    (0..n).map(|_| complex_gaussian(&mut rng, 1.0)).collect()
}

fn random_grid(seed: u64, rows: usize, cols: usize) -> ComplexGrid {
    ComplexGrid::new(rows, cols, random_vec(seed, rows * cols)).unwrap()
}

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y.conj()).sum()
}

fn small_config(cp_len: usize, clip_ratio: f64) -> OfdmConfig {
    OfdmConfig {
        fft_size: 16,
        cp_len,
        pilot_symbols: 2,
        data_symbols: 3,
        clip_ratio,
        signal_power: 1.0,
    }
}

#[test]
fn dft_matches_naive_summation() {
    for n in [1, 2, 3, 8, 12, 64] {
        let x = random_vec(n as u64, n);
        assert!(max_diff(&dft(&x), &naive_dft(&x, -1.0)) < 1e-12);
        assert!(max_diff(&idft(&x), &naive_dft(&x, 1.0)) < 1e-12);
    }
}

#[test]
fn dft_examples() {
    let mut delta = vec![c(0.0, 0.0); 4];
    delta[0] = c(1.0, 0.0);
    assert!(max_diff(&dft(&delta), &[c(0.5, 0.0); 4]) < 1e-15);
    let ones = vec![c(1.0, 0.0); 4];
    assert!(max_diff(&dft(&ones), &[c(2.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]) < 1e-15);
}

#[test]
fn cyclic_prefix_examples() {
    let x: Vec<Complex64> = (1..=4).map(|v| c(v as f64, 0.0)).collect();
    let with = add_cp(&x, 2).unwrap();
    let expect: Vec<Complex64> = [3.0, 4.0, 1.0, 2.0, 3.0, 4.0].iter().map(|&v| c(v, 0.0)).collect();
    assert_eq!(with, expect);
    assert_eq!(remove_cp(&with, 2).unwrap(), x);
    assert!(add_cp(&x, 5).is_err());
    assert!(remove_cp(&x, 4).unwrap().is_empty());
    assert!(remove_cp(&x, 5).is_err());
}

#[test]
fn pilot_fixture_is_frozen() {
    // Quadrant index per subcarrier: bit 0 negative real, bit 1 negative imaginary.
    const FIXTURE: &str = "3023113203233323123003311033222121012010320310223210231113220212";
    let p = make_pilots(7, 2, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for k in 0..64 {
        let q = (rng.next_u32() & 3) as u8;
        assert_eq!(FIXTURE.as_bytes()[k] - b'0', q);
        let z = p.get(0, k);
        assert_eq!(z.re < 0.0, q & 1 == 1);
        assert_eq!(z.im < 0.0, q & 2 == 2);
        assert!((z.norm() - 1.0).abs() < 1e-15);
        assert_eq!(p.get(1, k), z);
    }
}

#[test]
fn packet_round_trip_without_channel() {
    let cfg = small_config(4, f64::INFINITY);
    let pilots = make_pilots(7, 2, 16);
    let data = random_grid(1, 3, 16);
    let tx = transmit(&pilots, &data, &cfg).unwrap();
    assert_eq!(tx.clipped.len(), cfg.packet_len());
    assert!((mean_power(&tx.normalized) - 1.0).abs() < 1e-12);
    let (rp, rd) = disassemble_packet(&tx.clipped.samples, &cfg).unwrap();
    let scaled = |g: &ComplexGrid| g.values().iter().map(|v| v * tx.gain).collect::<Vec<_>>();
    assert!(max_diff(rp.values(), &scaled(&pilots)) < 1e-12);
    assert!(max_diff(rd.values(), &scaled(&data)) < 1e-12);
    assert_eq!(assemble_packet(&pilots, &data, &cfg).unwrap().samples, tx.clipped.samples);
}

#[test]
fn received_grid_is_channel_times_transmitted() {
    // Noise-free, clip-free, taps within the cyclic prefix: R[j,k] = H[k]·g·Y[j,k].
    for taps in [1, 3, 5] {
        let cfg = small_config(4, f64::INFINITY);
        let pilots = make_pilots(3, 2, 16);
        let data = random_grid(taps as u64, 3, 16);
        let tx = transmit(&pilots, &data, &cfg).unwrap();
        let h = random_vec(100 + taps as u64, taps);
        let rx = apply_channel(&tx.clipped.samples, &h, &NoiseSpec { variance: 0.0 }, &mut seeded(0)).unwrap();
        let (rp, rd) = disassemble_packet(&rx, &cfg).unwrap();
        let resp = naive_response(&h, 16);
        for (grid, sent) in [(&rp, &pilots), (&rd, &data)] {
            for j in 0..grid.rows() {
                for k in 0..16 {
                    let want = resp[k] * sent.get(j, k) * tx.gain;
                    assert!((grid.get(j, k) - want).norm() < 1e-9, "taps {} ({}, {})", taps, j, k);
                }
            }
        }
    }
}

#[test]
fn taps_beyond_prefix_break_the_identity() {
    let cfg = small_config(2, f64::INFINITY);
    let pilots = make_pilots(3, 2, 16);
    let data = random_grid(9, 3, 16);
    let tx = transmit(&pilots, &data, &cfg).unwrap();
    let h = random_vec(5, 6);
    let rx = apply_channel(&tx.clipped.samples, &h, &NoiseSpec { variance: 0.0 }, &mut seeded(0)).unwrap();
    let (_, rd) = disassemble_packet(&rx, &cfg).unwrap();
    let resp = naive_response(&h, 16);
    let err = (0..16).map(|k| (rd.get(1, k) - resp[k] * data.get(1, k) * tx.gain).norm()).fold(0.0, f64::max);
    assert!(err > 1e-3);
}

#[test]
fn frequency_response_matches_naive() {
    let h = random_vec(3, 8);
    assert!(max_diff(&freq_response(&h, 64).unwrap(), &naive_response(&h, 64)) < 1e-12);
    assert!(freq_response(&h, 4).is_err());
}

#[test]
fn estimate_and_equalize_are_exact_without_noise() {
    let pilots = make_pilots(11, 2, 16);
    let h = naive_response(&random_vec(4, 3), 16);
    let rx = ComplexGrid::new(2, 16, (0..32).map(|i| h[i % 16] * pilots.values()[i]).collect()).unwrap();
    let est = estimate_channel_mmse(&pilots, &rx, 0.0).unwrap();
    assert!(max_diff(&est.response, &h) < 1e-12);
    let data = random_grid(8, 3, 16);
    let rd = ComplexGrid::new(3, 16, (0..48).map(|i| h[i % 16] * data.values()[i]).collect()).unwrap();
    let eq = equalize_mmse(&rd, &h, 0.0).unwrap();
    assert!(max_diff(eq.values(), data.values()) < 1e-12);
}

#[test]
fn estimator_formula_with_noise() {
    let pilots = make_pilots(2, 2, 8);
    let rx = random_grid(6, 2, 8);
    let s2 = 0.3;
    let est = estimate_channel_mmse(&pilots, &rx, s2).unwrap();
    for k in 0..8 {
        let num: Complex64 = (0..2).map(|i| pilots.get(i, k).conj() * rx.get(i, k)).sum();
        let den: f64 = (0..2).map(|i| pilots.get(i, k).norm_sqr()).sum::<f64>() + s2;
        assert!((est.response[k] - num / den).norm() < 1e-14);
    }
    let eq = equalize_mmse(&rx, &est.response, s2).unwrap();
    for k in 0..8 {
        let h = est.response[k];
        let want = h.conj() * rx.get(0, k) / (h.norm_sqr() + s2);
        assert!((eq.get(0, k) - want).norm() < 1e-14);
    }
}

#[test]
fn clipping_examples() {
    let y = vec![c(0.5, 0.0), c(3.0, 4.0), c(0.0, -2.0)];
    let out = clip(&y, 1.0, 1.0);
    assert_eq!(out[0], y[0]);
    assert!((out[1] - c(0.6, 0.8)).norm() < 1e-15);
    assert!((out[2] - c(0.0, -1.0)).norm() < 1e-15);
    assert_eq!(clip(&y, f64::INFINITY, 1.0), y);
}

#[test]
fn papr_examples() {
    assert!(papr_db(&[c(1.0, 0.0); 8]).unwrap().abs() < 1e-12);
    let mut impulse = vec![c(0.0, 0.0); 8];
    impulse[3] = c(0.0, 2.0);
    assert!((papr_db(&impulse).unwrap() - 10.0 * 8f64.log10()).abs() < 1e-12);
    assert!(papr_db(&[c(0.0, 0.0); 4]).is_err());
    assert!(normalize_power(&[c(0.0, 0.0); 4], 1.0).is_err());
}

#[test]
fn cpp_reference_value() {
    let cfg = OfdmConfig::default();
    assert_eq!(cfg.packet_len(), 640);
    assert_eq!(cfg.cpp(32, 32, 3), 1280.0 / 6144.0);
}

fn complex_vec(max_len: usize) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64), 1..max_len)
        .prop_map(|v| v.into_iter().map(|(a, b)| c(a, b)).collect())
}

proptest! {
    #[test]
    fn parseval_and_inverse(x in complex_vec(40)) {
        let f = dft(&x);
        let e_t: f64 = x.iter().map(|z| z.norm_sqr()).sum();
        let e_f: f64 = f.iter().map(|z| z.norm_sqr()).sum();
        prop_assert!((e_t - e_f).abs() <= 1e-10 * (1.0 + e_t));
        prop_assert!(max_diff(&idft(&f), &x) < 1e-10);
    }

    #[test]
    fn dft_is_linear(x in complex_vec(24), a in -2.0..2.0f64, b in -2.0..2.0f64) {
        let y: Vec<Complex64> = x.iter().rev().copied().collect();
        let mix: Vec<Complex64> = x.iter().zip(&y).map(|(p, q)| p * a + q * b).collect();
        let want: Vec<Complex64> = dft(&x).iter().zip(dft(&y)).map(|(p, q)| p * a + q * b).collect();
        prop_assert!(max_diff(&dft(&mix), &want) < 1e-10);
    }

    #[test]
    fn cp_removal_inverts_insertion(x in complex_vec(32), cp in 0usize..8) {
        prop_assume!(cp <= x.len());
        prop_assert_eq!(remove_cp(&add_cp(&x, cp).unwrap(), cp).unwrap(), x);
    }

    #[test]
    fn convolution_adjoint_identity(y in complex_vec(30), g_seed in 0u64..1000, taps in 1usize..6) {
        prop_assume!(taps <= y.len());
        let h = random_vec(g_seed, taps);
        let g = random_vec(g_seed + 1, y.len());
        let lhs = inner(&convolve(&y, &h), &g);
        let rhs = inner(&y, &convolve_adjoint(&g, &h));
        prop_assert!((lhs - rhs).norm() < 1e-9 * (1.0 + lhs.norm()));
    }

    #[test]
    fn clipping_is_a_bounded_contraction(y in complex_vec(30), z_seed in 0u64..1000, rho in 0.1..3.0f64) {
        let z = random_vec(z_seed, y.len());
        let cy = clip(&y, rho, 1.0);
        let cz = clip(&z, rho, 1.0);
        let d = |a: &[Complex64], b: &[Complex64]| a.iter().zip(b).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>().sqrt();
        prop_assert!(d(&cy, &cz) <= d(&y, &z) + 1e-12);
        prop_assert!(cy.iter().all(|v| v.norm() <= rho + 1e-12));
        for (a, b) in y.iter().zip(&cy) {
            if a.norm() <= rho { prop_assert_eq!(a, b); }
            else { prop_assert!((a.arg() - b.arg()).abs() < 1e-9 || a.norm() < 1e-300); }
        }
    }

    #[test]
    fn normalized_power_is_target(y in complex_vec(30), target in 0.1..4.0f64) {
        prop_assume!(mean_power(&y) > 1e-6);
        let (out, gain) = normalize_power(&y, target).unwrap();
        prop_assert!((mean_power(&out) - target).abs() < 1e-10 * target);
        prop_assert!((out[0] - y[0] * gain).norm() < 1e-12);
    }
}

#[test]
fn clipped_amplitude_never_exceeds_threshold() {
    let mut rng = seeded(12);
    let y: Vec<Complex64> = (0..100_000).map(|_| complex_gaussian(&mut rng, 4.0)).collect();
    for rho in [1.0, 1.4, 0.7, 1.0 / 3.0] {
        assert!(clip(&y, rho, 1.0).iter().all(|z| z.norm() <= rho));
    }
}
