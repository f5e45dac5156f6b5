use jscc_core::channel::{add_noise, power_profile, sample_channel, snr_to_sigma_sq, NoiseSpec};
use jscc_core::rng::{seeded, stream};
use num_complex::Complex64;

#[test]
fn profile_normalizes_and_matches_direct_sum() {
    let p = power_profile(8, 4.0).unwrap();
    let total: f64 = (0..8).map(|l| (-(l as f64) / 4.0).exp()).sum();
    assert!((p.alpha - 1.0 / total).abs() < 1e-15);
    assert!((p.tap_variances.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!((p.tap_variances[0] - 0.2558).abs() < 5e-5);
    assert!(power_profile(0, 4.0).is_err());
    assert!(power_profile(8, 0.0).is_err());
    let flat = power_profile(1, 4.0).unwrap();
    assert_eq!(flat.tap_variances, vec![1.0]);
}

#[test]
fn monte_carlo_tap_powers() {
    let p = power_profile(8, 4.0).unwrap();
    let mut rng = seeded(2024);
    let n = 100_000;
    let mut power = [0.0f64; 8];
    let mut mean = [Complex64::new(0.0, 0.0); 8];
    let mut response_power = 0.0;
    for _ in 0..n {
        let ch = sample_channel(&p, 64, &mut rng).unwrap();
        for (l, h) in ch.taps.iter().enumerate() {
            power[l] += h.norm_sqr();
            mean[l] += h;
        }
        response_power += ch.response[13].norm_sqr();
    }
    let power: Vec<f64> = power.iter().map(|v| v / n as f64).collect();
    let sigma0 = (1.0 - (-0.25f64).exp()) / (1.0 - (-2.0f64).exp());
    assert!((power.iter().sum::<f64>() - 1.0).abs() < 0.03);
    assert!((power[0] - sigma0).abs() < 0.03 * sigma0);
    for l in 0..8 {
        let want = sigma0 * (-(l as f64) / 4.0).exp();
        assert!((power[l] - want).abs() < 0.05 * want, "tap {}: {} vs {}", l, power[l], want);
        assert!(mean[l].norm() / (n as f64) < 0.01);
    }
    assert!((response_power / n as f64 - 1.0).abs() < 0.03);
}

#[test]
fn noise_variance_and_snr() {
    assert!((snr_to_sigma_sq(10.0, 1.0) - 0.1).abs() < 1e-15);
    assert!((snr_to_sigma_sq(0.0, 2.0) - 2.0).abs() < 1e-15);
    assert_eq!(snr_to_sigma_sq(f64::INFINITY, 1.0), 0.0);
    let noise = NoiseSpec { variance: 0.5 };
    let mut y = vec![Complex64::new(0.0, 0.0); 200_000];
    add_noise(&mut y, &noise, &mut seeded(5));
    let n = y.len() as f64;
    let re = y.iter().map(|z| z.re * z.re).sum::<f64>() / n;
    let im = y.iter().map(|z| z.im * z.im).sum::<f64>() / n;
    let cross = y.iter().map(|z| z.re * z.im).sum::<f64>() / n;
    assert!((re - 0.25).abs() < 0.005);
    assert!((im - 0.25).abs() < 0.005);
    assert!(cross.abs() < 0.005);
}

#[test]
fn streams_reproduce_draws() {
    let p = power_profile(4, 4.0).unwrap();
    let a = sample_channel(&p, 16, &mut stream(3, 9)).unwrap();
    let b = sample_channel(&p, 16, &mut stream(3, 9)).unwrap();
    let c = sample_channel(&p, 16, &mut stream(3, 10)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}
