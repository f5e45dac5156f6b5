//! Multipath Rayleigh block-fading channel with additive Gaussian noise.
//!
//! `ŷ = h * y + w`, with independent taps `h_l ~ CN(0, σ_l²)` whose powers
//! follow an exponential decay `σ_l² = α e^{-l/γ}` normalized to unit sum.
//! Gradients flow into the signal only; taps and noise are constants of a
//! training step.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;

use crate::autodiff::{cget, cset, Function, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::rng::complex_gaussian;

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelProfile {
    pub taps: usize,
    pub decay: f64,
    pub tap_variances: Vec<f64>,
    pub alpha: f64,
}

/// Exponential power-delay profile with `taps` taps and decay constant `decay`.
pub fn power_profile(taps: usize, decay: f64) -> Result<ChannelProfile> {
    if taps == 0 {
        return Err(Error::InvalidArgument("channel needs at least one tap".into()));
    }
    if !(decay > 0.0 && decay.is_finite()) {
        return Err(Error::InvalidArgument(format!("decay constant must be > 0, got {}", decay)));
    }
    let raw: Vec<f64> = (0..taps).map(|l| (-(l as f64) / decay).exp()).collect();
    let alpha = 1.0 / raw.iter().sum::<f64>();
    Ok(ChannelProfile {
        taps,
        decay,
        tap_variances: raw.iter().map(|v| alpha * v).collect(),
        alpha,
    })
}

/// One draw of the impulse response together with its frequency response.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    pub taps: Vec<Complex64>,
    pub response: Vec<Complex64>,
}

impl ChannelRealization {
    pub fn new(taps: Vec<Complex64>, fft_size: usize) -> Result<Self> {
        let response = freq_response(&taps, fft_size)?;
        Ok(ChannelRealization { taps, response })
    }

    /// Single-tap channel `h = [1]`.
    pub fn identity(fft_size: usize) -> Self {
        ChannelRealization::new(vec![Complex64::new(1.0, 0.0)], fft_size).expect("one tap fits")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    /// Total complex variance σ² per sample (σ²/2 per real component).
    pub variance: f64,
}

impl NoiseSpec {
    pub fn from_snr_db(snr_db: f64, signal_power: f64) -> Self {
        NoiseSpec {
            variance: snr_to_sigma_sq(snr_db, signal_power),
        }
    }
}

pub fn snr_to_sigma_sq(snr_db: f64, signal_power: f64) -> f64 {
    signal_power * 10f64.powf(-snr_db / 10.0)
}

/// Draws `h_l = √(σ_l²/2)(g₁ + j g₂)` for every tap.
pub fn sample_channel<R: Rng + ?Sized>(
    profile: &ChannelProfile,
    fft_size: usize,
    rng: &mut R,
) -> Result<ChannelRealization> {
    let taps = profile
        .tap_variances
        .iter()
        .map(|&v| complex_gaussian(rng, v))
        .collect();
    ChannelRealization::new(taps, fft_size)
}

/// `H[k] = Σ_l h_l e^{-j2πkl/N}` (no normalization).
pub fn freq_response(taps: &[Complex64], fft_size: usize) -> Result<Vec<Complex64>> {
    if taps.len() > fft_size {
        return Err(Error::InvalidArgument(format!(
            "{} taps exceed {} subcarriers",
            taps.len(),
            fft_size
        )));
    }
    Ok((0..fft_size)
        .map(|k| {
            taps.iter()
                .enumerate()
                .map(|(l, &h)| h * Complex64::from_polar(1.0, -2.0 * PI * ((k * l) % fft_size) as f64 / fft_size as f64))
                .sum()
        })
        .collect())
}

/// Linear convolution truncated to the input length.
pub fn convolve(y: &[Complex64], taps: &[Complex64]) -> Vec<Complex64> {
    (0..y.len())
        .map(|n| {
            taps.iter()
                .enumerate()
                .take(n + 1)
                .map(|(l, &h)| h * y[n - l])
                .sum()
        })
        .collect()
}

/// Adjoint of [`convolve`]: correlation with the conjugate taps.
pub fn convolve_adjoint(g: &[Complex64], taps: &[Complex64]) -> Vec<Complex64> {
    (0..g.len())
        .map(|m| {
            taps.iter()
                .enumerate()
                .filter(|(l, _)| m + l < g.len())
                .map(|(l, h)| h.conj() * g[m + l])
                .sum()
        })
        .collect()
}

pub fn add_noise<R: Rng + ?Sized>(y: &mut [Complex64], noise: &NoiseSpec, rng: &mut R) {
    if noise.variance > 0.0 {
        for z in y.iter_mut() {
            *z += complex_gaussian(rng, noise.variance);
        }
    }
}

/// `h * y + w` with the convolution tail beyond `y.len()` dropped.
pub fn apply_channel<R: Rng + ?Sized>(
    y: &[Complex64],
    taps: &[Complex64],
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    if y.len() < taps.len() {
        return Err(Error::InvalidArgument(format!(
            "signal of {} samples shorter than {} taps",
            y.len(),
            taps.len()
        )));
    }
    let mut out = convolve(y, taps);
    add_noise(&mut out, noise, rng);
    Ok(out)
}

/// Noise-free convolution of each packet in a `[B, T, 2]` tensor with its
/// own taps.
pub struct ApplyChannel {
    pub taps: Vec<Vec<Complex64>>,
}

impl ApplyChannel {
    fn check(&self, t: &Tensor) -> Result<usize> {
        let s = t.shape();
        if s.len() != 3 || s[2] != 2 || s[0] != self.taps.len() {
            return Err(Error::shape(
                "apply_channel",
                format!("expected [{}, T, 2], got {:?}", self.taps.len(), s),
            ));
        }
        if self.taps.iter().any(|h| h.len() > s[1]) {
            return Err(Error::InvalidArgument("packet shorter than channel".into()));
        }
        Ok(s[1])
    }

    fn run(&self, t: &Tensor, adjoint: bool) -> Tensor {
        let len = t.shape()[1];
        let mut out = Tensor::zeros(t.shape());
        for (b, h) in self.taps.iter().enumerate() {
            let src = &t.data()[2 * b * len..2 * (b + 1) * len];
            let x: Vec<Complex64> = (0..len).map(|i| cget(src, i)).collect();
            let y = if adjoint { convolve_adjoint(&x, h) } else { convolve(&x, h) };
            let dst = &mut out.data_mut()[2 * b * len..2 * (b + 1) * len];
            for (i, z) in y.into_iter().enumerate() {
                cset(dst, i, z);
            }
        }
        out
    }
}

impl Function for ApplyChannel {
    fn name(&self) -> &'static str {
        "apply_channel"
    }
    fn forward(&self, x: &[&Tensor]) -> Result<Tensor> {
        self.check(x[0])?;
        Ok(self.run(x[0], false))
    }
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(self.run(g, true))]
    }
}

impl Graph {
    /// Convolves each packet with its taps and adds the constant `noise`
    /// tensor when given.
    pub fn apply_channel(
        &mut self,
        y: NodeId,
        taps: Vec<Vec<Complex64>>,
        noise: Option<Tensor>,
    ) -> Result<NodeId> {
        let faded = self.record(ApplyChannel { taps }, &[y])?;
        match noise {
            Some(w) => {
                let w = self.constant(w);
                self.add(faded, w)
            }
            None => Ok(faded),
        }
    }
}
