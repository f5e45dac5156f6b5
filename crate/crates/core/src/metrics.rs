//! Reconstruction-quality and signal metrics.

use num_complex::Complex64;

use crate::data::Image;
use crate::error::{Error, Result};
use crate::ofdm::papr_db;

/// Reported when two images are identical.
pub const PSNR_CAP_DB: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_pair(op: &'static str, a: &Image, b: &Image) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_pair("mse", a, b)?;
    let n = a.pixels().len() as f64;
    Ok(a.pixels().iter().zip(b.pixels()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

pub fn psnr_from_mse(mse: f64, max_val: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (20.0 * max_val.log10() - 10.0 * mse.log10()).min(PSNR_CAP_DB)
}

pub fn psnr(reconstructed: &Image, reference: &Image, max_val: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(reconstructed, reference)?, max_val))
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

fn ssim_from_moments(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64) -> f64 {
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Mean SSIM with an 11×11 Gaussian window (σ = 1.5), `K1 = 0.01`,
/// `K2 = 0.03`, dynamic range 1, averaged over window positions and
/// channels. Images smaller than the window use global statistics.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_pair("ssim", a, b)?;
    let (h, w, channels) = a.dims();
    let mut total = 0.0;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        let n = (h * w) as f64;
        for c in 0..channels {
            let xs: Vec<f64> = (0..h * w).map(|i| a.pixels()[i * channels + c]).collect();
            let ys: Vec<f64> = (0..h * w).map(|i| b.pixels()[i * channels + c]).collect();
            let mx = xs.iter().sum::<f64>() / n;
            let my = ys.iter().sum::<f64>() / n;
            let vx = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / n;
            let vy = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / n;
            let cxy = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n;
            total += ssim_from_moments(mx, my, vx, vy, cxy);
        }
        return Ok(total / channels as f64);
    }
    let win = gaussian_window();
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    for c in 0..channels {
        let px = |img: &Image, y: usize, x: usize| img.pixels()[(y * w + x) * channels + c];
        for oy in 0..oh {
            for ox in 0..ow {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (dy, wy) in win.iter().enumerate() {
                    for (dx, wx) in win.iter().enumerate() {
                        let wt = wy * wx;
                        let x = px(a, oy + dy, ox + dx);
                        let y = px(b, oy + dy, ox + dx);
                        mx += wt * x;
                        my += wt * y;
                        sxx += wt * x * x;
                        syy += wt * y * y;
                        sxy += wt * x * y;
                    }
                }
                total += ssim_from_moments(mx, my, sxx - mx * mx, syy - my * my, sxy - mx * my);
            }
        }
    }
    Ok(total / (channels * oh * ow) as f64)
}

/// Empirical `P(PAPR > t)` for each threshold `t` (dB).
pub fn papr_ccdf(signals: &[Vec<Complex64>], thresholds_db: &[f64]) -> Result<Vec<(f64, f64)>> {
    if signals.is_empty() {
        return Err(Error::InvalidArgument("papr_ccdf needs at least one signal".into()));
    }
    let paprs = signals.iter().map(|s| papr_db(s)).collect::<Result<Vec<_>>>()?;
    Ok(thresholds_db
        .iter()
        .map(|&t| {
            let above = paprs.iter().filter(|&&p| p > t).count();
            (t, above as f64 / paprs.len() as f64)
        })
        .collect())
}

/// Nearest-rank percentile, `q` in `[0, 100]`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

/// One evaluation result, written as a CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub variant: String,
    pub snr_db: f64,
    pub rho: f64,
    pub taps: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    pub papr_p99_db: f64,
    pub n_images: usize,
    pub n_realizations: usize,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str =
        "variant,snr_db,rho,taps,psnr_db,ssim,papr_p99_db,n_images,n_realizations";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.variant,
            self.snr_db,
            self.rho,
            self.taps,
            self.psnr_db,
            self.ssim,
            self.papr_p99_db,
            self.n_images,
            self.n_realizations
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(h: usize, w: usize, c: usize, f: impl Fn(usize) -> f64) -> Image {
        Image::new(h, w, c, (0..h * w * c).map(f).collect()).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = image(4, 4, 1, |i| (i % 3) as f64 / 3.0);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), 100.0);
        assert!((psnr_from_mse(0.01, 1.0) - 20.0).abs() < 1e-12);
        assert!((psnr_from_mse(0.001, 1.0) - 30.0).abs() < 1e-12);
        let b = image(4, 4, 1, |i| (i % 3) as f64 / 3.0 + 0.1);
        assert!((psnr(&b, &a, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &image(4, 4, 3, |_| 0.0), 1.0).is_err());
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = image(16, 16, 3, |i| ((i * 7919) % 101) as f64 / 100.0);
        let b = image(16, 16, 3, |i| ((i * 104729) % 97) as f64 / 96.0);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ccdf_of_constant_envelope_is_zero() {
        let s: Vec<Complex64> = (0..16).map(|k| Complex64::from_polar(1.0, k as f64)).collect();
        let table = papr_ccdf(&[s.clone(), s], &[0.1, 1.0, 3.0]).unwrap();
        assert!(table.iter().all(|&(_, p)| p == 0.0));
        assert!(papr_ccdf(&[], &[0.0]).is_err());
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 99.0), 99.0);
        assert_eq!(percentile(&v, 100.0), 100.0);
        assert_eq!(percentile(&[3.0], 50.0), 3.0);
    }
}
