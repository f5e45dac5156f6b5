use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use num_complex::Complex64;

use super::{forward, Adam, AdamConfig, Architecture, BnMode, ChannelDraw, ModelParams};
use crate::autodiff::{Graph, NodeId};
use crate::channel::{power_profile, sample_channel, snr_to_sigma_sq, ChannelProfile};
use crate::data::{batch_tensor, unbatch_tensor, Dataset, Image};
use crate::error::{Error, Result};
use crate::metrics::{percentile, psnr, ssim};
use crate::ofdm::{make_pilots, papr_db, ComplexGrid};
use crate::rng::{complex_gaussian, seeded, stream, SimRng};

/// Training SNR: fixed, or drawn uniformly per packet.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SnrSpec {
    Fixed(f64),
    Uniform { low: f64, high: f64 },
}

impl SnrSpec {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            SnrSpec::Fixed(s) => s,
            SnrSpec::Uniform { low, high } => rng.gen_range(low..=high),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub arch: Architecture,
    pub snr: SnrSpec,
    pub clip_ratio: f64,
    pub taps: usize,
    pub decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// The learning rate decays linearly over this many final epochs.
    pub lr_decay_epochs: usize,
    pub adam: AdamConfig,
    pub pilot_seed: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: Architecture::default(),
            snr: SnrSpec::Fixed(10.0),
            clip_ratio: f64::INFINITY,
            taps: 8,
            decay: 4.0,
            batch_size: 128,
            epochs: 400,
            lr: 1e-3,
            lr_decay_epochs: 200,
            adam: AdamConfig::default(),
            pilot_seed: 7,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be ≥ 1".into()));
        }
        if self.lr_decay_epochs > self.epochs {
            return Err(Error::Config("lr_decay_epochs exceeds epochs".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if let SnrSpec::Uniform { low, high } = self.snr {
            if !(low <= high) {
                return Err(Error::Config(format!("empty SNR range [{}, {}]", low, high)));
            }
        }
        if self.taps > self.arch.fft_size {
            return Err(Error::Config("more channel taps than subcarriers".into()));
        }
        self.arch.ofdm(self.clip_ratio).validate()?;
        power_profile(self.taps, self.decay).map(|_| ())
    }
}

/// Learning rate in `epoch` (0-based): constant, then a linear ramp down
/// over the last `lr_decay_epochs` epochs ending at `lr / lr_decay_epochs`.
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    let start = cfg.epochs - cfg.lr_decay_epochs;
    if epoch < start {
        cfg.lr
    } else {
        cfg.lr * (cfg.epochs - epoch) as f64 / cfg.lr_decay_epochs as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub lr: f64,
    pub train_loss: f64,
}

pub struct TrainState {
    pub params: ModelParams,
    pub optimizer: Adam,
    pub log: Vec<EpochLog>,
    pub rng: SimRng,
}

/// One channel realization and noise draw for a packet at `snr_db`.
pub fn draw_channel<R: Rng + ?Sized>(
    profile: &ChannelProfile,
    arch: &Architecture,
    snr_db: f64,
    rng: &mut R,
) -> Result<ChannelDraw> {
    let taps = sample_channel(profile, arch.fft_size, rng)?.taps;
    let noise_var = snr_to_sigma_sq(snr_db, 1.0);
    let noise = (0..arch.packet_len()).map(|_| complex_gaussian(rng, noise_var)).collect();
    Ok(ChannelDraw { taps, noise, noise_var })
}

/// Trains from scratch. All randomness (initialization, shuffling, SNR,
/// channels, noise) comes from one ChaCha8 stream seeded with `cfg.seed`.
pub fn train(cfg: &TrainConfig, data: &Dataset) -> Result<TrainState> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let arch = &cfg.arch;
    if data.dims() != (arch.height, arch.width, arch.channels) {
        return Err(Error::shape("train", format!("dataset {:?} vs architecture", data.dims())));
    }
    let mut rng = seeded(cfg.seed);
    let mut params = ModelParams::init(arch, &mut rng)?;
    let mut optimizer = Adam::new(cfg.adam, &params.tensors);
    let profile = power_profile(cfg.taps, cfg.decay)?;
    let pilots = make_pilots(cfg.pilot_seed, arch.pilot_symbols, arch.fft_size);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = lr_at(cfg, epoch);
        order.shuffle(&mut rng);
        let (mut total, mut steps) = (0.0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let images: Vec<&Image> = chunk.iter().map(|&i| &data.images[i]).collect();
            let draws = images
                .iter()
                .map(|_| {
                    let snr = cfg.snr.draw(&mut rng);
                    draw_channel(&profile, arch, snr, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let diverged = |loss: f64| Error::Diverged {
                epoch: epoch + 1,
                step: steps + 1,
                loss,
            };

            let mut g = Graph::new();
            let ids: Vec<NodeId> = params.tensors.iter().map(|t| g.param(t.clone())).collect();
            let x = g.constant(batch_tensor(&images)?);
            let out = forward(&mut g, arch, &ids, BnMode::Train, x, &draws, cfg.clip_ratio, &pilots).map_err(|e| match e {
                Error::NonFinite { .. } => diverged(f64::NAN),
                e => e,
            })?;
            let loss = g.mse(out.recon, x)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(diverged(value));
            }
            let grads = g.backward(loss)?;
            let grads: Vec<_> = ids.iter().map(|&id| grads.get_or_zeros(id)).collect();
            optimizer.update(&mut params.tensors, &grads, lr).map_err(|e| match e {
                Error::NonFinite { .. } => diverged(value),
                e => e,
            })?;
            params.update_running(&out.bn_stats);
            total += value * chunk.len() as f64;
            steps += 1;
        }
        log.push(EpochLog {
            epoch: epoch + 1,
            steps,
            lr,
            train_loss: total / data.len() as f64,
        });
    }
    Ok(TrainState {
        params,
        optimizer,
        log,
        rng,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub snr_db: f64,
    pub clip_ratio: f64,
    pub taps: usize,
    pub decay: f64,
    pub realizations: usize,
    pub pilot_seed: u64,
    pub seed: u64,
    /// Threads used across images; `1` runs inline.
    pub workers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            snr_db: 10.0,
            clip_ratio: f64::INFINITY,
            taps: 8,
            decay: 4.0,
            realizations: 5,
            pilot_seed: 7,
            seed: 0,
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Mean over images and realizations of the per-transmission PSNR.
    pub psnr_db: f64,
    pub ssim: f64,
    /// 99th percentile of the transmitted packets' PAPR.
    pub papr_p99_db: f64,
    pub n_images: usize,
    pub n_realizations: usize,
    pub channel_draws: usize,
    /// Mean PSNR of each image over its realizations.
    pub per_image_psnr: Vec<f64>,
}

struct ImageResult {
    psnr: Vec<f64>,
    ssim: Vec<f64>,
    papr: Vec<f64>,
}

/// Sends `image` through `cfg.realizations` channels and returns each
/// reconstruction with the transmitted packet.
///
/// Channels come from ChaCha stream `index` of `cfg.seed`, the same draws
/// `evaluate` uses for image `index`.
pub fn transmit_image(
    params: &ModelParams,
    image: &Image,
    index: usize,
    cfg: &EvalConfig,
) -> Result<Vec<(Image, Vec<Complex64>)>> {
    let arch = &params.arch;
    if image.dims() != (arch.height, arch.width, arch.channels) {
        return Err(Error::shape("transmit_image", format!("image {:?} vs architecture", image.dims())));
    }
    if cfg.realizations == 0 {
        return Err(Error::InvalidArgument("need at least one realization".into()));
    }
    if cfg.taps > arch.fft_size {
        return Err(Error::Config("more channel taps than subcarriers".into()));
    }
    arch.ofdm(cfg.clip_ratio).validate()?;
    let profile = power_profile(cfg.taps, cfg.decay)?;
    let pilots = make_pilots(cfg.pilot_seed, arch.pilot_symbols, arch.fft_size);
    run_image(params, image, index, cfg, &profile, &pilots)
}

fn run_image(
    params: &ModelParams,
    image: &Image,
    index: usize,
    cfg: &EvalConfig,
    profile: &ChannelProfile,
    pilots: &ComplexGrid,
) -> Result<Vec<(Image, Vec<Complex64>)>> {
    let arch = &params.arch;
    let mut rng = stream(cfg.seed, index as u64);
    let draws = (0..cfg.realizations)
        .map(|_| draw_channel(profile, arch, cfg.snr_db, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.tensors.iter().map(|t| g.constant(t.clone())).collect();
    let copies: Vec<&Image> = vec![image; cfg.realizations];
    let x = g.constant(batch_tensor(&copies)?);
    let out = forward(
        &mut g,
        arch,
        &ids,
        BnMode::Eval(&params.bn_running),
        x,
        &draws,
        cfg.clip_ratio,
        pilots,
    )?;
    let recon = unbatch_tensor(g.value(out.recon))?;
    let tx = g.value(out.tx).to_complex()?;
    Ok(recon.into_iter().zip(tx.chunks_exact(arch.packet_len()).map(<[Complex64]>::to_vec)).collect())
}

fn evaluate_image(
    params: &ModelParams,
    image: &Image,
    index: usize,
    cfg: &EvalConfig,
    profile: &ChannelProfile,
    pilots: &ComplexGrid,
) -> Result<ImageResult> {
    let sent = run_image(params, image, index, cfg, profile, pilots)?;
    let mut res = ImageResult {
        psnr: Vec::with_capacity(sent.len()),
        ssim: Vec::with_capacity(sent.len()),
        papr: Vec::with_capacity(sent.len()),
    };
    for (r, packet) in &sent {
        res.psnr.push(psnr(r, image, 1.0)?);
        res.ssim.push(ssim(r, image)?);
        res.papr.push(papr_db(packet)?);
    }
    Ok(res)
}

/// Sends every test image `cfg.realizations` times through fresh channels.
///
/// Image `i` draws its channels from ChaCha stream `i` of `cfg.seed`, so the
/// result does not depend on `cfg.workers`.
pub fn evaluate(params: &ModelParams, data: &Dataset, cfg: &EvalConfig) -> Result<EvalReport> {
    let arch = &params.arch;
    if data.is_empty() || cfg.realizations == 0 {
        return Err(Error::InvalidArgument("evaluation needs images and realizations".into()));
    }
    if data.dims() != (arch.height, arch.width, arch.channels) {
        return Err(Error::shape("evaluate", format!("dataset {:?} vs architecture", data.dims())));
    }
    if cfg.taps > arch.fft_size {
        return Err(Error::Config("more channel taps than subcarriers".into()));
    }
    arch.ofdm(cfg.clip_ratio).validate()?;
    let profile = power_profile(cfg.taps, cfg.decay)?;
    let pilots = make_pilots(cfg.pilot_seed, arch.pilot_symbols, arch.fft_size);
    let run = |(i, img): (usize, &Image)| evaluate_image(params, img, i, cfg, &profile, &pilots);

    let results: Vec<ImageResult> = if cfg.workers <= 1 {
        data.images.iter().enumerate().map(run).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {}", e)))?;
        pool.install(|| data.images.par_iter().enumerate().map(run).collect::<Result<_>>())?
    };

    let n = (data.len() * cfg.realizations) as f64;
    let all = |f: fn(&ImageResult) -> &Vec<f64>| results.iter().flat_map(f).copied().collect::<Vec<f64>>();
    let papr = all(|r| &r.papr);
    Ok(EvalReport {
        psnr_db: all(|r| &r.psnr).iter().sum::<f64>() / n,
        ssim: all(|r| &r.ssim).iter().sum::<f64>() / n,
        papr_p99_db: percentile(&papr, 99.0),
        n_images: data.len(),
        n_realizations: cfg.realizations,
        channel_draws: results.iter().map(|r| r.psnr.len()).sum(),
        per_image_psnr: results
            .iter()
            .map(|r| r.psnr.iter().sum::<f64>() / r.psnr.len() as f64)
            .collect(),
    })
}
