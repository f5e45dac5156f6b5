//! Experiment commands behind the `jscc` binary.
//!
//! CSV schemas (all files start with the header shown):
//!
//! * `train_log.csv`: `epoch,steps,lr,train_loss`
//! * `metrics.csv`: `variant,snr_db,rho,taps,psnr_db,ssim,papr_p99_db,n_images,n_realizations`
//! * `gradcheck.csv`: `op,checked,max_rel_err,tol,pass`
//! * `chain_demo.csv`: `section,quantity,index,value` (long format; `index`
//!   is the subcarrier for per-subcarrier values and 0 otherwise)

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{finite_diff_check, GradCheckOptions, Graph, NodeId, Tensor};
use crate::channel::{apply_channel, power_profile, sample_channel, snr_to_sigma_sq, NoiseSpec};
use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::ExperimentConfig;
use crate::data::{batch_tensor, synth_dataset, Split};
use crate::error::{Error, Result};
use crate::metrics::MetricsRow;
use crate::model::{draw_channel, evaluate, forward, train, Architecture, BnMode, ModelParams, TrainState, Variant};
use crate::ofdm::{
    disassemble_packet, make_pilots, mean_power, papr_db, transmit, Clip, ComplexGrid, OfdmConfig,
};
use crate::receiver::{equalize_mmse, estimate_channel_mmse};
use crate::rng::{complex_gaussian, seeded};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const GRADCHECK_FILE: &str = "gradcheck.csv";
pub const CHAIN_DEMO_FILE: &str = "chain_demo.csv";
pub const RESOLVED_CONFIG_FILE: &str = "config_resolved.txt";

pub fn write_csv<R: AsRef<str>>(path: &Path, header: &str, rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut text = String::from(header);
    text.push('\n');
    for r in rows {
        text.push_str(r.as_ref());
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

fn csv_line(fields: &[&dyn Display]) -> String {
    fields.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(",")
}

/// Trains on the configured training set and writes the checkpoint, the
/// loss log and the resolved config into `cfg.out_dir`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainState> {
    cfg.validate()?;
    let data = cfg.load_dataset(Split::Train)?;
    let state = train(&cfg.train, &data)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let ck = Checkpoint {
        params: state.params.clone(),
        optimizer: Some(state.optimizer.clone()),
        config_text: cfg.to_text(),
        rng: Some(state.rng.clone()),
    };
    save_checkpoint(&ck, cfg.out_dir.join(CHECKPOINT_FILE))?;
    write_csv(
        &cfg.out_dir.join(TRAIN_LOG_FILE),
        "epoch,steps,lr,train_loss",
        state.log.iter().map(|l| csv_line(&[&l.epoch, &l.steps, &l.lr, &l.train_loss])),
    )?;
    fs::write(cfg.out_dir.join(RESOLVED_CONFIG_FILE), cfg.to_text())?;
    Ok(state)
}

/// Evaluates `params` at every `(snr, ρ, L)` of the config's evaluation
/// grid, snr outermost, and writes `metrics.csv`.
pub fn cmd_eval(params: &ModelParams, cfg: &ExperimentConfig) -> Result<Vec<MetricsRow>> {
    cfg.validate()?;
    let data = cfg.load_dataset(Split::Test)?;
    let mut rows = Vec::new();
    for &snr in &cfg.eval_snr_db {
        for &rho in &cfg.eval_clip_ratio {
            for &taps in &cfg.eval_taps {
                let r = evaluate(params, &data, &cfg.eval_config(snr, rho, taps))?;
                rows.push(MetricsRow {
                    variant: params.arch.variant.to_string(),
                    snr_db: snr,
                    rho,
                    taps,
                    psnr_db: r.psnr_db,
                    ssim: r.ssim,
                    papr_p99_db: r.papr_p99_db,
                    n_images: r.n_images,
                    n_realizations: r.n_realizations,
                });
            }
        }
    }
    fs::create_dir_all(&cfg.out_dir)?;
    write_csv(&cfg.out_dir.join(METRICS_FILE), MetricsRow::CSV_HEADER, rows.iter().map(MetricsRow::to_csv))?;
    Ok(rows)
}

/// Loads a checkpoint and the config to evaluate it with: `config` when
/// given, otherwise the config stored in the checkpoint. Fails when the
/// config's architecture does not match the stored parameters.
pub fn load_for_eval(checkpoint: &Path, config: Option<&Path>) -> Result<(ModelParams, ExperimentConfig)> {
    let ck = load_checkpoint(checkpoint)?;
    let cfg = match config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::parse(&ck.config_text)?,
    };
    ck.expect_architecture(cfg.arch())?;
    Ok((ck.params, cfg))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckRow {
    pub op: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckSettings {
    pub seed: u64,
    pub tol: f64,
    /// Corrupts the clip backward pass to demonstrate that the harness fails.
    pub faulty_clip: bool,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        GradCheckSettings {
            seed: 0,
            tol: 1e-6,
            faulty_clip: false,
        }
    }
}

type Case = (String, Vec<Tensor>, Box<dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId>>);

fn normal(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample(StandardNormal)).collect()).expect("shape")
}

/// Values at least 0.2 away from zero, so no ReLU kink lies within reach
/// of the difference steps.
fn away_from_zero(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    normal(rng, shape).map(|v| v.signum() * (0.2 + v.abs()))
}

/// Reduces an op output to a scalar with fixed, non-uniform weights.
fn project(g: &mut Graph, out: NodeId) -> Result<NodeId> {
    let shape = g.value(out).shape().to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|i| (0.7 * i as f64 + 0.3).sin()).collect())?;
    let w = g.constant(w);
    let p = g.mul(out, w)?;
    g.sum(p)
}

fn op_case<F>(name: &str, inputs: Vec<Tensor>, f: F) -> Case
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId> + 'static,
{
    (
        name.to_string(),
        inputs,
        Box::new(move |g: &mut Graph, x: &[NodeId]| {
            let out = f(g, x)?;
            project(g, out)
        }),
    )
}

/// The small architecture used for end-to-end gradient checks.
pub fn gradcheck_architecture(variant: Variant) -> Architecture {
    Architecture {
        variant,
        height: 8,
        width: 8,
        channels: 1,
        fft_size: 8,
        cp_len: 2,
        pilot_symbols: 2,
        data_symbols: 1,
        width1: 2,
        width2: 2,
        subnet_width: 2,
    }
}

/// End-to-end case: MSE loss of the full chain as a function of every
/// parameter, for one frozen batch of three images, channels and noise.
/// Parameters are perturbed away from their initial values so that the
/// zero-initialized correction subnets are exercised too.
pub fn end_to_end_case(variant: Variant, seed: u64, clip_ratio: f64) -> Result<Case> {
    let arch = gradcheck_architecture(variant);
    let mut rng = seeded(seed);
    let mut params = ModelParams::init(&arch, &mut rng)?;
    for t in params.tensors.iter_mut() {
        for v in t.data_mut() {
            *v += 0.3 * rng.gen_range(-1.0..1.0);
        }
    }
    let data = synth_dataset(seed, 3, arch.height, arch.width, arch.channels, Split::Train)?;
    let x = batch_tensor(&data.images.iter().collect::<Vec<_>>())?;
    let profile = power_profile(2, 4.0)?;
    let draws = (0..3)
        .map(|_| draw_channel(&profile, &arch, 10.0, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let pilots = make_pilots(7, arch.pilot_symbols, arch.fft_size);
    Ok((
        format!("end_to_end_{}", variant.to_string().to_lowercase()),
        params.tensors,
        Box::new(move |g: &mut Graph, ids: &[NodeId]| {
            let xi = g.constant(x.clone());
            let out = forward(g, &arch, ids, BnMode::Train, xi, &draws, clip_ratio, &pilots)?;
            g.mse(out.recon, xi)
        }),
    ))
}

fn op_cases(seed: u64, faulty_clip: bool) -> Vec<Case> {
    let mut rng = seeded(seed);
    let r = &mut rng;
    let mut cases = vec![
        op_case("add", vec![normal(r, &[2, 3]), normal(r, &[2, 3])], |g, x| g.add(x[0], x[1])),
        op_case("sub", vec![normal(r, &[2, 3]), normal(r, &[2, 3])], |g, x| g.sub(x[0], x[1])),
        op_case("mul", vec![normal(r, &[2, 3]), normal(r, &[2, 3])], |g, x| g.mul(x[0], x[1])),
        op_case("scale", vec![normal(r, &[2, 3])], |g, x| g.scale(x[0], 1.7)),
        op_case("scalar_mul", vec![Tensor::scalar(0.8), normal(r, &[2, 3])], |g, x| g.scalar_mul(x[0], x[1])),
        op_case("sum", vec![normal(r, &[2, 3])], |g, x| g.sum(x[0])),
        op_case("mean", vec![normal(r, &[2, 3])], |g, x| g.mean(x[0])),
        op_case("matmul", vec![normal(r, &[2, 3]), normal(r, &[3, 4])], |g, x| g.matmul(x[0], x[1])),
        op_case("reshape", vec![normal(r, &[2, 3])], |g, x| g.reshape(x[0], &[3, 2])),
        op_case("permute", vec![normal(r, &[2, 3, 4])], |g, x| g.permute(x[0], &[2, 0, 1])),
        op_case("concat", vec![normal(r, &[2, 3]), normal(r, &[2, 2])], |g, x| g.concat(&[x[0], x[1]], 1)),
        op_case("slice", vec![normal(r, &[2, 5])], |g, x| g.slice(x[0], 1, 1, 3)),
        op_case("relu", vec![away_from_zero(r, &[2, 4])], |g, x| g.relu(x[0])),
        op_case("sigmoid", vec![normal(r, &[2, 4])], |g, x| g.sigmoid(x[0])),
        op_case("complex_mul", vec![normal(r, &[3, 2]), normal(r, &[3, 2])], |g, x| g.complex_mul(x[0], x[1])),
        op_case("mse", vec![normal(r, &[2, 3]), normal(r, &[2, 3])], |g, x| g.mse(x[0], x[1])),
        op_case(
            "conv2d",
            vec![normal(r, &[2, 2, 5, 5]), normal(r, &[3, 2, 3, 3]), normal(r, &[3])],
            |g, x| g.conv2d(x[0], x[1], x[2], crate::autodiff::ConvGeometry { stride: 2, pad_h: 1, pad_w: 1 }),
        ),
        op_case("upsample2x", vec![normal(r, &[1, 2, 2, 3])], |g, x| g.upsample2x(x[0])),
        op_case(
            "batch_norm_train",
            vec![normal(r, &[3, 2, 2, 2]), normal(r, &[2]), normal(r, &[2])],
            |g, x| g.batch_norm_train(x[0], x[1], x[2]),
        ),
        op_case(
            "batch_norm_eval",
            vec![normal(r, &[3, 2, 2, 2]), normal(r, &[2]), normal(r, &[2])],
            |g, x| g.batch_norm_eval(x[0], x[1], x[2], vec![0.1, -0.2], vec![0.5, 2.0]),
        ),
        op_case("linear", vec![normal(r, &[2, 3]), normal(r, &[4, 3]), normal(r, &[4])], |g, x| {
            g.linear(x[0], x[1], x[2])
        }),
        op_case("dft", vec![normal(r, &[2, 8, 2])], |g, x| g.dft(x[0])),
        op_case("idft", vec![normal(r, &[2, 8, 2])], |g, x| g.idft(x[0])),
        op_case("add_cp", vec![normal(r, &[2, 8, 2])], |g, x| g.add_cp(x[0], 2)),
        op_case("remove_cp", vec![normal(r, &[2, 10, 2])], |g, x| g.remove_cp(x[0], 2)),
        op_case("normalize_power", vec![normal(r, &[2, 6, 2])], |g, x| g.normalize_power(x[0], 1.0)),
    ];

    // Amplitudes 0.5–0.8 or 1.2–1.5 around a threshold of 1.
    let clip_in: Vec<Complex64> = (0..12)
        .map(|i| {
            let a = if i % 2 == 0 { 0.5 } else { 1.2 } + 0.3 * r.gen::<f64>();
            Complex64::from_polar(a, r.gen_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    cases.push(op_case(
        "clip",
        vec![Tensor::from_complex(&[2, 6], &clip_in).expect("shape")],
        move |g, x| {
            g.record(
                Clip {
                    threshold: 1.0,
                    faulty_backward: faulty_clip,
                },
                &[x[0]],
            )
        },
    ));

    let taps: Vec<Vec<Complex64>> = (0..2)
        .map(|_| (0..3).map(|_| complex_gaussian(r, 1.0)).collect())
        .collect();
    cases.push(op_case("apply_channel", vec![normal(r, &[2, 8, 2])], move |g, x| {
        g.apply_channel(x[0], taps.clone(), None)
    }));
    let pilots = make_pilots(7, 2, 8);
    cases.push(op_case("mmse_estimate", vec![normal(r, &[2, 2, 8, 2])], move |g, x| {
        g.mmse_estimate(x[0], pilots.clone(), vec![0.1, 0.3])
    }));
    cases.push(op_case(
        "mmse_equalize",
        vec![normal(r, &[2, 2, 8, 2]), normal(r, &[2, 8, 2])],
        |g, x| g.mmse_equalize(x[0], x[1], vec![0.1, 0.3]),
    ));
    cases
}

/// Finite-difference check of every differentiable op and of the three
/// end-to-end chains.
pub fn run_gradcheck(settings: &GradCheckSettings) -> Result<Vec<GradCheckRow>> {
    let mut cases = op_cases(settings.seed, settings.faulty_clip);
    for v in [Variant::Explicit, Variant::Implicit, Variant::Direct] {
        cases.push(end_to_end_case(v, settings.seed, 1.2)?);
    }
    let opts = GradCheckOptions {
        tol: settings.tol,
        seed: settings.seed,
        ..GradCheckOptions::default()
    };
    cases
        .into_iter()
        .map(|(op, point, f)| {
            let rep = finite_diff_check(f, &point, &opts)?;
            Ok(GradCheckRow {
                op,
                checked: rep.checked,
                max_rel_err: rep.max_rel_err,
                tol: settings.tol,
                pass: rep.pass,
            })
        })
        .collect()
}

pub fn cmd_gradcheck(settings: &GradCheckSettings, out_dir: &Path) -> Result<Vec<GradCheckRow>> {
    let rows = run_gradcheck(settings)?;
    fs::create_dir_all(out_dir)?;
    write_csv(
        &out_dir.join(GRADCHECK_FILE),
        "op,checked,max_rel_err,tol,pass",
        rows.iter().map(|r| csv_line(&[&r.op, &r.checked, &r.max_rel_err, &r.tol, &r.pass])),
    )?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainRow {
    pub section: &'static str,
    pub quantity: &'static str,
    pub index: usize,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct ChainDemoSettings {
    pub ofdm: OfdmConfig,
    pub snr_db: f64,
    pub taps: usize,
    pub decay: f64,
    pub pilot_seed: u64,
    pub seed: u64,
}

impl Default for ChainDemoSettings {
    fn default() -> Self {
        ChainDemoSettings {
            ofdm: OfdmConfig::default(),
            snr_db: 10.0,
            taps: 8,
            decay: 4.0,
            pilot_seed: 7,
            seed: 0,
        }
    }
}

fn grid_mse(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>() / a.len() as f64
}

/// Sends one packet of unit-variance Gaussian data symbols through the
/// OFDM chain and reports per-stage statistics.
///
/// The transmitter scales the whole packet by a power-normalization gain
/// `g`, so the receiver sees the effective channel `g·H`. "Perfect CSI"
/// means equalizing with that effective channel; `estimation/mse` is
/// `mean_k |Ĥ[k] − g·H[k]|²` and the equalized-symbol MSEs compare
/// against the data grid before normalization.
pub fn run_chain_demo(s: &ChainDemoSettings) -> Result<Vec<ChainRow>> {
    let cfg = &s.ofdm;
    cfg.validate()?;
    let mut rng = seeded(s.seed);
    let pilots = make_pilots(s.pilot_seed, cfg.pilot_symbols, cfg.fft_size);
    let data_values: Vec<Complex64> = (0..cfg.data_symbols * cfg.fft_size)
        .map(|_| complex_gaussian(&mut rng, 1.0))
        .collect();
    let data = ComplexGrid::new(cfg.data_symbols, cfg.fft_size, data_values)?;
    let tx = transmit(&pilots, &data, cfg)?;
    let profile = power_profile(s.taps, s.decay)?;
    let channel = sample_channel(&profile, cfg.fft_size, &mut rng)?;
    let noise_var = snr_to_sigma_sq(s.snr_db, cfg.signal_power);
    let rx = apply_channel(&tx.clipped.samples, &channel.taps, &NoiseSpec { variance: noise_var }, &mut rng)?;
    let (rx_pilots, rx_data) = disassemble_packet(&rx, cfg)?;
    let estimate = estimate_channel_mmse(&pilots, &rx_pilots, noise_var)?;
    let effective: Vec<Complex64> = channel.response.iter().map(|h| h * tx.gain).collect();
    let eq_perfect = equalize_mmse(&rx_data, &effective, noise_var)?;
    let eq_est = equalize_mmse(&rx_data, &estimate.response, noise_var)?;

    let mut rows = Vec::new();
    let mut push = |section, quantity, index, value| {
        rows.push(ChainRow {
            section,
            quantity,
            index,
            value,
        })
    };
    for (section, signal) in [
        ("tx_raw", &tx.raw),
        ("tx_normalized", &tx.normalized),
        ("tx_clipped", &tx.clipped.samples),
        ("rx", &rx),
    ] {
        push(section, "power", 0, mean_power(signal));
        push(section, "papr_db", 0, papr_db(signal)?);
        push(section, "peak_amplitude", 0, signal.iter().map(|z| z.norm()).fold(0.0, f64::max));
    }
    push("tx", "gain", 0, tx.gain);
    push("channel", "noise_var", 0, noise_var);
    for (k, h) in channel.response.iter().enumerate() {
        push("channel", "abs_h", k, h.norm());
    }
    for (k, h) in estimate.response.iter().enumerate() {
        push("estimation", "abs_h_hat", k, h.norm());
    }
    push("estimation", "mse", 0, grid_mse(&estimate.response, &effective));
    push("equalization", "mse_perfect_csi", 0, grid_mse(eq_perfect.values(), data.values()));
    push("equalization", "mse_estimated_csi", 0, grid_mse(eq_est.values(), data.values()));
    Ok(rows)
}

pub fn cmd_chain_demo(s: &ChainDemoSettings, out_dir: &Path) -> Result<Vec<ChainRow>> {
    let rows = run_chain_demo(s)?;
    fs::create_dir_all(out_dir)?;
    write_csv(
        &out_dir.join(CHAIN_DEMO_FILE),
        "section,quantity,index,value",
        rows.iter().map(|r| csv_line(&[&r.section, &r.quantity, &r.index, &r.value])),
    )?;
    Ok(rows)
}

/// Looks up one value of a chain-demo table.
pub fn chain_value(rows: &[ChainRow], section: &str, quantity: &str) -> Result<f64> {
    rows.iter()
        .find(|r| r.section == section && r.quantity == quantity && r.index == 0)
        .map(|r| r.value)
        .ok_or_else(|| Error::InvalidArgument(format!("no {}/{} row", section, quantity)))
}

/// `out_dir` joined with `file`.
pub fn out_path(out_dir: &Path, file: &str) -> PathBuf {
    out_dir.join(file)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_demo_identity() {
        let rows = run_chain_demo(&ChainDemoSettings {
            snr_db: f64::INFINITY,
            ..ChainDemoSettings::default()
        })
        .unwrap();
        assert!(chain_value(&rows, "equalization", "mse_perfect_csi").unwrap() < 1e-16);
        assert!(chain_value(&rows, "estimation", "mse").unwrap() < 1e-16);
    }

    #[test]
    fn chain_demo_clip_and_noise() {
        let mut s = ChainDemoSettings::default();
        s.ofdm.clip_ratio = 1.0;
        let rows = run_chain_demo(&s).unwrap();
        assert!((chain_value(&rows, "tx_clipped", "peak_amplitude").unwrap() - 1.0).abs() < 1e-12);
        assert!(chain_value(&rows, "estimation", "mse").unwrap() > 0.0);
    }

    #[test]
    fn op_gradients_pass() {
        let cases = op_cases(1, false);
        for (name, point, f) in cases {
            let rep = finite_diff_check(f, &point, &GradCheckOptions::default()).unwrap();
            assert!(rep.pass, "{}: {:?}", name, rep);
        }
    }
}
