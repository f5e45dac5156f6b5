//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored; unknown keys are errors. Every
//! key, its default and its meaning is listed in [`KEYS`]. The defaults
//! describe the full-size setup (32×32×3 images, 64 subcarriers, 16-sample
//! cyclic prefix, 2 pilot and 6 data symbols, 8 taps with decay 4).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{load_image, synth_dataset, Dataset, Split};
use crate::error::{Error, Result};
use crate::model::{AdamConfig, Architecture, EvalConfig, SnrSpec, TrainConfig, Variant};

/// `(key, default, description)` for every accepted key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("variant", "EXPLICIT", "DIRECT, IMPLICIT or EXPLICIT"),
    ("image_height", "32", "image rows (multiple of 4)"),
    ("image_width", "32", "image columns (multiple of 4)"),
    ("image_channels", "3", "1 (PGM) or 3 (PPM)"),
    ("fft_size", "64", "subcarriers per OFDM symbol"),
    ("cp_len", "16", "cyclic prefix length"),
    ("pilot_symbols", "2", "pilot OFDM symbols per packet"),
    ("data_symbols", "6", "data OFDM symbols per packet"),
    ("width1", "16", "channels of the outer conv layers"),
    ("width2", "32", "channels at the bottleneck and in the residual blocks"),
    ("subnet_width", "8", "hidden channels of the EXPLICIT correction subnets"),
    ("pilot_seed", "7", "seed of the pilot sequence"),
    ("clip_ratio", "inf", "training clipping ratio rho (inf disables clipping)"),
    ("taps", "8", "training channel taps L"),
    ("decay", "4", "power-delay decay constant gamma"),
    ("train_snr_db", "10", "training SNR: a value, or lo..hi for uniform per packet"),
    ("batch_size", "128", "images per optimizer step"),
    ("epochs", "400", "training epochs"),
    ("lr", "0.001", "initial learning rate"),
    ("lr_decay_epochs", "200", "final epochs with linear learning-rate decay"),
    ("adam_beta1", "0.5", "ADAM first-moment decay"),
    ("adam_beta2", "0.999", "ADAM second-moment decay"),
    ("adam_eps", "1e-8", "ADAM epsilon"),
    ("seed", "0", "training seed (init, shuffling, channels, noise)"),
    ("train_data", "synth:50000", "synth:N or a directory of .pgm/.ppm files"),
    ("test_data", "synth:10000", "synth:N or a directory of .pgm/.ppm files"),
    ("data_seed", "0", "seed of the synthetic images"),
    ("eval_snr_db", "10", "comma-separated evaluation SNRs"),
    ("eval_clip_ratio", "inf", "comma-separated evaluation clipping ratios"),
    ("eval_taps", "8", "comma-separated evaluation tap counts"),
    ("realizations", "5", "channel realizations per test image"),
    ("eval_seed", "1", "seed of the evaluation channel streams"),
    ("workers", "1", "evaluation threads"),
    ("out_dir", "out", "output directory"),
];

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synth(usize),
    Dir(PathBuf),
}

impl DataSource {
    fn parse(v: &str) -> Result<Self> {
        match v.strip_prefix("synth:") {
            Some(n) => n
                .parse()
                .ok()
                .filter(|&n: &usize| n > 0)
                .map(DataSource::Synth)
                .ok_or_else(|| Error::Config(format!("bad image count in {:?}", v))),
            None if !v.is_empty() => Ok(DataSource::Dir(PathBuf::from(v))),
            None => Err(Error::Config("empty data source".into())),
        }
    }

    fn text(&self) -> String {
        match self {
            DataSource::Synth(n) => format!("synth:{}", n),
            DataSource::Dir(p) => p.display().to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub train_data: DataSource,
    pub test_data: DataSource,
    pub data_seed: u64,
    pub eval_snr_db: Vec<f64>,
    pub eval_clip_ratio: Vec<f64>,
    pub eval_taps: Vec<usize>,
    pub realizations: usize,
    pub eval_seed: u64,
    pub workers: usize,
    pub out_dir: PathBuf,
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("invalid value for {}: {:?}", key, v)))
}

pub fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    let items = v
        .split(',')
        .map(|s| parse_num(key, s.trim()))
        .collect::<Result<Vec<T>>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("{} needs at least one value", key)));
    }
    Ok(items)
}

fn fmt_list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut cfg = ExperimentConfig {
            train: TrainConfig::default(),
            train_data: DataSource::Synth(1),
            test_data: DataSource::Synth(1),
            data_seed: 0,
            eval_snr_db: vec![],
            eval_clip_ratio: vec![],
            eval_taps: vec![],
            realizations: 0,
            eval_seed: 0,
            workers: 0,
            out_dir: PathBuf::new(),
        };
        for (k, v, _) in KEYS {
            cfg.set(k, v).expect("built-in defaults are valid");
        }
        cfg
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        let a = &mut t.arch;
        match key {
            "variant" => a.variant = v.parse()?,
            "image_height" => a.height = parse_num(key, v)?,
            "image_width" => a.width = parse_num(key, v)?,
            "image_channels" => a.channels = parse_num(key, v)?,
            "fft_size" => a.fft_size = parse_num(key, v)?,
            "cp_len" => a.cp_len = parse_num(key, v)?,
            "pilot_symbols" => a.pilot_symbols = parse_num(key, v)?,
            "data_symbols" => a.data_symbols = parse_num(key, v)?,
            "width1" => a.width1 = parse_num(key, v)?,
            "width2" => a.width2 = parse_num(key, v)?,
            "subnet_width" => a.subnet_width = parse_num(key, v)?,
            "pilot_seed" => t.pilot_seed = parse_num(key, v)?,
            "clip_ratio" => t.clip_ratio = parse_num(key, v)?,
            "taps" => t.taps = parse_num(key, v)?,
            "decay" => t.decay = parse_num(key, v)?,
            "train_snr_db" => {
                t.snr = match v.split_once("..") {
                    Some((lo, hi)) => SnrSpec::Uniform {
                        low: parse_num(key, lo.trim())?,
                        high: parse_num(key, hi.trim())?,
                    },
                    None => SnrSpec::Fixed(parse_num(key, v)?),
                }
            }
            "batch_size" => t.batch_size = parse_num(key, v)?,
            "epochs" => t.epochs = parse_num(key, v)?,
            "lr" => t.lr = parse_num(key, v)?,
            "lr_decay_epochs" => t.lr_decay_epochs = parse_num(key, v)?,
            "adam_beta1" => t.adam.beta1 = parse_num(key, v)?,
            "adam_beta2" => t.adam.beta2 = parse_num(key, v)?,
            "adam_eps" => t.adam.eps = parse_num(key, v)?,
            "seed" => t.seed = parse_num(key, v)?,
            "train_data" => self.train_data = DataSource::parse(v)?,
            "test_data" => self.test_data = DataSource::parse(v)?,
            "data_seed" => self.data_seed = parse_num(key, v)?,
            "eval_snr_db" => self.eval_snr_db = parse_list(key, v)?,
            "eval_clip_ratio" => self.eval_clip_ratio = parse_list(key, v)?,
            "eval_taps" => self.eval_taps = parse_list(key, v)?,
            "realizations" => self.realizations = parse_num(key, v)?,
            "eval_seed" => self.eval_seed = parse_num(key, v)?,
            "workers" => self.workers = parse_num(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            _ => return Err(Error::Config(format!("unknown key {:?}", key))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.realizations == 0 || self.workers == 0 {
            return Err(Error::Config("realizations and workers must be ≥ 1".into()));
        }
        if self.eval_taps.iter().any(|&l| l == 0 || l > self.train.arch.fft_size) {
            return Err(Error::Config("evaluation taps must be in 1..=fft_size".into()));
        }
        if self.eval_clip_ratio.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::Config("clipping ratios must be > 0".into()));
        }
        Ok(())
    }

    /// Every key with its resolved value, in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let a = &t.arch;
        let snr = match t.snr {
            SnrSpec::Fixed(s) => s.to_string(),
            SnrSpec::Uniform { low, high } => format!("{}..{}", low, high),
        };
        let AdamConfig { beta1, beta2, eps } = t.adam;
        let values: Vec<String> = vec![
            a.variant.to_string(),
            a.height.to_string(),
            a.width.to_string(),
            a.channels.to_string(),
            a.fft_size.to_string(),
            a.cp_len.to_string(),
            a.pilot_symbols.to_string(),
            a.data_symbols.to_string(),
            a.width1.to_string(),
            a.width2.to_string(),
            a.subnet_width.to_string(),
            t.pilot_seed.to_string(),
            t.clip_ratio.to_string(),
            t.taps.to_string(),
            t.decay.to_string(),
            snr,
            t.batch_size.to_string(),
            t.epochs.to_string(),
            t.lr.to_string(),
            t.lr_decay_epochs.to_string(),
            beta1.to_string(),
            beta2.to_string(),
            eps.to_string(),
            t.seed.to_string(),
            self.train_data.text(),
            self.test_data.text(),
            self.data_seed.to_string(),
            fmt_list(&self.eval_snr_db),
            fmt_list(&self.eval_clip_ratio),
            fmt_list(&self.eval_taps),
            self.realizations.to_string(),
            self.eval_seed.to_string(),
            self.workers.to_string(),
            self.out_dir.display().to_string(),
        ];
        debug_assert_eq!(values.len(), KEYS.len());
        let mut out = String::new();
        for ((k, _, _), v) in KEYS.iter().zip(values) {
            let _ = writeln!(out, "{} = {}", k, v);
        }
        out
    }

    pub fn arch(&self) -> &Architecture {
        &self.train.arch
    }

    pub fn variant(&self) -> Variant {
        self.train.arch.variant
    }

    /// Evaluation settings for one grid point.
    pub fn eval_config(&self, snr_db: f64, clip_ratio: f64, taps: usize) -> EvalConfig {
        EvalConfig {
            snr_db,
            clip_ratio,
            taps,
            decay: self.train.decay,
            realizations: self.realizations,
            pilot_seed: self.train.pilot_seed,
            seed: self.eval_seed,
            workers: self.workers,
        }
    }

    pub fn load_dataset(&self, split: Split) -> Result<Dataset> {
        let src = match split {
            Split::Train => &self.train_data,
            Split::Test => &self.test_data,
        };
        let a = self.arch();
        match src {
            DataSource::Synth(n) => synth_dataset(self.data_seed, *n, a.height, a.width, a.channels, split),
            DataSource::Dir(dir) => load_dir(dir, split),
        }
    }
}

/// All `.pgm` and `.ppm` files of `dir`, in file-name order.
pub fn load_dir(dir: &Path, split: Split) -> Result<Dataset> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("pgm" | "ppm")));
    paths.sort();
    let images = paths.iter().map(load_image).collect::<Result<Vec<_>>>()?;
    Dataset::new(images, split)
}
