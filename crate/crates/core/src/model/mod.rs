//! Encoder/decoder networks, the three system variants, ADAM and training.

mod adam;
mod net;
mod train;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::ofdm::OfdmConfig;
use crate::rng::SimRng;

pub use adam::{Adam, AdamConfig};
pub use net::{forward, grid_to_channels, BnMode, ChannelDraw, ForwardOutput};
pub use train::{
    draw_channel, evaluate, lr_at, train, transmit_image, EpochLog, EvalConfig, EvalReport, SnrSpec, TrainConfig, TrainState,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Direct,
    Implicit,
    Explicit,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Direct => "DIRECT",
            Variant::Implicit => "IMPLICIT",
            Variant::Explicit => "EXPLICIT",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "DIRECT" => Ok(Variant::Direct),
            "IMPLICIT" => Ok(Variant::Implicit),
            "EXPLICIT" => Ok(Variant::Explicit),
            _ => Err(Error::Config(format!("unknown variant {:?}", s))),
        }
    }
}

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Zero-mean normal with standard deviation `gain / √fan_in`.
    Normal { fan_in: usize, gain: f64 },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Shape-defining hyperparameters of the networks.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub variant: Variant,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub fft_size: usize,
    pub cp_len: usize,
    pub pilot_symbols: usize,
    pub data_symbols: usize,
    pub width1: usize,
    pub width2: usize,
    pub subnet_width: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            variant: Variant::Explicit,
            height: 32,
            width: 32,
            channels: 3,
            fft_size: 64,
            cp_len: 16,
            pilot_symbols: 2,
            data_symbols: 6,
            width1: 16,
            width2: 32,
            subnet_width: 8,
        }
    }
}

const KAIMING: f64 = std::f64::consts::SQRT_2;

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.height % 4 != 0 || self.width % 4 != 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config(format!(
                "image height and width must be positive multiples of 4, got {}x{}",
                self.height, self.width
            )));
        }
        if self.channels == 0 || self.width1 == 0 || self.width2 == 0 || self.subnet_width == 0 {
            return Err(Error::Config("channel counts and widths must be ≥ 1".into()));
        }
        self.ofdm(f64::INFINITY).validate()
    }

    /// OFDM parameters of the packet with clipping ratio `clip_ratio`.
    pub fn ofdm(&self, clip_ratio: f64) -> OfdmConfig {
        OfdmConfig {
            fft_size: self.fft_size,
            cp_len: self.cp_len,
            pilot_symbols: self.pilot_symbols,
            data_symbols: self.data_symbols,
            clip_ratio,
            signal_power: 1.0,
        }
    }

    pub fn packet_len(&self) -> usize {
        self.ofdm(f64::INFINITY).packet_len()
    }

    /// Number of real encoder outputs.
    pub fn code_len(&self) -> usize {
        match self.variant {
            Variant::Direct => 2 * self.packet_len(),
            _ => 2 * self.data_symbols * self.fft_size,
        }
    }

    /// `(channels, width)` of the decoder's `[B, C, 1, W]` input.
    pub fn decoder_input(&self) -> (usize, usize) {
        let s = self.pilot_symbols + self.data_symbols;
        match self.variant {
            Variant::Direct => (2 * s, self.fft_size + self.cp_len),
            Variant::Implicit => (2 * (self.data_symbols + 2 * self.pilot_symbols), self.fft_size),
            Variant::Explicit => (2 * self.data_symbols, self.fft_size),
        }
    }

    pub fn bottleneck(&self) -> (usize, usize, usize) {
        (self.width2, self.height / 4, self.width / 4)
    }

    /// Every parameter, in checkpoint order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut s = Specs::default();
        let (w1, w2, c) = (self.width1, self.width2, self.channels);
        let (bc, bh, bw) = self.bottleneck();

        s.conv("enc.conv1", w1, c, 3, 3, false);
        s.bn("enc.bn1", w1, false);
        s.conv("enc.conv2", w2, w1, 3, 3, false);
        s.bn("enc.bn2", w2, false);
        s.res_block("enc.res", w2);
        s.linear("enc.fc", self.code_len(), bc * bh * bw, 1.0);

        let (cin, win) = self.decoder_input();
        s.conv("dec.conv_in", w1, cin, 1, 3, false);
        s.bn("dec.bn_in", w1, false);
        s.linear("dec.fc", bc * bh * bw, w1 * win, KAIMING);
        s.res_block("dec.res", w2);
        s.conv("dec.conv_up1", w1, w2, 3, 3, false);
        s.bn("dec.bn_up1", w1, false);
        s.conv("dec.conv_up2", w1, w1, 3, 3, false);
        s.bn("dec.bn_up2", w1, false);
        s.conv("dec.conv_out", c, w1, 3, 3, true);

        if self.variant == Variant::Explicit {
            let (np, ns, sw) = (self.pilot_symbols, self.data_symbols, self.subnet_width);
            s.subnet("sub1", 4 * np + 2, sw, 2);
            s.subnet("sub2", 2 * ns + 2, sw, 2 * ns);
        }
        s.0
    }

    /// Names of the batch-norm layers, in checkpoint order.
    pub fn bn_layers(&self) -> Vec<(String, usize)> {
        self.param_specs()
            .iter()
            .filter_map(|p| p.name.strip_suffix(".gamma").map(|n| (n.to_string(), p.shape[0])))
            .collect()
    }

    /// `(subnet parameters, decoder parameters)`; the decoder count includes
    /// the subnets.
    pub fn subnet_share(&self) -> (usize, usize) {
        let specs = self.param_specs();
        let count = |pred: &dyn Fn(&str) -> bool| -> usize {
            specs
                .iter()
                .filter(|p| pred(&p.name))
                .map(|p| p.shape.iter().product::<usize>())
                .sum()
        };
        let sub = count(&|n| n.starts_with("sub"));
        let dec = count(&|n| n.starts_with("dec.") || n.starts_with("sub"));
        (sub, dec)
    }

    /// `key=value` lines describing the architecture.
    pub fn to_text(&self) -> String {
        format!(
            "variant={}\nheight={}\nwidth={}\nchannels={}\nfft_size={}\ncp_len={}\npilot_symbols={}\ndata_symbols={}\nwidth1={}\nwidth2={}\nsubnet_width={}\n",
            self.variant,
            self.height,
            self.width,
            self.channels,
            self.fft_size,
            self.cp_len,
            self.pilot_symbols,
            self.data_symbols,
            self.width1,
            self.width2,
            self.subnet_width
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut a = Architecture::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("bad architecture line {:?}", line)))?;
            let num = || -> Result<usize> {
                v.trim()
                    .parse()
                    .map_err(|_| Error::Checkpoint(format!("bad value for {}: {:?}", k, v)))
            };
            match k.trim() {
                "variant" => a.variant = v.trim().parse()?,
                "height" => a.height = num()?,
                "width" => a.width = num()?,
                "channels" => a.channels = num()?,
                "fft_size" => a.fft_size = num()?,
                "cp_len" => a.cp_len = num()?,
                "pilot_symbols" => a.pilot_symbols = num()?,
                "data_symbols" => a.data_symbols = num()?,
                "width1" => a.width1 = num()?,
                "width2" => a.width2 = num()?,
                "subnet_width" => a.subnet_width = num()?,
                other => return Err(Error::Checkpoint(format!("unknown architecture key {:?}", other))),
            }
        }
        Ok(a)
    }
}

#[derive(Default)]
struct Specs(Vec<ParamSpec>);

impl Specs {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) {
        self.0.push(ParamSpec { name, shape, init });
    }

    fn conv(&mut self, name: &str, c_out: usize, c_in: usize, kh: usize, kw: usize, bias: bool) {
        let fan_in = c_in * kh * kw;
        let gain = if bias { 1.0 } else { KAIMING };
        self.push(format!("{}.weight", name), vec![c_out, c_in, kh, kw], Init::Normal { fan_in, gain });
        if bias {
            self.push(format!("{}.bias", name), vec![c_out], Init::Zeros);
        }
    }

    fn bn(&mut self, name: &str, c: usize, zero: bool) {
        let gamma = if zero { Init::Zeros } else { Init::Ones };
        self.push(format!("{}.gamma", name), vec![c], gamma);
        self.push(format!("{}.beta", name), vec![c], Init::Zeros);
    }

    fn linear(&mut self, name: &str, n_out: usize, n_in: usize, gain: f64) {
        self.push(format!("{}.weight", name), vec![n_out, n_in], Init::Normal { fan_in: n_in, gain });
        self.push(format!("{}.bias", name), vec![n_out], Init::Zeros);
    }

    fn res_block(&mut self, name: &str, c: usize) {
        self.conv(&format!("{}.conv1", name), c, c, 3, 3, false);
        self.bn(&format!("{}.bn1", name), c, false);
        self.conv(&format!("{}.conv2", name), c, c, 3, 3, false);
        self.bn(&format!("{}.bn2", name), c, false);
    }

    /// Conv(1×3)–BN–ReLU–Conv(1×3)–BN with a zero-initialized final BN, so
    /// the residual correction starts at exactly zero.
    fn subnet(&mut self, name: &str, c_in: usize, hidden: usize, c_out: usize) {
        self.conv(&format!("{}.conv1", name), hidden, c_in, 1, 3, false);
        self.bn(&format!("{}.bn1", name), hidden, false);
        self.conv(&format!("{}.conv2", name), c_out, hidden, 1, 3, false);
        self.bn(&format!("{}.bn2", name), c_out, true);
    }
}

/// Network weights plus batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    names: Vec<String>,
    index: HashMap<String, usize>,
    pub tensors: Vec<Tensor>,
    /// Running `(mean, var)` per batch-norm layer, in `arch.bn_layers()` order.
    pub bn_running: Vec<(Vec<f64>, Vec<f64>)>,
}

/// Running-statistics momentum: `running ← m·running + (1 − m)·batch`.
pub const BN_MOMENTUM: f64 = 0.9;

impl ModelParams {
    pub fn init(arch: &Architecture, rng: &mut SimRng) -> Result<Self> {
        arch.validate()?;
        let specs = arch.param_specs();
        let tensors = specs
            .iter()
            .map(|s| {
                let n: usize = s.shape.iter().product();
                let data = match s.init {
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                    Init::Normal { fan_in, gain } => {
                        let std = gain / (fan_in as f64).sqrt();
                        (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
                    }
                };
                Tensor::new(s.shape.clone(), data)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(arch.clone(), tensors, None)
    }

    /// Assembles parameters, checking every shape against `arch`.
    pub fn from_parts(
        arch: Architecture,
        tensors: Vec<Tensor>,
        bn_running: Option<Vec<(Vec<f64>, Vec<f64>)>>,
    ) -> Result<Self> {
        let specs = arch.param_specs();
        if specs.len() != tensors.len() {
            return Err(Error::shape(
                "model_params",
                format!("architecture has {} tensors, got {}", specs.len(), tensors.len()),
            ));
        }
        for (s, t) in specs.iter().zip(&tensors) {
            if s.shape != t.shape() {
                return Err(Error::shape(
                    "model_params",
                    format!("{}: expected {:?}, got {:?}", s.name, s.shape, t.shape()),
                ));
            }
            if !t.is_finite() {
                return Err(Error::NonFinite { op: "model_params" });
            }
        }
        let layers = arch.bn_layers();
        let bn_running = match bn_running {
            Some(r) => {
                let ok = r.len() == layers.len()
                    && r.iter().zip(&layers).all(|((m, v), (_, c))| m.len() == *c && v.len() == *c);
                if !ok {
                    return Err(Error::shape("model_params", "batch-norm statistics do not match architecture"));
                }
                r
            }
            None => layers.iter().map(|(_, c)| (vec![0.0; *c], vec![1.0; *c])).collect(),
        };
        let names: Vec<String> = specs.into_iter().map(|s| s.name).collect();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Ok(ModelParams {
            arch,
            names,
            index,
            tensors,
            bn_running,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Folds the batch statistics of one training step into the running
    /// averages.
    pub fn update_running(&mut self, batch_stats: &[(Vec<f64>, Vec<f64>)]) {
        for ((rm, rv), (bm, bv)) in self.bn_running.iter_mut().zip(batch_stats) {
            for (r, b) in rm.iter_mut().zip(bm) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
            }
            for (r, b) in rv.iter_mut().zip(bv) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn variant_round_trip() {
        for v in [Variant::Direct, Variant::Implicit, Variant::Explicit] {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert!("OFDM".parse::<Variant>().is_err());
    }

    #[test]
    fn architecture_text_round_trip() {
        let a = Architecture {
            variant: Variant::Implicit,
            width1: 8,
            ..Architecture::default()
        };
        assert_eq!(Architecture::from_text(&a.to_text()).unwrap(), a);
    }

    #[test]
    fn subnets_are_a_small_share() {
        let (sub, dec) = Architecture::default().subnet_share();
        assert!(sub > 0);
        assert!((sub as f64) <= 0.01 * dec as f64, "{} of {}", sub, dec);
        let direct = Architecture {
            variant: Variant::Direct,
            ..Architecture::default()
        };
        assert_eq!(direct.subnet_share().0, 0);
    }

    #[test]
    fn init_matches_specs() {
        let arch = Architecture::default();
        let p = ModelParams::init(&arch, &mut seeded(0)).unwrap();
        assert_eq!(p.names().len(), arch.param_specs().len());
        assert!(p.get("sub2.bn2.gamma").unwrap().data().iter().all(|&v| v == 0.0));
        assert!(p.get("enc.bn1.gamma").unwrap().data().iter().all(|&v| v == 1.0));
        let mut bad = p.tensors.clone();
        bad[0] = Tensor::zeros(&[1]);
        assert!(ModelParams::from_parts(arch, bad, None).is_err());
    }
}
