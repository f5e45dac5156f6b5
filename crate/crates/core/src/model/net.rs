use std::collections::HashMap;

use num_complex::Complex64;

use super::{Architecture, Variant};
use crate::autodiff::nn::channel_stats;
use crate::autodiff::{ConvGeometry, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::ofdm::{receive_graph, transmit_graph, ComplexGrid};

/// One packet's channel: impulse response, additive noise samples and the
/// noise variance the receiver assumes.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelDraw {
    pub taps: Vec<Complex64>,
    pub noise: Vec<Complex64>,
    pub noise_var: f64,
}

#[derive(Clone, Copy, Debug)]
pub enum BnMode<'a> {
    /// Normalize with batch statistics and report them.
    Train,
    /// Normalize with the given running `(mean, var)` per layer.
    Eval(&'a [(Vec<f64>, Vec<f64>)]),
}

pub struct ForwardOutput {
    /// Reconstruction `[B, C, H, W]` in `[0, 1]`.
    pub recon: NodeId,
    /// Transmitted time signal `[B, T, 2]` after normalization and clipping.
    pub tx: NodeId,
    /// `[B, C_in, 1, W_in]` tensor entering the decoder trunk.
    pub decoder_input: NodeId,
    /// Batch statistics per batch-norm layer (train mode only), in
    /// `Architecture::bn_layers` order.
    pub bn_stats: Vec<(Vec<f64>, Vec<f64>)>,
}

const DOWN: ConvGeometry = ConvGeometry { stride: 2, pad_h: 1, pad_w: 1 };
const SAME: ConvGeometry = ConvGeometry { stride: 1, pad_h: 1, pad_w: 1 };
const ROW: ConvGeometry = ConvGeometry { stride: 1, pad_h: 0, pad_w: 1 };

struct Ctx<'a, 'g> {
    g: &'g mut Graph,
    params: &'a [NodeId],
    index: HashMap<String, usize>,
    bn_index: HashMap<String, usize>,
    bn: BnMode<'a>,
    stats: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Ctx<'_, '_> {
    fn p(&self, name: &str) -> Result<NodeId> {
        self.index
            .get(name)
            .map(|&i| self.params[i])
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {}", name)))
    }

    fn conv(&mut self, x: NodeId, name: &str, geometry: ConvGeometry) -> Result<NodeId> {
        let w = self.p(&format!("{}.weight", name))?;
        let b = match self.p(&format!("{}.bias", name)) {
            Ok(b) => b,
            Err(_) => {
                let c_out = self.g.value(w).shape()[0];
                self.g.constant(Tensor::zeros(&[c_out]))
            }
        };
        self.g.conv2d(x, w, b, geometry)
    }

    fn bn(&mut self, x: NodeId, name: &str) -> Result<NodeId> {
        let gamma = self.p(&format!("{}.gamma", name))?;
        let beta = self.p(&format!("{}.beta", name))?;
        let layer = self.bn_index[name];
        match self.bn {
            BnMode::Train => {
                self.stats[layer] = Some(channel_stats(self.g.value(x)));
                self.g.batch_norm_train(x, gamma, beta)
            }
            BnMode::Eval(running) => {
                let (m, v) = running
                    .get(layer)
                    .ok_or_else(|| Error::InvalidArgument("missing running statistics".into()))?;
                self.g.batch_norm_eval(x, gamma, beta, m.clone(), v.clone())
            }
        }
    }

    fn conv_bn(&mut self, x: NodeId, conv: &str, bn: &str, geometry: ConvGeometry, relu: bool) -> Result<NodeId> {
        let y = self.conv(x, conv, geometry)?;
        let y = self.bn(y, bn)?;
        if relu {
            self.g.relu(y)
        } else {
            Ok(y)
        }
    }

    fn res_block(&mut self, x: NodeId, name: &str) -> Result<NodeId> {
        let h = self.conv_bn(x, &format!("{}.conv1", name), &format!("{}.bn1", name), SAME, true)?;
        let h = self.conv_bn(h, &format!("{}.conv2", name), &format!("{}.bn2", name), SAME, false)?;
        let sum = self.g.add(x, h)?;
        self.g.relu(sum)
    }

    fn linear(&mut self, x: NodeId, name: &str) -> Result<NodeId> {
        let w = self.p(&format!("{}.weight", name))?;
        let b = self.p(&format!("{}.bias", name))?;
        self.g.linear(x, w, b)
    }

    fn subnet(&mut self, x: NodeId, name: &str) -> Result<NodeId> {
        let h = self.conv_bn(x, &format!("{}.conv1", name), &format!("{}.bn1", name), ROW, true)?;
        self.conv_bn(h, &format!("{}.conv2", name), &format!("{}.bn2", name), ROW, false)
    }
}

/// `[B, S, L, 2]` complex grid → `[B, 2S, 1, L]` real channels (real and
/// imaginary planes of each symbol are adjacent channels).
pub fn grid_to_channels(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let s = g.value(x).shape().to_vec();
    if s.len() != 4 || s[3] != 2 {
        return Err(Error::shape("grid_to_channels", format!("{:?}", s)));
    }
    let planes = g.permute(x, &[0, 1, 3, 2])?;
    g.reshape(planes, &[s[0], 2 * s[1], 1, s[2]])
}

fn channels_to_grid(g: &mut Graph, x: NodeId, symbols: usize) -> Result<NodeId> {
    let s = g.value(x).shape().to_vec();
    let planes = g.reshape(x, &[s[0], symbols, 2, s[3]])?;
    g.permute(planes, &[0, 1, 3, 2])
}

/// Builds the complete chain `image → encoder → channel → decoder` for a
/// batch. `params` are graph nodes in `arch.param_specs()` order and
/// `images` is an `[B, C, H, W]` node. Each packet uses its own draw.
#[allow(clippy::too_many_arguments)]
pub fn forward(
    g: &mut Graph,
    arch: &Architecture,
    params: &[NodeId],
    bn: BnMode<'_>,
    images: NodeId,
    draws: &[ChannelDraw],
    clip_ratio: f64,
    pilots: &ComplexGrid,
) -> Result<ForwardOutput> {
    let specs = arch.param_specs();
    if params.len() != specs.len() {
        return Err(Error::shape("forward", format!("{} parameter nodes for {} specs", params.len(), specs.len())));
    }
    let xs = g.value(images).shape().to_vec();
    let batch = xs.first().copied().unwrap_or(0);
    if xs != [batch, arch.channels, arch.height, arch.width] || batch == 0 {
        return Err(Error::shape(
            "forward",
            format!("images {:?}, architecture expects [B, {}, {}, {}]", xs, arch.channels, arch.height, arch.width),
        ));
    }
    if draws.len() != batch {
        return Err(Error::shape("forward", format!("{} channel draws for batch {}", draws.len(), batch)));
    }
    let packet = arch.packet_len();
    if draws.iter().any(|d| d.noise.len() != packet) {
        return Err(Error::shape("forward", format!("noise must have {} samples per packet", packet)));
    }
    if pilots.rows() != arch.pilot_symbols || pilots.cols() != arch.fft_size {
        return Err(Error::shape("forward", "pilot grid does not match architecture"));
    }
    let bn_layers = arch.bn_layers();
    let mut cx = Ctx {
        g,
        params,
        index: specs.iter().enumerate().map(|(i, s)| (s.name.clone(), i)).collect(),
        bn_index: bn_layers.iter().enumerate().map(|(i, (n, _))| (n.clone(), i)).collect(),
        bn,
        stats: vec![None; bn_layers.len()],
    };

    // Encoder.
    let h = cx.conv_bn(images, "enc.conv1", "enc.bn1", DOWN, true)?;
    let h = cx.conv_bn(h, "enc.conv2", "enc.bn2", DOWN, true)?;
    let h = cx.res_block(h, "enc.res")?;
    let (bc, bh, bw) = arch.bottleneck();
    let flat = cx.g.reshape(h, &[batch, bc * bh * bw])?;
    let code = cx.linear(flat, "enc.fc")?;

    // Channel.
    let taps: Vec<Vec<Complex64>> = draws.iter().map(|d| d.taps.clone()).collect();
    let noise_values: Vec<Complex64> = draws.iter().flat_map(|d| d.noise.iter().copied()).collect();
    let noise = Tensor::from_complex(&[batch, packet], &noise_values)?;
    let noise_var: Vec<f64> = draws.iter().map(|d| d.noise_var).collect();
    let cfg = arch.ofdm(clip_ratio);
    let symbols = arch.pilot_symbols + arch.data_symbols;

    let (tx, decoder_input) = if arch.variant == Variant::Direct {
        let samples = cx.g.reshape(code, &[batch, packet, 2])?;
        let normalized = cx.g.normalize_power(samples, cfg.signal_power)?;
        let tx = cx.g.clip(normalized, cfg.clip_threshold())?;
        let rx = cx.g.apply_channel(tx, taps, Some(noise))?;
        let blocks = cx.g.reshape(rx, &[batch, symbols, cfg.symbol_len(), 2])?;
        (tx, grid_to_channels(cx.g, blocks)?)
    } else {
        let data = cx.g.reshape(code, &[batch, arch.data_symbols, arch.fft_size, 2])?;
        let pilot_batch: Vec<Complex64> = (0..batch).flat_map(|_| pilots.values().iter().copied()).collect();
        let pilot_node = cx.g.constant(Tensor::from_complex(&[batch, arch.pilot_symbols, arch.fft_size], &pilot_batch)?);
        let tx = transmit_graph(cx.g, pilot_node, data, &cfg)?;
        let rx = cx.g.apply_channel(tx, taps, Some(noise))?;
        let (rx_pilots, rx_data) = receive_graph(cx.g, rx, &cfg)?;
        let input = match arch.variant {
            Variant::Implicit => {
                let grids = cx.g.concat(&[rx_data, pilot_node, rx_pilots], 1)?;
                grid_to_channels(cx.g, grids)?
            }
            _ => {
                let est = cx.g.mmse_estimate(rx_pilots, pilots.clone(), noise_var.clone())?;
                let est_grid = cx.g.reshape(est, &[batch, 1, arch.fft_size, 2])?;
                let est_ch = grid_to_channels(cx.g, est_grid)?;
                let p_ch = grid_to_channels(cx.g, pilot_node)?;
                let rp_ch = grid_to_channels(cx.g, rx_pilots)?;
                let sub1_in = cx.g.concat(&[p_ch, rp_ch, est_ch], 1)?;
                let sub1 = cx.subnet(sub1_in, "sub1")?;
                let corr = channels_to_grid(cx.g, sub1, 1)?;
                let corr = cx.g.reshape(corr, &[batch, arch.fft_size, 2])?;
                let refined = cx.g.add(est, corr)?;

                let eq = cx.g.mmse_equalize(rx_data, refined, noise_var)?;
                let eq_ch = grid_to_channels(cx.g, eq)?;
                let refined_grid = cx.g.reshape(refined, &[batch, 1, arch.fft_size, 2])?;
                let refined_ch = grid_to_channels(cx.g, refined_grid)?;
                let sub2_in = cx.g.concat(&[eq_ch, refined_ch], 1)?;
                let sub2 = cx.subnet(sub2_in, "sub2")?;
                cx.g.add(eq_ch, sub2)?
            }
        };
        (tx, input)
    };

    // Decoder.
    let (cin, win) = arch.decoder_input();
    debug_assert_eq!(cx.g.value(decoder_input).shape(), &[batch, cin, 1, win]);
    let h = cx.conv_bn(decoder_input, "dec.conv_in", "dec.bn_in", ROW, true)?;
    let flat = cx.g.reshape(h, &[batch, arch.width1 * win])?;
    let h = cx.linear(flat, "dec.fc")?;
    let h = cx.g.relu(h)?;
    let h = cx.g.reshape(h, &[batch, bc, bh, bw])?;
    let h = cx.res_block(h, "dec.res")?;
    let h = cx.g.upsample2x(h)?;
    let h = cx.conv_bn(h, "dec.conv_up1", "dec.bn_up1", SAME, true)?;
    let h = cx.g.upsample2x(h)?;
    let h = cx.conv_bn(h, "dec.conv_up2", "dec.bn_up2", SAME, true)?;
    let h = cx.conv(h, "dec.conv_out", SAME)?;
    let recon = cx.g.sigmoid(h)?;

    let bn_stats = match cx.bn {
        BnMode::Train => cx
            .stats
            .into_iter()
            .map(|s| s.ok_or_else(|| Error::InvalidArgument("batch-norm layer not visited".into())))
            .collect::<Result<Vec<_>>>()?,
        BnMode::Eval(_) => Vec::new(),
    };
    Ok(ForwardOutput {
        recon,
        tx,
        decoder_input,
        bn_stats,
    })
}
