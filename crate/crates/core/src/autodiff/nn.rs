//! Neural-network layers as graph operations (NCHW layout).

use super::graph::{Function, Graph, NodeId};
use super::linalg::gemm;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

struct ConvDims {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    h_out: usize,
    w_out: usize,
}

impl ConvDims {
    fn k(&self) -> usize {
        self.c_in * self.kh * self.kw
    }
    fn p(&self) -> usize {
        self.h_out * self.w_out
    }
}

/// 2-D convolution (cross-correlation) with bias.
pub struct Conv2d(pub ConvGeometry);

impl Conv2d {
    fn dims(&self, x: &Tensor, w: &Tensor, b: &Tensor) -> Result<ConvDims> {
        let (xs, ws) = (x.shape(), w.shape());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || b.shape() != [ws[0]] {
            return Err(Error::shape(
                "conv2d",
                format!("input {:?}, weight {:?}, bias {:?}", xs, ws, b.shape()),
            ));
        }
        let ConvGeometry { stride, pad_h, pad_w } = self.0;
        if stride == 0 || xs[2] + 2 * pad_h < ws[2] || xs[3] + 2 * pad_w < ws[3] {
            return Err(Error::shape("conv2d", "kernel larger than padded input"));
        }
        Ok(ConvDims {
            batch: xs[0],
            c_in: xs[1],
            h: xs[2],
            w: xs[3],
            c_out: ws[0],
            kh: ws[2],
            kw: ws[3],
            h_out: (xs[2] + 2 * pad_h - ws[2]) / stride + 1,
            w_out: (xs[3] + 2 * pad_w - ws[3]) / stride + 1,
        })
    }

    /// Source pixel for output `(oy, ox)` and kernel tap `(ky, kx)`, if inside.
    #[inline]
    fn source(&self, d: &ConvDims, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<usize> {
        let iy = (oy * self.0.stride + ky).checked_sub(self.0.pad_h)?;
        let ix = (ox * self.0.stride + kx).checked_sub(self.0.pad_w)?;
        (iy < d.h && ix < d.w).then_some(iy * d.w + ix)
    }

    fn im2col(&self, d: &ConvDims, image: &[f64], cols: &mut [f64]) {
        let p = d.p();
        for ci in 0..d.c_in {
            let plane = &image[ci * d.h * d.w..(ci + 1) * d.h * d.w];
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let row = &mut cols[((ci * d.kh + ky) * d.kw + kx) * p..][..p];
                    for oy in 0..d.h_out {
                        for ox in 0..d.w_out {
                            row[oy * d.w_out + ox] =
                                self.source(d, oy, ox, ky, kx).map_or(0.0, |s| plane[s]);
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, d: &ConvDims, cols: &[f64], image: &mut [f64]) {
        let p = d.p();
        for ci in 0..d.c_in {
            let plane = &mut image[ci * d.h * d.w..(ci + 1) * d.h * d.w];
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let row = &cols[((ci * d.kh + ky) * d.kw + kx) * p..][..p];
                    for oy in 0..d.h_out {
                        for ox in 0..d.w_out {
                            if let Some(s) = self.source(d, oy, ox, ky, kx) {
                                plane[s] += row[oy * d.w_out + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Function for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn forward(&self, x: &[&Tensor]) -> Result<Tensor> {
        let d = self.dims(x[0], x[1], x[2])?;
        let (k, p) = (d.k(), d.p());
        let mut out = Tensor::zeros(&[d.batch, d.c_out, d.h_out, d.w_out]);
        let mut cols = vec![0.0; k * p];
        let in_stride = d.c_in * d.h * d.w;
        for b in 0..d.batch {
            self.im2col(&d, &x[0].data()[b * in_stride..(b + 1) * in_stride], &mut cols);
            let dst = &mut out.data_mut()[b * d.c_out * p..(b + 1) * d.c_out * p];
            for (co, row) in dst.chunks_exact_mut(p).enumerate() {
                row.fill(x[2].data()[co]);
            }
            gemm(d.c_out, k, p, x[1].data(), false, &cols, false, dst, 1.0);
        }
        Ok(out)
    }

    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let d = self.dims(x[0], x[1], x[2]).expect("validated in forward");
        let (k, p) = (d.k(), d.p());
        let in_stride = d.c_in * d.h * d.w;
        let mut gx = needs[0].then(|| Tensor::zeros(x[0].shape()));
        let mut gw = needs[1].then(|| Tensor::zeros(x[1].shape()));
        let mut gb = needs[2].then(|| Tensor::zeros(x[2].shape()));
        let mut cols = vec![0.0; k * p];
        for b in 0..d.batch {
            let gout = &g.data()[b * d.c_out * p..(b + 1) * d.c_out * p];
            if let Some(gb) = gb.as_mut() {
                for (co, row) in gout.chunks_exact(p).enumerate() {
                    gb.data_mut()[co] += row.iter().sum::<f64>();
                }
            }
            if let Some(gw) = gw.as_mut() {
                self.im2col(&d, &x[0].data()[b * in_stride..(b + 1) * in_stride], &mut cols);
                gemm(d.c_out, p, k, gout, false, &cols, true, gw.data_mut(), 1.0);
            }
            if let Some(gx) = gx.as_mut() {
                gemm(k, d.c_out, p, x[1].data(), true, gout, false, &mut cols, 0.0);
                self.col2im(&d, &cols, &mut gx.data_mut()[b * in_stride..(b + 1) * in_stride]);
            }
        }
        vec![gx, gw, gb]
    }
}

/// Nearest-neighbour 2x spatial upsampling.
pub struct Upsample2x;

impl Function for Upsample2x {
    fn name(&self) -> &'static str {
        "upsample2x"
    }

    fn forward(&self, x: &[&Tensor]) -> Result<Tensor> {
        let s = x[0].shape();
        if s.len() != 4 {
            return Err(Error::shape("upsample2x", format!("{:?}", s)));
        }
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let mut out = Tensor::zeros(&[s[0], s[1], 2 * h, 2 * w]);
        let src = x[0].data();
        let dst = out.data_mut();
        for pl in 0..planes {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    dst[(pl * 2 * h + y) * 2 * w + xx] = src[(pl * h + y / 2) * w + xx / 2];
                }
            }
        }
        Ok(out)
    }

    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let s = x[0].shape();
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let mut gx = Tensor::zeros(s);
        let dst = gx.data_mut();
        for pl in 0..planes {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    dst[(pl * h + y / 2) * w + xx / 2] += g.data()[(pl * 2 * h + y) * 2 * w + xx];
                }
            }
        }
        vec![Some(gx)]
    }
}

/// Per-channel mean and biased variance of a `[B, C, ...]` tensor.
pub fn channel_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let s = x.shape();
    let (batch, channels) = (s[0], s[1]);
    let inner: usize = s[2..].iter().product();
    let n = (batch * inner) as f64;
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    for c in 0..channels {
        let values = || (0..batch).flat_map(move |b| x.data()[(b * channels + c) * inner..][..inner].iter());
        let m = values().sum::<f64>() / n;
        mean[c] = m;
        var[c] = values().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    }
    (mean, var)
}

fn check_bn(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<()> {
    if x.rank() < 2 || gamma.shape() != [x.shape()[1]] || beta.shape() != gamma.shape() {
        return Err(Error::shape(
            "batch_norm",
            format!("input {:?}, gamma {:?}, beta {:?}", x.shape(), gamma.shape(), beta.shape()),
        ));
    }
    Ok(())
}

fn bn_affine(x: &Tensor, gamma: &Tensor, beta: &Tensor, mean: &[f64], var: &[f64]) -> Tensor {
    let s = x.shape();
    let (batch, channels) = (s[0], s[1]);
    let inner: usize = s[2..].iter().product();
    let mut out = Tensor::zeros(s);
    for b in 0..batch {
        for c in 0..channels {
            let inv = 1.0 / (var[c] + BN_EPS).sqrt();
            let (gm, bt) = (gamma.data()[c], beta.data()[c]);
            let base = (b * channels + c) * inner;
            for i in base..base + inner {
                out.data_mut()[i] = gm * (x.data()[i] - mean[c]) * inv + bt;
            }
        }
    }
    out
}

/// Batch normalization with statistics of the current batch.
pub struct BatchNormTrain;

impl Function for BatchNormTrain {
    fn name(&self) -> &'static str {
        "batch_norm_train"
    }

    fn forward(&self, x: &[&Tensor]) -> Result<Tensor> {
        check_bn(x[0], x[1], x[2])?;
        let (mean, var) = channel_stats(x[0]);
        Ok(bn_affine(x[0], x[1], x[2], &mean, &var))
    }

    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let s = x[0].shape();
        let (batch, channels) = (s[0], s[1]);
        let inner: usize = s[2..].iter().product();
        let n = (batch * inner) as f64;
        let (mean, var) = channel_stats(x[0]);
        let mut gx = Tensor::zeros(s);
        let mut ggamma = Tensor::zeros(x[1].shape());
        let mut gbeta = Tensor::zeros(x[2].shape());
        for c in 0..channels {
            let inv = 1.0 / (var[c] + BN_EPS).sqrt();
            let gm = x[1].data()[c];
            let idx = |b: usize| (b * channels + c) * inner..(b * channels + c + 1) * inner;
            let (mut sum_g, mut sum_g_xhat) = (0.0, 0.0);
            for b in 0..batch {
                for i in idx(b) {
                    let xhat = (x[0].data()[i] - mean[c]) * inv;
                    sum_g += g.data()[i];
                    sum_g_xhat += g.data()[i] * xhat;
                }
            }
            ggamma.data_mut()[c] = sum_g_xhat;
            gbeta.data_mut()[c] = sum_g;
            for b in 0..batch {
                for i in idx(b) {
                    let xhat = (x[0].data()[i] - mean[c]) * inv;
                    gx.data_mut()[i] = gm * inv / n * (n * g.data()[i] - sum_g - xhat * sum_g_xhat);
                }
            }
        }
        vec![needs[0].then_some(gx), needs[1].then_some(ggamma), needs[2].then_some(gbeta)]
    }
}

/// Batch normalization with frozen running statistics.
pub struct BatchNormEval {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl Function for BatchNormEval {
    fn name(&self) -> &'static str {
        "batch_norm_eval"
    }

    fn forward(&self, x: &[&Tensor]) -> Result<Tensor> {
        check_bn(x[0], x[1], x[2])?;
        if self.mean.len() != x[1].len() || self.var.len() != x[1].len() {
            return Err(Error::shape("batch_norm_eval", "running statistics length"));
        }
        Ok(bn_affine(x[0], x[1], x[2], &self.mean, &self.var))
    }

    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let s = x[0].shape();
        let (batch, channels) = (s[0], s[1]);
        let inner: usize = s[2..].iter().product();
        let mut gx = Tensor::zeros(s);
        let mut ggamma = Tensor::zeros(x[1].shape());
        let mut gbeta = Tensor::zeros(x[2].shape());
        for b in 0..batch {
            for c in 0..channels {
                let inv = 1.0 / (self.var[c] + BN_EPS).sqrt();
                let base = (b * channels + c) * inner;
                for i in base..base + inner {
                    let xhat = (x[0].data()[i] - self.mean[c]) * inv;
                    gx.data_mut()[i] = g.data()[i] * x[1].data()[c] * inv;
                    ggamma.data_mut()[c] += g.data()[i] * xhat;
                    gbeta.data_mut()[c] += g.data()[i];
                }
            }
        }
        vec![needs[0].then_some(gx), needs[1].then_some(ggamma), needs[2].then_some(gbeta)]
    }
}

/// Fully connected layer `y = x Wᵀ + b` for `x: [B, in]`, `W: [out, in]`.
pub struct Linear;

impl Function for Linear {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn forward(&self, x: &[&Tensor]) -> Result<Tensor> {
        let (xs, ws) = (x[0].shape(), x[1].shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || x[2].shape() != [ws[0]] {
            return Err(Error::shape(
                "linear",
                format!("input {:?}, weight {:?}, bias {:?}", xs, ws, x[2].shape()),
            ));
        }
        let (batch, n_in, n_out) = (xs[0], xs[1], ws[0]);
        let mut out = Tensor::zeros(&[batch, n_out]);
        for row in out.data_mut().chunks_exact_mut(n_out) {
            row.copy_from_slice(x[2].data());
        }
        gemm(batch, n_in, n_out, x[0].data(), false, x[1].data(), true, out.data_mut(), 1.0);
        Ok(out)
    }

    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (batch, n_in, n_out) = (x[0].shape()[0], x[0].shape()[1], x[1].shape()[0]);
        let gx = needs[0].then(|| {
            let mut gx = Tensor::zeros(x[0].shape());
            gemm(batch, n_out, n_in, g.data(), false, x[1].data(), false, gx.data_mut(), 0.0);
            gx
        });
        let gw = needs[1].then(|| {
            let mut gw = Tensor::zeros(x[1].shape());
            gemm(n_out, batch, n_in, g.data(), true, x[0].data(), false, gw.data_mut(), 0.0);
            gw
        });
        let gb = needs[2].then(|| {
            let mut gb = Tensor::zeros(x[2].shape());
            for row in g.data().chunks_exact(n_out) {
                for (acc, v) in gb.data_mut().iter_mut().zip(row) {
                    *acc += v;
                }
            }
            gb
        });
        vec![gx, gw, gb]
    }
}

impl Graph {
    pub fn conv2d(
        &mut self,
        x: NodeId,
        weight: NodeId,
        bias: NodeId,
        geometry: ConvGeometry,
    ) -> Result<NodeId> {
        self.record(Conv2d(geometry), &[x, weight, bias])
    }

    pub fn upsample2x(&mut self, x: NodeId) -> Result<NodeId> {
        self.record(Upsample2x, &[x])
    }

    pub fn batch_norm_train(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        self.record(BatchNormTrain, &[x, gamma, beta])
    }

    pub fn batch_norm_eval(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<f64>,
        var: Vec<f64>,
    ) -> Result<NodeId> {
        self.record(BatchNormEval { mean, var }, &[x, gamma, beta])
    }

    pub fn linear(&mut self, x: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        self.record(Linear, &[x, weight, bias])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct-summation convolution used as an oracle.
    fn conv_naive(x: &Tensor, w: &Tensor, b: &Tensor, geo: ConvGeometry) -> Tensor {
        let (xs, ws) = (x.shape(), w.shape());
        let h_out = (xs[2] + 2 * geo.pad_h - ws[2]) / geo.stride + 1;
        let w_out = (xs[3] + 2 * geo.pad_w - ws[3]) / geo.stride + 1;
        let mut out = Tensor::zeros(&[xs[0], ws[0], h_out, w_out]);
        for n in 0..xs[0] {
            for co in 0..ws[0] {
                for oy in 0..h_out {
                    for ox in 0..w_out {
                        let mut acc = b.data()[co];
                        for ci in 0..xs[1] {
                            for ky in 0..ws[2] {
                                for kx in 0..ws[3] {
                                    let iy = (oy * geo.stride + ky) as isize - geo.pad_h as isize;
                                    let ix = (ox * geo.stride + kx) as isize - geo.pad_w as isize;
                                    if iy < 0 || ix < 0 || iy >= xs[2] as isize || ix >= xs[3] as isize {
                                        continue;
                                    }
                                    let xi = ((n * xs[1] + ci) * xs[2] + iy as usize) * xs[3] + ix as usize;
                                    let wi = ((co * ws[1] + ci) * ws[2] + ky) * ws[3] + kx;
                                    acc += x.data()[xi] * w.data()[wi];
                                }
                            }
                        }
                        out.data_mut()[((n * ws[0] + co) * h_out + oy) * w_out + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn pseudo(shape: &[usize], salt: f64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|i| ((i as f64 + salt) * 0.913).sin()).collect()).unwrap()
    }

    #[test]
    fn conv_matches_direct_summation() {
        for geo in [
            ConvGeometry { stride: 1, pad_h: 1, pad_w: 1 },
            ConvGeometry { stride: 2, pad_h: 1, pad_w: 1 },
            ConvGeometry { stride: 1, pad_h: 0, pad_w: 1 },
        ] {
            let x = pseudo(&[2, 3, 5, 6], 0.1);
            let w = pseudo(&[4, 3, 3, 3], 1.7);
            let b = pseudo(&[4], 3.3);
            let got = Conv2d(geo).forward(&[&x, &w, &b]).unwrap();
            let want = conv_naive(&x, &w, &b, geo);
            assert_eq!(got.shape(), want.shape());
            for (a, e) in got.data().iter().zip(want.data()) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batch_norm_train_normalizes() {
        let x = pseudo(&[3, 2, 2, 2], 0.5);
        let gamma = Tensor::from_vec(vec![1.0, 1.0]);
        let beta = Tensor::from_vec(vec![0.0, 0.0]);
        let y = BatchNormTrain.forward(&[&x, &gamma, &beta]).unwrap();
        let (mean, var) = channel_stats(&y);
        for c in 0..2 {
            assert!(mean[c].abs() < 1e-12);
            assert!((var[c] - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn batch_norm_eval_is_idempotent_and_deterministic() {
        let x = pseudo(&[2, 2, 3, 1], 0.2);
        let gamma = Tensor::from_vec(vec![1.5, -0.5]);
        let beta = Tensor::from_vec(vec![0.1, 0.2]);
        let op = BatchNormEval { mean: vec![0.3, -0.1], var: vec![2.0, 0.5] };
        let a = op.forward(&[&x, &gamma, &beta]).unwrap();
        let b = op.forward(&[&x, &gamma, &beta]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn upsample_repeats_pixels() {
        let x = Tensor::new(vec![1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let y = Upsample2x.forward(&[&x]).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 4]);
        assert_eq!(y.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }
}
