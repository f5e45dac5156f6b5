//! Pilot-based channel estimation and single-tap MMSE equalization.

use num_complex::Complex64;

use crate::autodiff::{cget, cset, Function, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::ofdm::ComplexGrid;

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelEstimate {
    pub response: Vec<Complex64>,
}

/// Per-subcarrier regularized least squares over the pilot symbols:
/// `Ĥ[k] = Σ_i conj(P[i,k]) R[i,k] / (Σ_i |P[i,k]|² + σ²)`.
///
/// The `σ²` term corresponds to a unit-power channel prior, which matches
/// the normalized power-delay profile (`E|H[k]|² = 1`).
pub fn estimate_channel_mmse(
    pilots: &ComplexGrid,
    received: &ComplexGrid,
    noise_var: f64,
) -> Result<ChannelEstimate> {
    if pilots.rows() != received.rows() || pilots.cols() != received.cols() {
        return Err(Error::shape(
            "estimate_channel_mmse",
            format!(
                "pilots {}x{}, received {}x{}",
                pilots.rows(),
                pilots.cols(),
                received.rows(),
                received.cols()
            ),
        ));
    }
    let response = estimate_row(pilots.values(), received.values(), pilots.cols(), noise_var);
    Ok(ChannelEstimate { response })
}

fn estimate_row(pilots: &[Complex64], received: &[Complex64], fft_size: usize, noise_var: f64) -> Vec<Complex64> {
    let symbols = pilots.len() / fft_size;
    (0..fft_size)
        .map(|k| {
            let mut num = Complex64::new(0.0, 0.0);
            let mut den = noise_var;
            for i in 0..symbols {
                let p = pilots[i * fft_size + k];
                num += p.conj() * received[i * fft_size + k];
                den += p.norm_sqr();
            }
            if den > 0.0 {
                num / den
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect()
}

/// `conj(Ĥ[k]) R[j,k] / (|Ĥ[k]|² + σ²)`; a zero denominator yields zero.
#[inline]
pub fn mmse_weight(h: Complex64, noise_var: f64) -> Complex64 {
    let d = h.norm_sqr() + noise_var;
    if d > 0.0 {
        h.conj() / d
    } else {
        Complex64::new(0.0, 0.0)
    }
}

pub fn equalize_mmse(received: &ComplexGrid, estimate: &[Complex64], noise_var: f64) -> Result<ComplexGrid> {
    if estimate.len() != received.cols() {
        return Err(Error::shape(
            "equalize_mmse",
            format!("{} subcarriers vs estimate of {}", received.cols(), estimate.len()),
        ));
    }
    let cols = received.cols();
    let values = received
        .values()
        .iter()
        .enumerate()
        .map(|(i, &r)| mmse_weight(estimate[i % cols], noise_var) * r)
        .collect();
    ComplexGrid::new(received.rows(), cols, values)
}

/// Batched channel estimate: input `[B, N_p, L, 2]` received pilots, output
/// `[B, L, 2]`. The transmitted pilots are constants of the op.
pub struct MmseEstimate {
    pub pilots: ComplexGrid,
    pub noise_var: Vec<f64>,
}

impl MmseEstimate {
    fn dims(&self, t: &Tensor) -> Result<(usize, usize, usize)> {
        let s = t.shape();
        let (np, l) = (self.pilots.rows(), self.pilots.cols());
        if s != [self.noise_var.len(), np, l, 2] {
            return Err(Error::shape(
                "mmse_estimate",
                format!("expected [{}, {}, {}, 2], got {:?}", self.noise_var.len(), np, l, s),
            ));
        }
        Ok((s[0], np, l))
    }
}

impl Function for MmseEstimate {
    fn name(&self) -> &'static str {
        "mmse_estimate"
    }
    fn forward(&self, x: &[&Tensor]) -> Result<Tensor> {
        let (batch, np, l) = self.dims(x[0])?;
        let rx = x[0].to_complex()?;
        let mut out = Vec::with_capacity(batch * l);
        for b in 0..batch {
            out.extend(estimate_row(
                self.pilots.values(),
                &rx[b * np * l..(b + 1) * np * l],
                l,
                self.noise_var[b],
            ));
        }
        Tensor::from_complex(&[batch, l], &out)
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let (batch, np, l) = self.dims(x[0]).expect("validated");
        let mut gx = Tensor::zeros(x[0].shape());
        for b in 0..batch {
            for k in 0..l {
                let den: f64 = self.noise_var[b] + (0..np).map(|i| self.pilots.get(i, k).norm_sqr()).sum::<f64>();
                if den <= 0.0 {
                    continue;
                }
                let gk = cget(g.data(), b * l + k);
                for i in 0..np {
                    cset(gx.data_mut(), (b * np + i) * l + k, self.pilots.get(i, k) * gk / den);
                }
            }
        }
        vec![Some(gx)]
    }
}

/// Batched equalizer: inputs `[B, N_s, L, 2]` received data and `[B, L, 2]`
/// channel estimate; differentiable in both.
pub struct MmseEqualize {
    pub noise_var: Vec<f64>,
}

impl MmseEqualize {
    fn dims(&self, r: &Tensor, h: &Tensor) -> Result<(usize, usize, usize)> {
        let (rs, hs) = (r.shape(), h.shape());
        if rs.len() != 4 || rs[3] != 2 || hs != [rs[0], rs[2], 2] || rs[0] != self.noise_var.len() {
            return Err(Error::shape("mmse_equalize", format!("received {:?}, estimate {:?}", rs, hs)));
        }
        Ok((rs[0], rs[1], rs[2]))
    }
}

impl Function for MmseEqualize {
    fn name(&self) -> &'static str {
        "mmse_equalize"
    }
    fn forward(&self, x: &[&Tensor]) -> Result<Tensor> {
        let (batch, ns, l) = self.dims(x[0], x[1])?;
        let mut out = Tensor::zeros(x[0].shape());
        for b in 0..batch {
            for k in 0..l {
                let w = mmse_weight(cget(x[1].data(), b * l + k), self.noise_var[b]);
                for j in 0..ns {
                    let idx = (b * ns + j) * l + k;
                    cset(out.data_mut(), idx, w * cget(x[0].data(), idx));
                }
            }
        }
        Ok(out)
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        // With d = |H|² + σ²:
        //   ∂L/∂R = H g / d
        //   ∂L/∂H = Σ_j [conj(g) R σ² − g H² conj(R)] / d²
        let (batch, ns, l) = self.dims(x[0], x[1]).expect("validated");
        let mut gr = needs[0].then(|| Tensor::zeros(x[0].shape()));
        let mut gh = needs[1].then(|| Tensor::zeros(x[1].shape()));
        for b in 0..batch {
            let s2 = self.noise_var[b];
            for k in 0..l {
                let h = cget(x[1].data(), b * l + k);
                let d = h.norm_sqr() + s2;
                if d <= 0.0 {
                    continue;
                }
                let mut acc = Complex64::new(0.0, 0.0);
                for j in 0..ns {
                    let idx = (b * ns + j) * l + k;
                    let gi = cget(g.data(), idx);
                    let r = cget(x[0].data(), idx);
                    if let Some(gr) = gr.as_mut() {
                        cset(gr.data_mut(), idx, h * gi / d);
                    }
                    acc += gi.conj() * r * s2 - gi * h * h * r.conj();
                }
                if let Some(gh) = gh.as_mut() {
                    cset(gh.data_mut(), b * l + k, acc / (d * d));
                }
            }
        }
        vec![gr, gh]
    }
}

impl Graph {
    pub fn mmse_estimate(&mut self, received_pilots: NodeId, pilots: ComplexGrid, noise_var: Vec<f64>) -> Result<NodeId> {
        self.record(MmseEstimate { pilots, noise_var }, &[received_pilots])
    }

    pub fn mmse_equalize(&mut self, received: NodeId, estimate: NodeId, noise_var: Vec<f64>) -> Result<NodeId> {
        self.record(MmseEqualize { noise_var }, &[received, estimate])
    }
}
