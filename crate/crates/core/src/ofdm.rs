//! OFDM transmitter and receiver blocks.
//!
//! The DFT is unitary (`1/√N` both ways) so that time-domain and
//! frequency-domain powers agree and one noise variance serves both.
//! Every block exists twice: as a plain function on complex slices and as a
//! batched graph operation whose first axis indexes independent packets.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{cget, cset, Function, Graph, NodeId, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct OfdmConfig {
    pub fft_size: usize,
    pub cp_len: usize,
    pub pilot_symbols: usize,
    pub data_symbols: usize,
    /// Clipping ratio ρ; `f64::INFINITY` disables clipping.
    pub clip_ratio: f64,
    /// Reference power `P_s` the packet is normalized to before clipping.
    pub signal_power: f64,
}

impl Default for OfdmConfig {
    fn default() -> Self {
        OfdmConfig {
            fft_size: 64,
            cp_len: 16,
            pilot_symbols: 2,
            data_symbols: 6,
            clip_ratio: f64::INFINITY,
            signal_power: 1.0,
        }
    }
}

impl OfdmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fft_size == 0 || self.pilot_symbols == 0 || self.data_symbols == 0 {
            return Err(Error::InvalidArgument(
                "fft_size, pilot_symbols and data_symbols must be at least 1".into(),
            ));
        }
        if self.cp_len > self.fft_size {
            return Err(Error::InvalidArgument(format!(
                "cyclic prefix {} longer than symbol {}",
                self.cp_len, self.fft_size
            )));
        }
        if !(self.clip_ratio > 0.0) {
            return Err(Error::InvalidArgument(format!("clip ratio must be > 0, got {}", self.clip_ratio)));
        }
        if !(self.signal_power > 0.0 && self.signal_power.is_finite()) {
            return Err(Error::InvalidArgument("signal power must be positive".into()));
        }
        Ok(())
    }

    /// Checks that a channel with `taps` taps stays inside the cyclic prefix.
    pub fn validate_taps(&self, taps: usize) -> Result<()> {
        if taps == 0 || taps > self.cp_len + 1 {
            return Err(Error::InvalidArgument(format!(
                "{} channel taps need a cyclic prefix of at least {}, have {}",
                taps,
                taps.saturating_sub(1),
                self.cp_len
            )));
        }
        Ok(())
    }

    pub fn symbols(&self) -> usize {
        self.pilot_symbols + self.data_symbols
    }

    pub fn symbol_len(&self) -> usize {
        self.fft_size + self.cp_len
    }

    /// Complex channel uses per packet, `(N_p + N_s)(L_fft + L_cp)`.
    pub fn packet_len(&self) -> usize {
        self.symbols() * self.symbol_len()
    }

    /// Amplitude limit `ρ√P_s`.
    pub fn clip_threshold(&self) -> f64 {
        self.clip_ratio * self.signal_power.sqrt()
    }

    /// Channel uses per pixel for an `height × width × channels` image.
    pub fn cpp(&self, height: usize, width: usize, channels: usize) -> f64 {
        self.packet_len() as f64 / (height * width * channels) as f64
    }
}

/// Rows are OFDM symbols, columns subcarriers (or time samples).
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGrid {
    rows: usize,
    cols: usize,
    values: Vec<Complex64>,
}

impl ComplexGrid {
    pub fn new(rows: usize, cols: usize, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::shape(
                "complex_grid",
                format!("{}x{} needs {} values, got {}", rows, cols, rows * cols, values.len()),
            ));
        }
        Ok(ComplexGrid { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        ComplexGrid {
            rows,
            cols,
            values: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.values[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[Complex64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    /// `[rows, cols, 2]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_complex(&[self.rows, self.cols], &self.values).expect("grid shape")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.rank() != 3 {
            return Err(Error::shape("complex_grid", format!("expected [rows, cols, 2], got {:?}", t.shape())));
        }
        ComplexGrid::new(t.shape()[0], t.shape()[1], t.to_complex()?)
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        ComplexGrid {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|&z| f(z)).collect(),
        }
    }
}

/// Time-domain packet samples.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSignal {
    pub samples: Vec<Complex64>,
}

impl TimeSignal {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean_power(&self) -> f64 {
        mean_power(&self.samples)
    }

    pub fn peak_amplitude(&self) -> f64 {
        self.samples.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

pub fn mean_power(x: &[Complex64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>() / x.len() as f64
}

/// Unitary DFT of length `n` with a precomputed twiddle table.
#[derive(Clone, Debug)]
pub struct DftPlan {
    n: usize,
    twiddles: Vec<Complex64>,
    norm: f64,
}

impl DftPlan {
    pub fn new(n: usize) -> Self {
        let twiddles = (0..n)
            .map(|m| Complex64::from_polar(1.0, -2.0 * PI * m as f64 / n as f64))
            .collect();
        DftPlan {
            n,
            twiddles,
            norm: 1.0 / (n as f64).sqrt(),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Forward (`inverse == false`) or inverse transform of `x` into `out`.
    pub fn apply(&self, x: &[Complex64], out: &mut [Complex64], inverse: bool) {
        let n = self.n;
        for (k, o) in out.iter_mut().enumerate().take(n) {
            let mut acc = Complex64::new(0.0, 0.0);
            let mut m = 0;
            for &v in &x[..n] {
                let w = self.twiddles[m];
                acc += v * if inverse { w.conj() } else { w };
                m += k;
                if m >= n {
                    m -= n;
                }
            }
            *o = acc * self.norm;
        }
    }
}

pub fn dft(x: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); x.len()];
    DftPlan::new(x.len()).apply(x, &mut out, false);
    out
}

pub fn idft(x: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); x.len()];
    DftPlan::new(x.len()).apply(x, &mut out, true);
    out
}

/// Prepends the last `cp_len` samples.
pub fn add_cp(x: &[Complex64], cp_len: usize) -> Result<Vec<Complex64>> {
    if cp_len > x.len() {
        return Err(Error::InvalidArgument(format!(
            "cyclic prefix {} longer than symbol {}",
            cp_len,
            x.len()
        )));
    }
    let mut out = Vec::with_capacity(x.len() + cp_len);
    out.extend_from_slice(&x[x.len() - cp_len..]);
    out.extend_from_slice(x);
    Ok(out)
}

pub fn remove_cp(x: &[Complex64], cp_len: usize) -> Result<Vec<Complex64>> {
    if cp_len > x.len() {
        return Err(Error::InvalidArgument(format!(
            "cyclic prefix {} longer than symbol {}",
            cp_len,
            x.len()
        )));
    }
    Ok(x[cp_len..].to_vec())
}

/// Block-type QPSK pilots: one random row of `(±1 ± j)/√2` repeated on
/// every pilot symbol.
///
/// Row generation: `ChaCha8Rng::seed_from_u64(seed)`, one `next_u32()` per
/// subcarrier; bit 0 set negates the real part, bit 1 the imaginary part.
pub fn make_pilots(seed: u64, pilot_symbols: usize, fft_size: usize) -> ComplexGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let row: Vec<Complex64> = (0..fft_size)
        .map(|_| {
            let bits = rng.next_u32();
            let re = if bits & 1 == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
            let im = if bits & 2 == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
            Complex64::new(re, im)
        })
        .collect();
    let values = row.iter().copied().cycle().take(pilot_symbols * fft_size).collect();
    ComplexGrid::new(pilot_symbols, fft_size, values).expect("pilot grid shape")
}

/// Scales `y` to mean power `target`; returns the scaled signal and the gain.
pub fn normalize_power(y: &[Complex64], target: f64) -> Result<(Vec<Complex64>, f64)> {
    let p = mean_power(y);
    if !(p > 0.0) {
        return Err(Error::ZeroSignal);
    }
    let gain = (target / p).sqrt();
    Ok((y.iter().map(|z| z * gain).collect(), gain))
}

/// Projects one sample onto the disc of radius `threshold`, keeping its phase.
#[inline]
pub fn clip_sample(z: Complex64, threshold: f64) -> Complex64 {
    let a = z.norm();
    if a <= threshold {
        return z;
    }
    let mut out = z * (threshold / a);
    // Rounding can leave |out| an ulp or two above the threshold.
    while out.norm() > threshold {
        out *= 1.0 - f64::EPSILON;
    }
    out
}

/// Amplitude clipping at `ρ√P_s`.
pub fn clip(y: &[Complex64], clip_ratio: f64, signal_power: f64) -> Vec<Complex64> {
    let t = clip_ratio * signal_power.sqrt();
    y.iter().map(|&z| clip_sample(z, t)).collect()
}

pub fn papr_db(y: &[Complex64]) -> Result<f64> {
    let mean = mean_power(y);
    if !(mean > 0.0) {
        return Err(Error::ZeroSignal);
    }
    let peak = y.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
    Ok(10.0 * (peak / mean).log10())
}

/// Intermediate transmitter signals, kept for diagnostics.
#[derive(Clone, Debug)]
pub struct TxStages {
    /// Serialized symbols with cyclic prefix, before power normalization.
    pub raw: Vec<Complex64>,
    pub normalized: Vec<Complex64>,
    pub clipped: TimeSignal,
    pub gain: f64,
}

pub fn transmit(pilots: &ComplexGrid, data: &ComplexGrid, config: &OfdmConfig) -> Result<TxStages> {
    config.validate()?;
    for (grid, rows, what) in [(pilots, config.pilot_symbols, "pilot"), (data, config.data_symbols, "data")] {
        if grid.rows() != rows || grid.cols() != config.fft_size {
            return Err(Error::shape(
                "assemble_packet",
                format!(
                    "{} grid is {}x{}, expected {}x{}",
                    what,
                    grid.rows(),
                    grid.cols(),
                    rows,
                    config.fft_size
                ),
            ));
        }
    }
    let plan = DftPlan::new(config.fft_size);
    let mut time = vec![Complex64::new(0.0, 0.0); config.fft_size];
    let mut raw = Vec::with_capacity(config.packet_len());
    for grid in [pilots, data] {
        for r in 0..grid.rows() {
            plan.apply(grid.row(r), &mut time, true);
            raw.extend(add_cp(&time, config.cp_len)?);
        }
    }
    let (normalized, gain) = normalize_power(&raw, config.signal_power)?;
    let clipped = TimeSignal {
        samples: clip(&normalized, config.clip_ratio, config.signal_power),
    };
    Ok(TxStages {
        raw,
        normalized,
        clipped,
        gain,
    })
}

/// IDFT + CP per symbol, pilots first, then power normalization and clipping.
pub fn assemble_packet(pilots: &ComplexGrid, data: &ComplexGrid, config: &OfdmConfig) -> Result<TimeSignal> {
    Ok(transmit(pilots, data, config)?.clipped)
}

/// CP removal + DFT per symbol; returns `(pilots, data)` grids.
pub fn disassemble_packet(rx: &[Complex64], config: &OfdmConfig) -> Result<(ComplexGrid, ComplexGrid)> {
    config.validate()?;
    if rx.len() != config.packet_len() {
        return Err(Error::shape(
            "disassemble_packet",
            format!("received {} samples, packet is {}", rx.len(), config.packet_len()),
        ));
    }
    let plan = DftPlan::new(config.fft_size);
    let mut freq = vec![Complex64::new(0.0, 0.0); config.symbols() * config.fft_size];
    for (sym, out) in rx
        .chunks_exact(config.symbol_len())
        .zip(freq.chunks_exact_mut(config.fft_size))
    {
        plan.apply(&sym[config.cp_len..], out, false);
    }
    let data = freq.split_off(config.pilot_symbols * config.fft_size);
    Ok((
        ComplexGrid::new(config.pilot_symbols, config.fft_size, freq)?,
        ComplexGrid::new(config.data_symbols, config.fft_size, data)?,
    ))
}

fn complex_axis(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    let s = t.shape();
    if s.len() < 2 || s[s.len() - 1] != 2 {
        return Err(Error::shape(op, format!("expected [..., n, 2], got {:?}", s)));
    }
    let n = s[s.len() - 2];
    Ok((t.len() / (2 * n.max(1)), n))
}

/// Unitary DFT along the second-to-last axis of a `[..., n, 2]` tensor.
pub struct Dft {
    pub inverse: bool,
}

impl Dft {
    fn run(&self, t: &Tensor, inverse: bool) -> Result<Tensor> {
        let (rows, n) = complex_axis("dft", t)?;
        let plan = DftPlan::new(n);
        let src = t.to_complex()?;
        let mut dst = vec![Complex64::new(0.0, 0.0); src.len()];
        for r in 0..rows {
            plan.apply(&src[r * n..(r + 1) * n], &mut dst[r * n..(r + 1) * n], inverse);
        }
        let outer = &t.shape()[..t.rank() - 1];
        Tensor::from_complex(outer, &dst)
    }
}

impl Function for Dft {
    fn name(&self) -> &'static str {
        if self.inverse {
            "idft"
        } else {
            "dft"
        }
    }
    fn forward(&self, x: &[&Tensor]) -> Result<Tensor> {
        self.run(x[0], self.inverse)
    }
    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        // Unitary: the adjoint is the opposite transform.
        vec![Some(self.run(g, !self.inverse).expect("validated in forward"))]
    }
}

pub struct AddCp(pub usize);

impl Function for AddCp {
    fn name(&self) -> &'static str {
        "add_cp"
    }
    fn forward(&self, x: &[&Tensor]) -> Result<Tensor> {
        let (rows, n) = complex_axis("add_cp", x[0])?;
        if self.0 > n {
            return Err(Error::InvalidArgument(format!("cyclic prefix {} longer than symbol {}", self.0, n)));
        }
        let mut shape = x[0].shape().to_vec();
        let r = shape.len();
        shape[r - 2] = n + self.0;
        let mut out = Tensor::zeros(&shape);
        let src = x[0].data();
        let dst = out.data_mut();
        for row in 0..rows {
            let s = &src[2 * row * n..2 * (row + 1) * n];
            let d = &mut dst[2 * row * (n + self.0)..2 * (row + 1) * (n + self.0)];
            d[..2 * self.0].copy_from_slice(&s[2 * (n - self.0)..]);
            d[2 * self.0..].copy_from_slice(s);
        }
        Ok(out)
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let (rows, n) = complex_axis("add_cp", x[0]).expect("validated");
        let cp = self.0;
        let mut gx = Tensor::zeros(x[0].shape());
        for row in 0..rows {
            let gs = &g.data()[2 * row * (n + cp)..2 * (row + 1) * (n + cp)];
            let d = &mut gx.data_mut()[2 * row * n..2 * (row + 1) * n];
            d.copy_from_slice(&gs[2 * cp..]);
            for (acc, v) in d[2 * (n - cp)..].iter_mut().zip(&gs[..2 * cp]) {
                *acc += v;
            }
        }
        vec![Some(gx)]
    }
}

pub struct RemoveCp(pub usize);

impl Function for RemoveCp {
    fn name(&self) -> &'static str {
        "remove_cp"
    }
    fn forward(&self, x: &[&Tensor]) -> Result<Tensor> {
        let (rows, n) = complex_axis("remove_cp", x[0])?;
        if self.0 > n {
            return Err(Error::InvalidArgument(format!("cyclic prefix {} longer than symbol {}", self.0, n)));
        }
        let mut shape = x[0].shape().to_vec();
        let r = shape.len();
        shape[r - 2] = n - self.0;
        let mut data = Vec::with_capacity(2 * rows * (n - self.0));
        for row in 0..rows {
            data.extend_from_slice(&x[0].data()[2 * (row * n + self.0)..2 * (row + 1) * n]);
        }
        Tensor::new(shape, data)
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let (rows, n) = complex_axis("remove_cp", x[0]).expect("validated");
        let keep = n - self.0;
        let mut gx = Tensor::zeros(x[0].shape());
        for row in 0..rows {
            gx.data_mut()[2 * (row * n + self.0)..2 * (row + 1) * n]
                .copy_from_slice(&g.data()[2 * row * keep..2 * (row + 1) * keep]);
        }
        vec![Some(gx)]
    }
}

/// Scales each packet (slice of the first axis) to mean power `target`.
pub struct NormalizePower {
    pub target: f64,
}

impl Function for NormalizePower {
    fn name(&self) -> &'static str {
        "normalize_power"
    }
    fn forward(&self, x: &[&Tensor]) -> Result<Tensor> {
        let t = x[0];
        if t.rank() < 2 || t.shape()[t.rank() - 1] != 2 {
            return Err(Error::shape("normalize_power", format!("expected [batch, ..., 2], got {:?}", t.shape())));
        }
        let per = t.len() / t.shape()[0];
        let mut out = t.clone();
        for packet in out.data_mut().chunks_exact_mut(per) {
            let p = packet.iter().map(|v| v * v).sum::<f64>() / (per / 2) as f64;
            if !(p > 0.0) {
                return Err(Error::ZeroSignal);
            }
            let gain = (self.target / p).sqrt();
            packet.iter_mut().for_each(|v| *v *= gain);
        }
        Ok(out)
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        // y = s(x)·x with s = √(P / m), m = Σ|x|² / T:
        // ∂L/∂x = s·g − x · s/(m T) · ⟨x, g⟩.
        let per = x[0].len() / x[0].shape()[0];
        let samples = (per / 2) as f64;
        let mut gx = Tensor::zeros(x[0].shape());
        for ((xp, gp), out) in x[0]
            .data()
            .chunks_exact(per)
            .zip(g.data().chunks_exact(per))
            .zip(gx.data_mut().chunks_exact_mut(per))
        {
            let m = xp.iter().map(|v| v * v).sum::<f64>() / samples;
            let s = (self.target / m).sqrt();
            let dot: f64 = xp.iter().zip(gp).map(|(a, b)| a * b).sum();
            let c = s * dot / (m * samples);
            for ((o, &xv), &gv) in out.iter_mut().zip(xp).zip(gp) {
                *o = s * gv - c * xv;
            }
        }
        vec![Some(gx)]
    }
}

/// Per-sample amplitude clipping of a `[..., 2]` tensor.
///
/// Outside the disc the vector-Jacobian product uses the exact Jacobian of
/// `a ↦ t·a/|a|`, i.e. `(t/|a|)(I − a aᵀ/|a|²)`; on or inside the disc it is
/// the identity.
pub struct Clip {
    pub threshold: f64,
    /// Corrupts the backward pass; used to verify the gradient harness.
    #[doc(hidden)]
    pub faulty_backward: bool,
}

impl Clip {
    pub fn new(threshold: f64) -> Self {
        Clip {
            threshold,
            faulty_backward: false,
        }
    }
}

impl Function for Clip {
    fn name(&self) -> &'static str {
        "clip"
    }
    fn forward(&self, x: &[&Tensor]) -> Result<Tensor> {
        if x[0].shape().last() != Some(&2) {
            return Err(Error::shape("clip", "trailing axis must be 2"));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::InvalidArgument("clip threshold must be > 0".into()));
        }
        let mut out = x[0].clone();
        for i in 0..out.len() / 2 {
            let z = cget(out.data(), i);
            cset(out.data_mut(), i, clip_sample(z, self.threshold));
        }
        Ok(out)
    }
    fn backward(&self, x: &[&Tensor], _: &Tensor, g: &Tensor, _: &[bool]) -> Vec<Option<Tensor>> {
        let mut gx = g.clone();
        for i in 0..x[0].len() / 2 {
            let a = cget(x[0].data(), i);
            let r = a.norm();
            if r <= self.threshold {
                continue;
            }
            let gi = cget(g.data(), i);
            let along = (a.re * gi.re + a.im * gi.im) / (r * r);
            let mut v = (gi - a * along) * (self.threshold / r);
            if self.faulty_backward {
                v *= 1.01;
            }
            cset(gx.data_mut(), i, v);
        }
        vec![Some(gx)]
    }
}

impl Graph {
    pub fn dft(&mut self, x: NodeId) -> Result<NodeId> {
        self.record(Dft { inverse: false }, &[x])
    }

    pub fn idft(&mut self, x: NodeId) -> Result<NodeId> {
        self.record(Dft { inverse: true }, &[x])
    }

    pub fn add_cp(&mut self, x: NodeId, cp_len: usize) -> Result<NodeId> {
        self.record(AddCp(cp_len), &[x])
    }

    pub fn remove_cp(&mut self, x: NodeId, cp_len: usize) -> Result<NodeId> {
        self.record(RemoveCp(cp_len), &[x])
    }

    pub fn normalize_power(&mut self, x: NodeId, target: f64) -> Result<NodeId> {
        self.record(NormalizePower { target }, &[x])
    }

    /// Clipping at `threshold`; an infinite threshold records nothing.
    pub fn clip(&mut self, x: NodeId, threshold: f64) -> Result<NodeId> {
        if threshold.is_infinite() {
            return Ok(x);
        }
        self.record(Clip::new(threshold), &[x])
    }
}

/// Graph-level transmitter: `pilots` is `[B, N_p, L_fft, 2]`, `data` is
/// `[B, N_s, L_fft, 2]`; returns the `[B, packet_len, 2]` clipped signal.
pub fn transmit_graph(g: &mut Graph, pilots: NodeId, data: NodeId, config: &OfdmConfig) -> Result<NodeId> {
    let grid = g.concat(&[pilots, data], 1)?;
    let batch = g.value(grid).shape()[0];
    let time = g.idft(grid)?;
    let with_cp = g.add_cp(time, config.cp_len)?;
    let serial = g.reshape(with_cp, &[batch, config.packet_len(), 2])?;
    let normalized = g.normalize_power(serial, config.signal_power)?;
    g.clip(normalized, config.clip_threshold())
}

/// Graph-level receiver: `[B, packet_len, 2]` → (`[B, N_p, L_fft, 2]`, `[B, N_s, L_fft, 2]`).
pub fn receive_graph(g: &mut Graph, rx: NodeId, config: &OfdmConfig) -> Result<(NodeId, NodeId)> {
    let batch = g.value(rx).shape()[0];
    let symbols = g.reshape(rx, &[batch, config.symbols(), config.symbol_len(), 2])?;
    let stripped = g.remove_cp(symbols, config.cp_len)?;
    let freq = g.dft(stripped)?;
    let pilots = g.slice(freq, 1, 0, config.pilot_symbols)?;
    let data = g.slice(freq, 1, config.pilot_symbols, config.data_symbols)?;
    Ok((pilots, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn max_err(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn dft_of_delta_and_constant() {
        let d = dft(&[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        assert!(max_err(&d, &[c(0.5, 0.0); 4]) < 1e-15);
        let k = dft(&[c(1.0, 0.0); 4]);
        assert!(max_err(&k, &[c(2.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]) < 1e-15);
        let back = idft(&[c(2.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        assert!(max_err(&back, &[c(1.0, 0.0); 4]) < 1e-15);
    }

    #[test]
    fn cyclic_prefix() {
        let x: Vec<Complex64> = (0..4).map(|i| c(i as f64, 0.0)).collect();
        let y = add_cp(&x, 2).unwrap();
        assert_eq!(y, vec![x[2], x[3], x[0], x[1], x[2], x[3]]);
        assert_eq!(remove_cp(&y, 2).unwrap(), x);
        assert_eq!(add_cp(&x, 0).unwrap(), x);
        assert!(add_cp(&x, 5).is_err());
    }

    #[test]
    fn pilots_are_unit_modulus_and_block_type() {
        let p = make_pilots(3, 2, 16);
        assert!(p.values().iter().all(|z| (z.norm() - 1.0).abs() < 1e-15));
        assert_eq!(p.row(0), p.row(1));
        assert_eq!(p, make_pilots(3, 2, 16));
        assert_ne!(p, make_pilots(4, 2, 16));
    }

    #[test]
    fn normalize_power_examples() {
        let (y, gain) = normalize_power(&[c(2.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)], 1.0).unwrap();
        assert_eq!(gain, 1.0);
        assert_eq!(y[0], c(2.0, 0.0));
        assert!(matches!(normalize_power(&[c(0.0, 0.0); 3], 1.0), Err(Error::ZeroSignal)));
    }

    #[test]
    fn clip_examples() {
        let z = Complex64::from_polar(2.0, PI / 4.0);
        let y = clip(&[z], 1.0, 1.0)[0];
        assert!((y - Complex64::from_polar(1.0, PI / 4.0)).norm() < 1e-15);
        let small = Complex64::from_polar(0.5, 1.1);
        assert_eq!(clip(&[small], 1.0, 1.0)[0], small);
        let big = c(1e3, -7.0);
        assert_eq!(clip(&[big], f64::INFINITY, 1.0)[0], big);
    }

    #[test]
    fn papr_examples() {
        assert!(papr_db(&[c(0.0, 1.0), c(1.0, 0.0), c(-1.0, 0.0)]).unwrap().abs() < 1e-12);
        let p = papr_db(&[c(2.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]).unwrap();
        assert!((p - 10.0 * 4f64.log10()).abs() < 1e-12);
        assert!((p - 6.02).abs() < 0.01);
        assert!(papr_db(&[c(0.0, 0.0)]).is_err());
    }

    #[test]
    fn packet_length_and_cpp() {
        let config = OfdmConfig::default();
        let pilots = make_pilots(1, 2, 64);
        let data = ComplexGrid::new(6, 64, (0..384).map(|i| c((i as f64).sin(), 0.3)).collect()).unwrap();
        let y = assemble_packet(&pilots, &data, &config).unwrap();
        assert_eq!(y.len(), 640);
        assert_eq!(config.cpp(32, 32, 3), 640.0 / 3072.0);
    }

    #[test]
    fn assemble_rejects_wrong_grid() {
        let config = OfdmConfig::default();
        let pilots = make_pilots(1, 2, 64);
        let data = ComplexGrid::zeros(5, 64);
        assert!(matches!(
            assemble_packet(&pilots, &data, &config),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(disassemble_packet(&[c(0.0, 0.0); 10], &config).is_err());
    }

    #[test]
    fn graph_transmit_matches_plain_transmit() {
        let config = OfdmConfig {
            fft_size: 8,
            cp_len: 2,
            pilot_symbols: 1,
            data_symbols: 2,
            clip_ratio: 1.3,
            signal_power: 1.0,
        };
        let pilots = make_pilots(9, 1, 8);
        let data = ComplexGrid::new(2, 8, (0..16).map(|i| c((i as f64 * 0.7).cos(), (i as f64).sin())).collect()).unwrap();
        let want = assemble_packet(&pilots, &data, &config).unwrap();

        let mut g = Graph::new();
        let p = g.constant(pilots.to_tensor().reshape(&[1, 1, 8, 2]).unwrap());
        let d = g.param(data.to_tensor().reshape(&[1, 2, 8, 2]).unwrap());
        let y = transmit_graph(&mut g, p, d, &config).unwrap();
        let got = g.value(y).to_complex().unwrap();
        assert!(max_err(&got, &want.samples) < 1e-14);

        let (rp, rd) = receive_graph(&mut g, y, &config).unwrap();
        let (pp, dd) = disassemble_packet(&want.samples, &config).unwrap();
        assert!(max_err(&g.value(rp).to_complex().unwrap(), pp.values()) < 1e-14);
        assert!(max_err(&g.value(rd).to_complex().unwrap(), dd.values()) < 1e-14);
    }
}
