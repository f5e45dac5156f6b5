//! Binary checkpoint files.
//!
//! Layout: the 5-byte magic `JSCC1`, a `u32` format version, then sections.
//! Each section is a 4-byte ASCII tag, a `u64` payload length and the
//! payload. Integers are little-endian `u64` unless noted, reals are
//! little-endian IEEE-754 `f64`.
//!
//! | tag    | payload |
//! |--------|---------|
//! | `ARCH` | architecture as `key=value` lines (UTF-8) |
//! | `PARM` | count, then per tensor: name length, name, rank, dims, values |
//! | `BNRS` | layer count, then per layer: channels, means, variances |
//! | `OPTM` | β₁, β₂, ε, step, then first and second moments per tensor |
//! | `CONF` | resolved training config (UTF-8), informational |
//! | `RNGS` | 32-byte ChaCha seed, stream, `u128` word position |
//!
//! `OPTM`, `CONF` and `RNGS` are optional.

use std::fs;
use std::path::Path;

use rand::SeedableRng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{Adam, AdamConfig, Architecture, ModelParams};
use crate::rng::SimRng;

pub const MAGIC: &[u8; 5] = b"JSCC1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub optimizer: Option<Adam>,
    pub config_text: String,
    pub rng: Option<SimRng>,
}

impl Checkpoint {
    /// Fails with a shape mismatch unless the stored parameters fit `arch`.
    pub fn expect_architecture(&self, arch: &Architecture) -> Result<()> {
        let expected = arch.param_specs();
        let ok = expected.len() == self.params.tensors.len()
            && expected
                .iter()
                .zip(self.params.names().iter().zip(&self.params.tensors))
                .all(|(s, (n, t))| &s.name == n && s.shape == t.shape());
        if ok {
            Ok(())
        } else {
            Err(Error::shape(
                "checkpoint",
                format!("stored architecture\n{}does not match\n{}", self.params.arch.to_text(), arch.to_text()),
            ))
        }
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.f64(*x);
        }
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }
}

fn section(out: &mut Vec<u8>, tag: &[u8; 4], body: impl FnOnce(&mut Writer)) {
    let mut w = Writer(Vec::new());
    body(&mut w);
    out.extend_from_slice(tag);
    out.extend_from_slice(&(w.0.len() as u64).to_le_bytes());
    out.extend_from_slice(&w.0);
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&VERSION.to_le_bytes());
    let p = &ck.params;
    section(&mut out, b"ARCH", |w| w.0.extend_from_slice(p.arch.to_text().as_bytes()));
    section(&mut out, b"PARM", |w| {
        w.u64(p.tensors.len() as u64);
        for (name, t) in p.names().iter().zip(&p.tensors) {
            w.bytes(name.as_bytes());
            w.u64(t.rank() as u64);
            for &d in t.shape() {
                w.u64(d as u64);
            }
            w.f64s(t.data());
        }
    });
    section(&mut out, b"BNRS", |w| {
        w.u64(p.bn_running.len() as u64);
        for (m, v) in &p.bn_running {
            w.u64(m.len() as u64);
            w.f64s(m);
            w.f64s(v);
        }
    });
    if let Some(opt) = &ck.optimizer {
        section(&mut out, b"OPTM", |w| {
            w.f64(opt.config.beta1);
            w.f64(opt.config.beta2);
            w.f64(opt.config.eps);
            w.u64(opt.step);
            for t in opt.m.iter().chain(&opt.v) {
                w.f64s(t.data());
            }
        });
    }
    section(&mut out, b"CONF", |w| w.0.extend_from_slice(ck.config_text.as_bytes()));
    if let Some(rng) = &ck.rng {
        section(&mut out, b"RNGS", |w| {
            w.0.extend_from_slice(&rng.get_seed());
            w.u64(rng.get_stream());
            w.0.extend_from_slice(&rng.get_word_pos().to_le_bytes());
        });
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn corrupt(what: impl Into<String>) -> Error {
    Error::Checkpoint(what.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| corrupt("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&n| n <= self.buf.len())
            .ok_or_else(|| corrupt(format!("implausible length {}", v)))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if n > self.buf.len() / 8 {
            return Err(corrupt("truncated"));
        }
        (0..n).map(|_| self.f64()).collect()
    }
    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn text(bytes: &[u8], what: &str) -> Result<String> {
    String::from_utf8(bytes.to_vec()).map_err(|_| corrupt(format!("{} is not UTF-8", what)))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let mut r = Reader { buf: bytes, pos: MAGIC.len() };
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {}", version)));
    }
    let (mut arch, mut tensors, mut names, mut bn, mut optm, mut conf, mut rng) = (None, None, None, None, None, String::new(), None);
    while !r.done() {
        let tag: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        let n = r.len()?;
        let body = r.take(n)?;
        let mut s = Reader { buf: body, pos: 0 };
        match &tag {
            b"ARCH" => arch = Some(Architecture::from_text(&text(body, "architecture")?)?),
            b"PARM" => {
                let count = s.len()?;
                let (mut ns, mut ts) = (Vec::new(), Vec::new());
                for _ in 0..count {
                    let name_len = s.len()?;
                    ns.push(text(s.take(name_len)?, "parameter name")?);
                    let rank = s.len()?;
                    let shape = (0..rank).map(|_| s.len()).collect::<Result<Vec<_>>>()?;
                    let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| corrupt("shape overflow"))?;
                    ts.push(Tensor::new(shape, s.f64s(numel)?)?);
                }
                names = Some(ns);
                tensors = Some(ts);
            }
            b"BNRS" => {
                let layers = s.len()?;
                let mut stats = Vec::new();
                for _ in 0..layers {
                    let c = s.len()?;
                    stats.push((s.f64s(c)?, s.f64s(c)?));
                }
                bn = Some(stats);
            }
            b"OPTM" => {
                let config = AdamConfig {
                    beta1: s.f64()?,
                    beta2: s.f64()?,
                    eps: s.f64()?,
                };
                let step = s.u64()?;
                optm = Some((config, step, body[s.pos..].to_vec()));
                s.pos = body.len();
            }
            b"CONF" => conf = text(body, "config")?,
            b"RNGS" => {
                let seed: [u8; 32] = s.take(32)?.try_into().expect("32 bytes");
                let stream = s.u64()?;
                let word_pos = u128::from_le_bytes(s.take(16)?.try_into().expect("16 bytes"));
                let mut g = SimRng::from_seed(seed);
                g.set_stream(stream);
                g.set_word_pos(word_pos);
                rng = Some(g);
            }
            other => return Err(corrupt(format!("unknown section {:?}", String::from_utf8_lossy(other)))),
        }
        if !matches!(&tag, b"ARCH" | b"CONF") && !s.done() {
            return Err(corrupt(format!("trailing bytes in section {}", String::from_utf8_lossy(&tag))));
        }
    }
    let arch = arch.ok_or_else(|| corrupt("missing ARCH section"))?;
    let tensors = tensors.ok_or_else(|| corrupt("missing PARM section"))?;
    let names = names.expect("set with tensors");
    let expected: Vec<String> = arch.param_specs().into_iter().map(|s| s.name).collect();
    if names != expected {
        return Err(Error::shape("checkpoint", "parameter names do not match the stored architecture"));
    }
    let params = ModelParams::from_parts(arch, tensors, bn)?;
    let optimizer = match optm {
        None => None,
        Some((config, step, moments)) => {
            let mut r = Reader { buf: &moments, pos: 0 };
            let mut read_all = || -> Result<Vec<Tensor>> {
                params.tensors.iter().map(|p| Tensor::new(p.shape().to_vec(), r.f64s(p.len())?)).collect()
            };
            let m = read_all()?;
            let v = read_all()?;
            if !r.done() {
                return Err(corrupt("optimizer moments do not match parameters"));
            }
            Some(Adam { config, step, m, v })
        }
    };
    Ok(Checkpoint {
        params,
        optimizer,
        config_text: conf,
        rng,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(ck))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;
    use crate::rng::seeded;
    use rand::RngCore;

    fn small(width1: usize) -> Architecture {
        Architecture {
            variant: Variant::Explicit,
            height: 8,
            width: 8,
            channels: 1,
            fft_size: 8,
            cp_len: 2,
            pilot_symbols: 1,
            data_symbols: 1,
            width1,
            width2: 4,
            subnet_width: 2,
        }
    }

    fn sample() -> Checkpoint {
        let mut rng = seeded(5);
        let params = ModelParams::init(&small(2), &mut rng).unwrap();
        let mut optimizer = Adam::new(AdamConfig::default(), &params.tensors);
        optimizer.step = 3;
        optimizer.m[0].data_mut()[0] = 0.25;
        rng.next_u64();
        Checkpoint {
            params,
            optimizer: Some(optimizer),
            config_text: "seed=5\n".into(),
            rng: Some(rng),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let back = decode_checkpoint(&encode_checkpoint(&ck)).unwrap();
        assert_eq!(back, ck);
        let mut a = back.rng.unwrap();
        let mut b = ck.rng.unwrap();
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn corrupted_inputs_rejected() {
        let bytes = encode_checkpoint(&sample());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Checkpoint(_))));
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode_checkpoint(&bytes[..20]).is_err());
    }

    #[test]
    fn width_mismatch_detected() {
        let ck = sample();
        assert!(ck.expect_architecture(&small(2)).is_ok());
        assert!(matches!(ck.expect_architecture(&small(3)), Err(Error::ShapeMismatch { .. })));
    }
}
