//! Images, binary PGM/PPM I/O and the synthetic dataset generator.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::stream;

/// An `H × W × C` image with interleaved channels and values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if height * width * channels != pixels.len() || pixels.is_empty() {
            return Err(Error::shape(
                "image",
                format!("{}x{}x{} needs {} values, got {}", height, width, channels, height * width * channels, pixels.len()),
            ));
        }
        Ok(Image { height, width, channels, pixels })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(height, width, channels)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn in_unit_range(&self) -> bool {
        self.pixels.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Channel-first `[C, H, W]` copy of the pixels.
    pub fn to_chw(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; self.pixels.len()];
        for (i, v) in self.pixels.iter().enumerate() {
            out[(i % self.channels) * plane + i / self.channels] = *v;
        }
        out
    }

    pub fn from_chw(height: usize, width: usize, channels: usize, chw: &[f64]) -> Result<Self> {
        let plane = height * width;
        if chw.len() != plane * channels {
            return Err(Error::shape("image", "channel-first buffer length"));
        }
        let pixels = (0..chw.len()).map(|i| chw[(i % channels) * plane + i / channels]).collect();
        Image::new(height, width, channels, pixels)
    }
}

/// Stacks images into an NCHW tensor.
pub fn batch_tensor(images: &[&Image]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let (h, w, c) = first.dims();
    let mut data = Vec::with_capacity(images.len() * h * w * c);
    for img in images {
        if img.dims() != (h, w, c) {
            return Err(Error::shape("batch_tensor", "images differ in shape"));
        }
        data.extend(img.to_chw());
    }
    Tensor::new(vec![images.len(), c, h, w], data)
}

/// Splits an NCHW tensor back into images.
pub fn unbatch_tensor(t: &Tensor) -> Result<Vec<Image>> {
    let s = t.shape();
    if s.len() != 4 {
        return Err(Error::shape("unbatch_tensor", format!("{:?}", s)));
    }
    let per = s[1] * s[2] * s[3];
    t.data()
        .chunks_exact(per)
        .map(|chunk| Image::from_chw(s[2], s[3], s[1], chunk))
        .collect()
}

fn image_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Reads the next whitespace-delimited header token, skipping `#` comments.
fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    (*pos > start).then(|| &bytes[start..*pos])
}

/// Parses a binary PGM (`P5`, one channel) or PPM (`P6`, three channels)
/// with maxval 255.
pub fn decode_pnm(bytes: &[u8], path: &Path) -> Result<Image> {
    let mut pos = 0;
    let channels = match header_token(bytes, &mut pos) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(image_err(path, "expected P5 or P6 magic")),
    };
    let mut number = |what: &str| -> Result<usize> {
        header_token(bytes, &mut pos)
            .and_then(|t| std::str::from_utf8(t).ok())
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| image_err(path, format!("bad {}", what)))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval != 255 {
        return Err(image_err(path, format!("unsupported maxval {}", maxval)));
    }
    if width == 0 || height == 0 {
        return Err(image_err(path, "zero dimension"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(image_err(path, "missing separator before payload"));
    }
    let payload = &bytes[pos + 1..];
    let n = width * height * channels;
    if payload.len() < n {
        return Err(image_err(path, format!("truncated payload: {} of {} bytes", payload.len(), n)));
    }
    let pixels = payload[..n].iter().map(|&b| f64::from(b) / 255.0).collect();
    Image::new(height, width, channels, pixels)
}

pub fn encode_pnm(image: &Image) -> Result<Vec<u8>> {
    let magic = match image.channels {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::InvalidArgument(format!("cannot store {} channels as PGM/PPM", c))),
    };
    let mut out = format!("{}\n{} {}\n255\n", magic, image.width, image.height).into_bytes();
    out.extend(image.pixels.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    Ok(out)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    decode_pnm(&fs::read(path)?, path)
}

pub fn save_image(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_pnm(image)?)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn stream_id(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<Image>,
    pub split: Split,
}

impl Dataset {
    pub fn new(images: Vec<Image>, split: Split) -> Result<Self> {
        let first = images.first().ok_or_else(|| Error::InvalidArgument("dataset is empty".into()))?;
        let dims = first.dims();
        if images.iter().any(|im| im.dims() != dims) {
            return Err(Error::shape("dataset", "images differ in shape"));
        }
        if images.iter().any(|im| !im.in_unit_range()) {
            return Err(Error::InvalidArgument("pixel outside [0, 1]".into()));
        }
        Ok(Dataset { images, split })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.images[0].dims()
    }
}

/// Deterministic synthetic images built from a ChaCha8 stream.
///
/// Each image is, per channel: a linear color ramp between two uniform
/// colors along a random direction, then 1 to 3 axis-aligned rectangles of
/// uniform color alpha-blended on top, then band-limited noise (three random
/// low-frequency sinusoids of amplitude ≤ 0.04), clamped to `[0, 1]`.
/// Image `i` of split `s` uses stream `2i + s` of `seed`, so the train and
/// test splits never share images.
pub fn synth_dataset(seed: u64, n: usize, height: usize, width: usize, channels: usize, split: Split) -> Result<Dataset> {
    if n == 0 || height == 0 || width == 0 || channels == 0 {
        return Err(Error::InvalidArgument("synthetic dataset needs n, H, W, C ≥ 1".into()));
    }
    let images = (0..n)
        .map(|i| synth_image(seed, 2 * i as u64 + split.stream_id(), height, width, channels))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(images, split)
}

fn synth_image(seed: u64, stream_id: u64, h: usize, w: usize, c: usize) -> Result<Image> {
    let mut rng = stream(seed, stream_id);
    let mut px = vec![0.0; h * w * c];

    let angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let c0: Vec<f64> = (0..c).map(|_| rng.gen::<f64>()).collect();
    let c1: Vec<f64> = (0..c).map(|_| rng.gen::<f64>()).collect();
    for y in 0..h {
        for x in 0..w {
            let u = (x as f64 + 0.5) / w as f64 - 0.5;
            let v = (y as f64 + 0.5) / h as f64 - 0.5;
            let t = (0.5 + (u * dx + v * dy) / std::f64::consts::SQRT_2).clamp(0.0, 1.0);
            for ch in 0..c {
                px[(y * w + x) * c + ch] = c0[ch] + (c1[ch] - c0[ch]) * t;
            }
        }
    }

    let rects = rng.gen_range(1..=3);
    for _ in 0..rects {
        let (x0, x1) = ordered(rng.gen_range(0..w), rng.gen_range(0..w));
        let (y0, y1) = ordered(rng.gen_range(0..h), rng.gen_range(0..h));
        let alpha = rng.gen_range(0.5..1.0);
        let color: Vec<f64> = (0..c).map(|_| rng.gen::<f64>()).collect();
        for y in y0..=y1 {
            for x in x0..=x1 {
                for ch in 0..c {
                    let p = &mut px[(y * w + x) * c + ch];
                    *p = (1.0 - alpha) * *p + alpha * color[ch];
                }
            }
        }
    }

    for _ in 0..3 {
        let fx = rng.gen_range(0..3) as f64;
        let fy = rng.gen_range(0..3) as f64;
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let amp = rng.gen_range(0.0..0.04);
        let ch = rng.gen_range(0..c);
        for y in 0..h {
            for x in 0..w {
                let arg = std::f64::consts::TAU * (fx * x as f64 / w as f64 + fy * y as f64 / h as f64) + phase;
                px[(y * w + x) * c + ch] += amp * arg.sin();
            }
        }
    }

    for p in px.iter_mut() {
        *p = p.clamp(0.0, 1.0);
    }
    Image::new(h, w, c, px)
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_example() {
        let bytes = b"P5\n2 2\n255\n\x00\xff\x80\x40";
        let img = decode_pnm(bytes, Path::new("x.pgm")).unwrap();
        assert_eq!(img.dims(), (2, 2, 1));
        assert_eq!(img.pixels(), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
        assert_eq!(encode_pnm(&img).unwrap(), bytes.to_vec());
    }

    #[test]
    fn header_comments_are_skipped() {
        let bytes = b"P6 # rgb\n1 1 # size\n255\n\x01\x02\x03";
        let img = decode_pnm(bytes, Path::new("x.ppm")).unwrap();
        assert_eq!(img.dims(), (1, 1, 3));
    }

    #[test]
    fn malformed_inputs() {
        let p = Path::new("bad");
        assert!(decode_pnm(b"P3\n1 1\n255\n1", p).is_err());
        assert!(decode_pnm(b"P5\n2 2\n65535\n\0\0\0\0\0\0\0\0", p).is_err());
        assert!(decode_pnm(b"P5\n2 2\n255\n\0\0\0", p).is_err());
        assert!(decode_pnm(b"P5\n2", p).is_err());
    }

    #[test]
    fn chw_round_trip() {
        let img = Image::new(2, 3, 3, (0..18).map(|i| i as f64 / 17.0).collect()).unwrap();
        let back = Image::from_chw(2, 3, 3, &img.to_chw()).unwrap();
        assert_eq!(back, img);
        let t = batch_tensor(&[&img, &img]).unwrap();
        assert_eq!(t.shape(), &[2, 3, 2, 3]);
        assert_eq!(unbatch_tensor(&t).unwrap(), vec![img.clone(), img]);
    }

    #[test]
    fn synth_is_deterministic_and_in_range() {
        let a = synth_dataset(3, 4, 16, 16, 3, Split::Train).unwrap();
        let b = synth_dataset(3, 4, 16, 16, 3, Split::Train).unwrap();
        let t = synth_dataset(3, 4, 16, 16, 3, Split::Test).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.images, t.images);
        assert!(a.images.iter().all(Image::in_unit_range));
    }
}
