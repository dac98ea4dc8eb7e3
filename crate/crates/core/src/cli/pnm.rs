//! Binary PGM (`P5`) and PPM (`P6`) with maxval 255.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    /// 1 for `P5`, 3 for `P6`.
    pub channels: usize,
    /// Interleaved, row-major.
    pub samples: Vec<u8>,
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("PNM header: expected {what}")))
    }
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, samples: Vec<u8>) -> Result<Self> {
        if !matches!(channels, 1 | 3) {
            return Err(Error::InvalidArgument(format!(
                "images have 1 or 3 channels, not {channels}"
            )));
        }
        if samples.len() != width * height * channels {
            return Err(Error::InvalidArgument(format!(
                "{width}x{height}x{channels} image needs {} samples, got {}",
                width * height * channels,
                samples.len()
            )));
        }
        Ok(ImageBuffer {
            width,
            height,
            channels,
            samples,
        })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let channels = match bytes.get(..2) {
            Some(b"P5") => 1,
            Some(b"P6") => 3,
            _ => {
                let magic = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
                return Err(Error::Format(format!(
                    "unsupported image magic {magic:?} (only P5 and P6)"
                )));
            }
        };
        let mut h = Header { bytes, pos: 2 };
        let width = h.number("width")?;
        let height = h.number("height")?;
        let maxval = h.number("maxval")?;
        if maxval != 255 {
            return Err(Error::Format(format!("maxval {maxval} unsupported, expected 255")));
        }
        if !bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
            return Err(Error::Format("PNM header: missing whitespace after maxval".into()));
        }
        let data = &bytes[h.pos + 1..];
        let need = width * height * channels;
        if data.len() != need {
            return Err(Error::Format(format!(
                "expected {need} sample bytes, found {}",
                data.len()
            )));
        }
        ImageBuffer::new(width, height, channels, data.to_vec())
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.samples);
        out
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.encode())?)
    }

    /// `(1, C, H, W)` with samples divided by 255.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        let c = self.channels;
        Tensor::from_fn(Shape::new(1, c, self.height, self.width), |_, ch, y, x| {
            T::of(self.samples[(y * self.width + x) * c + ch] as f64 / 255.0)
        })
    }

    /// Inverse of [`to_tensor`](Self::to_tensor): `round(255·v)`, clamped.
    pub fn from_tensor<T: Element>(t: &Tensor<T>) -> Result<Self> {
        let s = t.shape();
        if s.n != 1 {
            return Err(Error::InvalidArgument(format!(
                "image tensors have batch 1, got {}",
                s.n
            )));
        }
        let mut samples = vec![0u8; s.c * s.h * s.w];
        for ch in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    let v = (t.at(0, ch, y, x).as_f64() * 255.0).round().clamp(0.0, 255.0);
                    samples[(y * s.w + x) * s.c + ch] = v as u8;
                }
            }
        }
        ImageBuffer::new(s.w, s.h, s.c, samples)
    }
}
