//! Single-level orthonormal 2-D Haar transform.
//!
//! For each 2×2 block `[[a, b], [c, d]]` (`b` right of `a`, `c` below `a`):
//!
//! ```text
//! ll = (a + b + c + d) / 2
//! hl = (a - b + c - d) / 2    high-pass along the horizontal axis
//! lh = (a + b - c - d) / 2    high-pass along the vertical axis
//! hh = (a - b - c + d) / 2
//! ```
//!
//! The 4×4 block matrix is symmetric and orthogonal, so it is its own inverse
//! and the transform preserves energy exactly (up to rounding).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{check_same_shape, Element, Shape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct WaveletBands<T> {
    pub ll: Tensor<T>,
    pub hl: Tensor<T>,
    pub lh: Tensor<T>,
    pub hh: Tensor<T>,
}

impl<T: Element> WaveletBands<T> {
    pub fn shape(&self) -> Shape {
        self.ll.shape()
    }

    pub fn validate(&self) -> Result<Shape> {
        let s = self.ll.shape();
        for band in [&self.hl, &self.lh, &self.hh] {
            check_same_shape(s, band.shape())?;
        }
        Ok(s)
    }

    pub fn zeros(shape: Shape) -> Self {
        WaveletBands {
            ll: Tensor::zeros(shape),
            hl: Tensor::zeros(shape),
            lh: Tensor::zeros(shape),
            hh: Tensor::zeros(shape),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyReport {
    pub ll: f64,
    pub hl: f64,
    pub lh: f64,
    pub hh: f64,
    /// `sqrt(|hl|² + |lh|² + |hh|²)`.
    pub hf_total: f64,
}

pub fn haar_dwt2<T: Element>(x: &Tensor<T>) -> Result<WaveletBands<T>> {
    let s = x.shape();
    if !s.h.is_multiple_of(2) {
        return Err(Error::OddDimension { axis: "H", size: s.h });
    }
    if !s.w.is_multiple_of(2) {
        return Err(Error::OddDimension { axis: "W", size: s.w });
    }
    let bs = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    let half = T::of(0.5);
    let mut planes: Vec<[Vec<T>; 4]> = (0..s.n * s.c).map(|_| Default::default()).collect();
    planes.par_iter_mut().enumerate().for_each(|(idx, out)| {
        let p = x.plane(idx / s.c, idx % s.c);
        for o in out.iter_mut() {
            o.reserve_exact(bs.plane());
        }
        for i in 0..bs.h {
            let top = &p[2 * i * s.w..(2 * i + 1) * s.w];
            let bot = &p[(2 * i + 1) * s.w..(2 * i + 2) * s.w];
            for j in 0..bs.w {
                let (a, b, c, d) = (top[2 * j], top[2 * j + 1], bot[2 * j], bot[2 * j + 1]);
                out[0].push((a + b + c + d) * half);
                out[1].push((a - b + c - d) * half);
                out[2].push((a + b - c - d) * half);
                out[3].push((a - b - c + d) * half);
            }
        }
    });
    let mut bands: [Vec<T>; 4] = Default::default();
    for band in bands.iter_mut() {
        band.reserve_exact(bs.numel());
    }
    for plane in planes {
        for (band, p) in bands.iter_mut().zip(plane) {
            band.extend(p);
        }
    }
    let [ll, hl, lh, hh] = bands;
    Ok(WaveletBands {
        ll: Tensor::from_vec(bs, ll)?,
        hl: Tensor::from_vec(bs, hl)?,
        lh: Tensor::from_vec(bs, lh)?,
        hh: Tensor::from_vec(bs, hh)?,
    })
}

pub fn haar_idwt2<T: Element>(b: &WaveletBands<T>) -> Result<Tensor<T>> {
    let bs = b.validate()?;
    let s = Shape::new(bs.n, bs.c, 2 * bs.h, 2 * bs.w);
    let half = T::of(0.5);
    let mut out = Tensor::zeros(s);
    out.data_mut()
        .par_chunks_mut(s.plane())
        .enumerate()
        .for_each(|(idx, plane)| {
            let (n, c) = (idx / bs.c, idx % bs.c);
            let (ll, hl, lh, hh) = (b.ll.plane(n, c), b.hl.plane(n, c), b.lh.plane(n, c), b.hh.plane(n, c));
            for i in 0..bs.h {
                for j in 0..bs.w {
                    let k = i * bs.w + j;
                    let (l, h1, h2, h3) = (ll[k], hl[k], lh[k], hh[k]);
                    plane[2 * i * s.w + 2 * j] = (l + h1 + h2 + h3) * half;
                    plane[2 * i * s.w + 2 * j + 1] = (l - h1 + h2 - h3) * half;
                    plane[(2 * i + 1) * s.w + 2 * j] = (l + h1 - h2 - h3) * half;
                    plane[(2 * i + 1) * s.w + 2 * j + 1] = (l - h1 - h2 + h3) * half;
                }
            }
        });
    Ok(out)
}

/// The transform is orthogonal, so its adjoint is the inverse.
pub fn haar_dwt2_backward<T: Element>(grad: &WaveletBands<T>) -> Result<Tensor<T>> {
    haar_idwt2(grad)
}

pub fn band_energy<T: Element>(b: &WaveletBands<T>) -> Result<EnergyReport> {
    b.validate()?;
    let (ll, hl, lh, hh) = (b.ll.frobenius(), b.hl.frobenius(), b.lh.frobenius(), b.hh.frobenius());
    Ok(EnergyReport {
        ll,
        hl,
        lh,
        hh,
        hf_total: (hl * hl + lh * lh + hh * hh).sqrt(),
    })
}
