//! Slow, obviously-correct reference implementations.
#![allow(dead_code)]

use ysoob::conv::{ConvSpec, ConvWeights};
use ysoob::params::Initializer;
use ysoob::{Shape, Tensor};

/// Direct seven-loop convolution in f64, bounds checked per tap.
pub fn naive_conv(x: &Tensor<f64>, w: &ConvWeights<f64>, spec: &ConvSpec) -> Tensor<f64> {
    let s = x.shape();
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let ho = (s.h + 2 * ph - kh) / sh + 1;
    let wo = (s.w + 2 * pw - kw) / sw + 1;
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let mut out = Tensor::zeros(Shape::new(s.n, spec.out_channels, ho, wo));
    for n in 0..s.n {
        for co in 0..spec.out_channels {
            let g = co / cout_g;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = w.bias.as_ref().map_or(0.0, |b| b[co]);
                    for ci in 0..cin_g {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * sh + ky) as i64 - ph as i64;
                                let ix = (ox * sw + kx) as i64 - pw as i64;
                                if iy < 0 || ix < 0 || iy >= s.h as i64 || ix >= s.w as i64 {
                                    continue;
                                }
                                acc += x.at(n, g * cin_g + ci, iy as usize, ix as usize) * w.kernel.at(co, ci, ky, kx);
                            }
                        }
                    }
                    out.set(n, co, oy, ox, acc);
                }
            }
        }
    }
    out
}

/// Transposed convolution as an explicit scatter: each input element adds
/// `x · W` into the output window it touches.
pub fn scatter_conv_transpose(x: &Tensor<f64>, w: &ConvWeights<f64>, spec: &ConvSpec) -> Tensor<f64> {
    let s = x.shape();
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let ho = (s.h - 1) * sh + kh;
    let wo = (s.w - 1) * sw + kw;
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let mut out = Tensor::zeros(Shape::new(s.n, spec.out_channels, ho, wo));
    for n in 0..s.n {
        for co in 0..spec.out_channels {
            let b = w.bias.as_ref().map_or(0.0, |b| b[co]);
            for y in 0..ho {
                for x_ in 0..wo {
                    out.set(n, co, y, x_, b);
                }
            }
        }
        for ci in 0..spec.in_channels {
            let g = ci / cin_g;
            for i in 0..s.h {
                for j in 0..s.w {
                    let v = x.at(n, ci, i, j);
                    for col in 0..cout_g {
                        let co = g * cout_g + col;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let (y, x_) = (i * sh + ky, j * sw + kx);
                                let prev = out.at(n, co, y, x_);
                                out.set(n, co, y, x_, prev + v * w.kernel.at(ci, col, ky, kx));
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Rows are the LL, HL, LH, HH analysis vectors over a row-major 2×2 block
/// `[a, b, c, d]`.
pub const HAAR: [[f64; 4]; 4] = [
    [0.5, 0.5, 0.5, 0.5],
    [0.5, -0.5, 0.5, -0.5],
    [0.5, 0.5, -0.5, -0.5],
    [0.5, -0.5, -0.5, 0.5],
];

/// `[ll, hl, lh, hh]` computed block by block with [`HAAR`].
pub fn matrix_dwt(x: &Tensor<f64>) -> [Tensor<f64>; 4] {
    let s = x.shape();
    let half = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    let mut bands = [(); 4].map(|_| Tensor::zeros(half));
    for n in 0..s.n {
        for c in 0..s.c {
            for i in 0..half.h {
                for j in 0..half.w {
                    let v = [
                        x.at(n, c, 2 * i, 2 * j),
                        x.at(n, c, 2 * i, 2 * j + 1),
                        x.at(n, c, 2 * i + 1, 2 * j),
                        x.at(n, c, 2 * i + 1, 2 * j + 1),
                    ];
                    for (band, row) in bands.iter_mut().zip(HAAR) {
                        band.set(n, c, i, j, row.iter().zip(v).map(|(r, v)| r * v).sum());
                    }
                }
            }
        }
    }
    bands
}

pub fn random(shape: Shape, seed: u64) -> Tensor<f64> {
    Initializer::new(seed).tensor(shape, 1.0)
}

pub fn random_weights(spec: &ConvSpec, seed: u64) -> ConvWeights<f64> {
    let mut r = Initializer::new(seed);
    let kernel = r.tensor(spec.weight_shape(), 1.0);
    let bias = spec
        .bias
        .then(|| (0..spec.out_channels).map(|_| r.uniform(1.0)).collect());
    ConvWeights { kernel, bias }
}

pub fn max_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.max_abs_diff(b).expect("same shape")
}
