//! Direct convolution and 2×2 stride-2 transposed convolution, forward and
//! backward.
//!
//! Every output element accumulates its products in (channel, row, column)
//! order and adds the bias last. Work is split across output planes only.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::params::Parameters;
use crate::tensor::{Element, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
    pub transposed: bool,
    pub bias: bool,
}

impl ConvSpec {
    /// Square `k × k` convolution, stride 1, no padding, one group, with bias.
    pub fn new(in_channels: usize, out_channels: usize, k: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (k, k),
            stride: (1, 1),
            padding: (0, 0),
            groups: 1,
            transposed: false,
            bias: true,
        }
    }

    /// The only transposed configuration supported: 2×2 kernel, stride 2, no padding.
    pub fn transposed_2x2(in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            kernel: (2, 2),
            stride: (2, 2),
            transposed: true,
            ..ConvSpec::new(in_channels, out_channels, 2)
        }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = (s, s);
        self
    }

    pub fn padding(mut self, p: usize) -> Self {
        self.padding = (p, p);
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    pub fn bias(mut self, on: bool) -> Self {
        self.bias = on;
        self
    }

    /// `(out, in/groups, kh, kw)` for standard, `(in, out/groups, kh, kw)` for transposed.
    pub fn weight_shape(&self) -> Shape {
        let (kh, kw) = self.kernel;
        if self.transposed {
            Shape::new(self.in_channels, self.out_channels / self.groups, kh, kw)
        } else {
            Shape::new(self.out_channels, self.in_channels / self.groups, kh, kw)
        }
    }

    /// Multiply-accumulates per output position of a standard conv; per input
    /// position of a transposed one.
    pub fn macs_per_position(&self) -> u64 {
        let (kh, kw) = self.kernel;
        let (cin, cout) = (self.in_channels as u64, self.out_channels as u64);
        let g = self.groups as u64;
        (kh * kw) as u64 * (cin / g) * cout
    }

    pub fn param_count(&self) -> u64 {
        self.weight_shape().numel() as u64 + if self.bias { self.out_channels as u64 } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        if self.in_channels == 0 || self.out_channels == 0 || kh == 0 || kw == 0 || sh == 0 || sw == 0 {
            return Err(Error::InvalidArgument(format!("degenerate convolution {self:?}")));
        }
        if self.groups == 0 || !self.in_channels.is_multiple_of(self.groups) {
            return Err(Error::GroupDivisibility {
                what: "input",
                channels: self.in_channels,
                groups: self.groups,
            });
        }
        if !self.out_channels.is_multiple_of(self.groups) {
            return Err(Error::GroupDivisibility {
                what: "output",
                channels: self.out_channels,
                groups: self.groups,
            });
        }
        if self.transposed && (self.kernel != (2, 2) || self.stride != (2, 2) || self.padding != (0, 0)) {
            return Err(Error::Unsupported(format!(
                "transposed convolution needs kernel 2x2, stride 2, padding 0; got kernel {:?}, stride {:?}, padding {:?}",
                self.kernel, self.stride, self.padding
            )));
        }
        Ok(())
    }

    /// Output `(H, W)` for an input of `(h, w)`.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.transposed {
            return Ok((2 * h, 2 * w));
        }
        let (kh, kw) = self.kernel;
        let (ph, pw) = self.padding;
        if h + 2 * ph < kh {
            return Err(Error::ShapeMismatch {
                axis: "H (padded input smaller than kernel)",
                expected: kh,
                actual: h + 2 * ph,
            });
        }
        if w + 2 * pw < kw {
            return Err(Error::ShapeMismatch {
                axis: "W (padded input smaller than kernel)",
                expected: kw,
                actual: w + 2 * pw,
            });
        }
        Ok((
            (h + 2 * ph - kh) / self.stride.0 + 1,
            (w + 2 * pw - kw) / self.stride.1 + 1,
        ))
    }

    pub fn output_shape(&self, x: Shape) -> Result<Shape> {
        Error::check_dim("C", self.in_channels, x.c)?;
        let (h, w) = self.output_hw(x.h, x.w)?;
        Ok(Shape::new(x.n, self.out_channels, h, w))
    }
}

/// Kernel plus optional bias. Gradients use the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvWeights<T> {
    pub kernel: Tensor<T>,
    pub bias: Option<Vec<T>>,
}

impl<T: Element> ConvWeights<T> {
    pub fn zeros(spec: &ConvSpec) -> Self {
        ConvWeights {
            kernel: Tensor::zeros(spec.weight_shape()),
            bias: spec.bias.then(|| vec![T::zero(); spec.out_channels]),
        }
    }

    pub fn check(&self, spec: &ConvSpec) -> Result<()> {
        let want = spec.weight_shape();
        let got = self.kernel.shape();
        Error::check_dim("weight dim 0", want.n, got.n)?;
        Error::check_dim("weight dim 1", want.c, got.c)?;
        Error::check_dim("weight kernel height", want.h, got.h)?;
        Error::check_dim("weight kernel width", want.w, got.w)?;
        match (&self.bias, spec.bias) {
            (Some(b), true) => Error::check_dim("bias length", spec.out_channels, b.len()),
            (None, false) => Ok(()),
            (Some(b), false) => Err(Error::ShapeMismatch {
                axis: "bias length (spec has no bias)",
                expected: 0,
                actual: b.len(),
            }),
            (None, true) => Err(Error::ShapeMismatch {
                axis: "bias length",
                expected: spec.out_channels,
                actual: 0,
            }),
        }
    }

    pub fn param_count(&self) -> usize {
        self.kernel.shape().numel() + self.bias.as_ref().map_or(0, Vec::len)
    }
}

impl<T: Element> Parameters<T> for ConvWeights<T> {
    fn tensors(&self) -> Vec<(String, &[T])> {
        let mut v = vec![("weight".to_string(), self.kernel.data())];
        if let Some(b) = &self.bias {
            v.push(("bias".to_string(), b.as_slice()));
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [T])> {
        let mut v = vec![("weight".to_string(), self.kernel.data_mut())];
        if let Some(b) = &mut self.bias {
            v.push(("bias".to_string(), b.as_mut_slice()));
        }
        v
    }
}

fn prepare<T: Element>(x: &Tensor<T>, w: &ConvWeights<T>, spec: &ConvSpec, transposed: bool) -> Result<Shape> {
    if spec.transposed != transposed {
        return Err(Error::Unsupported(if transposed {
            "transposed kernel called with a standard convolution spec".into()
        } else {
            "standard kernel called with a transposed convolution spec".into()
        }));
    }
    spec.validate()?;
    w.check(spec)?;
    spec.output_shape(x.shape())
}

/// Output columns `[lo, hi)` whose tap `kx` lands inside a row of `w`.
fn valid_range(kx: usize, pad: usize, stride: usize, w: usize, wo: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kx).div_ceil(stride);
    // ox·stride + kx − pad ≤ w − 1
    let hi = if w + pad < kx + 1 {
        0
    } else {
        ((w + pad - kx - 1) / stride + 1).min(wo)
    };
    (lo.min(hi), hi)
}

pub fn conv2d_forward<T: Element>(x: &Tensor<T>, w: &ConvWeights<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    let out_shape = prepare(x, w, spec, false)?;
    let xs = x.shape();
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let cout = spec.out_channels;
    let (ho, wo) = (out_shape.h, out_shape.w);
    let ksize = cin_g * kh * kw;
    let kernel = w.kernel.data();
    let bias = w.bias.as_deref();

    let mut out = Tensor::zeros(out_shape);
    out.data_mut()
        .par_chunks_mut(ho * wo)
        .enumerate()
        .for_each(|(idx, plane)| {
            let (n, co) = (idx / cout, idx % cout);
            let g = co / cout_g;
            let wk = &kernel[co * ksize..(co + 1) * ksize];
            let b = bias.map_or(T::zero(), |b| b[co]);
            // Tap-major accumulation: each output still sums its terms in
            // (ci, ky, kx) order, so results match a per-pixel loop exactly.
            for ci in 0..cin_g {
                let xp = x.plane(n, g * cin_g + ci);
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = wk[(ci * kh + ky) * kw + kx];
                        let (lo, hi) = valid_range(kx, pw, sw, xs.w, wo);
                        for oy in 0..ho {
                            let iy = (oy * sh + ky) as isize - ph as isize;
                            if iy < 0 || iy >= xs.h as isize {
                                continue;
                            }
                            let row = &xp[iy as usize * xs.w..(iy as usize + 1) * xs.w];
                            let orow = &mut plane[oy * wo..(oy + 1) * wo];
                            for ox in lo..hi {
                                orow[ox] = orow[ox] + row[ox * sw + kx - pw] * wv;
                            }
                        }
                    }
                }
            }
            for v in plane.iter_mut() {
                *v = *v + b;
            }
        });
    Ok(out)
}

/// Gradients of a standard convolution with respect to its input and weights.
pub fn conv2d_backward<T: Element>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    w: &ConvWeights<T>,
    spec: &ConvSpec,
) -> Result<(Tensor<T>, ConvWeights<T>)> {
    let out_shape = prepare(x, w, spec, false)?;
    check_grad_shape(grad_out.shape(), out_shape)?;
    let xs = x.shape();
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let (cin, cout) = (spec.in_channels, spec.out_channels);
    let (ho, wo) = (out_shape.h, out_shape.w);
    let kernel = w.kernel.data();

    let mut grad_x = Tensor::zeros(xs);
    grad_x
        .data_mut()
        .par_chunks_mut(xs.h * xs.w)
        .enumerate()
        .for_each(|(idx, plane)| {
            let (n, ci) = (idx / cin, idx % cin);
            let (g, cl) = (ci / cin_g, ci % cin_g);
            for co in g * cout_g..(g + 1) * cout_g {
                let go = grad_out.plane(n, co);
                let wk = &kernel[(co * cin_g + cl) * kh * kw..(co * cin_g + cl + 1) * kh * kw];
                for oy in 0..ho {
                    for ox in 0..wo {
                        let gv = go[oy * wo + ox];
                        for ky in 0..kh {
                            let iy = (oy * sh + ky) as isize - ph as isize;
                            if iy < 0 || iy >= xs.h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * sw + kx) as isize - pw as isize;
                                if ix < 0 || ix >= xs.w as isize {
                                    continue;
                                }
                                let i = iy as usize * xs.w + ix as usize;
                                plane[i] = plane[i] + gv * wk[ky * kw + kx];
                            }
                        }
                    }
                }
            }
        });

    let mut grad_w = ConvWeights::zeros(spec);
    let ksize = cin_g * kh * kw;
    grad_w
        .kernel
        .data_mut()
        .par_chunks_mut(ksize)
        .enumerate()
        .for_each(|(co, gk)| {
            let g = co / cout_g;
            for cl in 0..cin_g {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let mut acc = T::zero();
                        for n in 0..xs.n {
                            let go = grad_out.plane(n, co);
                            let xp = x.plane(n, g * cin_g + cl);
                            for oy in 0..ho {
                                let iy = (oy * sh + ky) as isize - ph as isize;
                                if iy < 0 || iy >= xs.h as isize {
                                    continue;
                                }
                                for ox in 0..wo {
                                    let ix = (ox * sw + kx) as isize - pw as isize;
                                    if ix < 0 || ix >= xs.w as isize {
                                        continue;
                                    }
                                    acc = acc + go[oy * wo + ox] * xp[iy as usize * xs.w + ix as usize];
                                }
                            }
                        }
                        gk[(cl * kh + ky) * kw + kx] = acc;
                    }
                }
            }
        });
    if let Some(gb) = &mut grad_w.bias {
        bias_grad(grad_out, cout, gb);
    }
    Ok((grad_x, grad_w))
}

/// 2×2, stride-2 transposed convolution: every input element stamps its
/// value times the kernel into its own disjoint 2×2 output block.
pub fn conv_transpose2d_forward<T: Element>(x: &Tensor<T>, w: &ConvWeights<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    let out_shape = prepare(x, w, spec, true)?;
    let xs = x.shape();
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let cout = spec.out_channels;
    let (ho, wo) = (out_shape.h, out_shape.w);
    let kernel = w.kernel.data();
    let bias = w.bias.as_deref();

    let mut out = Tensor::zeros(out_shape);
    out.data_mut()
        .par_chunks_mut(ho * wo)
        .enumerate()
        .for_each(|(idx, plane)| {
            let (n, co) = (idx / cout, idx % cout);
            let (g, col) = (co / cout_g, co % cout_g);
            let b = bias.map_or(T::zero(), |b| b[co]);
            for oy in 0..ho {
                let (i, dy) = (oy / 2, oy % 2);
                for ox in 0..wo {
                    let (j, dx) = (ox / 2, ox % 2);
                    let mut acc = T::zero();
                    for cl in 0..cin_g {
                        let ci = g * cin_g + cl;
                        let xv = x.plane(n, ci)[i * xs.w + j];
                        acc = acc + xv * kernel[((ci * cout_g + col) * 2 + dy) * 2 + dx];
                    }
                    plane[oy * wo + ox] = acc + b;
                }
            }
        });
    Ok(out)
}

/// Gradients of the 2×2 stride-2 transposed convolution. The input gradient
/// is the 2×2 stride-2 standard convolution of `grad_out` with the same kernel.
pub fn conv_transpose2d_backward<T: Element>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    w: &ConvWeights<T>,
    spec: &ConvSpec,
) -> Result<(Tensor<T>, ConvWeights<T>)> {
    let out_shape = prepare(x, w, spec, true)?;
    check_grad_shape(grad_out.shape(), out_shape)?;

    // (in, out/g, 2, 2) read as a standard kernel is (out' = in, in'/g = out/g, 2, 2).
    let adjoint = ConvSpec::new(spec.out_channels, spec.in_channels, 2)
        .stride(2)
        .groups(spec.groups)
        .bias(false);
    let adjoint_w = ConvWeights {
        kernel: w.kernel.clone(),
        bias: None,
    };
    let grad_x = conv2d_forward(grad_out, &adjoint_w, &adjoint)?;

    let xs = x.shape();
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let wo = out_shape.w;
    let mut grad_w = ConvWeights::zeros(spec);
    grad_w
        .kernel
        .data_mut()
        .par_chunks_mut(cout_g * 4)
        .enumerate()
        .for_each(|(ci, gk)| {
            let g = ci / cin_g;
            for col in 0..cout_g {
                let co = g * cout_g + col;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let mut acc = T::zero();
                        for n in 0..xs.n {
                            let xp = x.plane(n, ci);
                            let go = grad_out.plane(n, co);
                            for i in 0..xs.h {
                                for j in 0..xs.w {
                                    acc = acc + xp[i * xs.w + j] * go[(2 * i + dy) * wo + 2 * j + dx];
                                }
                            }
                        }
                        gk[(col * 2 + dy) * 2 + dx] = acc;
                    }
                }
            }
        });
    if let Some(gb) = &mut grad_w.bias {
        bias_grad(grad_out, spec.out_channels, gb);
    }
    Ok((grad_x, grad_w))
}

fn bias_grad<T: Element>(grad_out: &Tensor<T>, cout: usize, gb: &mut [T]) {
    let n = grad_out.shape().n;
    gb.par_iter_mut().enumerate().for_each(|(co, b)| {
        let mut acc = T::zero();
        for ni in 0..n {
            for &v in grad_out.plane(ni, co) {
                acc = acc + v;
            }
        }
        *b = acc;
    });
    debug_assert_eq!(gb.len(), cout);
}

fn check_grad_shape(got: Shape, want: Shape) -> Result<()> {
    Error::check_dim("grad_out N", want.n, got.n)?;
    Error::check_dim("grad_out C", want.c, got.c)?;
    Error::check_dim("grad_out H", want.h, got.h)?;
    Error::check_dim("grad_out W", want.w, got.w)
}

/// A convolution spec bundled with its weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    pub spec: ConvSpec,
    pub weights: ConvWeights<T>,
}

impl<T: Element> ConvLayer<T> {
    pub fn zeros(spec: ConvSpec) -> Self {
        ConvLayer {
            weights: ConvWeights::zeros(&spec),
            spec,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if self.spec.transposed {
            conv_transpose2d_forward(x, &self.weights, &self.spec)
        } else {
            conv2d_forward(x, &self.weights, &self.spec)
        }
    }

    pub fn backward(&self, grad_out: &Tensor<T>, x: &Tensor<T>) -> Result<(Tensor<T>, ConvWeights<T>)> {
        if self.spec.transposed {
            conv_transpose2d_backward(grad_out, x, &self.weights, &self.spec)
        } else {
            conv2d_backward(grad_out, x, &self.weights, &self.spec)
        }
    }
}

impl<T: Element> Parameters<T> for ConvLayer<T> {
    fn tensors(&self) -> Vec<(String, &[T])> {
        self.weights.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [T])> {
        self.weights.tensors_mut()
    }
}
