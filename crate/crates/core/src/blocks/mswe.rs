//! Multi-spectrum wavelet encoder.
//!
//! ```text
//! X0     = act(stem2x2/2(x))                          (C', H/2, W/2)
//! bands  = haar(X0)                                   (C', H/4, W/4) each
//! Yh     = act(conv1x1([hl, lh, hh]))                 3C' -> C'
//! Pfreq  = act(conv1x1(ll + Yh))                      C'  -> c_out/2
//! Pres   = act(conv3x3/2(X0))                         C'  -> c_out/2
//! Z      = [Pfreq, Pres]                              (c_out, H/4, W/4)
//! ```

use crate::conv::{ConvLayer, ConvSpec};
use crate::error::{Error, Result};
use crate::ops::{self, Activation};
use crate::params::{prefixed, prefixed_mut, Initializer, Parameters};
use crate::tensor::{Element, Tensor};
use crate::wavelet::{self, WaveletBands};

#[derive(Clone, Debug, PartialEq)]
pub struct MsweParams<T> {
    pub in_channels: usize,
    pub hidden: usize,
    pub out_channels: usize,
    pub stem: ConvLayer<T>,
    pub hf_compress: ConvLayer<T>,
    pub freq: ConvLayer<T>,
    pub residual: ConvLayer<T>,
    pub activation: Activation,
}

/// Convolution specs of the four learned stages: stem, hf-compress, freq, residual.
pub fn mswe_specs(in_channels: usize, hidden: usize, out_channels: usize, bias: bool) -> Result<[ConvSpec; 4]> {
    if out_channels == 0 || !out_channels.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "MSWE output channels must be even and positive, got {out_channels}"
        )));
    }
    if in_channels == 0 || hidden == 0 {
        return Err(Error::InvalidArgument("MSWE channel counts must be positive".into()));
    }
    let half = out_channels / 2;
    Ok([
        ConvSpec::new(in_channels, hidden, 2).stride(2).bias(bias),
        ConvSpec::new(3 * hidden, hidden, 1).bias(bias),
        ConvSpec::new(hidden, half, 1).bias(bias),
        ConvSpec::new(hidden, half, 3).stride(2).padding(1).bias(bias),
    ])
}

impl<T: Element> MsweParams<T> {
    pub fn zeros(in_channels: usize, hidden: usize, out_channels: usize, bias: bool) -> Result<Self> {
        let [stem, hf, freq, res] = mswe_specs(in_channels, hidden, out_channels, bias)?;
        Ok(MsweParams {
            in_channels,
            hidden,
            out_channels,
            stem: ConvLayer::zeros(stem),
            hf_compress: ConvLayer::zeros(hf),
            freq: ConvLayer::zeros(freq),
            residual: ConvLayer::zeros(res),
            activation: Activation::Silu,
        })
    }

    pub fn init(
        in_channels: usize,
        hidden: usize,
        out_channels: usize,
        bias: bool,
        init: &mut Initializer,
    ) -> Result<Self> {
        let mut p = Self::zeros(in_channels, hidden, out_channels, bias)?;
        for layer in p.layers_mut() {
            layer.weights = init.conv(&layer.spec);
        }
        Ok(p)
    }

    pub fn layers(&self) -> [&ConvLayer<T>; 4] {
        [&self.stem, &self.hf_compress, &self.freq, &self.residual]
    }

    fn layers_mut(&mut self) -> [&mut ConvLayer<T>; 4] {
        [
            &mut self.stem,
            &mut self.hf_compress,
            &mut self.freq,
            &mut self.residual,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let specs = mswe_specs(self.in_channels, self.hidden, self.out_channels, self.stem.spec.bias)?;
        for (layer, spec) in self.layers().into_iter().zip(specs) {
            if layer.spec != spec {
                return Err(Error::InvalidArgument(format!(
                    "MSWE layer spec {:?} does not match expected {:?}",
                    layer.spec, spec
                )));
            }
            layer.weights.check(&layer.spec)?;
        }
        Ok(())
    }

    /// Same structure with every weight zeroed; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut p = self.clone();
        for layer in p.layers_mut() {
            *layer = ConvLayer::zeros(layer.spec);
        }
        p
    }
}

impl<T: Element> Parameters<T> for MsweParams<T> {
    fn tensors(&self) -> Vec<(String, &[T])> {
        let mut v = prefixed("stem", self.stem.tensors());
        v.extend(prefixed("hf_compress", self.hf_compress.tensors()));
        v.extend(prefixed("freq", self.freq.tensors()));
        v.extend(prefixed("residual", self.residual.tensors()));
        v
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [T])> {
        let mut v = prefixed_mut("stem", self.stem.tensors_mut());
        v.extend(prefixed_mut("hf_compress", self.hf_compress.tensors_mut()));
        v.extend(prefixed_mut("freq", self.freq.tensors_mut()));
        v.extend(prefixed_mut("residual", self.residual.tensors_mut()));
        v
    }
}

/// `act(conv1x1(concat[hl, lh, hh]))`: cross-mixes the three detail bands
/// down to `C'` channels.
pub fn hf_compress<T: Element>(
    hl: &Tensor<T>,
    lh: &Tensor<T>,
    hh: &Tensor<T>,
    layer: &ConvLayer<T>,
    activation: Activation,
) -> Result<Tensor<T>> {
    Ok(activation.forward(&hf_compress_pre(hl, lh, hh, layer)?))
}

/// [`hf_compress`] before the activation.
pub fn hf_compress_pre<T: Element>(
    hl: &Tensor<T>,
    lh: &Tensor<T>,
    hh: &Tensor<T>,
    layer: &ConvLayer<T>,
) -> Result<Tensor<T>> {
    let s = hl.shape();
    crate::tensor::check_same_shape(s, lh.shape())?;
    crate::tensor::check_same_shape(s, hh.shape())?;
    Error::check_dim("hf-compress input channels (3C')", layer.spec.in_channels, 3 * s.c)?;
    layer.forward(&ops::channel_concat(&[hl, lh, hh])?)
}

/// Intermediates kept for the backward pass.
#[derive(Clone, Debug)]
pub struct MsweCache<T> {
    x: Tensor<T>,
    stem_pre: Tensor<T>,
    x0: Tensor<T>,
    hf_in: Tensor<T>,
    hf_pre: Tensor<T>,
    sum: Tensor<T>,
    freq_pre: Tensor<T>,
    res_pre: Tensor<T>,
}

fn check_input<T: Element>(x: &Tensor<T>, p: &MsweParams<T>) -> Result<()> {
    let s = x.shape();
    Error::check_dim("C", p.in_channels, s.c)?;
    for (axis, size) in [("H", s.h), ("W", s.w)] {
        if size % 4 != 0 {
            return Err(Error::Indivisible { axis, size, divisor: 4 });
        }
    }
    Ok(())
}

pub fn mswe_forward<T: Element>(x: &Tensor<T>, p: &MsweParams<T>) -> Result<Tensor<T>> {
    check_input(x, p)?;
    let x0 = p.activation.forward(&p.stem.forward(x)?);
    let bands = wavelet::haar_dwt2(&x0)?;
    mswe_fuse(&x0, &bands, p)
}

/// Everything after the stem and the Haar split: takes `X0` (residual path)
/// and its bands (frequency path) separately, so either can be perturbed
/// on its own.
pub fn mswe_fuse<T: Element>(x0: &Tensor<T>, bands: &WaveletBands<T>, p: &MsweParams<T>) -> Result<Tensor<T>> {
    bands.validate()?;
    let act = p.activation;
    let yh = hf_compress(&bands.hl, &bands.lh, &bands.hh, &p.hf_compress, act)?;
    let p_freq = act.forward(&p.freq.forward(&ops::add(&bands.ll, &yh)?)?);
    let p_res = act.forward(&p.residual.forward(x0)?);
    ops::channel_concat(&[&p_freq, &p_res])
}

pub fn mswe_forward_cached<T: Element>(x: &Tensor<T>, p: &MsweParams<T>) -> Result<(Tensor<T>, MsweCache<T>)> {
    check_input(x, p)?;
    let act = p.activation;
    let stem_pre = p.stem.forward(x)?;
    let x0 = act.forward(&stem_pre);
    let bands = wavelet::haar_dwt2(&x0)?;
    let hf_in = ops::channel_concat(&[&bands.hl, &bands.lh, &bands.hh])?;
    let hf_pre = p.hf_compress.forward(&hf_in)?;
    let sum = ops::add(&bands.ll, &act.forward(&hf_pre))?;
    let freq_pre = p.freq.forward(&sum)?;
    let res_pre = p.residual.forward(&x0)?;
    let z = ops::channel_concat(&[&act.forward(&freq_pre), &act.forward(&res_pre)])?;
    let cache = MsweCache {
        x: x.clone(),
        stem_pre,
        x0,
        hf_in,
        hf_pre,
        sum,
        freq_pre,
        res_pre,
    };
    Ok((z, cache))
}

/// Returns the input gradient and the parameter gradients.
pub fn mswe_backward<T: Element>(
    grad_z: &Tensor<T>,
    cache: &MsweCache<T>,
    p: &MsweParams<T>,
) -> Result<(Tensor<T>, MsweParams<T>)> {
    let act = p.activation;
    let half = p.out_channels / 2;
    let mut grads = p.zeros_like();
    let parts = ops::channel_concat_backward(grad_z, &[half, half])?;

    let g_res_pre = act.backward(&parts[1], &cache.res_pre)?;
    let (g_x0_res, gw) = p.residual.backward(&g_res_pre, &cache.x0)?;
    grads.residual.weights = gw;

    let g_freq_pre = act.backward(&parts[0], &cache.freq_pre)?;
    let (g_sum, gw) = p.freq.backward(&g_freq_pre, &cache.sum)?;
    grads.freq.weights = gw;

    let (g_ll, g_yh) = ops::add_backward(&g_sum);
    let g_hf_pre = act.backward(&g_yh, &cache.hf_pre)?;
    let (g_hf_in, gw) = p.hf_compress.backward(&g_hf_pre, &cache.hf_in)?;
    grads.hf_compress.weights = gw;

    let c = p.hidden;
    let mut hf = ops::channel_concat_backward(&g_hf_in, &[c, c, c])?.into_iter();
    let g_bands = WaveletBands {
        ll: g_ll,
        hl: hf.next().expect("three parts"),
        lh: hf.next().expect("three parts"),
        hh: hf.next().expect("three parts"),
    };
    let g_x0 = ops::add(&wavelet::haar_dwt2_backward(&g_bands)?, &g_x0_res)?;

    let g_stem_pre = act.backward(&g_x0, &cache.stem_pre)?;
    let (g_x, gw) = p.stem.backward(&g_stem_pre, &cache.x)?;
    grads.stem.weights = gw;
    Ok((g_x, grads))
}
