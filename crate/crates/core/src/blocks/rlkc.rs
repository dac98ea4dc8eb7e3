//! Reconstructed large-kernel convolution: a 7×7 depthwise convolution
//! (stride 1, padding 3) followed by a 1×1 pointwise channel mix.
//!
//! ```text
//! dw(x, y, c) = Σ_{i,j=-3..3} Wdw[c, i+3, j+3] · X(x+i, y+j, c)
//! pw(c')      = Σ_c Wpw[c', c] · dw(c)
//! ```

use crate::conv::{ConvLayer, ConvSpec};
use crate::error::{Error, Result};
use crate::params::{prefixed, prefixed_mut, Initializer, Parameters};
use crate::tensor::{Element, Tensor};

pub const RLKC_KERNEL: usize = 7;

#[derive(Clone, Debug, PartialEq)]
pub struct RlkcParams<T> {
    pub channels: usize,
    pub out_channels: usize,
    pub depthwise: ConvLayer<T>,
    pub pointwise: ConvLayer<T>,
}

pub fn rlkc_specs(channels: usize, out_channels: usize, bias: bool) -> [ConvSpec; 2] {
    [
        ConvSpec::new(channels, channels, RLKC_KERNEL)
            .padding(RLKC_KERNEL / 2)
            .groups(channels)
            .bias(bias),
        ConvSpec::new(channels, out_channels, 1).bias(bias),
    ]
}

/// `k²·C + C·C_out`, plus `C + C_out` with bias.
pub fn rlkc_param_count(channels: usize, out_channels: usize, bias: bool) -> u64 {
    let [dw, pw] = rlkc_specs(channels, out_channels, bias);
    dw.param_count() + pw.param_count()
}

impl<T: Element> RlkcParams<T> {
    pub fn zeros(channels: usize, out_channels: usize, bias: bool) -> Self {
        let [dw, pw] = rlkc_specs(channels, out_channels, bias);
        RlkcParams {
            channels,
            out_channels,
            depthwise: ConvLayer::zeros(dw),
            pointwise: ConvLayer::zeros(pw),
        }
    }

    pub fn init(channels: usize, out_channels: usize, bias: bool, init: &mut Initializer) -> Self {
        let mut p = Self::zeros(channels, out_channels, bias);
        p.depthwise.weights = init.conv(&p.depthwise.spec);
        p.pointwise.weights = init.conv(&p.pointwise.spec);
        p
    }

    pub fn zeros_like(&self) -> Self {
        RlkcParams {
            depthwise: ConvLayer::zeros(self.depthwise.spec),
            pointwise: ConvLayer::zeros(self.pointwise.spec),
            ..*self
        }
    }
}

impl<T: Element> Parameters<T> for RlkcParams<T> {
    fn tensors(&self) -> Vec<(String, &[T])> {
        let mut v = prefixed("depthwise", self.depthwise.tensors());
        v.extend(prefixed("pointwise", self.pointwise.tensors()));
        v
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [T])> {
        let mut v = prefixed_mut("depthwise", self.depthwise.tensors_mut());
        v.extend(prefixed_mut("pointwise", self.pointwise.tensors_mut()));
        v
    }
}

/// The per-channel 7×7 stage alone.
pub fn rlkc_depthwise<T: Element>(x: &Tensor<T>, p: &RlkcParams<T>) -> Result<Tensor<T>> {
    Error::check_dim("C", p.channels, x.shape().c)?;
    p.depthwise.forward(x)
}

pub fn rlkc_forward<T: Element>(x: &Tensor<T>, p: &RlkcParams<T>) -> Result<Tensor<T>> {
    p.pointwise.forward(&rlkc_depthwise(x, p)?)
}

/// Forward pass that also returns the depthwise output needed by backward.
pub fn rlkc_forward_cached<T: Element>(x: &Tensor<T>, p: &RlkcParams<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let dw = rlkc_depthwise(x, p)?;
    Ok((p.pointwise.forward(&dw)?, dw))
}

pub fn rlkc_backward<T: Element>(
    grad: &Tensor<T>,
    x: &Tensor<T>,
    dw_out: &Tensor<T>,
    p: &RlkcParams<T>,
) -> Result<(Tensor<T>, RlkcParams<T>)> {
    let mut grads = p.zeros_like();
    let (g_dw, gw) = p.pointwise.backward(grad, dw_out)?;
    grads.pointwise.weights = gw;
    let (g_x, gw) = p.depthwise.backward(&g_dw, x)?;
    grads.depthwise.weights = gw;
    Ok((g_x, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn identity_kernels_reproduce_input() {
        let c = 3;
        let mut p = RlkcParams::<f64>::zeros(c, c, false);
        for ch in 0..c {
            p.depthwise.weights.kernel.set(ch, 0, 3, 3, 1.0);
            p.pointwise.weights.kernel.set(ch, ch, 0, 0, 1.0);
        }
        let x = Tensor::from_fn(Shape::new(2, c, 5, 9), |n, ch, y, xx| {
            ((n + 1) * (ch + 2)) as f64 * (y as f64 - xx as f64)
        });
        assert_eq!(rlkc_forward(&x, &p).unwrap(), x);
    }

    #[test]
    fn parameter_count_closed_form() {
        assert_eq!(rlkc_param_count(64, 64, false), 49 * 64 + 64 * 64);
        assert_eq!(rlkc_param_count(64, 64, false), 7232);
        let dense = ConvSpec::new(64, 64, 7).bias(false).param_count();
        assert_eq!(dense, 200_704);
        assert_eq!(rlkc_param_count(64, 32, true), 49 * 64 + 64 * 32 + 64 + 32);
        assert_eq!(
            RlkcParams::<f32>::zeros(64, 32, true).param_count() as u64,
            rlkc_param_count(64, 32, true)
        );
    }

    #[test]
    fn preserves_spatial_size() {
        let p = RlkcParams::<f32>::zeros(4, 6, true);
        let y = rlkc_forward(&Tensor::zeros(Shape::new(1, 4, 3, 11)), &p).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 6, 3, 11));
    }

    #[test]
    fn channel_mismatch() {
        let p = RlkcParams::<f64>::zeros(4, 4, true);
        let err = rlkc_forward(&Tensor::zeros(Shape::new(1, 3, 8, 8)), &p).unwrap_err();
        assert!(matches!(
            err,
            Error::ShapeMismatch {
                axis: "C",
                expected: 4,
                actual: 3
            }
        ));
    }
}
