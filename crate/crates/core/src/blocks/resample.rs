//! Learnable resampling: 2×2 stride-2 convolution down, 2×2 stride-2
//! transposed convolution up.

use crate::conv::{ConvLayer, ConvSpec, ConvWeights};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub fn even_downsample_spec(in_channels: usize, out_channels: usize) -> ConvSpec {
    ConvSpec::new(in_channels, out_channels, 2).stride(2)
}

pub fn transposed_upsample_spec(in_channels: usize, out_channels: usize) -> ConvSpec {
    ConvSpec::transposed_2x2(in_channels, out_channels)
}

fn check_even_spec(spec: &ConvSpec) -> Result<()> {
    if spec.transposed || spec.kernel != (2, 2) || spec.stride != (2, 2) || spec.padding != (0, 0) {
        return Err(Error::Unsupported(format!(
            "even downsampling needs a 2x2 stride-2 unpadded convolution, got {spec:?}"
        )));
    }
    Ok(())
}

fn check_transposed_spec(spec: &ConvSpec) -> Result<()> {
    if !spec.transposed {
        return Err(Error::Unsupported(
            "transposed upsampling needs a transposed spec".into(),
        ));
    }
    spec.validate()
}

/// Halves H and W. Odd spatial sizes are rejected rather than cropped.
pub fn even_downsample<T: Element>(x: &Tensor<T>, layer: &ConvLayer<T>) -> Result<Tensor<T>> {
    check_even_spec(&layer.spec)?;
    let s = x.shape();
    if !s.h.is_multiple_of(2) {
        return Err(Error::OddDimension { axis: "H", size: s.h });
    }
    if !s.w.is_multiple_of(2) {
        return Err(Error::OddDimension { axis: "W", size: s.w });
    }
    layer.forward(x)
}

pub fn even_downsample_backward<T: Element>(
    grad: &Tensor<T>,
    x: &Tensor<T>,
    layer: &ConvLayer<T>,
) -> Result<(Tensor<T>, ConvWeights<T>)> {
    check_even_spec(&layer.spec)?;
    layer.backward(grad, x)
}

/// Doubles H and W.
pub fn transposed_upsample<T: Element>(x: &Tensor<T>, layer: &ConvLayer<T>) -> Result<Tensor<T>> {
    check_transposed_spec(&layer.spec)?;
    layer.forward(x)
}

pub fn transposed_upsample_backward<T: Element>(
    grad: &Tensor<T>,
    x: &Tensor<T>,
    layer: &ConvLayer<T>,
) -> Result<(Tensor<T>, ConvWeights<T>)> {
    check_transposed_spec(&layer.spec)?;
    layer.backward(grad, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn two_by_two_uses_four_ninths_of_three_by_three() {
        for (cin, cout) in [(1, 1), (16, 32), (64, 128), (3, 7)] {
            let even = even_downsample_spec(cin, cout).bias(false).param_count();
            let dense = ConvSpec::new(cin, cout, 3)
                .stride(2)
                .padding(1)
                .bias(false)
                .param_count();
            assert_eq!(9 * even, 4 * dense);
            assert_eq!(even, 4 * (cin * cout) as u64);
        }
    }

    #[test]
    fn all_ones_sum_to_four() {
        let mut layer = ConvLayer::<f64>::zeros(even_downsample_spec(1, 1).bias(false));
        layer.weights.kernel = Tensor::full(Shape::new(1, 1, 2, 2), 1.0);
        let y = even_downsample(&Tensor::full(Shape::new(1, 1, 6, 4), 1.0), &layer).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 3, 2));
        assert!(y.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn odd_input_rejected() {
        let layer = ConvLayer::<f64>::zeros(even_downsample_spec(1, 1));
        let err = even_downsample(&Tensor::zeros(Shape::new(1, 1, 5, 4)), &layer).unwrap_err();
        assert!(matches!(err, Error::OddDimension { axis: "H", size: 5 }));
    }

    #[test]
    fn wrong_specs_rejected() {
        let three = ConvLayer::<f64>::zeros(ConvSpec::new(1, 1, 3).stride(2).padding(1));
        assert!(even_downsample(&Tensor::zeros(Shape::new(1, 1, 4, 4)), &three).is_err());
        let down = ConvLayer::<f64>::zeros(even_downsample_spec(1, 1));
        assert!(transposed_upsample(&Tensor::zeros(Shape::new(1, 1, 4, 4)), &down).is_err());
    }

    #[test]
    fn constant_four_through_ones_kernel_stays_four() {
        let mut layer = ConvLayer::<f64>::zeros(transposed_upsample_spec(1, 1).bias(false));
        layer.weights.kernel = Tensor::full(Shape::new(1, 1, 2, 2), 1.0);
        let y = transposed_upsample(&Tensor::full(Shape::new(1, 1, 3, 2), 4.0), &layer).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 6, 4));
        assert!(y.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn delta_stamps_top_left() {
        let mut layer = ConvLayer::<f64>::zeros(transposed_upsample_spec(1, 1).bias(false));
        layer.weights.kernel = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let mut x = Tensor::zeros(Shape::new(1, 1, 2, 2));
        x.set(0, 0, 0, 0, 1.0);
        let y = transposed_upsample(&x, &layer).unwrap();
        let nonzero: Vec<_> = y.data().iter().copied().filter(|&v| v != 0.0).collect();
        assert_eq!(nonzero, [5.0, 6.0, 7.0, 8.0]);
        assert_eq!((y.at(0, 0, 0, 0), y.at(0, 0, 1, 1)), (5.0, 8.0));
    }
}
