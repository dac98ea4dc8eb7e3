//! Element-wise and structural ops: add, channel concat, SiLU and 2× nearest upsampling.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{check_same_shape, Element, Shape, Tensor};

pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape(a.shape(), b.shape())?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::from_vec(a.shape(), data)
}

/// The gradient of `a + b` flows unchanged to both operands.
pub fn add_backward<T: Element>(grad: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    (grad.clone(), grad.clone())
}

/// Concatenates along channels, parts laid out in argument order.
pub fn channel_concat<T: Element>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?
        .shape();
    for p in &parts[1..] {
        let s = p.shape();
        Error::check_dim("N", first.n, s.n)?;
        Error::check_dim("H", first.h, s.h)?;
        Error::check_dim("W", first.w, s.w)?;
    }
    let c = parts.iter().map(|p| p.shape().c).sum();
    let shape = Shape::new(first.n, c, first.h, first.w);
    let mut data = Vec::with_capacity(shape.numel());
    for n in 0..first.n {
        for p in parts {
            let len = p.shape().c * first.plane();
            data.extend_from_slice(&p.data()[n * len..(n + 1) * len]);
        }
    }
    Tensor::from_vec(shape, data)
}

/// Splits a concat gradient back into parts of the given channel counts.
pub fn channel_concat_backward<T: Element>(grad: &Tensor<T>, channels: &[usize]) -> Result<Vec<Tensor<T>>> {
    let s = grad.shape();
    Error::check_dim("C", channels.iter().sum(), s.c)?;
    let mut parts: Vec<Vec<T>> = channels
        .iter()
        .map(|c| Vec::with_capacity(s.n * c * s.plane()))
        .collect();
    for n in 0..s.n {
        let mut c0 = 0;
        for (part, &c) in parts.iter_mut().zip(channels) {
            let start = s.offset(n, c0, 0, 0);
            part.extend_from_slice(&grad.data()[start..start + c * s.plane()]);
            c0 += c;
        }
    }
    parts
        .into_iter()
        .zip(channels)
        .map(|(d, &c)| Tensor::from_vec(Shape::new(s.n, c, s.h, s.w), d))
        .collect()
}

#[inline]
fn sigmoid<T: Element>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn silu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v * sigmoid(v))
}

pub fn silu_backward<T: Element>(grad: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape(grad.shape(), x.shape())?;
    let data = grad
        .data()
        .iter()
        .zip(x.data())
        .map(|(&g, &v)| {
            let s = sigmoid(v);
            g * (s + v * s * (T::one() - s))
        })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// Nonlinearity applied after learned convolutions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Activation {
    #[default]
    Silu,
    Identity,
}

impl Activation {
    pub fn forward<T: Element>(self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Activation::Silu => silu(x),
            Activation::Identity => x.clone(),
        }
    }

    /// Gradient through the activation, given its pre-activation input.
    pub fn backward<T: Element>(self, grad: &Tensor<T>, pre: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Activation::Silu => silu_backward(grad, pre),
            Activation::Identity => {
                check_same_shape(grad.shape(), pre.shape())?;
                Ok(grad.clone())
            }
        }
    }
}

pub fn nearest_upsample2x<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let out_shape = Shape::new(s.n, s.c, 2 * s.h, 2 * s.w);
    let mut out = Tensor::zeros(out_shape);
    let ow = out_shape.w;
    out.data_mut()
        .par_chunks_mut(out_shape.plane())
        .enumerate()
        .for_each(|(idx, plane)| {
            let src = x.plane(idx / s.c, idx % s.c);
            for (i, v) in plane.iter_mut().enumerate() {
                let (oy, ox) = (i / ow, i % ow);
                *v = src[(oy / 2) * s.w + ox / 2];
            }
        });
    out
}

/// Sums each 2×2 output block back onto its source element, in row-major block order.
pub fn nearest_upsample2x_backward<T: Element>(grad: &Tensor<T>) -> Result<Tensor<T>> {
    let g = grad.shape();
    if !g.h.is_multiple_of(2) || !g.w.is_multiple_of(2) {
        return Err(Error::OddDimension {
            axis: if !g.h.is_multiple_of(2) { "H" } else { "W" },
            size: if !g.h.is_multiple_of(2) { g.h } else { g.w },
        });
    }
    let s = Shape::new(g.n, g.c, g.h / 2, g.w / 2);
    Ok(Tensor::from_fn(s, |n, c, y, x| {
        grad.at(n, c, 2 * y, 2 * x)
            + grad.at(n, c, 2 * y, 2 * x + 1)
            + grad.at(n, c, 2 * y + 1, 2 * x)
            + grad.at(n, c, 2 * y + 1, 2 * x + 1)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: Shape) -> Tensor<f64> {
        Tensor::from_fn(shape, |n, c, y, x| (1000 * n + 100 * c + 10 * y + x) as f64)
    }

    #[test]
    fn concat_lays_out_parts_in_order() {
        let a = ramp(Shape::new(1, 2, 4, 4));
        let b = ramp(Shape::new(1, 3, 4, 4)).scale(-1.0);
        let c = channel_concat(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), Shape::new(1, 5, 4, 4));
        assert_eq!(c.plane(0, 0), a.plane(0, 0));
        assert_eq!(c.plane(0, 1), a.plane(0, 1));
        assert_eq!(c.plane(0, 2), b.plane(0, 0));
        assert_eq!(c.plane(0, 4), b.plane(0, 2));
    }

    #[test]
    fn concat_batches_interleave_correctly() {
        let a = ramp(Shape::new(2, 1, 2, 2));
        let b = ramp(Shape::new(2, 2, 2, 2)).scale(2.0);
        let c = channel_concat(&[&a, &b]).unwrap();
        assert_eq!(c.plane(1, 0), a.plane(1, 0));
        assert_eq!(c.plane(1, 2), b.plane(1, 1));
        let back = channel_concat_backward(&c, &[1, 2]).unwrap();
        assert_eq!(back[0], a);
        assert_eq!(back[1], b);
    }

    #[test]
    fn concat_mismatch_names_axis() {
        let a = ramp(Shape::new(1, 2, 4, 4));
        let b = ramp(Shape::new(1, 2, 4, 5));
        let err = channel_concat(&[&a, &b]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { axis: "W", .. }));
    }

    #[test]
    fn add_negation_is_zero() {
        let a = ramp(Shape::new(1, 2, 3, 3));
        let z = add(&a, &a.scale(-1.0)).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        let err = add(&a, &ramp(Shape::new(1, 3, 3, 3))).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { axis: "C", .. }));
    }

    #[test]
    fn silu_values() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![0.0f64, 1.0, -1.0]).unwrap();
        let y = silu(&x);
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 0.7310585786300049).abs() < 1e-15);
        assert!((y.data()[2] + 0.2689414213699951).abs() < 1e-15);
        let g = silu_backward(&Tensor::full(x.shape(), 1.0), &x).unwrap();
        assert_eq!(g.data()[0], 0.5);
    }

    #[test]
    fn nearest_upsample_and_adjoint() {
        let x = ramp(Shape::new(1, 2, 2, 3));
        let y = nearest_upsample2x(&x);
        assert_eq!(y.shape(), Shape::new(1, 2, 4, 6));
        assert_eq!(y.at(0, 1, 3, 5), x.at(0, 1, 1, 2));
        let g = ramp(y.shape());
        let gx = nearest_upsample2x_backward(&g).unwrap();
        assert_eq!(y.dot(&g).unwrap(), x.dot(&gx).unwrap());
    }
}
