//! Toy denoising regression: the model sees smooth images plus a
//! checkerboard and must predict the Haar LL band of the clean image.
//!
//! Optimizer (heavy-ball SGD, decoupled weight decay), per step:
//!
//! ```text
//! θ ← θ · (1 − lr·wd)
//! v ← m·v + g
//! θ ← θ − lr·v
//! ```

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{backward, forward_trace, GraphSpec, ParamBundle};
use crate::params::Parameters;
use crate::tensor::{Shape, Tensor};
use crate::wavelet;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub batch: usize,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        ToyTrainConfig {
            steps: 2000,
            learning_rate: 0.01,
            momentum: 0.937,
            weight_decay: 0.0005,
            seed: 0,
            batch: 16,
        }
    }
}

impl ToyTrainConfig {
    /// Zero learning rate is allowed (the loss then stays constant).
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        if self.steps == 0 {
            return bad("steps must be >= 1");
        }
        if self.batch == 0 {
            return bad("batch must be >= 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight decay must be finite and non-negative");
        }
        Ok(())
    }
}

pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new<P: Parameters<f64> + ?Sized>(params: &P, cfg: &ToyTrainConfig) -> Self {
        Sgd {
            learning_rate: cfg.learning_rate,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
            velocity: params.tensors().iter().map(|(_, t)| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn step<P, G>(&mut self, params: &mut P, grads: &G)
    where
        P: Parameters<f64> + ?Sized,
        G: Parameters<f64> + ?Sized,
    {
        let decay = 1.0 - self.learning_rate * self.weight_decay;
        let grads = grads.tensors();
        for (((_, theta), (_, g)), v) in params.tensors_mut().into_iter().zip(grads).zip(&mut self.velocity) {
            for ((t, &gi), vi) in theta.iter_mut().zip(g).zip(v.iter_mut()) {
                *t *= decay;
                *vi = self.momentum * *vi + gi;
                *t -= self.learning_rate * *vi;
            }
        }
    }
}

/// Inputs `(N, C, H, W)` and targets: the clean image's LL band after
/// `levels` Haar steps, `(N, C, H/2^levels, W/2^levels)`.
#[derive(Debug, Clone)]
pub struct ToyDataset {
    pub inputs: Tensor<f64>,
    pub targets: Tensor<f64>,
    pub clean: Tensor<f64>,
}

const OFFSET: f64 = 0.0;

/// Each channel of each sample is `Σ a·sin(2π(fx·x + fy·y)/H + φ)`
/// over three random low frequencies, plus a checkerboard of random
/// amplitude in `[0.05, 0.2]`.
pub fn toy_dataset(shape: Shape, levels: usize, seed: u64) -> Result<ToyDataset> {
    if levels == 0 {
        return Err(Error::InvalidArgument(
            "toy targets need at least one Haar level".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clean = Tensor::zeros(shape);
    let mut noisy = Tensor::zeros(shape);
    for n in 0..shape.n {
        for c in 0..shape.c {
            let waves: Vec<(f64, f64, f64, f64)> = (0..3)
                .map(|_| {
                    (
                        rng.gen_range(0.05..0.2),
                        rng.gen_range(0..3) as f64,
                        rng.gen_range(0..3) as f64,
                        rng.gen_range(0.0..2.0 * PI),
                    )
                })
                .collect();
            let noise = rng.gen_range(0.05..0.2);
            for y in 0..shape.h {
                for x in 0..shape.w {
                    let v = OFFSET
                        + waves
                            .iter()
                            .map(|&(a, fx, fy, ph)| {
                                a * (2.0 * PI * (fx * x as f64 / shape.w as f64 + fy * y as f64 / shape.h as f64) + ph)
                                    .sin()
                            })
                            .sum::<f64>();
                    let sign = if (x + y) % 2 == 0 { 1.0 } else { -1.0 };
                    clean.set(n, c, y, x, v);
                    noisy.set(n, c, y, x, v + sign * noise);
                }
            }
        }
    }
    let mut targets = wavelet::haar_dwt2(&clean)?.ll;
    for _ in 1..levels {
        targets = wavelet::haar_dwt2(&targets)?.ll;
    }
    Ok(ToyDataset {
        inputs: noisy,
        targets,
        clean,
    })
}

/// Per-step losses, recorded before each update.
#[derive(Debug, Clone, PartialEq)]
pub struct LossCurve {
    pub losses: Vec<f64>,
}

impl LossCurve {
    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("at least one step")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            writeln!(s, "{i},{l:e}").expect("writing to a String");
        }
        s
    }
}

fn mse(y: &Tensor<f64>, t: &Tensor<f64>) -> f64 {
    let n = y.data().len() as f64;
    y.data()
        .iter()
        .zip(t.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n
}

/// Haar levels that take `input` down to `output`, if it is a power-of-two
/// reduction with matching channels.
fn ll_levels(input: Shape, output: Shape) -> Option<usize> {
    if input.c != output.c
        || output.h == 0
        || !input.h.is_multiple_of(output.h)
        || input.h / output.h != input.w / output.w.max(1)
    {
        return None;
    }
    let ratio = input.h / output.h;
    (ratio.is_power_of_two() && ratio > 1 && output.w * ratio == input.w).then(|| ratio.trailing_zeros() as usize)
}

/// Trains `params` in place on the synthetic task. The graph must have
/// exactly one sink; its resolution picks how many Haar levels the targets
/// go down.
pub fn train_toy(g: &GraphSpec, params: &mut ParamBundle<f64>, cfg: &ToyTrainConfig) -> Result<LossCurve> {
    cfg.validate()?;
    let s = g.input_shape;
    let input = Shape::new(cfg.batch, s.c, s.h, s.w);
    let topo = g.with_input_shape(input)?.analyze()?;
    let sinks = topo.sinks();
    if sinks.len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "toy training needs exactly one graph output, found {}",
            sinks.len()
        )));
    }
    let out = topo.shapes[sinks[0]];
    let levels = ll_levels(input, out).ok_or_else(|| {
        Error::InvalidArgument(format!("graph output {out} is not an LL band shape of input {input}"))
    })?;
    let data = toy_dataset(input, levels, cfg.seed)?;
    let mut sgd = Sgd::new(params, cfg);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let trace = forward_trace(g, &data.inputs, params)?;
        let outputs = trace.outputs(g);
        let [(sink, y)] = outputs.as_slice() else {
            unreachable!("single sink checked above")
        };
        let loss = mse(y, &data.targets);
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        losses.push(loss);
        let scale = 2.0 / y.data().len() as f64;
        let grad = Tensor::from_vec(
            y.shape(),
            y.data()
                .iter()
                .zip(data.targets.data())
                .map(|(a, b)| scale * (a - b))
                .collect(),
        )?;
        let (_, grads) = backward(g, &trace, params, &[(sink.clone(), grad)])?;
        sgd.step(params, &grads);
    }
    Ok(LossCurve { losses })
}
