//! Finite-difference gradient checks and a toy trainer.

mod gradcheck;
mod train;

pub use gradcheck::{
    grad_check, grad_check_dyadic, grad_check_probe, GradReport, GradRow, GradTarget, Probe, DEFAULT_EPS,
    DEFAULT_THRESHOLD, DYADIC_EPS, LINEAR_THRESHOLD,
};
pub use train::{toy_dataset, train_toy, LossCurve, Sgd, ToyDataset, ToyTrainConfig};
