use std::io;

use crate::graph::GraphError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch on {axis}: expected {expected}, got {actual}")]
    ShapeMismatch {
        axis: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{what} channels ({channels}) not divisible by groups ({groups})")]
    GroupDivisibility {
        what: &'static str,
        channels: usize,
        groups: usize,
    },

    #[error("{axis} = {size} is odd; the Haar transform needs even spatial dimensions")]
    OddDimension { axis: &'static str, size: usize },

    #[error("{axis} = {size} is not divisible by {divisor}")]
    Indivisible {
        axis: &'static str,
        size: usize,
        divisor: usize,
    },

    #[error("unsupported convolution: {0}")]
    Unsupported(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("malformed tensor file: {0}")]
    Format(String),

    #[error(transparent)]
    Graph(#[from] GraphError),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn check_dim(axis: &'static str, expected: usize, actual: usize) -> Result<()> {
        if expected == actual {
            Ok(())
        } else {
            Err(Error::ShapeMismatch { axis, expected, actual })
        }
    }
}
