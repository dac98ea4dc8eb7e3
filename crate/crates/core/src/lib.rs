//! Lightweighting blocks for small object detectors: a Haar wavelet stem
//! (MSWE), 2×2 even downsampling, 2×2 transposed upsampling and a 7×7
//! depthwise-separable large-kernel block (RLKC), plus the graph tooling to
//! cost, rewrite and run architectures built from them.

pub mod blocks;
pub mod cli;
pub mod conv;
pub mod error;
pub mod graph;
pub mod io;
pub mod ops;
pub mod parallel;
pub mod params;
pub mod tensor;
pub mod verify;
pub mod wavelet;

pub use error::{Error, Result};
pub use tensor::{Element, Shape, Tensor};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/tensors.md")]
    struct Tensors;
    #[doc = include_str!("../../../book/src/wavelet.md")]
    struct Wavelet;
    #[doc = include_str!("../../../book/src/blocks.md")]
    struct Blocks;
    #[doc = include_str!("../../../book/src/graphs.md")]
    struct Graphs;
    #[doc = include_str!("../../../book/src/verification.md")]
    struct Verification;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
