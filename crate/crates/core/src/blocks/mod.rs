//! The four architectural blocks: wavelet stem, even downsampling,
//! transposed upsampling and the large-kernel depthwise-separable block.
//!
//! Block outputs are plain compositions of the tensor-level ops, so each one
//! is bit-identical to the same pipeline written out by hand.

mod mswe;
mod resample;
mod rlkc;

pub use mswe::{
    hf_compress, hf_compress_pre, mswe_backward, mswe_forward, mswe_forward_cached, mswe_fuse, mswe_specs, MsweCache,
    MsweParams,
};
pub use resample::{
    even_downsample, even_downsample_backward, even_downsample_spec, transposed_upsample, transposed_upsample_backward,
    transposed_upsample_spec,
};
pub use rlkc::{
    rlkc_backward, rlkc_depthwise, rlkc_forward, rlkc_forward_cached, rlkc_param_count, rlkc_specs, RlkcParams,
    RLKC_KERNEL,
};
