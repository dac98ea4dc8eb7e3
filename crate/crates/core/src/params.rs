//! Named parameter access, seeded initialization and parameter bundles on disk.
//!
//! A bundle directory holds one raw tensor file per parameter plus
//! `manifest.txt`:
//!
//! ```text
//! # ysoob-params v1
//! <role> <filename>
//! ```
//!
//! Blank lines and lines starting with `#` after the header are ignored.
//! `role` is a dotted path such as `stem.weight` or `b8_body.pointwise.bias`;
//! `filename` is relative to the bundle directory. Kernels keep their 4-D
//! weight shape; bias vectors are stored as `(1, C, 1, 1)`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv::{ConvSpec, ConvWeights};
use crate::error::{Error, Result};
use crate::io;
use crate::tensor::{Element, Shape, Tensor};

pub const MANIFEST: &str = "manifest.txt";
const MANIFEST_HEADER: &str = "# ysoob-params v1";

/// Named flat views over every learned tensor, in a fixed order.
pub trait Parameters<T> {
    fn tensors(&self) -> Vec<(String, &[T])>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut [T])>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

pub(crate) fn prefixed<'a, T>(prefix: &str, items: Vec<(String, &'a [T])>) -> Vec<(String, &'a [T])> {
    items.into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)).collect()
}

pub(crate) fn prefixed_mut<'a, T>(prefix: &str, items: Vec<(String, &'a mut [T])>) -> Vec<(String, &'a mut [T])> {
    items.into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)).collect()
}

/// Uniform `[-1/√fan_in, 1/√fan_in]` initializer over a seeded ChaCha8 stream.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// A uniform draw in `[-bound, bound)`.
    pub fn uniform(&mut self, bound: f64) -> f64 {
        (self.rng.gen::<f64>() * 2.0 - 1.0) * bound
    }

    pub fn tensor<T: Element>(&mut self, shape: Shape, bound: f64) -> Tensor<T> {
        let data = (0..shape.numel()).map(|_| T::of(self.uniform(bound))).collect();
        Tensor::from_vec(shape, data).expect("length matches shape")
    }

    pub fn conv<T: Element>(&mut self, spec: &ConvSpec) -> ConvWeights<T> {
        let ws = spec.weight_shape();
        // Fan-in is the per-output receptive field; dim 1 of either layout.
        let fan_in = (ws.c * ws.h * ws.w).max(1) as f64;
        let bound = 1.0 / fan_in.sqrt();
        let kernel = self.tensor(ws, bound);
        let bias = spec
            .bias
            .then(|| (0..spec.out_channels).map(|_| T::of(self.uniform(bound))).collect());
        ConvWeights { kernel, bias }
    }
}

/// Shape a flat parameter is stored with: the kernel shape when the length
/// matches, otherwise `(1, len, 1, 1)`.
fn storage_shape(name: &str, len: usize, kernels: &BTreeMap<String, Shape>) -> Shape {
    match kernels.get(name) {
        Some(s) if s.numel() == len => *s,
        _ => Shape::new(1, len, 1, 1),
    }
}

/// Writes every tensor of `params` into `dir`. `kernel_shapes` maps role to
/// 4-D shape for tensors that should keep one.
pub fn save_bundle<T: Element, P: Parameters<T> + ?Sized>(
    dir: &Path,
    params: &P,
    kernel_shapes: &BTreeMap<String, Shape>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    for (role, data) in params.tensors() {
        let file = format!("{role}.tnsr");
        let shape = storage_shape(&role, data.len(), kernel_shapes);
        let t = Tensor::from_vec(shape, data.to_vec())?;
        io::save(dir.join(&file), &t)?;
        manifest.push_str(&format!("{role} {file}\n"));
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == MANIFEST_HEADER => {}
        _ => return Err(Error::Format(format!("manifest must start with {MANIFEST_HEADER:?}"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(role), Some(file), None) => out.push((role.to_string(), file.to_string())),
            _ => {
                return Err(Error::Format(format!(
                    "manifest line {}: expected `<role> <filename>`",
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

/// Fills `params` from a bundle directory. Every role must be present with
/// the right element count; extra roles are an error.
pub fn load_bundle<T: Element, P: Parameters<T> + ?Sized>(dir: &Path, params: &mut P) -> Result<()> {
    let mut files: BTreeMap<String, String> = read_manifest(dir)?.into_iter().collect();
    for (role, slot) in params.tensors_mut() {
        let file = files
            .remove(&role)
            .ok_or_else(|| Error::Format(format!("bundle is missing role {role}")))?;
        let t = io::load(dir.join(file))?;
        Error::check_dim("bundle tensor length", slot.len(), t.data().len())?;
        for (d, s) in slot.iter_mut().zip(t.data()) {
            *d = T::of(*s as f64);
        }
    }
    if let Some(extra) = files.keys().next() {
        return Err(Error::Format(format!("bundle has unexpected role {extra}")));
    }
    Ok(())
}
