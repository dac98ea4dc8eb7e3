//! Forward-pass timing with an output checksum.

use std::fmt;
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{execute, GraphSpec, ParamBundle};
use crate::params::Initializer;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub target: String,
    pub iterations: usize,
    pub warmup: usize,
    pub mean_us: f64,
    pub p50_us: f64,
    pub p99_us: f64,
    pub min_us: f64,
    pub input_shape: Shape,
    pub threads: usize,
    /// Hex SHA-256 of the little-endian `f32` bytes of every graph output.
    pub checksum: String,
}

/// Hex SHA-256 over the outputs in order.
pub fn checksum(outputs: &[(String, Tensor<f32>)]) -> String {
    let mut h = Sha256::new();
    for (_, t) in outputs {
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Runs on the current rayon pool; wrap in
/// [`with_threads`](crate::parallel::with_threads) to pin the width.
pub fn bench(
    g: &GraphSpec,
    shape: Shape,
    iterations: usize,
    warmup: usize,
    seed: u64,
    threads: usize,
) -> Result<BenchResult> {
    if iterations == 0 {
        return Err(Error::InvalidArgument("--iters must be >= 1".into()));
    }
    let g = g.with_input_shape(shape)?;
    let params = ParamBundle::<f32>::init(&g, seed)?;
    let x: Tensor<f32> = Initializer::new(seed.wrapping_add(1)).tensor(shape, 1.0);

    let mut sum: Option<String> = None;
    let mut times = Vec::with_capacity(iterations);
    for i in 0..warmup + iterations {
        let start = Instant::now();
        let out = execute(&g, &x, &params)?;
        let us = start.elapsed().as_secs_f64() * 1e6;
        let c = checksum(&out);
        match &sum {
            None => sum = Some(c),
            Some(prev) if *prev != c => {
                return Err(Error::Verification(format!("output checksum changed at iteration {i}")));
            }
            Some(_) => {}
        }
        if i >= warmup {
            times.push(us);
        }
    }
    let mean_us = times.iter().sum::<f64>() / times.len() as f64;
    times.sort_by(f64::total_cmp);
    Ok(BenchResult {
        target: g.name.clone(),
        iterations,
        warmup,
        mean_us,
        p50_us: percentile(&times, 50.0),
        p99_us: percentile(&times, 99.0),
        min_us: times[0],
        input_shape: shape,
        threads,
        checksum: sum.expect("at least one iteration"),
    })
}

impl fmt::Display for BenchResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# bench: {}", self.target)?;
        writeln!(f, "input_shape {}", self.input_shape)?;
        writeln!(f, "threads {}", self.threads)?;
        writeln!(f, "warmup {}", self.warmup)?;
        writeln!(f, "iterations {}", self.iterations)?;
        writeln!(f, "mean_us {:.1}", self.mean_us)?;
        writeln!(f, "p50_us {:.1}", self.p50_us)?;
        writeln!(f, "p99_us {:.1}", self.p99_us)?;
        writeln!(f, "min_us {:.1}", self.min_us)?;
        writeln!(f, "checksum sha256:{}", self.checksum)
    }
}
