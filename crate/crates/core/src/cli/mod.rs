//! The `ysoob` command line.
//!
//! Exit codes: 0 success, 1 verification or training failure, 2 usage or
//! configuration error.

mod bench;
mod format;
mod pnm;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use bench::{bench, checksum, BenchResult};
pub use format::sig6;
pub use pnm::ImageBuffer;

use crate::error::{Error, Result};
use crate::graph::{self, fixtures, Ablation, GraphSpec, ParamBundle};
use crate::parallel;
use crate::tensor::{Shape, Tensor};
use crate::verify::{self, GradTarget, ToyTrainConfig};
use crate::wavelet::{self, WaveletBands};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "ysoob",
    version,
    about = "Cost analysis, wavelet decomposition and verification tools"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parameter and FLOP report for a graph config.
    Cost {
        /// Graph JSON file or bundled graph name.
        #[arg(long)]
        graph: String,
        /// Second graph to measure reductions against.
        #[arg(long)]
        baseline: Option<String>,
        /// Override the input shape, `N,C,H,W`.
        #[arg(long)]
        input_shape: Option<Shape>,
    },
    /// Haar decomposition of a PGM/PPM image into band tensors.
    Dwt {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        levels: usize,
    },
    /// Finite-difference gradient check of one block.
    Gradcheck {
        #[arg(long)]
        target: GradTarget,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = verify::DEFAULT_EPS)]
        eps: f64,
        /// Round every value to a multiple of 2^-6 and step by 2^-10, making
        /// linear targets exact.
        #[arg(long, conflicts_with = "eps")]
        dyadic: bool,
    },
    /// Train a graph on the synthetic denoising task and write the loss curve.
    TrainToy {
        #[arg(long, default_value = "toy-mswe-rlkc")]
        graph: String,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value_t = 0.937)]
        momentum: f64,
        #[arg(long, default_value_t = 0.0005)]
        wd: f64,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time forward passes of a graph with seeded weights.
    Bench {
        #[arg(long)]
        graph: String,
        #[arg(long, default_value_t = 100)]
        iters: usize,
        #[arg(long, default_value_t = 10)]
        warmup: usize,
        #[arg(long, env = "YSOOB_THREADS")]
        threads: Option<usize>,
        /// Input shape `N,C,H,W`; defaults to the graph's with batch 1.
        #[arg(long)]
        shape: Option<Shape>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Rewrite the bundled ablation configs from the baseline.
    Derive {
        #[arg(long)]
        out: PathBuf,
    },
}

/// Resolves a file path or, failing that, a bundled graph name.
pub fn load_graph(arg: &str) -> Result<GraphSpec> {
    let path = Path::new(arg);
    if path.is_file() {
        return Ok(graph::parse_graph(&std::fs::read_to_string(path)?)?);
    }
    if fixtures::source(arg).is_some() {
        return Ok(fixtures::load(arg)?);
    }
    let known: Vec<_> = fixtures::names().collect();
    Err(Error::InvalidArgument(format!(
        "`{arg}` is neither a file nor a bundled graph ({})",
        known.join(", ")
    )))
}

fn cost(graph: &str, baseline: Option<&str>, shape: Option<Shape>) -> Result<String> {
    let reshape = |g: GraphSpec| -> Result<GraphSpec> {
        match shape {
            Some(s) => Ok(g.with_input_shape(s)?),
            None => Ok(g),
        }
    };
    let g = reshape(load_graph(graph)?)?;
    let report = match baseline {
        Some(b) => graph::compare_costs(&reshape(load_graph(b)?)?, &g)?,
        None => graph::cost_report(&g)?,
    };
    Ok(report.to_string())
}

fn band_file(name: &str, level: usize) -> String {
    if level == 1 {
        format!("{name}.tnsr")
    } else {
        format!("{name}_{level}.tnsr")
    }
}

/// Decomposes `image` `levels` times (each level splits the previous LL),
/// writes the bands into `out` and returns the energy report text.
pub fn dwt(image: &Path, out: &Path, levels: usize) -> Result<String> {
    if levels == 0 {
        return Err(Error::InvalidArgument("--levels must be >= 1".into()));
    }
    let img = ImageBuffer::read(image)?;
    let mut x: Tensor<f64> = img.to_tensor();
    let mut all: Vec<WaveletBands<f64>> = Vec::with_capacity(levels);
    for _ in 0..levels {
        let b = wavelet::haar_dwt2(&x)?;
        x = b.ll.clone();
        all.push(b);
    }
    std::fs::create_dir_all(out)?;
    let mut text = format!(
        "# haar dwt band norms, samples scaled by 1/255\n# image {}x{} channels {} levels {levels}\nlevel ll hl lh hh hf_total\n",
        img.width, img.height, img.channels
    );
    for (i, b) in all.iter().enumerate() {
        let level = i + 1;
        for (name, t) in [("ll", &b.ll), ("hl", &b.hl), ("lh", &b.lh), ("hh", &b.hh)] {
            crate::io::save(out.join(band_file(name, level)), t)?;
        }
        let e = wavelet::band_energy(b)?;
        let cols: Vec<String> = [e.ll, e.hl, e.lh, e.hh, e.hf_total].into_iter().map(sig6).collect();
        writeln!(text, "{level} {}", cols.join(" ")).expect("writing to a String");
    }
    std::fs::write(out.join("energy.txt"), &text)?;
    Ok(text)
}

fn derive(out: &Path) -> Result<String> {
    std::fs::create_dir_all(out)?;
    let mut log = String::new();
    for which in Ablation::ALL {
        let g = fixtures::derive_reference(which)?;
        let path = out.join(format!("{}.json", which.name()));
        std::fs::write(&path, graph::to_json(&g))?;
        writeln!(log, "wrote {}", path.display()).expect("writing to a String");
    }
    Ok(log)
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, usize::from)
}

enum Outcome {
    Pass(String),
    Fail(String),
}

fn dispatch(cmd: Command) -> Result<Outcome> {
    Ok(match cmd {
        Command::Cost {
            graph,
            baseline,
            input_shape,
        } => Outcome::Pass(cost(&graph, baseline.as_deref(), input_shape)?),
        Command::Dwt { image, out, levels } => Outcome::Pass(dwt(&image, &out, levels)?),
        Command::Gradcheck {
            target,
            seed,
            eps,
            dyadic,
        } => {
            let r = if dyadic {
                verify::grad_check_dyadic(target, seed)?
            } else {
                verify::grad_check(target, seed, eps)?
            };
            if r.pass() {
                Outcome::Pass(r.to_string())
            } else {
                Outcome::Fail(r.to_string())
            }
        }
        Command::TrainToy {
            graph,
            steps,
            lr,
            momentum,
            wd,
            batch,
            seed,
            out,
        } => {
            let cfg = ToyTrainConfig {
                steps,
                learning_rate: lr,
                momentum,
                weight_decay: wd,
                seed,
                batch,
            };
            cfg.validate()?;
            let g = load_graph(&graph)?;
            let mut params = ParamBundle::<f64>::init(&g, seed)?;
            let curve = verify::train_toy(&g, &mut params, &cfg)?;
            std::fs::write(&out, curve.to_csv())?;
            Outcome::Pass(format!(
                "# train-toy: {} steps {steps} seed {seed}\ninitial_loss {}\nfinal_loss {}\n",
                g.name,
                sig6(curve.losses[0]),
                sig6(curve.final_loss())
            ))
        }
        Command::Bench {
            graph,
            iters,
            warmup,
            threads,
            shape,
            seed,
        } => {
            if iters == 0 {
                return Err(Error::InvalidArgument("--iters must be >= 1".into()));
            }
            let g = load_graph(&graph)?;
            let s = g.input_shape;
            let shape = shape.unwrap_or(Shape::new(1, s.c, s.h, s.w));
            let threads = threads.unwrap_or_else(default_threads);
            let r = parallel::with_threads(threads, || bench(&g, shape, iters, warmup, seed, threads))??;
            Outcome::Pass(r.to_string())
        }
        Command::Derive { out } => Outcome::Pass(derive(&out)?),
    })
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Diverged { .. } | Error::Verification(_) => EXIT_FAILURE,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Reports go to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    match dispatch(cli.command) {
        Ok(Outcome::Pass(text)) => {
            let _ = write!(out, "{text}");
            EXIT_OK
        }
        Ok(Outcome::Fail(text)) => {
            let _ = write!(out, "{text}");
            EXIT_FAILURE
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}
