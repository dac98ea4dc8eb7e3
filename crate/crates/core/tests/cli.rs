use std::path::Path;
use std::process::{Command, Output};

use ysoob::cli::ImageBuffer;

fn ysoob(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ysoob"))
        .args(args)
        .env_remove("YSOOB_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Value after `key ` on the line that starts with it.
fn field<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')))
        .unwrap_or_else(|| panic!("no `{key}` in:\n{text}"))
        .split_whitespace()
        .next()
        .unwrap()
}

fn pct(text: &str, key: &str) -> f64 {
    field(text, key).trim_end_matches('%').parse().unwrap()
}

fn energy_rows(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .filter(|l| l.starts_with(|c: char| c.is_ascii_digit()))
        .map(|l| l.split_whitespace().map(|v| v.parse().unwrap()).collect())
        .collect()
}

fn write(dir: &Path, name: &str, body: &[u8]) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn help_exits_zero() {
    let o = ysoob(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    for cmd in ["cost", "dwt", "gradcheck", "train-toy", "bench"] {
        assert!(stdout(&o).contains(cmd));
    }
    assert_eq!(ysoob(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn cost_reports_reduction() {
    let o = ysoob(&["cost", "--graph", "ysoob-n", "--baseline", "baseline-v12n"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!((pct(&text, "param_reduction") - 53.85).abs() <= 5.0, "{text}");
    assert!((pct(&text, "flops_reduction") - 25.40).abs() <= 5.0, "{text}");
    assert!(text.contains("(1.2 M)") && text.contains("(4.7 G)"), "{text}");
}

#[test]
fn cost_of_single_conv_and_shape_override() {
    let dir = tempfile::tempdir().unwrap();
    let g = write(
        dir.path(),
        "c.json",
        br#"{"version":1,"name":"c","input_shape":[1,16,8,8],"nodes":[{"id":"x","kind":"input"},
        {"id":"c","kind":"conv","in_ch":16,"out_ch":32,"kernel":3,"bias":false}],"edges":[["x","c",0]]}"#,
    );
    let o = ysoob(&["cost", "--graph", &g]);
    assert_eq!(field(&stdout(&o), "total_params"), "4608");
    let a = ysoob(&["cost", "--graph", &g, "--input-shape", "2,16,10,10"]);
    let flops: u64 = field(&stdout(&a), "total_flops").parse().unwrap();
    assert_eq!(flops, 2 * 9 * 16 * 32 * 2 * 8 * 8);
    assert_eq!(
        ysoob(&["cost", "--graph", &g, "--input-shape", "1,3,8"]).status.code(),
        Some(2)
    );
}

#[test]
fn cost_config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cyc = write(
        dir.path(),
        "cyc.json",
        br#"{"version":1,"name":"cyc","input_shape":[1,4,8,8],"nodes":[{"id":"x","kind":"input"},
 {"id":"a","kind":"conv","in_ch":4,"out_ch":4,"kernel":1},{"id":"b","kind":"conv","in_ch":4,"out_ch":4,"kernel":1},
 {"id":"s","kind":"add"}],
 "edges":[["x","s",0],["b","s",1],["s","a",0],["a","b",0]]}"#,
    );
    let o = ysoob(&["cost", "--graph", &cyc]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("cycle") && stderr(&o).contains("`b` -> `s`"),
        "{}",
        stderr(&o)
    );

    let bad = write(dir.path(), "bad.json", b"{\n  \"version\": 1,\n  \"name\": oops\n}\n");
    let o = ysoob(&["cost", "--graph", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    assert_eq!(ysoob(&["cost", "--graph", "no-such-graph"]).status.code(), Some(2));
}

#[test]
fn dwt_of_uniform_gray() {
    let dir = tempfile::tempdir().unwrap();
    let img = ImageBuffer::new(8, 6, 1, vec![128; 48]).unwrap();
    let path = dir.path().join("gray.pgm");
    img.write(&path).unwrap();
    let out = dir.path().join("bands");
    let o = ysoob(&["dwt", "--image", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = energy_rows(&stdout(&o));
    assert_eq!(rows[0][5], 0.0);
    let ll = ysoob::io::load(out.join("ll.tnsr")).unwrap();
    assert_eq!(ll.shape(), ysoob::Shape::new(1, 1, 3, 4));
    assert!(ll.data().iter().all(|&v| v == (2.0 * 128.0 / 255.0) as f32));
    for band in ["hl", "lh", "hh"] {
        assert!(ysoob::io::load(out.join(format!("{band}.tnsr")))
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }
    assert_eq!(std::fs::read_to_string(out.join("energy.txt")).unwrap(), stdout(&o));
}

#[test]
fn dwt_of_checkerboard_lands_in_hh() {
    let dir = tempfile::tempdir().unwrap();
    let samples = (0..64)
        .map(|i| if (i % 8 + i / 8) % 2 == 0 { 255 } else { 0 })
        .collect();
    let path = dir.path().join("check.pgm");
    ImageBuffer::new(8, 8, 1, samples).unwrap().write(&path).unwrap();
    let o = ysoob(&[
        "dwt",
        "--image",
        path.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    let r = &energy_rows(&stdout(&o))[0];
    assert_eq!((r[2], r[3]), (0.0, 0.0));
    assert_eq!(r[4], 4.0);
    // All detail energy is diagonal; LL only carries the 0.5 mean.
    assert_eq!(r[5], r[4]);
}

#[test]
fn dwt_matches_natural_image_golden() {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    let dir = tempfile::tempdir().unwrap();
    let o = ysoob(&[
        "dwt",
        "--image",
        data.join("astronaut64.ppm").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--levels",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let got = energy_rows(&stdout(&o));
    let want = energy_rows(&std::fs::read_to_string(data.join("astronaut64.energy")).unwrap());
    assert_eq!(got.len(), 2);
    for (g, w) in got.iter().flatten().zip(want.iter().flatten()) {
        assert!((g - w).abs() <= 1e-5 * w.abs().max(1.0), "{g} vs {w}");
    }
    for f in ["ll.tnsr", "hh.tnsr", "ll_2.tnsr", "hh_2.tnsr"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
}

#[test]
fn dwt_input_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let odd = dir.path().join("odd.pgm");
    ImageBuffer::new(5, 4, 1, vec![0; 20]).unwrap().write(&odd).unwrap();
    let o = ysoob(&["dwt", "--image", odd.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("odd"), "{}", stderr(&o));
    let ascii = write(dir.path(), "a.pgm", b"P2\n2 2\n255\n0 0 0 0\n");
    let o = ysoob(&["dwt", "--image", &ascii, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("magic"), "{}", stderr(&o));
}

#[test]
fn gradcheck_exit_codes() {
    let o = ysoob(&["gradcheck", "--target", "mswe", "--seed", "0"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("result PASS"));
    assert_eq!(
        ysoob(&["gradcheck", "--target", "conv", "--eps", "1"]).status.code(),
        Some(2)
    );
    assert_eq!(ysoob(&["gradcheck", "--target", "lstm"]).status.code(), Some(2));

    let o = ysoob(&["gradcheck", "--target", "conv", "--seed", "2", "--dyadic"]);
    assert_eq!(o.status.code(), Some(0));
    let max_rel: f64 = stdout(&o).rsplit("max_rel=").next().unwrap().trim().parse().unwrap();
    assert!(max_rel < 1e-10, "{}", stdout(&o));
}

#[test]
fn train_toy_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let csv = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    let o = ysoob(&[
        "train-toy",
        "--steps",
        "5",
        "--lr",
        "0",
        "--seed",
        "1",
        "--out",
        &csv("flat.csv"),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(csv("flat.csv")).unwrap();
    let losses: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(text.lines().next(), Some("step,loss"));
    assert_eq!(losses.len(), 5);
    assert!(losses.iter().all(|l| *l == losses[0]));

    for name in ["a.csv", "b.csv"] {
        let o = ysoob(&["train-toy", "--steps", "20", "--seed", "3", "--out", &csv(name)]);
        assert_eq!(o.status.code(), Some(0));
    }
    assert_eq!(
        std::fs::read(csv("a.csv")).unwrap(),
        std::fs::read(csv("b.csv")).unwrap()
    );

    let o = ysoob(&[
        "train-toy",
        "--steps",
        "100",
        "--lr",
        "100",
        "--seed",
        "0",
        "--out",
        &csv("nan.csv"),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("diverged at step"), "{}", stderr(&o));
    assert_eq!(
        ysoob(&["train-toy", "--steps", "0", "--out", &csv("z.csv")])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn bench_full_resolution_mswe() {
    let o = ysoob(&[
        "bench",
        "--graph",
        "mswe-stem",
        "--iters",
        "100",
        "--warmup",
        "2",
        "--seed",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let get = |k: &str| field(&text, k).parse::<f64>().unwrap();
    assert_eq!(field(&text, "input_shape"), "1,3,640,640");
    assert_eq!(get("iterations"), 100.0);
    assert!(get("p50_us") <= get("p99_us"));
    assert!(get("min_us") <= get("mean_us"));
    assert_eq!(field(&text, "checksum").len(), "sha256:".len() + 64);
}

#[test]
fn bench_checksum_is_thread_independent() {
    let sums: Vec<String> = ["1", "2", "8"]
        .into_iter()
        .map(|t| {
            let o = Command::new(env!("CARGO_BIN_EXE_ysoob"))
                .args([
                    "bench",
                    "--graph",
                    "toy-mswe-rlkc",
                    "--iters",
                    "2",
                    "--warmup",
                    "0",
                    "--shape",
                    "1,3,32,32",
                ])
                .env("YSOOB_THREADS", t)
                .output()
                .unwrap();
            assert_eq!(field(&stdout(&o), "threads"), t);
            field(&stdout(&o), "checksum").to_string()
        })
        .collect();
    assert!(sums.iter().all(|s| *s == sums[0]), "{sums:?}");
}

#[test]
fn bench_usage_errors() {
    assert_eq!(
        ysoob(&["bench", "--graph", "mswe-stem", "--iters", "0"]).status.code(),
        Some(2)
    );
    let o = ysoob(&["bench", "--graph", "baseline-v12n", "--iters", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("opaque"));
}

#[test]
fn derive_reproduces_bundled_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let o = ysoob(&["derive", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    for name in ["baseline-v12n", "ab1", "ab2", "ab3", "ysoob-n"] {
        let file = format!("{name}.json");
        let got = std::fs::read_to_string(dir.path().join(&file)).unwrap();
        assert_eq!(got, ysoob::graph::fixtures::source(name).unwrap(), "{file}");
    }
}
