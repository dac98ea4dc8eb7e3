//! Bundled reference graphs.
//!
//! `baseline-v12n` stands in for the N-scale baseline detector. Its
//! attention and cross-stage modules are opaque nodes whose declared costs
//! were calibrated so the whole graph totals about 2.6 M parameters and
//! 6.3 GFLOPs at 640×640; it is a calibrated fixture, not a transcription.
//! `ab1`, `ab2`, `ab3` and `ysoob-n` are derived from it with
//! [`derive_ablation`](super::derive_ablation) and checked in so they can be
//! read and diffed; a test keeps them in sync with the passes.

use super::{derive_ablation, parse_graph, Ablation, GraphError, GraphResult, GraphSpec};

/// Backbone nodes rebuilt as rlkc blocks in the reference derivation.
pub const REFERENCE_RLKC_NODES: &[&str] = &["b8_body"];

const BUNDLED: &[(&str, &str)] = &[
    ("baseline-v12n", include_str!("../../fixtures/baseline-v12n.json")),
    ("ab1", include_str!("../../fixtures/ab1.json")),
    ("ab2", include_str!("../../fixtures/ab2.json")),
    ("ab3", include_str!("../../fixtures/ab3.json")),
    ("ysoob-n", include_str!("../../fixtures/ysoob-n.json")),
    ("mswe-stem", include_str!("../../fixtures/mswe-stem.json")),
    ("toy-mswe-rlkc", include_str!("../../fixtures/toy-mswe-rlkc.json")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

pub fn source(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load(name: &str) -> GraphResult<GraphSpec> {
    let text = source(name).ok_or_else(|| GraphError::Invalid(format!("no bundled graph named `{name}`")))?;
    parse_graph(text)
}

/// The ablation ladder recomputed from the bundled baseline.
pub fn derive_reference(which: Ablation) -> GraphResult<GraphSpec> {
    derive_ablation(&load("baseline-v12n")?, which, REFERENCE_RLKC_NODES)
}
