//! Architecture rewrites: resampling swap, wavelet stem, large-kernel
//! reconstruction and channel compression.
//!
//! Every pass re-validates its output. Substitutions are idempotent by
//! construction (nothing they rewrite matches their own pattern again);
//! compression records itself in [`GraphSpec::passes`] and is a no-op on a
//! graph that already carries that mark.

use std::collections::BTreeSet;

use super::{GraphError, GraphResult, GraphSpec, NodeKind, NodeSpec, Tag};
use crate::conv::ConvSpec;
use crate::ops::Activation;

pub const PASS_CHANNEL_COMPRESSION: &str = "channel_compression";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpsampleGroups {
    /// One 2×2 filter per channel (`groups = C`).
    #[default]
    Depthwise,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SubstitutionOptions {
    /// 3×3 stride-2 `downsample` convs become 2×2 stride-2.
    pub even_downsample: bool,
    /// `nearest_upsample` nodes become 2×2 stride-2 transposed convs.
    pub transposed_upsample: bool,
    pub upsample_groups: UpsampleGroups,
    /// The `stem`-tagged chain collapses into one mswe node.
    pub mswe_stem: bool,
    /// Hidden width `C'` of the stem; defaults to a quarter of its output width.
    pub mswe_hidden: Option<usize>,
    /// Backbone nodes rebuilt as rlkc blocks.
    pub rlkc_nodes: Vec<String>,
}

impl SubstitutionOptions {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn all(rlkc_nodes: &[&str]) -> Self {
        SubstitutionOptions {
            even_downsample: true,
            transposed_upsample: true,
            mswe_stem: true,
            rlkc_nodes: rlkc_nodes.iter().map(|s| s.to_string()).collect(),
            ..Self::default()
        }
    }
}

fn mark(g: &mut GraphSpec, pass: &str) {
    if !g.passes.iter().any(|p| p == pass) {
        g.passes.push(pass.to_string());
    }
}

pub fn apply_ysoob_substitutions(g: &GraphSpec, opts: &SubstitutionOptions) -> GraphResult<GraphSpec> {
    let topo = g.analyze()?;
    let mut out = g.clone();

    if opts.even_downsample {
        if !out.nodes.iter().any(|n| n.has(Tag::Downsample)) {
            return Err(GraphError::MissingTag(Tag::Downsample));
        }
        for node in out.nodes.iter_mut().filter(|n| n.has(Tag::Downsample)) {
            if let NodeKind::Conv { spec, .. } = &mut node.kind {
                if spec.kernel == (3, 3) && spec.stride == (2, 2) {
                    spec.kernel = (2, 2);
                    spec.padding = (0, 0);
                }
            }
        }
        mark(&mut out, "even_downsample");
    }

    if opts.transposed_upsample {
        for (i, node) in out.nodes.iter_mut().enumerate() {
            if node.kind == NodeKind::NearestUpsample {
                let c = topo.shapes[i].c;
                let groups = match opts.upsample_groups {
                    UpsampleGroups::Depthwise => c,
                    UpsampleGroups::Dense => 1,
                };
                node.kind = NodeKind::ConvTranspose {
                    spec: ConvSpec::transposed_2x2(c, c).groups(groups),
                    activation: Activation::Silu,
                };
                node.tags.insert(Tag::Upsample);
            }
        }
        mark(&mut out, "transposed_upsample");
    }

    if opts.mswe_stem {
        replace_stem(&mut out, opts.mswe_hidden)?;
        mark(&mut out, "mswe_stem");
    }

    for id in &opts.rlkc_nodes {
        let node = out
            .nodes
            .iter_mut()
            .find(|n| &n.id == id)
            .ok_or_else(|| GraphError::Invalid(format!("rlkc target `{id}` does not exist")))?;
        if !node.has(Tag::Backbone) {
            return Err(GraphError::node(id, "rlkc target must be tagged `backbone`"));
        }
        let (in_ch, out_ch) = match node.kind {
            NodeKind::Rlkc { .. } => continue,
            NodeKind::Opaque { in_ch, out_ch, .. } => (in_ch, out_ch),
            NodeKind::Conv { spec, .. }
                if spec.stride == (1, 1)
                    && spec.kernel.0 == 2 * spec.padding.0 + 1
                    && spec.kernel.1 == 2 * spec.padding.1 + 1 =>
            {
                (spec.in_channels, spec.out_channels)
            }
            ref k => {
                return Err(GraphError::node(
                    id,
                    format!("{} node does not preserve spatial size; cannot become rlkc", k.name()),
                ))
            }
        };
        node.kind = NodeKind::Rlkc {
            in_ch,
            out_ch,
            bias: true,
            activation: Activation::Silu,
        };
    }
    if !opts.rlkc_nodes.is_empty() {
        mark(&mut out, "rlkc");
    }

    out.validate()?;
    Ok(out)
}

/// Collapses the stem chain into one mswe node that keeps the first stem
/// node's id and feeds whatever the last stem node fed.
fn replace_stem(g: &mut GraphSpec, hidden: Option<usize>) -> GraphResult<()> {
    let topo = g.analyze()?;
    let stem: Vec<usize> = topo
        .order
        .iter()
        .copied()
        .filter(|&i| g.nodes[i].has(Tag::Stem))
        .collect();
    if stem.is_empty() {
        return Err(GraphError::MissingTag(Tag::Stem));
    }
    if stem.len() == 1 && matches!(g.nodes[stem[0]].kind, NodeKind::Mswe { .. }) {
        return Ok(());
    }
    for w in stem.windows(2) {
        let (a, b) = (w[0], w[1]);
        if topo.inputs[b] != [a] || topo.consumers[a] != [b] {
            return Err(GraphError::node(
                &g.nodes[b].id,
                "stem nodes must form a single chain to be replaced by mswe",
            ));
        }
    }
    let (first, last) = (stem[0], *stem.last().expect("non-empty"));
    let in_ch = topo.input_shape_of(first).map(|s| s.c).unwrap_or(0);
    let out_ch = topo.shapes[last].c;
    if out_ch % 2 != 0 {
        return Err(GraphError::node(
            &g.nodes[last].id,
            "stem output width must be even for mswe",
        ));
    }
    let hidden_ch = hidden.unwrap_or((out_ch / 4).max(1));
    let ids: BTreeSet<String> = stem.iter().map(|&i| g.nodes[i].id.clone()).collect();
    let first_id = g.nodes[first].id.clone();
    let tags: BTreeSet<Tag> = stem.iter().flat_map(|&i| g.nodes[i].tags.iter().copied()).collect();

    let mut replacement = NodeSpec::new(
        first_id.clone(),
        NodeKind::Mswe {
            in_ch,
            hidden_ch,
            out_ch,
            bias: true,
            activation: Activation::Silu,
        },
    );
    replacement.tags = tags;
    g.nodes = std::mem::take(&mut g.nodes)
        .into_iter()
        .filter_map(|n| {
            if n.id == first_id {
                Some(replacement.clone())
            } else if ids.contains(&n.id) {
                None
            } else {
                Some(n)
            }
        })
        .collect();
    g.edges.retain(|e| !(ids.contains(&e.from) && ids.contains(&e.to)));
    for e in g.edges.iter_mut() {
        if ids.contains(&e.from) {
            e.from = first_id.clone();
        }
    }
    Ok(())
}

fn halve(w: usize) -> usize {
    (w / 2).max(1)
}

/// Halves the output width of the `backbone_final` and `neck_final` nodes
/// and rewrites the input width of every node downstream that needs it.
///
/// Depthwise consumers (`groups == in == out`) stay depthwise, so their
/// output width shrinks too and the rewrite continues past them. Opaque
/// consumers have fixed declared costs and are reported as errors.
pub fn apply_channel_compression(g: &GraphSpec) -> GraphResult<GraphSpec> {
    if g.passes.iter().any(|p| p == PASS_CHANNEL_COMPRESSION) {
        return Ok(g.clone());
    }
    g.validate()?;
    let mut out = g.clone();
    let targets: Vec<usize> = (0..out.nodes.len())
        .filter(|&i| out.nodes[i].has(Tag::BackboneFinal) || out.nodes[i].has(Tag::NeckFinal))
        .collect();
    if targets.is_empty() {
        return Err(GraphError::MissingTag(Tag::BackboneFinal));
    }
    for &i in &targets {
        let node = &mut out.nodes[i];
        match &mut node.kind {
            NodeKind::Conv { spec, .. } | NodeKind::ConvTranspose { spec, .. } => {
                if spec.groups > 1 && spec.groups == spec.in_channels && spec.groups == spec.out_channels {
                    return Err(GraphError::node(
                        &node.id,
                        "cannot halve a depthwise layer's output alone",
                    ));
                }
                spec.out_channels = halve(spec.out_channels);
                if spec.out_channels % spec.groups != 0 {
                    return Err(GraphError::node(&node.id, "halved width is not divisible by groups"));
                }
            }
            NodeKind::Rlkc { out_ch, .. } => *out_ch = halve(*out_ch),
            NodeKind::Mswe { out_ch, .. } => {
                *out_ch = halve(*out_ch);
                if *out_ch % 2 != 0 {
                    return Err(GraphError::node(&node.id, "halved mswe width must stay even"));
                }
            }
            k => {
                return Err(GraphError::node(
                    &node.id,
                    format!("{} node has no adjustable output width", k.name()),
                ))
            }
        }
    }

    // Structure is unchanged by width edits, so the order stays valid.
    let topo = g.analyze()?;
    let mut channels = topo.shapes.iter().map(|s| s.c).collect::<Vec<_>>();
    for &i in &topo.order {
        let ins: Vec<usize> = topo.inputs[i].iter().map(|&p| channels[p]).collect();
        let node = &mut out.nodes[i];
        let id = node.id.clone();
        let c_in = ins.first().copied().unwrap_or(0);
        match &mut node.kind {
            NodeKind::Input => {}
            NodeKind::Conv { spec, .. } | NodeKind::ConvTranspose { spec, .. } => {
                if spec.in_channels != c_in {
                    let depthwise =
                        spec.groups > 1 && spec.groups == spec.in_channels && spec.groups == spec.out_channels;
                    if depthwise {
                        spec.groups = c_in;
                        spec.out_channels = c_in;
                    }
                    spec.in_channels = c_in;
                    spec.validate().map_err(|e| GraphError::node(&id, e.to_string()))?;
                }
                channels[i] = spec.out_channels;
            }
            NodeKind::Mswe { in_ch, out_ch, .. } | NodeKind::Rlkc { in_ch, out_ch, .. } => {
                *in_ch = c_in;
                channels[i] = *out_ch;
            }
            NodeKind::Opaque { in_ch, out_ch, .. } => {
                if *in_ch != c_in {
                    return Err(GraphError::node(
                        &id,
                        format!(
                            "opaque node declares in_ch {in_ch} with fixed costs; compression would feed it {c_in}"
                        ),
                    ));
                }
                channels[i] = *out_ch;
            }
            NodeKind::Dwt => channels[i] = 4 * c_in,
            NodeKind::NearestUpsample => channels[i] = c_in,
            NodeKind::Concat => channels[i] = ins.iter().sum(),
            NodeKind::Add => channels[i] = c_in,
        }
    }
    mark(&mut out, PASS_CHANNEL_COMPRESSION);
    out.validate()?;
    Ok(out)
}

/// Rows of the ablation ladder, each a fixed combination of passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    Baseline,
    /// Wavelet stem only.
    Ab1,
    /// Transposed upsampling and even downsampling.
    Ab2,
    /// Channel compression and large-kernel reconstruction.
    Ab3,
    /// Everything.
    Ysoob,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Baseline,
        Ablation::Ab1,
        Ablation::Ab2,
        Ablation::Ab3,
        Ablation::Ysoob,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Baseline => "baseline-v12n",
            Ablation::Ab1 => "ab1",
            Ablation::Ab2 => "ab2",
            Ablation::Ab3 => "ab3",
            Ablation::Ysoob => "ysoob-n",
        }
    }

    pub fn options(self, rlkc_nodes: &[&str]) -> (SubstitutionOptions, bool) {
        let rlkc: Vec<String> = rlkc_nodes.iter().map(|s| s.to_string()).collect();
        match self {
            Ablation::Baseline => (SubstitutionOptions::none(), false),
            Ablation::Ab1 => (
                SubstitutionOptions {
                    mswe_stem: true,
                    ..Default::default()
                },
                false,
            ),
            Ablation::Ab2 => (
                SubstitutionOptions {
                    even_downsample: true,
                    transposed_upsample: true,
                    ..Default::default()
                },
                false,
            ),
            Ablation::Ab3 => (
                SubstitutionOptions {
                    rlkc_nodes: rlkc,
                    ..Default::default()
                },
                true,
            ),
            Ablation::Ysoob => (SubstitutionOptions::all(rlkc_nodes), true),
        }
    }
}

/// Builds an ablation row from the baseline.
pub fn derive_ablation(base: &GraphSpec, which: Ablation, rlkc_nodes: &[&str]) -> GraphResult<GraphSpec> {
    let (opts, compress) = which.options(rlkc_nodes);
    let mut g = apply_ysoob_substitutions(base, &opts)?;
    if compress {
        g = apply_channel_compression(&g)?;
    }
    g.name = which.name().to_string();
    Ok(g)
}
