//! Architecture graphs: a validated DAG of nodes with shape inference,
//! substitution passes, exact cost accounting and a reference executor.

mod cost;
mod exec;
pub mod fixtures;
mod parse;
mod passes;

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::blocks::{mswe_specs, rlkc_specs};
use crate::conv::ConvSpec;
use crate::ops::Activation;
use crate::tensor::Shape;

pub use cost::{compare_costs, cost_report, node_cost, Comparison, CostReport, NodeCost};
pub use exec::{backward, execute, forward_trace, NodeParams, ParamBundle, Trace};
pub use parse::{parse_graph, to_json};
pub use passes::{
    apply_channel_compression, apply_ysoob_substitutions, derive_ablation, Ablation, SubstitutionOptions,
    UpsampleGroups, PASS_CHANNEL_COMPRESSION,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("syntax error at line {line}, column {column}: {msg}")]
    Syntax { line: usize, column: usize, msg: String },

    #[error("unsupported config version {0} (expected 1)")]
    Version(i64),

    #[error("duplicate node id `{0}`")]
    DuplicateId(String),

    #[error("edge `{from}` -> `{to}` references unknown node `{missing}`")]
    UnknownNode { from: String, to: String, missing: String },

    #[error("cycle detected at back edge `{from}` -> `{to}`")]
    Cycle { from: String, to: String },

    #[error("node `{node}`: expected {expected} input channels, `{producer}` provides {actual}")]
    ChannelMismatch {
        node: String,
        producer: String,
        expected: usize,
        actual: usize,
    },

    #[error("node `{node}`: {msg}")]
    Node { node: String, msg: String },

    #[error("{0}")]
    Invalid(String),

    #[error("no node tagged `{0}`")]
    MissingTag(Tag),

    #[error("node `{0}` is opaque and cannot be executed")]
    Opaque(String),

    #[error("missing or mismatched parameters for node `{0}`")]
    Params(String),
}

impl GraphError {
    pub(crate) fn node(node: &str, msg: impl Into<String>) -> Self {
        GraphError::Node {
            node: node.to_string(),
            msg: msg.into(),
        }
    }
}

pub type GraphResult<T> = std::result::Result<T, GraphError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    Stem,
    Backbone,
    Neck,
    Head,
    Downsample,
    Upsample,
    BackboneFinal,
    NeckFinal,
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Tag::Stem => "stem",
            Tag::Backbone => "backbone",
            Tag::Neck => "neck",
            Tag::Head => "head",
            Tag::Downsample => "downsample",
            Tag::Upsample => "upsample",
            Tag::BackboneFinal => "backbone_final",
            Tag::NeckFinal => "neck_final",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Input,
    /// `spec.transposed` is false.
    Conv {
        spec: ConvSpec,
        activation: Activation,
    },
    /// `spec.transposed` is true.
    ConvTranspose {
        spec: ConvSpec,
        activation: Activation,
    },
    /// `activation` is the block's internal activation.
    Mswe {
        in_ch: usize,
        hidden_ch: usize,
        out_ch: usize,
        bias: bool,
        activation: Activation,
    },
    Rlkc {
        in_ch: usize,
        out_ch: usize,
        bias: bool,
        activation: Activation,
    },
    /// Output is `[ll, hl, lh, hh]` stacked along channels.
    Dwt,
    Concat,
    Add,
    NearestUpsample,
    /// Spatial-size-preserving module with declared costs.
    Opaque {
        in_ch: usize,
        out_ch: usize,
        param_count: u64,
        flops_per_pixel: u64,
    },
}

impl NodeKind {
    pub fn name(&self) -> &'static str {
        match self {
            NodeKind::Input => "input",
            NodeKind::Conv { .. } => "conv",
            NodeKind::ConvTranspose { .. } => "conv_transpose",
            NodeKind::Mswe { .. } => "mswe",
            NodeKind::Rlkc { .. } => "rlkc",
            NodeKind::Dwt => "dwt",
            NodeKind::Concat => "concat",
            NodeKind::Add => "add",
            NodeKind::NearestUpsample => "nearest_upsample",
            NodeKind::Opaque { .. } => "opaque",
        }
    }

    /// Declared input channel count, for kinds that have one.
    pub fn in_channels(&self) -> Option<usize> {
        match *self {
            NodeKind::Conv { spec, .. } | NodeKind::ConvTranspose { spec, .. } => Some(spec.in_channels),
            NodeKind::Mswe { in_ch, .. } | NodeKind::Rlkc { in_ch, .. } | NodeKind::Opaque { in_ch, .. } => Some(in_ch),
            _ => None,
        }
    }

    /// Number of input slots, `None` for variadic kinds.
    fn arity(&self) -> Option<usize> {
        match self {
            NodeKind::Input => Some(0),
            NodeKind::Add => Some(2),
            NodeKind::Concat => None,
            _ => Some(1),
        }
    }

    pub fn is_learned(&self) -> bool {
        matches!(
            self,
            NodeKind::Conv { .. } | NodeKind::ConvTranspose { .. } | NodeKind::Mswe { .. } | NodeKind::Rlkc { .. }
        )
    }

    /// Convolution specs realized by this node, in execution order.
    pub fn conv_specs(&self) -> Vec<ConvSpec> {
        match *self {
            NodeKind::Conv { spec, .. } | NodeKind::ConvTranspose { spec, .. } => vec![spec],
            NodeKind::Mswe {
                in_ch,
                hidden_ch,
                out_ch,
                bias,
                ..
            } => mswe_specs(in_ch, hidden_ch, out_ch, bias)
                .map(|s| s.to_vec())
                .unwrap_or_default(),
            NodeKind::Rlkc {
                in_ch, out_ch, bias, ..
            } => rlkc_specs(in_ch, out_ch, bias).to_vec(),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub id: String,
    pub kind: NodeKind,
    pub tags: BTreeSet<Tag>,
}

impl NodeSpec {
    pub fn new(id: impl Into<String>, kind: NodeKind) -> Self {
        NodeSpec {
            id: id.into(),
            kind,
            tags: BTreeSet::new(),
        }
    }

    pub fn tagged(mut self, tags: impl IntoIterator<Item = Tag>) -> Self {
        self.tags.extend(tags);
        self
    }

    pub fn has(&self, tag: Tag) -> bool {
        self.tags.contains(&tag)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub slot: usize,
}

impl Edge {
    pub fn new(from: impl Into<String>, to: impl Into<String>, slot: usize) -> Self {
        Edge {
            from: from.into(),
            to: to.into(),
            slot,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphSpec {
    pub name: String,
    pub input_shape: Shape,
    pub nodes: Vec<NodeSpec>,
    pub edges: Vec<Edge>,
    /// Names of one-shot passes already applied; makes re-running them a no-op.
    pub passes: Vec<String>,
}

/// Resolved structure of a valid graph. All vectors are indexed by node
/// position in [`GraphSpec::nodes`].
#[derive(Debug, Clone)]
pub struct Topology {
    pub order: Vec<usize>,
    pub inputs: Vec<Vec<usize>>,
    pub consumers: Vec<Vec<usize>>,
    pub shapes: Vec<Shape>,
}

impl Topology {
    /// Nodes whose output nobody consumes, in node order.
    pub fn sinks(&self) -> Vec<usize> {
        (0..self.consumers.len())
            .filter(|&i| self.consumers[i].is_empty() && !self.inputs[i].is_empty())
            .collect()
    }

    pub fn input_shape_of(&self, node: usize) -> Option<Shape> {
        self.inputs[node].first().map(|&p| self.shapes[p])
    }
}

impl GraphSpec {
    pub fn new(name: impl Into<String>, input_shape: Shape) -> Self {
        GraphSpec {
            name: name.into(),
            input_shape,
            nodes: Vec::new(),
            edges: Vec::new(),
            passes: Vec::new(),
        }
    }

    /// Appends a node fed by `inputs` on slots `0..`.
    pub fn push(&mut self, node: NodeSpec, inputs: &[&str]) -> &mut Self {
        for (slot, from) in inputs.iter().enumerate() {
            self.edges.push(Edge::new(*from, node.id.clone(), slot));
        }
        self.nodes.push(node);
        self
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn node(&self, id: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn with_input_shape(&self, shape: Shape) -> GraphResult<Self> {
        let mut g = self.clone();
        g.input_shape = shape;
        g.analyze()?;
        Ok(g)
    }

    pub fn validate(&self) -> GraphResult<()> {
        self.analyze().map(|_| ())
    }

    /// Checks every structural and channel invariant and infers shapes.
    pub fn analyze(&self) -> GraphResult<Topology> {
        let n = self.nodes.len();
        let mut index = HashMap::with_capacity(n);
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id.is_empty() {
                return Err(GraphError::Invalid(format!("node #{i} has an empty id")));
            }
            if index.insert(node.id.as_str(), i).is_some() {
                return Err(GraphError::DuplicateId(node.id.clone()));
            }
        }
        if self.input_shape.validate().is_err() {
            return Err(GraphError::Invalid(format!(
                "input_shape {} has a zero dimension",
                self.input_shape
            )));
        }
        match self.nodes.iter().filter(|n| n.kind == NodeKind::Input).count() {
            1 => {}
            0 => return Err(GraphError::Invalid("graph has no input node".into())),
            k => {
                return Err(GraphError::Invalid(format!(
                    "graph has {k} input nodes; exactly one is supported"
                )))
            }
        }
        for tag in [Tag::BackboneFinal, Tag::NeckFinal] {
            let tagged: Vec<_> = self
                .nodes
                .iter()
                .filter(|n| n.has(tag))
                .map(|n| n.id.as_str())
                .collect();
            if tagged.len() > 1 {
                return Err(GraphError::Invalid(format!(
                    "tag `{tag}` appears on more than one node: {}",
                    tagged.join(", ")
                )));
            }
        }

        let mut slots: Vec<Vec<Option<usize>>> = vec![Vec::new(); n];
        let mut consumers = vec![Vec::new(); n];
        for e in &self.edges {
            let lookup = |id: &str| {
                index.get(id).copied().ok_or_else(|| GraphError::UnknownNode {
                    from: e.from.clone(),
                    to: e.to.clone(),
                    missing: id.to_string(),
                })
            };
            let (f, t) = (lookup(&e.from)?, lookup(&e.to)?);
            let s = &mut slots[t];
            if s.len() <= e.slot {
                s.resize(e.slot + 1, None);
            }
            if s[e.slot].is_some() {
                return Err(GraphError::node(&e.to, format!("input slot {} is fed twice", e.slot)));
            }
            s[e.slot] = Some(f);
            consumers[f].push(t);
        }
        let mut inputs = Vec::with_capacity(n);
        for (i, node) in self.nodes.iter().enumerate() {
            let s = &slots[i];
            if let Some(missing) = s.iter().position(Option::is_none) {
                return Err(GraphError::node(
                    &node.id,
                    format!("input slot {missing} is not connected"),
                ));
            }
            let got = s.len();
            let ok = match node.kind.arity() {
                Some(k) => got == k,
                None => got >= 1,
            };
            if !ok {
                let want = node.kind.arity().map_or("at least 1".to_string(), |k| k.to_string());
                return Err(GraphError::node(
                    &node.id,
                    format!("{} node needs {want} input(s), has {got}", node.kind.name()),
                ));
            }
            inputs.push(s.iter().map(|x| x.expect("checked")).collect::<Vec<_>>());
        }

        let order = topo_order(self, &consumers)?;
        let mut shapes = vec![Shape::new(0, 0, 0, 0); n];
        for &i in &order {
            let xs: Vec<(usize, Shape)> = inputs[i].iter().map(|&p| (p, shapes[p])).collect();
            shapes[i] = infer_shape(self, i, &xs)?;
        }
        Ok(Topology {
            order,
            inputs,
            consumers,
            shapes,
        })
    }
}

/// Depth-first topological sort in node order; the first edge that closes a
/// loop is reported.
fn topo_order(g: &GraphSpec, consumers: &[Vec<usize>]) -> GraphResult<Vec<usize>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Open,
        Done,
    }
    let n = g.nodes.len();
    let mut mark = vec![Mark::New; n];
    let mut post = Vec::with_capacity(n);
    for root in 0..n {
        if mark[root] != Mark::New {
            continue;
        }
        let mut stack = vec![(root, 0usize)];
        mark[root] = Mark::Open;
        while let Some(&mut (u, ref mut next)) = stack.last_mut() {
            if let Some(&v) = consumers[u].get(*next) {
                *next += 1;
                match mark[v] {
                    Mark::New => {
                        mark[v] = Mark::Open;
                        stack.push((v, 0));
                    }
                    Mark::Open => {
                        return Err(GraphError::Cycle {
                            from: g.nodes[u].id.clone(),
                            to: g.nodes[v].id.clone(),
                        })
                    }
                    Mark::Done => {}
                }
            } else {
                mark[u] = Mark::Done;
                post.push(u);
                stack.pop();
            }
        }
    }
    post.reverse();
    Ok(post)
}

fn infer_shape(g: &GraphSpec, i: usize, xs: &[(usize, Shape)]) -> GraphResult<Shape> {
    let node = &g.nodes[i];
    let id = node.id.as_str();
    let channels = |expected: usize| -> GraphResult<Shape> {
        let (p, s) = xs[0];
        if s.c != expected {
            return Err(GraphError::ChannelMismatch {
                node: id.to_string(),
                producer: g.nodes[p].id.clone(),
                expected,
                actual: s.c,
            });
        }
        Ok(s)
    };
    let err = |e: crate::error::Error| GraphError::node(id, e.to_string());
    Ok(match node.kind {
        NodeKind::Input => g.input_shape,
        NodeKind::Conv { spec, .. } | NodeKind::ConvTranspose { spec, .. } => {
            let s = channels(spec.in_channels)?;
            spec.output_shape(s).map_err(err)?
        }
        NodeKind::Mswe {
            in_ch,
            hidden_ch,
            out_ch,
            ..
        } => {
            let s = channels(in_ch)?;
            mswe_specs(in_ch, hidden_ch, out_ch, true).map_err(err)?;
            if s.h % 4 != 0 || s.w % 4 != 0 {
                return Err(GraphError::node(
                    id,
                    format!("mswe needs H and W divisible by 4, got {}x{}", s.h, s.w),
                ));
            }
            Shape::new(s.n, out_ch, s.h / 4, s.w / 4)
        }
        NodeKind::Rlkc { in_ch, out_ch, .. } => {
            let s = channels(in_ch)?;
            if out_ch == 0 {
                return Err(GraphError::node(id, "rlkc needs out_ch >= 1"));
            }
            Shape::new(s.n, out_ch, s.h, s.w)
        }
        NodeKind::Opaque { in_ch, out_ch, .. } => {
            let s = channels(in_ch)?;
            if out_ch == 0 {
                return Err(GraphError::node(id, "opaque node needs out_ch >= 1"));
            }
            Shape::new(s.n, out_ch, s.h, s.w)
        }
        NodeKind::Dwt => {
            let s = xs[0].1;
            if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
                return Err(GraphError::node(
                    id,
                    format!("dwt needs even H and W, got {}x{}", s.h, s.w),
                ));
            }
            Shape::new(s.n, 4 * s.c, s.h / 2, s.w / 2)
        }
        NodeKind::NearestUpsample => {
            let s = xs[0].1;
            Shape::new(s.n, s.c, 2 * s.h, 2 * s.w)
        }
        NodeKind::Concat | NodeKind::Add => {
            let s0 = xs[0].1;
            let mut c = 0;
            for &(p, s) in xs {
                let same = if node.kind == NodeKind::Add {
                    s == s0
                } else {
                    (s.n, s.h, s.w) == (s0.n, s0.h, s0.w)
                };
                if !same {
                    return Err(GraphError::node(
                        id,
                        format!("input `{}` has shape {s}, incompatible with {s0}", g.nodes[p].id),
                    ));
                }
                c += s.c;
            }
            if node.kind == NodeKind::Add {
                s0
            } else {
                Shape::new(s0.n, c, s0.h, s0.w)
            }
        }
    })
}
