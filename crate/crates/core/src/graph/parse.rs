//! Config format (version 1):
//!
//! ```text
//! {
//!   "version": 1,
//!   "name": "example",
//!   "input_shape": [1, 3, 640, 640],
//!   "nodes": [
//!     {"id": "x", "kind": "input"},
//!     {"id": "c", "kind": "conv", "tags": ["stem"], "in_ch": 3, "out_ch": 16,
//!      "kernel": 3, "stride": 2, "padding": 1}
//!   ],
//!   "edges": [["x", "c", 0]]
//! }
//! ```
//!
//! Kind-specific fields:
//!
//! | kind             | required                       | optional                                      |
//! |------------------|--------------------------------|-----------------------------------------------|
//! | conv             | in_ch out_ch kernel            | stride(1) padding(0) groups(1) bias activation |
//! | conv_transpose   | in_ch out_ch                   | kernel(2) stride(2) padding(0) groups bias activation |
//! | mswe             | in_ch hidden_ch out_ch         | bias activation                               |
//! | rlkc             | in_ch out_ch                   | bias activation                               |
//! | opaque           | in_ch out_ch param_count flops_per_pixel |                                     |
//! | input dwt concat add nearest_upsample | (none)    |                                               |
//!
//! `kernel`, `stride` and `padding` take an integer or `[h, w]`. `bias`
//! defaults to true and `activation` (`silu` or `identity`) to `silu`.
//! Unknown keys and fields that do not apply to a kind are errors.

use serde::{Deserialize, Serialize};

use super::{Edge, GraphError, GraphResult, GraphSpec, NodeKind, NodeSpec, Tag};
use crate::conv::ConvSpec;
use crate::ops::Activation;
use crate::tensor::Shape;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGraph {
    version: i64,
    name: String,
    input_shape: [usize; 4],
    nodes: Vec<RawNode>,
    edges: Vec<(String, String, usize)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    passes: Vec<String>,
}

#[derive(Clone, Copy, Serialize, Deserialize)]
#[serde(untagged)]
enum Pair {
    One(usize),
    Two([usize; 2]),
}

impl Pair {
    fn get(self) -> (usize, usize) {
        match self {
            Pair::One(v) => (v, v),
            Pair::Two([a, b]) => (a, b),
        }
    }

    fn of((a, b): (usize, usize)) -> Self {
        if a == b {
            Pair::One(a)
        } else {
            Pair::Two([a, b])
        }
    }
}

#[derive(Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    id: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    tags: Vec<Tag>,
    #[serde(skip_serializing_if = "Option::is_none")]
    in_ch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden_ch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    out_ch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kernel: Option<Pair>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stride: Option<Pair>,
    #[serde(skip_serializing_if = "Option::is_none")]
    padding: Option<Pair>,
    #[serde(skip_serializing_if = "Option::is_none")]
    groups: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bias: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    activation: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    param_count: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    flops_per_pixel: Option<u64>,
}

const CONV_FIELDS: &[&str] = &[
    "in_ch",
    "out_ch",
    "kernel",
    "stride",
    "padding",
    "groups",
    "bias",
    "activation",
];

impl RawNode {
    fn present(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        let mut mark = |name, on: bool| {
            if on {
                v.push(name)
            }
        };
        mark("in_ch", self.in_ch.is_some());
        mark("hidden_ch", self.hidden_ch.is_some());
        mark("out_ch", self.out_ch.is_some());
        mark("kernel", self.kernel.is_some());
        mark("stride", self.stride.is_some());
        mark("padding", self.padding.is_some());
        mark("groups", self.groups.is_some());
        mark("bias", self.bias.is_some());
        mark("activation", self.activation.is_some());
        mark("param_count", self.param_count.is_some());
        mark("flops_per_pixel", self.flops_per_pixel.is_some());
        v
    }

    fn check_fields(&self, allowed: &[&str]) -> GraphResult<()> {
        match self.present().into_iter().find(|f| !allowed.contains(f)) {
            Some(f) => Err(GraphError::node(
                &self.id,
                format!("field `{f}` is not valid for kind `{}`", self.kind),
            )),
            None => Ok(()),
        }
    }

    fn req<V>(&self, v: Option<V>, name: &str) -> GraphResult<V> {
        v.ok_or_else(|| GraphError::node(&self.id, format!("kind `{}` requires field `{name}`", self.kind)))
    }

    fn activation(&self) -> GraphResult<Activation> {
        match self.activation.as_deref() {
            None | Some("silu") => Ok(Activation::Silu),
            Some("identity") => Ok(Activation::Identity),
            Some(other) => Err(GraphError::node(&self.id, format!("unknown activation `{other}`"))),
        }
    }

    fn conv_spec(&self, transposed: bool) -> GraphResult<ConvSpec> {
        let in_ch = self.req(self.in_ch, "in_ch")?;
        let out_ch = self.req(self.out_ch, "out_ch")?;
        let kernel = if transposed {
            self.kernel.map_or((2, 2), Pair::get)
        } else {
            self.req(self.kernel, "kernel")?.get()
        };
        let default_stride = if transposed { (2, 2) } else { (1, 1) };
        let spec = ConvSpec {
            in_channels: in_ch,
            out_channels: out_ch,
            kernel,
            stride: self.stride.map_or(default_stride, Pair::get),
            padding: self.padding.map_or((0, 0), Pair::get),
            groups: self.groups.unwrap_or(1),
            transposed,
            bias: self.bias.unwrap_or(true),
        };
        spec.validate().map_err(|e| GraphError::node(&self.id, e.to_string()))?;
        Ok(spec)
    }

    fn into_node(self) -> GraphResult<NodeSpec> {
        let kind = match self.kind.as_str() {
            "input" | "dwt" | "concat" | "add" | "nearest_upsample" => {
                self.check_fields(&[])?;
                match self.kind.as_str() {
                    "input" => NodeKind::Input,
                    "dwt" => NodeKind::Dwt,
                    "concat" => NodeKind::Concat,
                    "add" => NodeKind::Add,
                    _ => NodeKind::NearestUpsample,
                }
            }
            "conv" => {
                self.check_fields(CONV_FIELDS)?;
                NodeKind::Conv {
                    spec: self.conv_spec(false)?,
                    activation: self.activation()?,
                }
            }
            "conv_transpose" => {
                self.check_fields(CONV_FIELDS)?;
                NodeKind::ConvTranspose {
                    spec: self.conv_spec(true)?,
                    activation: self.activation()?,
                }
            }
            "mswe" => {
                self.check_fields(&["in_ch", "hidden_ch", "out_ch", "bias", "activation"])?;
                NodeKind::Mswe {
                    in_ch: self.req(self.in_ch, "in_ch")?,
                    hidden_ch: self.req(self.hidden_ch, "hidden_ch")?,
                    out_ch: self.req(self.out_ch, "out_ch")?,
                    bias: self.bias.unwrap_or(true),
                    activation: self.activation()?,
                }
            }
            "rlkc" => {
                self.check_fields(&["in_ch", "out_ch", "bias", "activation"])?;
                NodeKind::Rlkc {
                    in_ch: self.req(self.in_ch, "in_ch")?,
                    out_ch: self.req(self.out_ch, "out_ch")?,
                    bias: self.bias.unwrap_or(true),
                    activation: self.activation()?,
                }
            }
            "opaque" => {
                self.check_fields(&["in_ch", "out_ch", "param_count", "flops_per_pixel"])?;
                NodeKind::Opaque {
                    in_ch: self.req(self.in_ch, "in_ch")?,
                    out_ch: self.req(self.out_ch, "out_ch")?,
                    param_count: self.req(self.param_count, "param_count")?,
                    flops_per_pixel: self.req(self.flops_per_pixel, "flops_per_pixel")?,
                }
            }
            other => return Err(GraphError::node(&self.id, format!("unknown kind `{other}`"))),
        };
        Ok(NodeSpec::new(self.id, kind).tagged(self.tags))
    }

    fn from_node(n: &NodeSpec) -> Self {
        let mut raw = RawNode {
            id: n.id.clone(),
            kind: n.kind.name().to_string(),
            tags: n.tags.iter().copied().collect(),
            ..Default::default()
        };
        let act = |a: Activation| (a != Activation::Silu).then(|| "identity".to_string());
        let bias = |b: bool| (!b).then_some(false);
        match n.kind {
            NodeKind::Conv { spec, activation } | NodeKind::ConvTranspose { spec, activation } => {
                raw.in_ch = Some(spec.in_channels);
                raw.out_ch = Some(spec.out_channels);
                raw.kernel = Some(Pair::of(spec.kernel));
                raw.stride = Some(Pair::of(spec.stride));
                raw.padding = Some(Pair::of(spec.padding));
                raw.groups = Some(spec.groups);
                raw.bias = bias(spec.bias);
                raw.activation = act(activation);
            }
            NodeKind::Mswe {
                in_ch,
                hidden_ch,
                out_ch,
                bias: b,
                activation,
            } => {
                raw.in_ch = Some(in_ch);
                raw.hidden_ch = Some(hidden_ch);
                raw.out_ch = Some(out_ch);
                raw.bias = bias(b);
                raw.activation = act(activation);
            }
            NodeKind::Rlkc {
                in_ch,
                out_ch,
                bias: b,
                activation,
            } => {
                raw.in_ch = Some(in_ch);
                raw.out_ch = Some(out_ch);
                raw.bias = bias(b);
                raw.activation = act(activation);
            }
            NodeKind::Opaque {
                in_ch,
                out_ch,
                param_count,
                flops_per_pixel,
            } => {
                raw.in_ch = Some(in_ch);
                raw.out_ch = Some(out_ch);
                raw.param_count = Some(param_count);
                raw.flops_per_pixel = Some(flops_per_pixel);
            }
            _ => {}
        }
        raw
    }
}

/// Parses and fully validates a config document.
pub fn parse_graph(text: &str) -> GraphResult<GraphSpec> {
    let raw: RawGraph = serde_json::from_str(text).map_err(|e| GraphError::Syntax {
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    if raw.version != 1 {
        return Err(GraphError::Version(raw.version));
    }
    let [n, c, h, w] = raw.input_shape;
    let g = GraphSpec {
        name: raw.name,
        input_shape: Shape::new(n, c, h, w),
        nodes: raw
            .nodes
            .into_iter()
            .map(RawNode::into_node)
            .collect::<GraphResult<_>>()?,
        edges: raw.edges.into_iter().map(|(f, t, s)| Edge::new(f, t, s)).collect(),
        passes: raw.passes,
    };
    g.validate()?;
    Ok(g)
}

/// Serializes with one node and one edge per line. `parse_graph(&to_json(g)) == g`.
pub fn to_json(g: &GraphSpec) -> String {
    let s = g.input_shape;
    let mut out = String::new();
    out.push_str("{\n  \"version\": 1,\n");
    out.push_str(&format!("  \"name\": {},\n", line(g.name.as_str())));
    out.push_str(&format!("  \"input_shape\": [{}, {}, {}, {}],\n", s.n, s.c, s.h, s.w));
    if !g.passes.is_empty() {
        out.push_str(&format!("  \"passes\": {},\n", line(&g.passes)));
    }
    out.push_str("  \"nodes\": [\n");
    let nodes: Vec<String> = g
        .nodes
        .iter()
        .map(|n| format!("    {}", line(&RawNode::from_node(n))))
        .collect();
    out.push_str(&nodes.join(",\n"));
    out.push_str("\n  ],\n  \"edges\": [\n");
    let edges: Vec<String> = g
        .edges
        .iter()
        .map(|e| format!("    [{}, {}, {}]", line(&e.from), line(&e.to), e.slot))
        .collect();
    out.push_str(&edges.join(",\n"));
    out.push_str("\n  ]\n}\n");
    out
}

fn line<T: Serialize + ?Sized>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}
