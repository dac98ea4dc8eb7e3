//! Reference executor: topological evaluation with per-node caches so the
//! same trace can be differentiated.
//!
//! Conv, conv_transpose and rlkc nodes apply their node activation to the
//! block output. An mswe node's activation is internal to the block.

use std::collections::BTreeMap;
use std::path::Path;

use super::{GraphError, GraphSpec, NodeKind, Topology};
use crate::blocks::{self, MsweCache, MsweParams, RlkcParams};
use crate::conv::ConvLayer;
use crate::error::{Error, Result};
use crate::ops::{self, Activation};
use crate::params::{self, prefixed, prefixed_mut, Initializer, Parameters};
use crate::tensor::{Element, Shape, Tensor};
use crate::wavelet::{self, WaveletBands};

#[derive(Clone, Debug, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum NodeParams<T> {
    Conv(ConvLayer<T>),
    Mswe(MsweParams<T>),
    Rlkc(RlkcParams<T>),
}

impl<T: Element> NodeParams<T> {
    pub fn zeros(kind: &NodeKind) -> Option<Result<Self>> {
        Some(match *kind {
            NodeKind::Conv { spec, .. } | NodeKind::ConvTranspose { spec, .. } => {
                Ok(NodeParams::Conv(ConvLayer::zeros(spec)))
            }
            NodeKind::Mswe {
                in_ch,
                hidden_ch,
                out_ch,
                bias,
                activation,
            } => MsweParams::zeros(in_ch, hidden_ch, out_ch, bias).map(|mut p| {
                p.activation = activation;
                NodeParams::Mswe(p)
            }),
            NodeKind::Rlkc {
                in_ch, out_ch, bias, ..
            } => Ok(NodeParams::Rlkc(RlkcParams::zeros(in_ch, out_ch, bias))),
            _ => return None,
        })
    }

    fn layers_mut(&mut self) -> Vec<&mut ConvLayer<T>> {
        match self {
            NodeParams::Conv(l) => vec![l],
            NodeParams::Mswe(p) => vec![&mut p.stem, &mut p.hf_compress, &mut p.freq, &mut p.residual],
            NodeParams::Rlkc(p) => vec![&mut p.depthwise, &mut p.pointwise],
        }
    }

    fn layers(&self) -> Vec<(&'static str, &ConvLayer<T>)> {
        match self {
            NodeParams::Conv(l) => vec![("", l)],
            NodeParams::Mswe(p) => vec![
                ("stem.", &p.stem),
                ("hf_compress.", &p.hf_compress),
                ("freq.", &p.freq),
                ("residual.", &p.residual),
            ],
            NodeParams::Rlkc(p) => vec![("depthwise.", &p.depthwise), ("pointwise.", &p.pointwise)],
        }
    }

    /// True when the parameters have exactly the layout `kind` needs.
    pub fn matches(&self, kind: &NodeKind) -> bool {
        let Some(Ok(fresh)) = Self::zeros(kind) else {
            return false;
        };
        let specs = |p: &Self| p.layers().into_iter().map(|(_, l)| l.spec).collect::<Vec<_>>();
        let act_ok = match (self, &fresh) {
            (NodeParams::Mswe(a), NodeParams::Mswe(b)) => a.activation == b.activation,
            _ => true,
        };
        specs(self) == specs(&fresh) && act_ok && self.layers().iter().all(|(_, l)| l.weights.check(&l.spec).is_ok())
    }
}

impl<T: Element> Parameters<T> for NodeParams<T> {
    fn tensors(&self) -> Vec<(String, &[T])> {
        match self {
            NodeParams::Conv(l) => l.tensors(),
            NodeParams::Mswe(p) => p.tensors(),
            NodeParams::Rlkc(p) => p.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [T])> {
        match self {
            NodeParams::Conv(l) => l.tensors_mut(),
            NodeParams::Mswe(p) => p.tensors_mut(),
            NodeParams::Rlkc(p) => p.tensors_mut(),
        }
    }
}

/// Parameters of every learned node, in graph node order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBundle<T> {
    pub entries: Vec<(String, NodeParams<T>)>,
}

impl<T: Element> ParamBundle<T> {
    pub fn zeros(g: &GraphSpec) -> Result<Self> {
        let mut entries = Vec::new();
        for node in &g.nodes {
            if let Some(p) = NodeParams::zeros(&node.kind) {
                entries.push((node.id.clone(), p?));
            }
        }
        Ok(ParamBundle { entries })
    }

    /// Seeded uniform init; one generator stream walks the nodes in order.
    pub fn init(g: &GraphSpec, seed: u64) -> Result<Self> {
        let mut bundle = Self::zeros(g)?;
        let mut rng = Initializer::new(seed);
        for (_, p) in bundle.entries.iter_mut() {
            for layer in p.layers_mut() {
                layer.weights = rng.conv(&layer.spec);
            }
        }
        Ok(bundle)
    }

    pub fn get(&self, id: &str) -> Option<&NodeParams<T>> {
        self.entries.iter().find(|(n, _)| n == id).map(|(_, p)| p)
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut NodeParams<T>> {
        self.entries.iter_mut().find(|(n, _)| n == id).map(|(_, p)| p)
    }

    /// Every learned node has matching parameters and nothing else is present.
    pub fn check(&self, g: &GraphSpec) -> Result<()> {
        for node in g.nodes.iter().filter(|n| n.kind.is_learned()) {
            match self.get(&node.id) {
                Some(p) if p.matches(&node.kind) => {}
                _ => return Err(GraphError::Params(node.id.clone()).into()),
            }
        }
        for (id, _) in &self.entries {
            if !g.node(id).is_some_and(|n| n.kind.is_learned()) {
                return Err(GraphError::Params(id.clone()).into());
            }
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, p) in out.entries.iter_mut() {
            for layer in p.layers_mut() {
                *layer = ConvLayer::zeros(layer.spec);
            }
        }
        out
    }

    /// Role → kernel shape, for keeping 4-D shapes on disk.
    pub fn kernel_shapes(&self) -> BTreeMap<String, Shape> {
        let mut out = BTreeMap::new();
        for (id, p) in &self.entries {
            for (prefix, layer) in p.layers() {
                out.insert(format!("{id}.{prefix}weight"), layer.spec.weight_shape());
            }
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        params::save_bundle(dir, self, &self.kernel_shapes())
    }

    pub fn load(g: &GraphSpec, dir: &Path) -> Result<Self> {
        let mut bundle = Self::zeros(g)?;
        params::load_bundle(dir, &mut bundle)?;
        Ok(bundle)
    }
}

impl<T: Element> Parameters<T> for ParamBundle<T> {
    fn tensors(&self) -> Vec<(String, &[T])> {
        self.entries
            .iter()
            .flat_map(|(id, p)| prefixed(id, p.tensors()))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [T])> {
        self.entries
            .iter_mut()
            .flat_map(|(id, p)| prefixed_mut(id, p.tensors_mut()))
            .collect()
    }
}

#[derive(Clone, Debug)]
enum Cache<T> {
    None,
    Pre(Tensor<T>),
    Mswe(Box<MsweCache<T>>),
    Rlkc { dw: Tensor<T>, pre: Tensor<T> },
}

/// Every node output of one forward pass, plus what backward needs.
#[derive(Clone, Debug)]
pub struct Trace<T> {
    pub topology: Topology,
    pub values: Vec<Tensor<T>>,
    caches: Vec<Cache<T>>,
}

impl<T: Element> Trace<T> {
    /// Outputs of the sink nodes, in node order.
    pub fn outputs(&self, g: &GraphSpec) -> Vec<(String, Tensor<T>)> {
        self.topology
            .sinks()
            .into_iter()
            .map(|i| (g.nodes[i].id.clone(), self.values[i].clone()))
            .collect()
    }
}

fn prepare<T: Element>(g: &GraphSpec, x: &Tensor<T>, params: &ParamBundle<T>) -> Result<Topology> {
    if let Some(n) = g.nodes.iter().find(|n| matches!(n.kind, NodeKind::Opaque { .. })) {
        return Err(GraphError::Opaque(n.id.clone()).into());
    }
    let topo = g.with_input_shape(x.shape())?.analyze()?;
    params.check(g)?;
    Ok(topo)
}

fn learned<'a, T: Element>(params: &'a ParamBundle<T>, id: &str) -> Result<&'a NodeParams<T>> {
    params.get(id).ok_or_else(|| GraphError::Params(id.to_string()).into())
}

pub fn forward_trace<T: Element>(g: &GraphSpec, x: &Tensor<T>, params: &ParamBundle<T>) -> Result<Trace<T>> {
    let topo = prepare(g, x, params)?;
    let n = g.nodes.len();
    let mut values: Vec<Option<Tensor<T>>> = vec![None; n];
    let mut caches = vec![Cache::None; n];
    for &i in &topo.order {
        let node = &g.nodes[i];
        let ins: Vec<&Tensor<T>> = topo.inputs[i]
            .iter()
            .map(|&p| values[p].as_ref().expect("topological order"))
            .collect();
        let (out, cache) = match (&node.kind, params.get(&node.id)) {
            (NodeKind::Input, _) => (x.clone(), Cache::None),
            (
                NodeKind::Conv { activation, .. } | NodeKind::ConvTranspose { activation, .. },
                Some(NodeParams::Conv(l)),
            ) => {
                let pre = l.forward(ins[0])?;
                (activation.forward(&pre), Cache::Pre(pre))
            }
            (NodeKind::Mswe { .. }, Some(NodeParams::Mswe(p))) => {
                let (z, c) = blocks::mswe_forward_cached(ins[0], p)?;
                (z, Cache::Mswe(Box::new(c)))
            }
            (NodeKind::Rlkc { activation, .. }, Some(NodeParams::Rlkc(p))) => {
                let (pre, dw) = blocks::rlkc_forward_cached(ins[0], p)?;
                (activation.forward(&pre), Cache::Rlkc { dw, pre })
            }
            (NodeKind::Dwt, _) => {
                let b = wavelet::haar_dwt2(ins[0])?;
                (ops::channel_concat(&[&b.ll, &b.hl, &b.lh, &b.hh])?, Cache::None)
            }
            (NodeKind::Concat, _) => (ops::channel_concat(&ins)?, Cache::None),
            (NodeKind::Add, _) => (ops::add(ins[0], ins[1])?, Cache::None),
            (NodeKind::NearestUpsample, _) => (ops::nearest_upsample2x(ins[0]), Cache::None),
            _ => return Err(GraphError::Params(node.id.clone()).into()),
        };
        debug_assert_eq!(out.shape(), topo.shapes[i]);
        values[i] = Some(out);
        caches[i] = cache;
    }
    Ok(Trace {
        topology: topo,
        values: values.into_iter().map(|v| v.expect("every node evaluated")).collect(),
        caches,
    })
}

/// Runs the graph and returns the sink outputs in node order.
pub fn execute<T: Element>(g: &GraphSpec, x: &Tensor<T>, params: &ParamBundle<T>) -> Result<Vec<(String, Tensor<T>)>> {
    Ok(forward_trace(g, x, params)?.outputs(g))
}

fn accumulate<T: Element>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) -> Result<()> {
    *slot = Some(match slot.take() {
        Some(prev) => ops::add(&prev, &g)?,
        None => g,
    });
    Ok(())
}

fn act_of(kind: &NodeKind) -> Activation {
    match *kind {
        NodeKind::Conv { activation, .. }
        | NodeKind::ConvTranspose { activation, .. }
        | NodeKind::Rlkc { activation, .. } => activation,
        _ => Activation::Identity,
    }
}

/// Back-propagates `seeds` (gradients of the loss with respect to named node
/// outputs). Returns the gradient at the graph input and the parameter
/// gradients.
pub fn backward<T: Element>(
    g: &GraphSpec,
    trace: &Trace<T>,
    params: &ParamBundle<T>,
    seeds: &[(String, Tensor<T>)],
) -> Result<(Tensor<T>, ParamBundle<T>)> {
    let topo = &trace.topology;
    let n = g.nodes.len();
    let mut grads: Vec<Option<Tensor<T>>> = vec![None; n];
    for (id, t) in seeds {
        let i = g
            .index_of(id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown node `{id}` in gradient seeds")))?;
        crate::tensor::check_same_shape(trace.values[i].shape(), t.shape())?;
        accumulate(&mut grads[i], t.clone())?;
    }
    let mut pgrads = params.zeros_like();
    let mut grad_input = None;

    for &i in topo.order.iter().rev() {
        let Some(gy) = grads[i].take() else { continue };
        let node = &g.nodes[i];
        let ins = &topo.inputs[i];
        let x_of = |k: usize| &trace.values[ins[k]];
        let mut to_inputs: Vec<Tensor<T>> = Vec::new();
        match (&node.kind, &trace.caches[i]) {
            (NodeKind::Input, _) => grad_input = Some(gy),
            (NodeKind::Conv { .. } | NodeKind::ConvTranspose { .. }, Cache::Pre(pre)) => {
                let g_pre = act_of(&node.kind).backward(&gy, pre)?;
                let NodeParams::Conv(l) = learned(params, &node.id)? else {
                    unreachable!()
                };
                let (gx, gw) = l.backward(&g_pre, x_of(0))?;
                if let Some(NodeParams::Conv(gl)) = pgrads.get_mut(&node.id) {
                    gl.weights = gw;
                }
                to_inputs.push(gx);
            }
            (NodeKind::Mswe { .. }, Cache::Mswe(cache)) => {
                let NodeParams::Mswe(p) = learned(params, &node.id)? else {
                    unreachable!()
                };
                let (gx, gp) = blocks::mswe_backward(&gy, cache, p)?;
                *pgrads.get_mut(&node.id).expect("zeros_like keeps entries") = NodeParams::Mswe(gp);
                to_inputs.push(gx);
            }
            (NodeKind::Rlkc { .. }, Cache::Rlkc { dw, pre }) => {
                let g_pre = act_of(&node.kind).backward(&gy, pre)?;
                let NodeParams::Rlkc(p) = learned(params, &node.id)? else {
                    unreachable!()
                };
                let (gx, gp) = blocks::rlkc_backward(&g_pre, x_of(0), dw, p)?;
                *pgrads.get_mut(&node.id).expect("zeros_like keeps entries") = NodeParams::Rlkc(gp);
                to_inputs.push(gx);
            }
            (NodeKind::Dwt, _) => {
                let c = x_of(0).shape().c;
                let mut parts = ops::channel_concat_backward(&gy, &[c, c, c, c])?.into_iter();
                let mut next = || parts.next().expect("four bands");
                let bands = WaveletBands {
                    ll: next(),
                    hl: next(),
                    lh: next(),
                    hh: next(),
                };
                to_inputs.push(wavelet::haar_dwt2_backward(&bands)?);
            }
            (NodeKind::Concat, _) => {
                let widths: Vec<usize> = ins.iter().map(|&p| trace.values[p].shape().c).collect();
                to_inputs = ops::channel_concat_backward(&gy, &widths)?;
            }
            (NodeKind::Add, _) => {
                let (a, b) = ops::add_backward(&gy);
                to_inputs = vec![a, b];
            }
            (NodeKind::NearestUpsample, _) => to_inputs.push(ops::nearest_upsample2x_backward(&gy)?),
            _ => return Err(GraphError::Params(node.id.clone()).into()),
        }
        for (&p, gx) in ins.iter().zip(to_inputs) {
            accumulate(&mut grads[p], gx)?;
        }
    }
    let input_shape = trace.values[topo.order[0]].shape();
    Ok((grad_input.unwrap_or_else(|| Tensor::zeros(input_shape)), pgrads))
}
