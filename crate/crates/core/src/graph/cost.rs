//! Exact integer parameter and FLOP accounting.
//!
//! FLOPs are counted as 2 × MACs. A convolution costs
//! `kh·kw·(C_in/groups)·C_out` MACs per output position (per input position
//! for the transposed form); bias adds parameters but no MACs.

use std::fmt;

use super::{GraphResult, GraphSpec, NodeKind};
use crate::conv::ConvSpec;
use crate::tensor::Shape;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeCost {
    pub id: String,
    pub kind: &'static str,
    pub params: u64,
    pub flops: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub baseline: String,
    pub baseline_params: u64,
    pub baseline_flops: u64,
    pub param_reduction_pct: f64,
    pub flops_reduction_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub graph: String,
    pub input_shape: Shape,
    pub nodes: Vec<NodeCost>,
    pub total_params: u64,
    pub total_flops: u64,
    pub comparison: Option<Comparison>,
}

fn conv_flops(spec: &ConvSpec, positions: u64) -> u64 {
    2 * spec.macs_per_position() * positions
}

/// `(params, flops)` of one node given its input and output shapes.
pub fn node_cost(kind: &NodeKind, input: Shape, output: Shape) -> (u64, u64) {
    let positions = |s: Shape| (s.n * s.h * s.w) as u64;
    match kind {
        NodeKind::Conv { spec, .. } => (spec.param_count(), conv_flops(spec, positions(output))),
        NodeKind::ConvTranspose { spec, .. } => (spec.param_count(), conv_flops(spec, positions(input))),
        NodeKind::Mswe { .. } => {
            // Stem runs at H/2; the other three produce H/4 maps.
            let specs = kind.conv_specs();
            let half = Shape::new(input.n, 0, input.h / 2, input.w / 2);
            let params = specs.iter().map(ConvSpec::param_count).sum();
            let flops = conv_flops(&specs[0], positions(half))
                + specs[1..].iter().map(|s| conv_flops(s, positions(output))).sum::<u64>();
            (params, flops)
        }
        NodeKind::Rlkc { .. } => {
            let specs = kind.conv_specs();
            let params = specs.iter().map(ConvSpec::param_count).sum();
            let flops = specs.iter().map(|s| conv_flops(s, positions(output))).sum();
            (params, flops)
        }
        NodeKind::Opaque {
            param_count,
            flops_per_pixel,
            ..
        } => (*param_count, flops_per_pixel * positions(output)),
        NodeKind::Input | NodeKind::Dwt | NodeKind::Concat | NodeKind::Add | NodeKind::NearestUpsample => (0, 0),
    }
}

pub fn cost_report(g: &GraphSpec) -> GraphResult<CostReport> {
    let topo = g.analyze()?;
    let nodes: Vec<NodeCost> = g
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let input = topo.input_shape_of(i).unwrap_or(topo.shapes[i]);
            let (params, flops) = node_cost(&n.kind, input, topo.shapes[i]);
            NodeCost {
                id: n.id.clone(),
                kind: n.kind.name(),
                params,
                flops,
            }
        })
        .collect();
    Ok(CostReport {
        graph: g.name.clone(),
        input_shape: g.input_shape,
        total_params: nodes.iter().map(|n| n.params).sum(),
        total_flops: nodes.iter().map(|n| n.flops).sum(),
        nodes,
        comparison: None,
    })
}

fn reduction(a: u64, b: u64) -> f64 {
    if a == 0 {
        0.0
    } else {
        100.0 * (1.0 - b as f64 / a as f64)
    }
}

/// Report for `b`, with reductions measured against `a`.
pub fn compare_costs(a: &GraphSpec, b: &GraphSpec) -> GraphResult<CostReport> {
    let base = cost_report(a)?;
    let mut report = cost_report(b)?;
    report.comparison = Some(Comparison {
        baseline: base.graph.clone(),
        baseline_params: base.total_params,
        baseline_flops: base.total_flops,
        param_reduction_pct: reduction(base.total_params, report.total_params),
        flops_reduction_pct: reduction(base.total_flops, report.total_flops),
    });
    Ok(report)
}

impl CostReport {
    pub fn params_m(&self) -> f64 {
        self.total_params as f64 / 1e6
    }

    pub fn flops_g(&self) -> f64 {
        self.total_flops as f64 / 1e9
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# cost report: {}", self.graph)?;
        writeln!(f, "# input_shape: {}", self.input_shape)?;
        writeln!(f, "# flops = 2 x MACs")?;
        let w = self.nodes.iter().map(|n| n.id.len()).max().unwrap_or(4).max(4);
        writeln!(f, "{:<w$}  {:<16}  {:>12}  {:>16}", "node", "kind", "params", "flops")?;
        for n in &self.nodes {
            writeln!(f, "{:<w$}  {:<16}  {:>12}  {:>16}", n.id, n.kind, n.params, n.flops)?;
        }
        writeln!(f, "total_params {} ({:.1} M)", self.total_params, self.params_m())?;
        writeln!(f, "total_flops {} ({:.1} G)", self.total_flops, self.flops_g())?;
        if let Some(c) = &self.comparison {
            writeln!(
                f,
                "baseline {} params {} ({:.1} M) flops {} ({:.1} G)",
                c.baseline,
                c.baseline_params,
                c.baseline_params as f64 / 1e6,
                c.baseline_flops,
                c.baseline_flops as f64 / 1e9
            )?;
            writeln!(f, "param_reduction {:.2}%", c.param_reduction_pct)?;
            writeln!(f, "flops_reduction {:.2}%", c.flops_reduction_pct)?;
        }
        Ok(())
    }
}
