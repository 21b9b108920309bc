//! Pruning units: small DAGs of linear operators pruned one after another.
//!
//! With error correction enabled, each operator is solved against the input
//! produced by its already-pruned predecessors, while its target stays the
//! dense network's output.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{PruneError, Result};
use crate::linalg::{frobenius_distance, matmul, Matrix};
use crate::sparsity::{apply_mask, lowest_score_mask, round_to_pattern, SparsityPattern};
use crate::tuner::{prune_with_target, OperatorPruneResult, TunerConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    None,
    Relu,
}

impl Activation {
    pub fn apply(self, m: Matrix) -> Matrix {
        match self {
            Activation::None => m,
            Activation::Relu => m.map(|v| v.max(0.0)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum InputRef {
    UnitInput,
    Node(String),
}

impl fmt::Display for InputRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputRef::UnitInput => f.write_str("input"),
            InputRef::Node(id) => f.write_str(id),
        }
    }
}

#[derive(Clone, Debug)]
pub struct OperatorNode {
    pub id: String,
    /// `m × n`; `n` must match the rows of whatever feeds this node.
    pub weight: Matrix,
    pub input: InputRef,
    /// Applied to this node's output before successors consume it.
    pub activation: Activation,
}

impl OperatorNode {
    pub fn new(id: impl Into<String>, weight: Matrix, input: InputRef, activation: Activation) -> Self {
        Self {
            id: id.into(),
            weight,
            input,
            activation,
        }
    }
}

/// A topologically ordered set of operators sharing one unit input.
#[derive(Clone, Debug)]
pub struct PruneUnit {
    name: String,
    input_dim: usize,
    nodes: Vec<OperatorNode>,
    /// Position of each node's producer, `None` for the unit input.
    sources: Vec<Option<usize>>,
}

impl PruneUnit {
    /// Validates wiring: unique ids, every reference points at an earlier
    /// node, dimensions agree along each edge, and at least one node reads
    /// the unit input.
    pub fn new(name: impl Into<String>, input_dim: usize, nodes: Vec<OperatorNode>) -> Result<Self> {
        let name = name.into();
        if nodes.is_empty() {
            return Err(PruneError::Graph(format!("unit `{name}` has no nodes")));
        }
        let mut position: HashMap<&str, usize> = HashMap::new();
        let mut sources = Vec::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            let (source, in_rows) = match &node.input {
                InputRef::UnitInput => (None, input_dim),
                InputRef::Node(pred) => match position.get(pred.as_str()) {
                    Some(&j) => (Some(j), nodes[j].weight.rows()),
                    None => {
                        return Err(PruneError::Graph(format!(
                            "unit `{name}`: edge {pred} -> {} references an unknown or later node",
                            node.id
                        )))
                    }
                },
            };
            if node.weight.cols() != in_rows {
                return Err(PruneError::Graph(format!(
                    "unit `{name}`: edge {} -> {} carries {in_rows} features but the weight is {}x{}",
                    node.input,
                    node.id,
                    node.weight.rows(),
                    node.weight.cols()
                )));
            }
            if position.insert(node.id.as_str(), i).is_some() {
                return Err(PruneError::Graph(format!(
                    "unit `{name}`: duplicate node id `{}`",
                    node.id
                )));
            }
            sources.push(source);
        }
        if sources.iter().all(Option::is_some) {
            return Err(PruneError::Graph(format!(
                "unit `{name}`: no node reads the unit input"
            )));
        }
        Ok(Self {
            name,
            input_dim,
            nodes,
            sources,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn nodes(&self) -> &[OperatorNode] {
        &self.nodes
    }

    /// Same wiring with replacement weights, given in node order.
    pub fn with_weights(&self, weights: Vec<Matrix>) -> Result<PruneUnit> {
        if weights.len() != self.nodes.len() {
            return Err(PruneError::Graph(format!(
                "unit `{}` has {} nodes, got {} weights",
                self.name,
                self.nodes.len(),
                weights.len()
            )));
        }
        let nodes = self
            .nodes
            .iter()
            .zip(weights)
            .map(|(n, w)| OperatorNode {
                weight: w,
                ..n.clone()
            })
            .collect();
        PruneUnit::new(self.name.clone(), self.input_dim, nodes)
    }

    /// Nodes whose output no other node consumes.
    pub fn sinks(&self) -> Vec<usize> {
        let mut consumed = vec![false; self.nodes.len()];
        for j in self.sources.iter().flatten() {
            consumed[*j] = true;
        }
        (0..self.nodes.len()).filter(|&i| !consumed[i]).collect()
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.rows() != self.input_dim {
            return Err(PruneError::Graph(format!(
                "unit `{}`: input -> {} expects {} rows, got {}",
                self.name,
                self.nodes[0].id,
                self.input_dim,
                x.rows()
            )));
        }
        Ok(())
    }

    /// Post-activation output of every node, in node order.
    pub(crate) fn forward(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        self.check_input(x)?;
        let mut outputs: Vec<Matrix> = Vec::with_capacity(self.nodes.len());
        for (node, source) in self.nodes.iter().zip(&self.sources) {
            let input = source.map_or(x, |j| &outputs[j]);
            let out = matmul(&node.weight, input)?;
            outputs.push(node.activation.apply(out));
        }
        Ok(outputs)
    }
}

/// Dense output of each node (activation applied), keyed by node id.
pub fn dense_forward(unit: &PruneUnit, x: &Matrix) -> Result<BTreeMap<String, Matrix>> {
    let outputs = unit.forward(x)?;
    Ok(unit
        .nodes
        .iter()
        .map(|n| n.id.clone())
        .zip(outputs)
        .collect())
}

/// Frobenius distance between two units' outputs on `x`, pooled over the sink
/// nodes of `dense`.
pub fn unit_output_error(dense: &PruneUnit, pruned: &PruneUnit, x: &Matrix) -> Result<f64> {
    let a = dense.forward(x)?;
    let b = pruned.forward(x)?;
    let mut sq = 0.0;
    for i in dense.sinks() {
        let d = frobenius_distance(&a[i], &b[i])?;
        sq += d * d;
    }
    Ok(sq.sqrt())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmStartKind {
    Magnitude,
    #[default]
    Wanda,
}

impl FromStr for WarmStartKind {
    type Err = PruneError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "magnitude" => Ok(WarmStartKind::Magnitude),
            "wanda" => Ok(WarmStartKind::Wanda),
            _ => Err(PruneError::Parameter(format!("unknown warm start `{s}`"))),
        }
    }
}

impl fmt::Display for WarmStartKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WarmStartKind::Magnitude => "magnitude",
            WarmStartKind::Wanda => "wanda",
        })
    }
}

/// Initial sparse estimate for an operator.
///
/// `Magnitude` rounds `w` directly. `Wanda` scores each weight by
/// `|W_ij| · ‖X*_j,:‖₂` and removes the lowest scores, using the same
/// comparison groups as rounding (the whole matrix for unstructured, each
/// m-group for n:m). Surviving weights keep their values.
pub fn warm_start(
    kind: WarmStartKind,
    w: &Matrix,
    xstar: &Matrix,
    pattern: &SparsityPattern,
) -> Result<Matrix> {
    match kind {
        WarmStartKind::Magnitude => round_to_pattern(w, pattern),
        WarmStartKind::Wanda => {
            if xstar.rows() != w.cols() {
                return Err(PruneError::Shape(format!(
                    "wanda: weight is {}x{} but activations have {} rows",
                    w.rows(),
                    w.cols(),
                    xstar.rows()
                )));
            }
            let feature_norms: Vec<f64> = (0..xstar.rows())
                .map(|j| xstar.row(j).iter().map(|v| v * v).sum::<f64>().sqrt())
                .collect();
            let cols = w.cols();
            let scores: Vec<f64> = w
                .data()
                .iter()
                .enumerate()
                .map(|(idx, v)| v.abs() * feature_norms[idx % cols])
                .collect();
            let mask = lowest_score_mask(&scores, w.rows(), cols, pattern)?;
            Ok(apply_mask(w, &mask))
        }
    }
}

#[derive(Clone, Debug)]
pub struct NodePruneResult {
    pub id: String,
    pub result: OperatorPruneResult,
    /// `X*` the solver saw for this node.
    pub solver_input: Matrix,
    pub wall_time: Duration,
}

#[derive(Clone, Debug)]
pub struct UnitPruneResult {
    pub unit_name: String,
    pub nodes: Vec<NodePruneResult>,
    /// Distance between dense and pruned unit outputs on the calibration input.
    pub unit_output_error: f64,
}

impl UnitPruneResult {
    pub fn pruned_weights(&self) -> Vec<Matrix> {
        self.nodes.iter().map(|n| n.result.weights.clone()).collect()
    }
}

/// Prunes every node of `unit` in order, feeding each node the output of its
/// already-pruned predecessors.
pub fn prune_unit(
    unit: &PruneUnit,
    x: &Matrix,
    pattern: &SparsityPattern,
    warm: WarmStartKind,
    cfg: &TunerConfig,
) -> Result<UnitPruneResult> {
    prune_unit_impl(unit, x, pattern, warm, cfg, true)
}

/// Ablation variant: every node is solved against its dense input.
pub fn prune_unit_uncorrected(
    unit: &PruneUnit,
    x: &Matrix,
    pattern: &SparsityPattern,
    warm: WarmStartKind,
    cfg: &TunerConfig,
) -> Result<UnitPruneResult> {
    prune_unit_impl(unit, x, pattern, warm, cfg, false)
}

fn prune_unit_impl(
    unit: &PruneUnit,
    x: &Matrix,
    pattern: &SparsityPattern,
    warm: WarmStartKind,
    cfg: &TunerConfig,
    corrected: bool,
) -> Result<UnitPruneResult> {
    cfg.validate()?;
    let dense = unit.forward(x)?;
    let mut pruned_outputs: Vec<Matrix> = Vec::with_capacity(unit.nodes.len());
    let mut results = Vec::with_capacity(unit.nodes.len());

    for (node, source) in unit.nodes.iter().zip(&unit.sources) {
        let started = Instant::now();
        let dense_input = source.map_or(x, |j| &dense[j]);
        let solver_input = if corrected {
            source.map_or(x, |j| &pruned_outputs[j])
        } else {
            dense_input
        };
        let annotate = |e: PruneError| e.in_node(&node.id);

        pattern
            .check_shape(node.weight.rows(), node.weight.cols())
            .map_err(annotate)?;
        // pre-activation dense output
        let target = matmul(&node.weight, dense_input).map_err(annotate)?;
        let init = warm_start(warm, &node.weight, solver_input, pattern).map_err(annotate)?;
        let result =
            prune_with_target(&target, solver_input, pattern, &init, cfg).map_err(annotate)?;

        let out = matmul(&result.weights, solver_input).map_err(annotate)?;
        let solver_input = solver_input.clone();
        pruned_outputs.push(node.activation.apply(out));
        results.push(NodePruneResult {
            id: node.id.clone(),
            result,
            solver_input,
            wall_time: started.elapsed(),
        });
    }

    let pruned = unit.with_weights(results.iter().map(|r| r.result.weights.clone()).collect())?;
    let unit_output_error = unit_output_error(unit, &pruned, x)?;
    Ok(UnitPruneResult {
        unit_name: unit.name.clone(),
        nodes: results,
        unit_output_error,
    })
}
