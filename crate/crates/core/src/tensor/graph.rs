use super::lstm::LstmCache;
use super::ops::Activation;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

pub(crate) enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Hadamard(Var, Var),
    Act(Var, Activation),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        cols: Vec<f64>,
        k: usize,
        pad_left: usize,
    },
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    MeanCols(Var),
    AlignPool {
        z: Var,
        a: Tensor,
    },
    PackSeqs {
        parts: Vec<Var>,
        max_len: usize,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Softmax(Var),
    SoftmaxCe {
        logits: Var,
        probs: Vec<f64>,
        labels: Vec<usize>,
        scale: f64,
    },
    Lstm(Box<LstmCache>),
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::Hadamard(..) => "hadamard",
            Op::Act(..) => "activation",
            Op::Linear { .. } => "linear",
            Op::Conv1d { .. } => "conv1d_same",
            Op::ConcatRows(_) => "concat_rows",
            Op::SliceRows { .. } => "slice_rows",
            Op::MeanCols(_) => "mean_cols",
            Op::AlignPool { .. } => "temporal_align_pool",
            Op::PackSeqs { .. } => "pack_sequences",
            Op::MaxPool { .. } => "maxpool_time",
            Op::Softmax(_) => "softmax_columns",
            Op::SoftmaxCe { .. } => "softmax_cross_entropy",
            Op::Lstm(_) => "lstm",
        }
    }
}

pub(crate) struct Node {
    pub value: Tensor,
    pub requires_grad: bool,
    pub op: Op,
}

/// Append-only record of executed operations.
///
/// Nodes are stored in execution order, so every op's inputs precede it and
/// a reverse sweep is a valid topological order for the chain rule. A graph
/// is single-use: call [`Graph::backward`] once, then drop it.
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Records a constant leaf; no gradient is accumulated for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass, shaped like the value.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(
            Tensor::new(self.nodes[v.0].value.shape().to_vec(), g.clone())
                .expect("gradient buffer matches value shape"),
        )
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Op names in execution order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }

    /// Which side of every non-differentiable point the recorded values sit
    /// on: the sign of each ReLU input and each max-pool argmax. Two inputs
    /// with equal patterns lie in the same smooth piece.
    pub fn branch_pattern(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Act(x, Activation::Relu) => {
                    out.extend(self.nodes[x.0].value.data().iter().map(|&v| usize::from(v > 0.0)))
                }
                Op::MaxPool { argmax, .. } => out.extend_from_slice(argmax),
                _ => {}
            }
        }
        out
    }

    pub(crate) fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Replays the record in reverse from a scalar `loss`, filling the
    /// gradient of every node that depends on a trainable leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Argument(
                "backward already ran on this graph; build a fresh graph".into(),
            ));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Argument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        self.backward_done = true;
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            if !matches!(self.nodes[i].op, Op::Leaf) {
                let (before, rest) = self.nodes.split_at(i);
                let node = &rest[0];
                let mut sink = GradSink {
                    nodes: before,
                    grads: &mut self.grads[..i],
                };
                super::ops::backprop(node, &g, &mut sink);
            }
            self.grads[i] = Some(g);
        }
        Ok(())
    }
}

/// Accumulates input gradients during the reverse sweep.
pub(crate) struct GradSink<'a> {
    pub nodes: &'a [Node],
    grads: &'a mut [Option<Vec<f64>>],
}

impl GradSink<'_> {
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Hands `f` the (zero-initialised on first use) gradient buffer of `v`.
    /// Skipped entirely for constants.
    pub fn with(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let len = self.nodes[v.0].value.len();
        let buf = self.grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        f(buf);
    }

    pub fn add(&mut self, v: Var, delta: &[f64]) {
        self.with(v, |g| {
            for (a, b) in g.iter_mut().zip(delta) {
                *a += b;
            }
        });
    }
}
