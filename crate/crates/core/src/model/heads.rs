//! Non-spiking task heads on hidden-layer embeddings.

use std::sync::Arc;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `Linear → ELU → Linear`, row vectors in, scores out.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<S> {
    pub w1: Tensor<S>,
    pub b1: Tensor<S>,
    pub w2: Tensor<S>,
    pub b2: Tensor<S>,
}

#[derive(Clone, Copy, Debug)]
pub struct MlpVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl<S: Scalar> Mlp<S> {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            w1: Tensor::zeros(input, hidden),
            b1: Tensor::zeros(1, hidden),
            w2: Tensor::zeros(hidden, output),
            b2: Tensor::zeros(1, output),
        }
    }

    pub fn cast<T: Scalar>(&self) -> Mlp<T> {
        Mlp {
            w1: self.w1.cast(),
            b1: self.b1.cast(),
            w2: self.w2.cast(),
            b2: self.b2.cast(),
        }
    }

    pub fn record(&self, tape: &mut Tape<S>) -> MlpVars {
        MlpVars {
            w1: tape.param(self.w1.clone()),
            b1: tape.param(self.b1.clone()),
            w2: tape.param(self.w2.clone()),
            b2: tape.param(self.b2.clone()),
        }
    }
}

pub(super) fn apply<S: Scalar>(tape: &mut Tape<S>, m: &MlpVars, x: Var) -> Result<Var> {
    let h = tape.matmul(x, m.w1)?;
    let h = tape.add_row(h, m.b1)?;
    let h = tape.elu(h);
    let y = tape.matmul(h, m.w2)?;
    tape.add_row(y, m.b2)
}

pub(super) fn node_scores<S: Scalar>(tape: &mut Tape<S>, m: &MlpVars, emb: Var) -> Result<Var> {
    apply(tape, m, emb)
}

/// `MLP([e_i ‖ e_j])` for every pair; the symmetric variant averages both
/// orientations.
pub(super) fn edge_scores<S: Scalar>(
    tape: &mut Tape<S>,
    m: &MlpVars,
    emb: Var,
    src: &Arc<[u32]>,
    dst: &Arc<[u32]>,
    symmetric: bool,
) -> Result<Var> {
    if src.is_empty() {
        return Err(Error::Empty("labelled edge list"));
    }
    let a = tape.gather_rows(emb, src.clone())?;
    let b = tape.gather_rows(emb, dst.clone())?;
    let ab = tape.concat_cols(&[a, b])?;
    let forward = apply(tape, m, ab)?;
    if !symmetric {
        return Ok(forward);
    }
    let ba = tape.concat_cols(&[b, a])?;
    let backward = apply(tape, m, ba)?;
    let sum = tape.add(forward, backward)?;
    Ok(tape.scale(sum, S::of(0.5)))
}

/// Mean-pools node embeddings per graph, then applies the MLP.
pub(super) fn graph_scores<S: Scalar>(
    tape: &mut Tape<S>,
    m: &MlpVars,
    emb: Var,
    node_graph: &Arc<[u32]>,
    graph_sizes: &[usize],
) -> Result<Var> {
    if let Some(k) = graph_sizes.iter().position(|&s| s == 0) {
        return Err(Error::Graph(format!("graph {k} of the batch has no nodes")));
    }
    let pooled = tape.scatter_add_rows(emb, node_graph.clone(), graph_sizes.len())?;
    let inv: Arc<[S]> = graph_sizes.iter().map(|&s| S::one() / S::of(s as f64)).collect();
    let pooled = tape.scale_rows(pooled, inv)?;
    apply(tape, m, pooled)
}
