//! Multi-head graph attention on CSR edge slots.
//!
//! For receiver `i`, neighbour `j`, and head `k`:
//!
//! ```text
//! e_ij   = LeakyReLU( a_kᵀ [W_k h_i ‖ W_k h_j] )           slope 0.2
//! α_ij   = exp(e_ij) / Σ_{j' ∈ N(i)} exp(e_ij')
//! out_i  = Σ_{j ∈ N(i)} α_ij W_k h_j
//! ```
//!
//! Heads are then concatenated (hidden layers) or averaged (output
//! layer). No activation is applied here: the caller feeds the result to
//! LIF neurons, or to a smooth activation in spike-free mode.
//!
//! `W_k h` is computed once per node. The attention vector is stored in
//! two halves so that `a_kᵀ [x ‖ y] = a_left_k · x + a_right_k · y` reduces
//! to two per-node scores gathered onto the edges.

use std::sync::Arc;

use crate::autodiff::{Tape, Tensor, Var, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::scalar::Scalar;

/// Edge slots of a graph in the shape the tape primitives consume.
#[derive(Clone, Debug)]
pub struct EdgeIndex {
    pub num_nodes: usize,
    pub row_offsets: Arc<[usize]>,
    /// Row (receiving node) of every slot.
    pub receivers: Arc<[u32]>,
    /// Column (sending node) of every slot.
    pub senders: Arc<[u32]>,
}

impl EdgeIndex {
    pub fn new(g: &Graph) -> Self {
        Self {
            num_nodes: g.num_nodes(),
            row_offsets: Arc::from(g.row_offsets()),
            receivers: Arc::from(g.edge_rows()),
            senders: Arc::from(g.col_indices()),
        }
    }

    pub fn num_edges(&self) -> usize {
        self.senders.len()
    }
}

/// How per-head outputs become one matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Combine {
    Concat,
    Mean,
}

/// Parameters of one attention layer. Head `k` owns columns
/// `k·out_dim..(k+1)·out_dim` of `weight` (that block is `W_kᵀ`) and
/// column `k` of both attention halves.
#[derive(Clone, Debug, PartialEq)]
pub struct GatLayerParams<S> {
    pub weight: Tensor<S>,
    pub attn_left: Tensor<S>,
    pub attn_right: Tensor<S>,
    pub heads: usize,
    pub out_dim: usize,
    pub combine: Combine,
}

impl<S: Scalar> GatLayerParams<S> {
    pub fn zeros(in_dim: usize, out_dim: usize, heads: usize, combine: Combine) -> Self {
        Self {
            weight: Tensor::zeros(in_dim, heads * out_dim),
            attn_left: Tensor::zeros(out_dim, heads),
            attn_right: Tensor::zeros(out_dim, heads),
            heads,
            out_dim,
            combine,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_width(&self) -> usize {
        match self.combine {
            Combine::Concat => self.heads * self.out_dim,
            Combine::Mean => self.out_dim,
        }
    }

    /// `W_k` as an `out_dim × in_dim` matrix.
    pub fn head_weight(&self, k: usize) -> Tensor<S> {
        Tensor::from_fn(self.out_dim, self.in_dim(), |r, c| {
            self.weight.get(c, k * self.out_dim + r)
        })
    }

    /// `a_k` of length `2·out_dim`.
    pub fn attention_vector(&self, k: usize) -> Vec<S> {
        (0..self.out_dim)
            .map(|r| self.attn_left.get(r, k))
            .chain((0..self.out_dim).map(|r| self.attn_right.get(r, k)))
            .collect()
    }

    /// Puts the parameters on a tape as trainable leaves.
    pub fn record(&self, tape: &mut Tape<S>) -> GatLayerVars {
        GatLayerVars {
            weight: tape.param(self.weight.clone()),
            attn_left: tape.param(self.attn_left.clone()),
            attn_right: tape.param(self.attn_right.clone()),
            heads: self.heads,
            out_dim: self.out_dim,
            combine: self.combine,
        }
    }
}

/// Tape handles for one layer's parameters.
#[derive(Clone, Copy, Debug)]
pub struct GatLayerVars {
    pub weight: Var,
    pub attn_left: Var,
    pub attn_right: Var,
    pub heads: usize,
    pub out_dim: usize,
    pub combine: Combine,
}

/// Projected node features and per-head edge logits (`E×1` each).
#[derive(Clone, Debug)]
pub struct EdgeLogits {
    pub projected: Var,
    pub logits: Vec<Var>,
}

pub fn edge_logits<S: Scalar>(
    tape: &mut Tape<S>,
    layer: &GatLayerVars,
    h: Var,
    edges: &EdgeIndex,
) -> Result<EdgeLogits> {
    if tape.shape(h).0 != edges.num_nodes {
        return Err(Error::mismatch("attention input rows", edges.num_nodes, tape.shape(h).0));
    }
    if tape.shape(h).1 != tape.shape(layer.weight).0 {
        return Err(Error::mismatch(
            "attention input width",
            tape.shape(layer.weight).0,
            tape.shape(h).1,
        ));
    }
    let projected = tape.matmul(h, layer.weight)?;
    let mut logits = Vec::with_capacity(layer.heads);
    for k in 0..layer.heads {
        let z = tape.slice_cols(projected, k * layer.out_dim, layer.out_dim)?;
        let a_left = tape.slice_cols(layer.attn_left, k, 1)?;
        let a_right = tape.slice_cols(layer.attn_right, k, 1)?;
        let s_left = tape.matmul(z, a_left)?;
        let s_right = tape.matmul(z, a_right)?;
        let on_receiver = tape.gather_rows(s_left, edges.receivers.clone())?;
        let on_sender = tape.gather_rows(s_right, edges.senders.clone())?;
        let pre = tape.add(on_receiver, on_sender)?;
        logits.push(tape.leaky_relu(pre, S::of(LEAKY_SLOPE)));
    }
    Ok(EdgeLogits { projected, logits })
}

/// Softmax of each head's logits within every receiver's neighbour
/// segment. Empty segments stay empty.
pub fn neighborhood_softmax<S: Scalar>(
    tape: &mut Tape<S>,
    logits: &[Var],
    edges: &EdgeIndex,
) -> Result<Vec<Var>> {
    logits
        .iter()
        .map(|&e| tape.segment_softmax(e, edges.row_offsets.clone()))
        .collect()
}

/// Attention-weighted sum of projected neighbour features, one `N×out_dim`
/// matrix per head. Nodes without neighbours aggregate to zero.
pub fn aggregate<S: Scalar>(
    tape: &mut Tape<S>,
    alpha: &[Var],
    projected: Var,
    layer: &GatLayerVars,
    edges: &EdgeIndex,
) -> Result<Vec<Var>> {
    if alpha.len() != layer.heads {
        return Err(Error::mismatch("attention heads", layer.heads, alpha.len()));
    }
    let mut out = Vec::with_capacity(layer.heads);
    for (k, &a) in alpha.iter().enumerate() {
        let z = tape.slice_cols(projected, k * layer.out_dim, layer.out_dim)?;
        let messages = tape.gather_rows(z, edges.senders.clone())?;
        let weighted = tape.mul_col(messages, a)?;
        out.push(tape.scatter_add_rows(weighted, edges.receivers.clone(), edges.num_nodes)?);
    }
    Ok(out)
}

pub fn combine_heads<S: Scalar>(tape: &mut Tape<S>, heads: &[Var], mode: Combine) -> Result<Var> {
    let Some(&first) = heads.first() else {
        return Err(Error::Empty("head list"));
    };
    let shape = tape.shape(first);
    if heads.iter().any(|&h| tape.shape(h) != shape) {
        return Err(Error::Shape("heads disagree in shape".into()));
    }
    match mode {
        Combine::Concat => tape.concat_cols(heads),
        Combine::Mean => {
            let mut acc = first;
            for &h in &heads[1..] {
                acc = tape.add(acc, h)?;
            }
            if heads.len() == 1 {
                return Ok(acc);
            }
            Ok(tape.scale(acc, S::one() / S::of(heads.len() as f64)))
        }
    }
}

/// Result of one attention layer.
#[derive(Clone, Debug)]
pub struct LayerOutput {
    pub output: Var,
    /// Normalised coefficients per head, aligned with the edge slots.
    pub attention: Vec<Var>,
}

pub fn forward<S: Scalar>(
    tape: &mut Tape<S>,
    layer: &GatLayerVars,
    h: Var,
    edges: &EdgeIndex,
) -> Result<LayerOutput> {
    let EdgeLogits { projected, logits } = edge_logits(tape, layer, h, edges)?;
    let attention = neighborhood_softmax(tape, &logits, edges)?;
    let heads = aggregate(tape, &attention, projected, layer, edges)?;
    let output = combine_heads(tape, &heads, layer.combine)?;
    Ok(LayerOutput { output, attention })
}

/// Per-head coefficient tensors read back from a tape, with the segment
/// layout needed to check them.
#[derive(Clone, Debug)]
pub struct EdgeAttention<S> {
    pub row_offsets: Arc<[usize]>,
    pub coefficients: Vec<Tensor<S>>,
}

impl<S: Scalar> EdgeAttention<S> {
    pub fn from_tape(tape: &Tape<S>, attention: &[Var], edges: &EdgeIndex) -> Self {
        Self {
            row_offsets: edges.row_offsets.clone(),
            coefficients: attention.iter().map(|&a| tape.value(a).clone()).collect(),
        }
    }

    /// Largest deviation of a non-empty segment's sum from one, over all
    /// heads.
    pub fn max_row_sum_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for alpha in &self.coefficients {
            for seg in self.row_offsets.windows(2) {
                if seg[0] == seg[1] {
                    continue;
                }
                let s: f64 = (seg[0]..seg[1]).map(|e| alpha.get(e, 0).to_f64_lossy()).sum();
                worst = worst.max((s - 1.0).abs());
            }
        }
        worst
    }

    pub fn all_in_unit_interval(&self) -> bool {
        self.coefficients
            .iter()
            .flat_map(|a| a.data())
            .all(|&v| v >= S::zero() && v <= S::one())
    }
}
