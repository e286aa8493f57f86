//! The full network: hidden attention layers driving LIF neurons, then a
//! task head.
//!
//! Per time step, hidden layer `l` attends over its input (the encoded
//! features for the first layer, the previous layer's spikes otherwise)
//! and the aggregate becomes the input current of its neurons. With the
//! attention head, a final attention layer averages its heads and feeds
//! a non-spiking integrator whose mean membrane over the window is the
//! logits. With the MLP head, the time-averaged spike rates of the last
//! hidden layer are the embeddings, scored per node, per labelled node
//! pair, or per mean-pooled graph.
//!
//! The first layer sees identical input at every step, so its attention
//! and aggregate are computed once and reused across the window.

mod checkpoint;
mod heads;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{self, Combine, EdgeIndex, GatLayerParams, GatLayerVars, LayerOutput};
use crate::autodiff::{grad_check, GradCheckReport, Tape, Tensor, Var};
use crate::config::{self, HeadKind, KeyValues, Mode, ModelSettings, RunConfig};
use crate::error::{Error, Result};
use crate::graph::{BatchedGraph, Graph, Labels, Task};
use crate::lif::{self, StepVars, TapeState};
use crate::scalar::Scalar;

pub use checkpoint::Checkpoint;
pub use heads::{Mlp, MlpVars};

/// Independent random streams derived from one trial seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 0,
    Dropout = 1,
    Shuffle = 2,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub in_dim: usize,
    pub num_classes: usize,
    pub task: Task,
    pub settings: ModelSettings,
}

impl ModelConfig {
    pub fn new(settings: ModelSettings, in_dim: usize, num_classes: usize, task: Task) -> Result<Self> {
        let cfg = Self {
            in_dim,
            num_classes,
            task,
            settings,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        RunConfig {
            model: self.settings.clone(),
            train: RunConfig::default().train,
        }
        .validate()?;
        if self.in_dim == 0 || self.num_classes == 0 {
            return Err(Error::Config("input width and class count must be positive".into()));
        }
        if self.task != Task::Node && self.settings.head == HeadKind::Attention {
            return Err(Error::Config(format!("the {} task needs head=mlp", self.task)));
        }
        Ok(())
    }

    pub fn time_steps(&self) -> usize {
        self.settings.lif.time_steps
    }

    /// Width of the concatenated output of every hidden layer.
    pub fn hidden_widths(&self) -> Vec<usize> {
        let s = &self.settings;
        s.hidden_dims.iter().zip(&s.heads).map(|(d, k)| d * k).collect()
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.hidden_widths().last().copied()
    }

    pub fn to_kv(&self) -> KeyValues {
        let full = RunConfig {
            model: self.settings.clone(),
            train: RunConfig::default().train,
        }
        .to_kv();
        let mut kv = KeyValues::new();
        kv.set("in_dim", self.in_dim.to_string());
        kv.set("num_classes", self.num_classes.to_string());
        kv.set("task", self.task.to_string());
        for &k in &config::KEYS[..config::MODEL_KEYS] {
            kv.set(k, full.get(k).unwrap_or_default());
        }
        kv
    }

    /// Reads the keys written by [`ModelConfig::to_kv`]; others are ignored.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let get = |k: &str| kv.get(k).ok_or_else(|| Error::Config(format!("model header lacks {k}")));
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Config(format!("bad {k} in model header")))
        };
        let mut model_kv = KeyValues::new();
        for &k in &config::KEYS[..config::MODEL_KEYS] {
            model_kv.set(k, get(k)?);
        }
        let settings = RunConfig::from_kv(&model_kv)?.model;
        Self::new(settings, num("in_dim")?, num("num_classes")?, get("task")?.parse()?)
    }
}

/// Graph structure and features in the form the forward pass consumes.
#[derive(Clone, Debug)]
pub struct ModelInput<S> {
    pub edges: EdgeIndex,
    pub features: Tensor<S>,
    pub node_graph: Arc<[u32]>,
    pub graph_sizes: Vec<usize>,
    /// Labelled node pairs scored by the edge head.
    pub pairs: Option<(Arc<[u32]>, Arc<[u32]>)>,
}

impl<S: Scalar> ModelInput<S> {
    pub fn from_graph(g: &Graph) -> Self {
        Self::build(g, vec![0; g.num_nodes()], vec![g.num_nodes()])
    }

    pub fn from_batch(b: &BatchedGraph) -> Self {
        Self::build(b.graph(), b.node_graph().to_vec(), b.graph_sizes())
    }

    fn build(g: &Graph, node_graph: Vec<u32>, graph_sizes: Vec<usize>) -> Self {
        let features = Tensor::from_vec(
            g.num_nodes(),
            g.feat_dim(),
            g.features().iter().map(|&x| S::of(x as f64)).collect(),
        )
        .expect("graph features match their declared shape");
        let pairs = match g.labels() {
            Labels::Edge { pairs, .. } => Some((
                pairs.iter().map(|p| p.0).collect(),
                pairs.iter().map(|p| p.1).collect(),
            )),
            _ => None,
        };
        Self {
            edges: EdgeIndex::new(g),
            features,
            node_graph: node_graph.into(),
            graph_sizes,
            pairs,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.edges.num_nodes
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<S> {
    config: ModelConfig,
    hidden: Vec<GatLayerParams<S>>,
    output: Option<GatLayerParams<S>>,
    mlp: Option<Mlp<S>>,
}

/// Tape handles of every parameter, plus the flat list in declaration
/// order.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub hidden: Vec<GatLayerVars>,
    pub output: Option<GatLayerVars>,
    pub mlp: Option<MlpVars>,
    pub all: Vec<Var>,
}

/// One layer at one time step.
#[derive(Clone, Debug)]
pub struct StepTrace {
    pub attention: Vec<Var>,
    pub current: Var,
    /// Neuron variables of a spiking hidden layer.
    pub lif: Option<StepVars>,
}

#[derive(Clone, Debug)]
pub struct Forward {
    /// Node, pair, or graph scores depending on the task.
    pub logits: Var,
    /// Time-averaged output of the last hidden layer.
    pub embeddings: Option<Var>,
    /// `hidden[l][t]`.
    pub hidden: Vec<Vec<StepTrace>>,
    /// Output attention layer per step, when the attention head is used.
    pub output: Vec<StepTrace>,
    /// Output integrator membrane per step.
    pub membranes: Vec<Var>,
}

/// Values read back from a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<S> {
    pub logits: Tensor<S>,
    pub embeddings: Option<Tensor<S>>,
}

fn dropout_mask<S: Scalar>(rng: Option<&mut ChaCha8Rng>, p: f64, len: usize) -> Option<Arc<[S]>> {
    let rng = rng.filter(|_| p > 0.0)?;
    let keep = S::of(1.0 / (1.0 - p));
    Some((0..len).map(|_| if rng.gen::<f64>() < p { S::zero() } else { keep }).collect())
}

fn glorot<S: Scalar>(t: &mut Tensor<S>, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) {
    let b = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in t.data_mut() {
        *v = S::of(rng.gen_range(-b..=b));
    }
}

impl<S: Scalar> Model<S> {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let s = &config.settings;
        let mut hidden = Vec::new();
        let mut width = config.in_dim;
        for (&d, &k) in s.hidden_dims.iter().zip(&s.heads) {
            hidden.push(GatLayerParams::zeros(width, d, k, Combine::Concat));
            width = d * k;
        }
        let (output, mlp) = match s.head {
            HeadKind::Attention => (
                Some(GatLayerParams::zeros(width, config.num_classes, s.output_heads, Combine::Mean)),
                None,
            ),
            HeadKind::Mlp => {
                let input = if config.task == Task::Edge { 2 * width } else { width };
                (None, Some(Mlp::zeros(input, s.mlp_hidden, config.num_classes)))
            }
        };
        Ok(Self {
            config,
            hidden,
            output,
            mlp,
        })
    }

    /// Every weight uniform on `±sqrt(6 / (fan_in + fan_out))` of its own
    /// matrix, biases zero. A layer's stacked weight counts as one
    /// `in × heads·out` matrix and each head's attention vector as a
    /// `2·out × 1` one.
    pub fn init_uniform(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut rng = stream_rng(seed, Stream::Init);
        for layer in model.hidden.iter_mut().chain(model.output.as_mut()) {
            let (rows, cols) = layer.weight.shape();
            glorot(&mut layer.weight, rows, cols, &mut rng);
            glorot(&mut layer.attn_left, 2 * layer.out_dim, 1, &mut rng);
            glorot(&mut layer.attn_right, 2 * layer.out_dim, 1, &mut rng);
        }
        if let Some(m) = model.mlp.as_mut() {
            let (r, c) = m.w1.shape();
            glorot(&mut m.w1, r, c, &mut rng);
            let (r, c) = m.w2.shape();
            glorot(&mut m.w2, r, c, &mut rng);
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn hidden_layers(&self) -> &[GatLayerParams<S>] {
        &self.hidden
    }

    pub fn output_layer(&self) -> Option<&GatLayerParams<S>> {
        self.output.as_ref()
    }

    pub fn mlp(&self) -> Option<&Mlp<S>> {
        self.mlp.as_ref()
    }

    /// Named parameters in declaration order.
    pub fn params(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = Vec::new();
        let layers = self.hidden.iter().map(|l| (false, l)).chain(self.output.iter().map(|l| (true, l)));
        for (i, (is_out, l)) in layers.enumerate() {
            let prefix = if is_out { "output".to_string() } else { format!("layer{i}") };
            out.push((format!("{prefix}.weight"), &l.weight));
            out.push((format!("{prefix}.attn_left"), &l.attn_left));
            out.push((format!("{prefix}.attn_right"), &l.attn_right));
        }
        if let Some(m) = &self.mlp {
            out.push(("head.w1".into(), &m.w1));
            out.push(("head.b1".into(), &m.b1));
            out.push(("head.w2".into(), &m.w2));
            out.push(("head.b2".into(), &m.b2));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = Vec::new();
        for l in self.hidden.iter_mut().chain(self.output.as_mut()) {
            out.push(&mut l.weight);
            out.push(&mut l.attn_left);
            out.push(&mut l.attn_right);
        }
        if let Some(m) = self.mlp.as_mut() {
            out.extend([&mut m.w1, &mut m.b1, &mut m.w2, &mut m.b2]);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        let layer = |l: &GatLayerParams<S>| GatLayerParams {
            weight: l.weight.cast(),
            attn_left: l.attn_left.cast(),
            attn_right: l.attn_right.cast(),
            heads: l.heads,
            out_dim: l.out_dim,
            combine: l.combine,
        };
        Model {
            config: self.config.clone(),
            hidden: self.hidden.iter().map(layer).collect(),
            output: self.output.as_ref().map(layer),
            mlp: self.mlp.as_ref().map(Mlp::cast),
        }
    }

    pub fn record(&self, tape: &mut Tape<S>) -> ModelVars {
        let leaves: Vec<Var> = self.params().into_iter().map(|(_, t)| tape.param(t.clone())).collect();
        self.vars_from(&leaves).expect("one leaf per parameter")
    }

    /// Structures leaves already on a tape, given in [`Model::params`]
    /// order.
    pub fn vars_from(&self, leaves: &[Var]) -> Result<ModelVars> {
        let expected = 3 * (self.hidden.len() + usize::from(self.output.is_some())) + 4 * usize::from(self.mlp.is_some());
        if leaves.len() != expected {
            return Err(Error::mismatch("parameter leaves", expected, leaves.len()));
        }
        let mut it = leaves.iter().copied();
        let mut layer = |l: &GatLayerParams<S>| GatLayerVars {
            weight: it.next().unwrap(),
            attn_left: it.next().unwrap(),
            attn_right: it.next().unwrap(),
            heads: l.heads,
            out_dim: l.out_dim,
            combine: l.combine,
        };
        let hidden: Vec<GatLayerVars> = self.hidden.iter().map(&mut layer).collect();
        let output = self.output.as_ref().map(&mut layer);
        let mlp = self.mlp.as_ref().map(|_| MlpVars {
            w1: it.next().unwrap(),
            b1: it.next().unwrap(),
            w2: it.next().unwrap(),
            b2: it.next().unwrap(),
        });
        Ok(ModelVars {
            hidden,
            output,
            mlp,
            all: leaves.to_vec(),
        })
    }

    /// Unrolls the window on `tape`. Dropout is applied only when `rng` is
    /// given and the configured rate is positive; each layer input draws
    /// one mask that is shared by every time step.
    pub fn forward(
        &self,
        tape: &mut Tape<S>,
        vars: &ModelVars,
        input: &ModelInput<S>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Forward> {
        let cfg = &self.config;
        let n = input.num_nodes();
        if input.features.shape() != (n, cfg.in_dim) {
            return Err(Error::mismatch("feature matrix columns", cfg.in_dim, input.features.cols()));
        }
        let s = &cfg.settings;
        let widths = cfg.hidden_widths();
        let mut input_widths = vec![cfg.in_dim];
        input_widths.extend(&widths);
        let masks: Vec<Option<Arc<[S]>>> = input_widths
            .iter()
            .take(self.hidden.len() + usize::from(self.output.is_some()))
            .map(|&w| dropout_mask(rng.as_deref_mut(), s.dropout, n * w))
            .collect();

        let apply_mask = |tape: &mut Tape<S>, h: Var, l: usize| -> Result<Var> {
            match &masks[l] {
                Some(m) => tape.dropout(h, m.clone()),
                None => Ok(h),
            }
        };

        let features = tape.constant(input.features.clone());
        let first_input = apply_mask(tape, features, 0)?;
        let mut states: Vec<TapeState> = widths.iter().map(|&w| TapeState::rest(tape, n, w, &s.lif)).collect();
        let mut first_layer: Option<LayerOutput> = None;
        let mut out_u = self
            .output
            .as_ref()
            .map(|_| TapeState::rest(tape, n, cfg.num_classes, &s.lif).u);

        let mut hidden_trace: Vec<Vec<StepTrace>> = vec![Vec::new(); self.hidden.len()];
        let mut output_trace = Vec::new();
        let mut membranes = Vec::new();
        let mut last_hidden = Vec::new();

        for _t in 0..cfg.time_steps() {
            let mut h = first_input;
            for (l, layer) in vars.hidden.iter().enumerate() {
                let out = if l == 0 {
                    match &first_layer {
                        Some(o) => o.clone(),
                        None => {
                            let o = attention::forward(tape, layer, h, &input.edges)?;
                            first_layer = Some(o.clone());
                            o
                        }
                    }
                } else {
                    let x = apply_mask(tape, h, l)?;
                    attention::forward(tape, layer, x, &input.edges)?
                };
                let (next, lif_vars) = match s.mode {
                    Mode::Spiking => {
                        let step = lif::step_on_tape(tape, states[l], out.output, &s.lif)?;
                        states[l] = step.state();
                        (step.spikes, Some(step))
                    }
                    Mode::SpikeFreeOracle => (tape.elu(out.output), None),
                };
                hidden_trace[l].push(StepTrace {
                    attention: out.attention,
                    current: out.output,
                    lif: lif_vars,
                });
                h = next;
            }
            if !self.hidden.is_empty() {
                last_hidden.push(h);
            }
            if let (Some(layer), Some(u)) = (&vars.output, out_u.as_mut()) {
                // Without hidden layers `h` is the already masked input.
                let x = if self.hidden.is_empty() { h } else { apply_mask(tape, h, self.hidden.len())? };
                let out = attention::forward(tape, layer, x, &input.edges)?;
                *u = lif::integrate_on_tape(tape, *u, out.output, &s.lif)?;
                membranes.push(*u);
                output_trace.push(StepTrace {
                    attention: out.attention,
                    current: out.output,
                    lif: None,
                });
            }
        }

        let embeddings = if last_hidden.is_empty() {
            None
        } else {
            Some(lif::readout_on_tape(tape, &last_hidden)?)
        };
        let logits = match (&vars.mlp, embeddings) {
            (None, _) => lif::readout_on_tape(tape, &membranes)?,
            (Some(mlp), Some(e)) => match cfg.task {
                Task::Node => heads::node_scores(tape, mlp, e)?,
                Task::Edge => {
                    let (src, dst) = input
                        .pairs
                        .as_ref()
                        .ok_or_else(|| Error::Graph("edge head needs labelled node pairs".into()))?;
                    heads::edge_scores(tape, mlp, e, src, dst, s.symmetric_edges)?
                }
                Task::Graph => heads::graph_scores(tape, mlp, e, &input.node_graph, &input.graph_sizes)?,
            },
            (Some(_), None) => unreachable!("validated: mlp head has hidden layers"),
        };
        if !tape.value(logits).is_finite() {
            return Err(Error::NonFinite("model logits".into()));
        }
        Ok(Forward {
            logits,
            embeddings,
            hidden: hidden_trace,
            output: output_trace,
            membranes,
        })
    }

    /// Inference forward without dropout.
    pub fn predict(&self, input: &ModelInput<S>) -> Result<Prediction<S>> {
        let mut tape = Tape::new();
        let vars = self.record(&mut tape);
        let f = self.forward(&mut tape, &vars, input, None)?;
        Ok(Prediction {
            logits: tape.value(f.logits).clone(),
            embeddings: f.embeddings.map(|e| tape.value(e).clone()),
        })
    }
}

/// Finite-difference check of every parameter gradient of the mean
/// cross-entropy over `rows`. `inject_fault` corrupts the backward pass
/// as a negative control.
pub fn grad_check_model(
    model: &Model<f64>,
    input: &ModelInput<f64>,
    targets: Arc<[u32]>,
    rows: Arc<[u32]>,
    h: f64,
    tol: f64,
    inject_fault: bool,
) -> Result<GradCheckReport> {
    let params: Vec<(String, Tensor<f64>)> = model.params().into_iter().map(|(n, t)| (n, t.clone())).collect();
    grad_check(
        |tape, leaves| {
            if inject_fault {
                tape.inject_backward_fault();
            }
            let vars = model.vars_from(leaves)?;
            let f = model.forward(tape, &vars, input, None)?;
            tape.cross_entropy_with_logits(f.logits, targets.clone(), rows.clone())
        },
        &params,
        h,
        tol,
    )
}

/// Scores with the width of the class count; ties in a later argmax go
/// to the lowest class.
pub fn node_head<S: Scalar>(logits: &Tensor<S>, num_classes: usize) -> Result<&Tensor<S>> {
    if logits.cols() != num_classes {
        return Err(Error::mismatch("node score width", num_classes, logits.cols()));
    }
    Ok(logits)
}

#[cfg(test)]
mod tests;
