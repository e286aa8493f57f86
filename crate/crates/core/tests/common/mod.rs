//! Dense reference implementations used as oracles.
//!
//! Everything here works on plain `Vec<Vec<f64>>` with a dense adjacency
//! test and shares no code with the tape, the sparse attention kernels,
//! or the neuron primitives.

#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spikinggat::attention::{Combine, GatLayerParams};
use spikinggat::config::{Mode, RunConfig};
use spikinggat::graph::{Graph, Task};
use spikinggat::model::{Model, ModelConfig};
use spikinggat::synthetic;

pub type Matrix = Vec<Vec<f64>>;

pub fn features(g: &Graph) -> Matrix {
    (0..g.num_nodes()).map(|i| g.feature_row(i).iter().map(|&x| x as f64).collect()).collect()
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.2 * x
    }
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// One attention layer, node by node.
pub fn dense_gat(layer: &GatLayerParams<f64>, x: &Matrix, g: &Graph) -> Matrix {
    let n = x.len();
    let out = layer.out_dim;
    let mut heads = Vec::new();
    for k in 0..layer.heads {
        let w = layer.head_weight(k);
        let a = layer.attention_vector(k);
        let z: Matrix = x
            .iter()
            .map(|xi| (0..out).map(|r| (0..xi.len()).map(|c| w.get(r, c) * xi[c]).sum()).collect())
            .collect();
        let left: Vec<f64> = z.iter().map(|zi| (0..out).map(|r| a[r] * zi[r]).sum()).collect();
        let right: Vec<f64> = z.iter().map(|zi| (0..out).map(|r| a[out + r] * zi[r]).sum()).collect();
        let mut h = vec![vec![0.0; out]; n];
        for i in 0..n {
            let nbrs: Vec<usize> = (0..n).filter(|&j| g.has_edge(i, j)).collect();
            if nbrs.is_empty() {
                continue;
            }
            let e: Vec<f64> = nbrs.iter().map(|&j| leaky(left[i] + right[j])).collect();
            let m = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let p: Vec<f64> = e.iter().map(|v| (v - m).exp()).collect();
            let total: f64 = p.iter().sum();
            for (&j, pj) in nbrs.iter().zip(&p) {
                for r in 0..out {
                    h[i][r] += pj / total * z[j][r];
                }
            }
        }
        heads.push(h);
    }
    (0..n)
        .map(|i| match layer.combine {
            Combine::Concat => heads.iter().flat_map(|h| h[i].clone()).collect(),
            Combine::Mean => (0..out)
                .map(|r| heads.iter().map(|h| h[i][r]).sum::<f64>() / layer.heads as f64)
                .collect(),
        })
        .collect()
}

/// Scalar trace of the unrolled network.
pub struct Unrolled {
    pub logits: Matrix,
    /// Time-averaged last hidden layer output.
    pub embeddings: Option<Matrix>,
    /// `spikes[l][t]`, spiking mode only.
    pub spikes: Vec<Vec<Matrix>>,
}

/// The whole attention-head network, step by step and neuron by neuron.
pub fn unrolled_forward(model: &Model<f64>, g: &Graph) -> Unrolled {
    let s = &model.config().settings;
    let lif = s.lif;
    let n = g.num_nodes();
    let hidden = model.hidden_layers();
    let output = model.output_layer().expect("attention head");
    let x0 = features(g);
    let zeros = |w: usize| vec![vec![0.0; w]; n];

    let mut u: Vec<Matrix> = hidden.iter().map(|l| zeros(l.heads * l.out_dim)).collect();
    for m in &mut u {
        m.iter_mut().flatten().for_each(|v| *v = lif.u_rest);
    }
    let mut o: Vec<Matrix> = hidden.iter().map(|l| zeros(l.heads * l.out_dim)).collect();
    let mut spikes = vec![Vec::new(); hidden.len()];
    let mut out_u = zeros(output.out_dim);
    out_u.iter_mut().flatten().for_each(|v| *v = lif.u_rest);
    let mut logits_sum = zeros(output.out_dim);
    let mut emb_sum: Option<Matrix> = None;

    for _ in 0..lif.time_steps {
        let mut x = x0.clone();
        for (l, layer) in hidden.iter().enumerate() {
            let cur = dense_gat(layer, &x, g);
            x = match s.mode {
                Mode::SpikeFreeOracle => cur.iter().map(|r| r.iter().map(|&v| elu(v)).collect()).collect(),
                Mode::Spiking => {
                    for i in 0..n {
                        for c in 0..cur[i].len() {
                            let pre = lif.leak * u[l][i][c] * (1.0 - o[l][i][c]) + cur[i][c] + (1.0 - lif.leak) * lif.u_rest;
                            let fired = pre >= lif.threshold;
                            o[l][i][c] = if fired { 1.0 } else { 0.0 };
                            u[l][i][c] = if fired { lif.u_rest } else { pre };
                        }
                    }
                    spikes[l].push(o[l].clone());
                    o[l].clone()
                }
            };
        }
        if !hidden.is_empty() {
            let acc = emb_sum.get_or_insert_with(|| zeros(x[0].len()));
            for i in 0..n {
                for c in 0..x[i].len() {
                    acc[i][c] += x[i][c];
                }
            }
        }
        let cur = dense_gat(output, &x, g);
        for i in 0..n {
            for c in 0..output.out_dim {
                out_u[i][c] = lif.leak * out_u[i][c] + cur[i][c] + (1.0 - lif.leak) * lif.u_rest;
                logits_sum[i][c] += out_u[i][c];
            }
        }
    }
    let t = lif.time_steps as f64;
    let mean = |m: Matrix| m.into_iter().map(|r| r.into_iter().map(|v| v / t).collect()).collect();
    Unrolled {
        logits: mean(logits_sum),
        embeddings: emb_sum.map(mean),
        spikes,
    }
}

pub fn max_abs_diff(a: &Matrix, b: &[f64]) -> f64 {
    a.iter().flatten().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// A small attention-head model of the requested mode and window.
pub fn small_model(feat_dim: usize, classes: usize, mode: Mode, time_steps: usize, seed: u64) -> Model<f64> {
    let mut s = RunConfig::default().model;
    s.mode = mode;
    s.hidden_dims = vec![4];
    s.heads = vec![3];
    s.output_heads = 2;
    s.lif.time_steps = time_steps;
    let cfg = ModelConfig::new(s, feat_dim, classes, Task::Node).unwrap();
    Model::init_uniform(cfg, seed).unwrap()
}

/// `count` random graphs with between 1 and `max_nodes` nodes.
pub fn random_graphs(count: usize, max_nodes: usize, feat_dim: usize, classes: usize, seed: u64) -> Vec<Graph> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.gen_range(1..=max_nodes);
            let p = rng.gen_range(0.05..0.5);
            synthetic::random_graph(n, p, feat_dim, classes, &mut rng)
        })
        .collect()
}
