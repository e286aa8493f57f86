//! Small generated datasets for tests and smoke runs.
//!
//! - [`sbm_corpus`]: stochastic-block-model graphs whose node labels are
//!   the planted communities. Only a fraction of nodes carry a one-hot
//!   cue of their community, so labels must be inferred from neighbours.
//! - [`geometric_edge_corpus`]: points in the unit square joined to their
//!   nearest neighbours, each edge labelled 1 when it is shorter than the
//!   graph's median edge.
//! - [`random_graph`]: an Erdős–Rényi graph with uniform features, for
//!   oracle comparisons.
//!
//! Every generator returns graphs that are already symmetric and carry
//! self-loops, as loaded datasets do.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Dataset, DatasetMeta, Graph, Labels, SplitMasks, Task};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SbmSpec {
    pub communities: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub p_in: f64,
    pub p_out: f64,
    /// Probability that a node reveals its community in its features.
    pub cue_rate: f64,
}

impl Default for SbmSpec {
    fn default() -> Self {
        Self {
            communities: 3,
            min_nodes: 18,
            max_nodes: 30,
            p_in: 0.5,
            p_out: 0.04,
            cue_rate: 0.4,
        }
    }
}

impl SbmSpec {
    /// One cue column per community plus a constant column.
    pub fn feat_dim(&self) -> usize {
        self.communities + 1
    }
}

pub fn sbm_graph(spec: &SbmSpec, rng: &mut ChaCha8Rng) -> Graph {
    let n = rng.gen_range(spec.min_nodes..=spec.max_nodes);
    let c = spec.communities;
    let labels: Vec<u32> = (0..n).map(|_| rng.gen_range(0..c as u32)).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { spec.p_in } else { spec.p_out };
            if rng.gen_bool(p) {
                edges.push((i as u32, j as u32));
            }
        }
    }
    let d = spec.feat_dim();
    let mut features = vec![0.0f32; n * d];
    for (i, &l) in labels.iter().enumerate() {
        if rng.gen_bool(spec.cue_rate) {
            features[i * d + l as usize] = 1.0;
        }
        features[i * d + c] = 1.0;
    }
    Graph::from_edges(n, &edges, features, d, c, Labels::Node(labels))
        .expect("generated edges are in range")
        .symmetrize()
        .add_self_loops()
}

pub fn sbm_corpus(num_graphs: usize, spec: &SbmSpec, seed: u64) -> Vec<Graph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..num_graphs).map(|_| sbm_graph(spec, &mut rng)).collect()
}

/// `n` points, each joined to its `k` nearest neighbours; features are
/// the coordinates.
pub fn geometric_edge_graph(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Graph {
    let pts: Vec<[f32; 2]> = (0..n).map(|_| [rng.gen(), rng.gen()]).collect();
    let dist = |a: usize, b: usize| ((pts[a][0] - pts[b][0]).powi(2) + (pts[a][1] - pts[b][1]).powi(2)).sqrt();
    let mut pairs = Vec::new();
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| dist(i, a).total_cmp(&dist(i, b)).then(a.cmp(&b)));
        for &j in others.iter().take(k) {
            let (a, b) = (i.min(j) as u32, i.max(j) as u32);
            pairs.push((a, b));
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    let lengths: Vec<f32> = pairs.iter().map(|&(a, b)| dist(a as usize, b as usize)).collect();
    let mut sorted = lengths.clone();
    sorted.sort_by(f32::total_cmp);
    let median = sorted[sorted.len() / 2];
    let classes = lengths.iter().map(|&l| u32::from(l < median)).collect();
    let features = pts.iter().flatten().copied().collect();
    Graph::from_edges(n, &pairs, features, 2, 2, Labels::Edge { pairs: pairs.clone(), classes })
        .expect("generated edges are in range")
        .symmetrize()
        .add_self_loops()
}

pub fn geometric_edge_corpus(num_graphs: usize, nodes: usize, k: usize, seed: u64) -> Vec<Graph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..num_graphs).map(|_| geometric_edge_graph(nodes, k, &mut rng)).collect()
}

/// Each unordered pair joined with probability `p`; features uniform on
/// `[-1, 1)`, node labels uniform.
pub fn random_graph(n: usize, p: f64, feat_dim: usize, num_classes: usize, rng: &mut ChaCha8Rng) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                edges.push((i as u32, j as u32));
            }
        }
    }
    let features = (0..n * feat_dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let labels = (0..n).map(|_| rng.gen_range(0..num_classes as u32)).collect();
    Graph::from_edges(n, &edges, features, feat_dim, num_classes, Labels::Node(labels))
        .expect("generated edges are in range")
        .symmetrize()
        .add_self_loops()
}

/// Shuffled disjoint train/validation/test indices over `0..n`.
pub fn random_splits(n: usize, train: f64, val: f64, seed: u64) -> SplitMasks {
    let mut idx: Vec<u32> = (0..n as u32).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let a = ((n as f64 * train).round() as usize).min(n);
    let b = ((n as f64 * (train + val)).round() as usize).clamp(a, n);
    let mut s = SplitMasks {
        train: idx[..a].to_vec(),
        val: idx[a..b].to_vec(),
        test: idx[b..].to_vec(),
    };
    s.train.sort_unstable();
    s.val.sort_unstable();
    s.test.sort_unstable();
    s
}

/// Wraps already-preprocessed graphs as a dataset without touching disk.
pub fn dataset(name: &str, graphs: Vec<Graph>, task: Task, splits: SplitMasks) -> Result<Dataset> {
    let first = graphs.first().ok_or(crate::Error::Empty("dataset"))?;
    let meta = DatasetMeta {
        num_nodes: graphs.iter().map(Graph::num_nodes).sum(),
        num_edges: graphs
            .iter()
            .map(|g| if task == Task::Edge { g.labels().len() } else { g.num_edges() })
            .sum(),
        feat_dim: first.feat_dim(),
        num_classes: first.num_classes(),
        task,
        num_graphs: graphs.len(),
    };
    let ds = Dataset {
        name: name.to_string(),
        meta,
        graphs,
        splits,
    };
    let universe = if ds.graphs.len() > 1 || task == Task::Graph {
        ds.graphs.len()
    } else {
        ds.graphs[0].labels().len()
    };
    ds.splits.validate(universe)?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sbm_is_deterministic_and_well_formed() {
        let spec = SbmSpec::default();
        let a = sbm_corpus(5, &spec, 3);
        assert_eq!(a, sbm_corpus(5, &spec, 3));
        for g in &a {
            assert!((spec.min_nodes..=spec.max_nodes).contains(&g.num_nodes()));
            assert_eq!(g.labels().len(), g.num_nodes());
            assert_eq!(&g.symmetrize().add_self_loops(), g);
        }
    }

    #[test]
    fn sbm_edges_prefer_communities() {
        let spec = SbmSpec::default();
        let (mut inside, mut across) = (0, 0);
        for g in sbm_corpus(20, &spec, 1) {
            let Labels::Node(l) = g.labels() else { unreachable!() };
            for (i, j) in g.edges().filter(|(i, j)| i != j) {
                if l[i as usize] == l[j as usize] {
                    inside += 1;
                } else {
                    across += 1;
                }
            }
        }
        assert!(inside > 3 * across, "{inside} vs {across}");
    }

    #[test]
    fn geometric_labels_are_balanced() {
        let graphs = geometric_edge_corpus(10, 12, 3, 0);
        let (mut pos, mut total) = (0, 0);
        for g in &graphs {
            let Labels::Edge { pairs, classes } = g.labels() else { unreachable!() };
            assert_eq!(pairs.len(), classes.len());
            for &(a, b) in pairs {
                assert!(g.has_edge(a as usize, b as usize) && g.has_edge(b as usize, a as usize));
            }
            pos += classes.iter().filter(|&&c| c == 1).count();
            total += classes.len();
        }
        let frac = pos as f64 / total as f64;
        assert!((0.35..0.65).contains(&frac), "{frac}");
    }

    #[test]
    fn splits_partition() {
        let s = random_splits(100, 0.6, 0.2, 4);
        assert_eq!(s.sizes(), (60, 20, 20));
        s.validate(100).unwrap();
    }
}
