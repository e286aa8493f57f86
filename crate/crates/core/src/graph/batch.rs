use super::{Graph, Labels};
use crate::error::{Error, Result};

/// Several graphs laid out block-diagonally in one [`Graph`].
#[derive(Clone, Debug, PartialEq)]
pub struct BatchedGraph {
    graph: Graph,
    node_graph: Vec<u32>,
    graph_ptr: Vec<usize>,
}

impl BatchedGraph {
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn num_graphs(&self) -> usize {
        self.graph_ptr.len() - 1
    }

    /// Source graph of every node.
    pub fn node_graph(&self) -> &[u32] {
        &self.node_graph
    }

    /// First node of each graph, followed by the total node count.
    pub fn graph_ptr(&self) -> &[usize] {
        &self.graph_ptr
    }

    pub fn node_range(&self, k: usize) -> std::ops::Range<usize> {
        self.graph_ptr[k]..self.graph_ptr[k + 1]
    }

    pub fn graph_sizes(&self) -> Vec<usize> {
        self.graph_ptr.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Concatenates graphs block-diagonally; node indices of graph `k` are
/// shifted by the node count of graphs `0..k`.
pub fn batch_graphs(graphs: &[Graph]) -> Result<BatchedGraph> {
    let Some(first) = graphs.first() else {
        return Err(Error::Empty("graph batch"));
    };
    let (feat_dim, num_classes) = (first.feat_dim(), first.num_classes());
    for g in graphs {
        if g.feat_dim() != feat_dim {
            return Err(Error::mismatch("batched feature dimension", feat_dim, g.feat_dim()));
        }
        if g.num_classes() != num_classes {
            return Err(Error::mismatch("batched class count", num_classes, g.num_classes()));
        }
    }

    let total: usize = graphs.iter().map(Graph::num_nodes).sum();
    let mut row_offsets = Vec::with_capacity(total + 1);
    row_offsets.push(0);
    let mut col_indices = Vec::with_capacity(graphs.iter().map(Graph::num_edges).sum());
    let mut features = Vec::with_capacity(total * feat_dim);
    let mut node_graph = Vec::with_capacity(total);
    let mut graph_ptr = Vec::with_capacity(graphs.len() + 1);
    graph_ptr.push(0);

    let mut node_labels = Vec::new();
    let mut pairs = Vec::new();
    let mut edge_classes = Vec::new();
    let mut graph_labels = Vec::new();
    let mut kinds = (false, false, false);

    let mut shift = 0usize;
    for (k, g) in graphs.iter().enumerate() {
        let base = col_indices.len();
        col_indices.extend(g.col_indices().iter().map(|&c| c + shift as u32));
        row_offsets.extend(g.row_offsets()[1..].iter().map(|&o| o + base));
        features.extend_from_slice(g.features());
        node_graph.extend(std::iter::repeat(k as u32).take(g.num_nodes()));
        match g.labels() {
            Labels::None => {}
            Labels::Node(v) => {
                kinds.0 = true;
                node_labels.extend_from_slice(v);
            }
            Labels::Edge { pairs: p, classes } => {
                kinds.1 = true;
                pairs.extend(p.iter().map(|&(i, j)| (i + shift as u32, j + shift as u32)));
                edge_classes.extend_from_slice(classes);
            }
            Labels::Graph(v) => {
                kinds.2 = true;
                graph_labels.extend_from_slice(v);
            }
        }
        shift += g.num_nodes();
        graph_ptr.push(shift);
    }

    let labels = match kinds {
        (false, false, false) => Labels::None,
        (true, false, false) if node_labels.len() == total => Labels::Node(node_labels),
        (false, true, false) => Labels::Edge {
            pairs,
            classes: edge_classes,
        },
        (false, false, true) if graph_labels.len() == graphs.len() => Labels::Graph(graph_labels),
        _ => return Err(Error::Graph("batched graphs carry inconsistent label kinds".into())),
    };

    let graph = Graph::from_csr(
        total,
        row_offsets,
        col_indices,
        features,
        feat_dim,
        num_classes,
        labels,
    )?;
    Ok(BatchedGraph {
        graph,
        node_graph,
        graph_ptr,
    })
}
