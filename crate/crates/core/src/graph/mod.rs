//! Graph topology, node features, labels, and the neutral dataset format.
//!
//! A [`Graph`] stores directed edge slots in CSR form: the neighbours of
//! node `i` are `col_indices[row_offsets[i]..row_offsets[i + 1]]`, and an
//! edge slot `(i, j)` means node `i` receives a message from node `j`.
//! Graphs are immutable; [`Graph::symmetrize`] and
//! [`Graph::add_self_loops`] return new graphs.

mod batch;
mod dataset;
pub mod sgf;

pub use batch::{batch_graphs, BatchedGraph};
pub use dataset::{
    load_dataset, load_dataset_with, write_dataset, Dataset, DatasetMeta, LoadOptions, SplitMasks,
    Task,
};

use crate::error::{Error, Result};

/// Supervision attached to a graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Labels {
    None,
    /// One class per node.
    Node(Vec<u32>),
    /// Labelled node pairs, kept in input order and independent of the
    /// message-passing adjacency.
    Edge {
        pairs: Vec<(u32, u32)>,
        classes: Vec<u32>,
    },
    /// One class per graph; a batch carries one entry per member graph.
    Graph(Vec<u32>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::None => 0,
            Labels::Node(v) | Labels::Graph(v) => v.len(),
            Labels::Edge { classes, .. } => classes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> &[u32] {
        match self {
            Labels::None => &[],
            Labels::Node(v) | Labels::Graph(v) => v,
            Labels::Edge { classes, .. } => classes,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<u32>,
    features: Vec<f32>,
    feat_dim: usize,
    num_classes: usize,
    labels: Labels,
}

impl Graph {
    /// Builds a graph from directed `(row, col)` edge slots. Slots are
    /// stable-sorted by row, so within a row they keep input order.
    pub fn from_edges(
        num_nodes: usize,
        edges: &[(u32, u32)],
        features: Vec<f32>,
        feat_dim: usize,
        num_classes: usize,
        labels: Labels,
    ) -> Result<Self> {
        for &(i, j) in edges {
            for v in [i, j] {
                if v as usize >= num_nodes {
                    return Err(Error::IndexOutOfRange {
                        what: "edge endpoint",
                        index: v as usize,
                        len: num_nodes,
                    });
                }
            }
        }
        let mut row_offsets = vec![0usize; num_nodes + 1];
        for &(i, _) in edges {
            row_offsets[i as usize + 1] += 1;
        }
        for i in 0..num_nodes {
            row_offsets[i + 1] += row_offsets[i];
        }
        let mut cursor = row_offsets.clone();
        let mut col_indices = vec![0u32; edges.len()];
        for &(i, j) in edges {
            col_indices[cursor[i as usize]] = j;
            cursor[i as usize] += 1;
        }
        Self::from_csr(
            num_nodes,
            row_offsets,
            col_indices,
            features,
            feat_dim,
            num_classes,
            labels,
        )
    }

    pub fn from_csr(
        num_nodes: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<u32>,
        features: Vec<f32>,
        feat_dim: usize,
        num_classes: usize,
        labels: Labels,
    ) -> Result<Self> {
        if row_offsets.len() != num_nodes + 1 {
            return Err(Error::mismatch("row_offsets length", num_nodes + 1, row_offsets.len()));
        }
        if row_offsets[0] != 0 || row_offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Graph("row_offsets must start at 0 and be nondecreasing".into()));
        }
        if row_offsets[num_nodes] != col_indices.len() {
            return Err(Error::mismatch(
                "row_offsets[num_nodes]",
                col_indices.len(),
                row_offsets[num_nodes],
            ));
        }
        if let Some(&bad) = col_indices.iter().find(|&&c| c as usize >= num_nodes) {
            return Err(Error::IndexOutOfRange {
                what: "col_indices",
                index: bad as usize,
                len: num_nodes,
            });
        }
        if features.len() != num_nodes * feat_dim {
            return Err(Error::mismatch("feature values", num_nodes * feat_dim, features.len()));
        }
        let g = Self {
            num_nodes,
            row_offsets,
            col_indices,
            features,
            feat_dim,
            num_classes,
            labels,
        };
        g.check_labels()?;
        Ok(g)
    }

    fn check_labels(&self) -> Result<()> {
        if let Labels::Node(v) = &self.labels {
            if v.len() != self.num_nodes {
                return Err(Error::mismatch("node labels", self.num_nodes, v.len()));
            }
        }
        if let Labels::Edge { pairs, classes } = &self.labels {
            if pairs.len() != classes.len() {
                return Err(Error::mismatch("edge labels", pairs.len(), classes.len()));
            }
            for &(i, j) in pairs {
                if i as usize >= self.num_nodes || j as usize >= self.num_nodes {
                    return Err(Error::IndexOutOfRange {
                        what: "labelled edge endpoint",
                        index: i.max(j) as usize,
                        len: self.num_nodes,
                    });
                }
            }
        }
        for (position, &c) in self.labels.classes().iter().enumerate() {
            if c as usize >= self.num_classes {
                return Err(Error::LabelOutOfRange {
                    label: c as usize,
                    position,
                    num_classes: self.num_classes,
                });
            }
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of directed edge slots.
    pub fn num_edges(&self) -> usize {
        self.col_indices.len()
    }

    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[u32] {
        &self.col_indices
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn feature_row(&self, i: usize) -> &[f32] {
        &self.features[i * self.feat_dim..(i + 1) * self.feat_dim]
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn with_labels(mut self, labels: Labels) -> Result<Self> {
        self.labels = labels;
        self.check_labels()?;
        Ok(self)
    }

    pub fn neighbors(&self, i: usize) -> Result<&[u32]> {
        if i >= self.num_nodes {
            return Err(Error::IndexOutOfRange {
                what: "node",
                index: i,
                len: self.num_nodes,
            });
        }
        Ok(&self.col_indices[self.row_offsets[i]..self.row_offsets[i + 1]])
    }

    /// All edge slots in CSR order.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.num_nodes).flat_map(move |i| {
            self.col_indices[self.row_offsets[i]..self.row_offsets[i + 1]]
                .iter()
                .map(move |&j| (i as u32, j))
        })
    }

    /// Row index of every edge slot, aligned with `col_indices`.
    pub fn edge_rows(&self) -> Vec<u32> {
        self.edges().map(|(i, _)| i).collect()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors(i)
            .map(|n| n.contains(&(j as u32)))
            .unwrap_or(false)
    }

    fn rebuild(&self, mut rows: Vec<Vec<u32>>) -> Graph {
        let mut row_offsets = Vec::with_capacity(self.num_nodes + 1);
        row_offsets.push(0);
        let mut col_indices = Vec::new();
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            col_indices.extend_from_slice(row);
            row_offsets.push(col_indices.len());
        }
        Graph {
            num_nodes: self.num_nodes,
            row_offsets,
            col_indices,
            features: self.features.clone(),
            feat_dim: self.feat_dim,
            num_classes: self.num_classes,
            labels: self.labels.clone(),
        }
    }

    /// Adds the reverse of every edge, drops duplicates, and sorts each
    /// row. Idempotent.
    pub fn symmetrize(&self) -> Graph {
        let mut rows = vec![Vec::new(); self.num_nodes];
        for (i, j) in self.edges() {
            rows[i as usize].push(j);
            rows[j as usize].push(i);
        }
        self.rebuild(rows)
    }

    /// Ensures every node has exactly one `(i, i)` slot. Rows come back
    /// sorted and deduplicated.
    pub fn add_self_loops(&self) -> Graph {
        let mut rows = vec![Vec::new(); self.num_nodes];
        for (i, j) in self.edges() {
            rows[i as usize].push(j);
        }
        for (i, row) in rows.iter_mut().enumerate() {
            row.push(i as u32);
        }
        self.rebuild(rows)
    }

    /// Scales each feature row to unit L1 norm; all-zero rows stay zero.
    pub fn normalize_features_l1(&self) -> Graph {
        let mut g = self.clone();
        for i in 0..g.num_nodes {
            let row = &mut g.features[i * g.feat_dim..(i + 1) * g.feat_dim];
            let norm: f32 = row.iter().map(|x| x.abs()).sum();
            if norm > 0.0 {
                for x in row {
                    *x /= norm;
                }
            }
        }
        g
    }
}
