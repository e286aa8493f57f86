use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{sgf, Graph, Labels};
use crate::config::kv::KeyValues;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Node,
    Edge,
    Graph,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "node" => Ok(Task::Node),
            "edge" => Ok(Task::Edge),
            "graph" => Ok(Task::Graph),
            other => Err(Error::Config(format!("unknown task {other}"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Node => "node",
            Task::Edge => "edge",
            Task::Graph => "graph",
        })
    }
}

/// Counts declared in `meta.txt`. `num_edges` counts the raw directed
/// lines of `edges.tsv`, before symmetrization and deduplication.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetMeta {
    pub num_nodes: usize,
    pub num_edges: usize,
    pub feat_dim: usize,
    pub num_classes: usize,
    pub task: Task,
    pub num_graphs: usize,
}

impl DatasetMeta {
    fn from_kv(kv: &KeyValues, path: &Path) -> Result<Self> {
        Ok(Self {
            num_nodes: kv.parse_value("num_nodes", path)?,
            num_edges: kv.parse_value("num_edges", path)?,
            feat_dim: kv.parse_value("feat_dim", path)?,
            num_classes: kv.parse_value("num_classes", path)?,
            task: kv
                .require("task", path)?
                .parse()
                .map_err(|_| Error::format(path, "task must be node, edge, or graph"))?,
            num_graphs: kv.parse_value("num_graphs", path)?,
        })
    }

    fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("num_nodes", self.num_nodes.to_string());
        kv.set("num_edges", self.num_edges.to_string());
        kv.set("feat_dim", self.feat_dim.to_string());
        kv.set("num_classes", self.num_classes.to_string());
        kv.set("task", self.task.to_string());
        kv.set("num_graphs", self.num_graphs.to_string());
        kv
    }
}

/// Train/validation/test indices. They index nodes for single-graph node
/// tasks, labelled edges for single-graph edge tasks, and graphs for
/// multi-graph corpora.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitMasks {
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub test: Vec<u32>,
}

impl SplitMasks {
    pub fn validate(&self, limit: usize) -> Result<()> {
        let mut seen = vec![false; limit];
        for (what, idx) in [
            ("train split", &self.train),
            ("validation split", &self.val),
            ("test split", &self.test),
        ] {
            for &i in idx {
                let i = i as usize;
                if i >= limit {
                    return Err(Error::IndexOutOfRange {
                        what,
                        index: i,
                        len: limit,
                    });
                }
                if seen[i] {
                    return Err(Error::Graph(format!("index {i} appears in more than one split")));
                }
                seen[i] = true;
            }
        }
        Ok(())
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

/// Preprocessing applied by the loader.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoadOptions {
    pub symmetrize: bool,
    pub self_loops: bool,
    /// L1 row normalisation; `None` enables it for single-graph node
    /// tasks (the citation benchmarks) only.
    pub normalize_features: Option<bool>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            symmetrize: true,
            self_loops: true,
            normalize_features: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub meta: DatasetMeta,
    /// Preprocessed graphs; a single-graph dataset has exactly one.
    pub graphs: Vec<Graph>,
    pub splits: SplitMasks,
}

impl Dataset {
    pub fn task(&self) -> Task {
        self.meta.task
    }

    pub fn is_multi_graph(&self) -> bool {
        self.graphs.len() > 1
    }

    pub fn feat_dim(&self) -> usize {
        self.meta.feat_dim
    }

    pub fn num_classes(&self) -> usize {
        self.meta.num_classes
    }

    /// Directed edge slots after preprocessing, summed over graphs.
    pub fn processed_edges(&self) -> usize {
        self.graphs.iter().map(Graph::num_edges).sum()
    }

    /// Number of items the split indices range over.
    pub fn split_universe(&self) -> usize {
        split_universe(&self.meta)
    }
}

fn split_universe(meta: &DatasetMeta) -> usize {
    if meta.num_graphs > 1 {
        return meta.num_graphs;
    }
    match meta.task {
        Task::Node => meta.num_nodes,
        Task::Edge => meta.num_edges,
        Task::Graph => meta.num_graphs,
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_lines<T: FromStr>(path: &Path) -> Result<Vec<T>> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            l.trim()
                .parse()
                .map_err(|_| Error::format(path, format!("line {}: not a decimal index", n + 1)))
        })
        .collect()
}

fn parse_edges(path: &Path) -> Result<Vec<(u32, u32)>> {
    let text = read_text(path)?;
    let mut edges = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::format(path, format!("line {}: expected src<TAB>dst", n + 1)));
        };
        let parse = |s: &str| {
            s.trim()
                .parse::<u32>()
                .map_err(|_| Error::format(path, format!("line {}: bad node index {s:?}", n + 1)))
        };
        edges.push((parse(a)?, parse(b)?));
    }
    Ok(edges)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    load_dataset_with(dir, &LoadOptions::default())
}

pub fn load_dataset_with(dir: &Path, opts: &LoadOptions) -> Result<Dataset> {
    let meta_path = dir.join("meta.txt");
    let meta = DatasetMeta::from_kv(&KeyValues::read(&meta_path)?, &meta_path)?;
    if meta.num_graphs == 0 {
        return Err(Error::format(&meta_path, "num_graphs must be at least 1"));
    }

    let edges_path = dir.join("edges.tsv");
    let edges = parse_edges(&edges_path)?;
    if edges.len() != meta.num_edges {
        return Err(Error::mismatch(
            format!("{}: edge lines vs meta num_edges", edges_path.display()),
            meta.num_edges,
            edges.len(),
        ));
    }

    let feat_path = dir.join("features.bin");
    let block = sgf::read_file(&feat_path)?;
    if block.rows != meta.num_nodes || block.cols != meta.feat_dim {
        return Err(Error::Format {
            path: feat_path,
            message: format!(
                "features are {}x{}, meta declares {}x{}",
                block.rows, block.cols, meta.num_nodes, meta.feat_dim
            ),
        });
    }

    let labels_path = dir.join("labels.txt");
    let labels: Vec<u32> = parse_lines(&labels_path)?;
    let expected_labels = match meta.task {
        Task::Node => meta.num_nodes,
        Task::Edge => meta.num_edges,
        Task::Graph => meta.num_graphs,
    };
    if labels.len() != expected_labels {
        return Err(Error::mismatch(
            format!("{}: label count", labels_path.display()),
            expected_labels,
            labels.len(),
        ));
    }
    if let Some((position, &label)) = labels
        .iter()
        .enumerate()
        .find(|(_, &l)| l as usize >= meta.num_classes)
    {
        return Err(Error::LabelOutOfRange {
            label: label as usize,
            position,
            num_classes: meta.num_classes,
        });
    }

    let splits = SplitMasks {
        train: parse_lines(&dir.join("split_train.txt"))?,
        val: parse_lines(&dir.join("split_val.txt"))?,
        test: parse_lines(&dir.join("split_test.txt"))?,
    };
    splits.validate(split_universe(&meta))?;

    let sizes: Vec<usize> = if meta.num_graphs > 1 {
        let p = dir.join("graph_sizes.txt");
        let sizes: Vec<usize> = parse_lines(&p)?;
        if sizes.len() != meta.num_graphs {
            return Err(Error::mismatch(
                format!("{}: graph count", p.display()),
                meta.num_graphs,
                sizes.len(),
            ));
        }
        let total: usize = sizes.iter().sum();
        if total != meta.num_nodes {
            return Err(Error::mismatch(format!("{}: node total", p.display()), meta.num_nodes, total));
        }
        sizes
    } else {
        vec![meta.num_nodes]
    };

    let raw = split_into_graphs(&meta, &sizes, &edges, &block.values, &labels)
        .map_err(|e| match e {
            Error::Graph(m) => Error::format(&edges_path, m),
            other => other,
        })?;

    let normalize = opts
        .normalize_features
        .unwrap_or(meta.task == Task::Node && meta.num_graphs == 1);
    let graphs = raw
        .into_iter()
        .map(|g| {
            let g = if opts.symmetrize { g.symmetrize() } else { g };
            let g = if opts.self_loops { g.add_self_loops() } else { g };
            if normalize {
                g.normalize_features_l1()
            } else {
                g
            }
        })
        .collect();

    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    Ok(Dataset {
        name,
        meta,
        graphs,
        splits,
    })
}

fn split_into_graphs(
    meta: &DatasetMeta,
    sizes: &[usize],
    edges: &[(u32, u32)],
    features: &[f32],
    labels: &[u32],
) -> Result<Vec<Graph>> {
    let mut starts = Vec::with_capacity(sizes.len() + 1);
    starts.push(0usize);
    for s in sizes {
        starts.push(starts.last().unwrap() + s);
    }
    let owner = |v: u32| -> Result<usize> {
        let v = v as usize;
        if v >= meta.num_nodes {
            return Err(Error::IndexOutOfRange {
                what: "edge endpoint",
                index: v,
                len: meta.num_nodes,
            });
        }
        Ok(starts.partition_point(|&s| s <= v) - 1)
    };

    let mut per_graph: Vec<Vec<(u32, u32)>> = vec![Vec::new(); sizes.len()];
    let mut per_graph_labels: Vec<Vec<u32>> = vec![Vec::new(); sizes.len()];
    for (k, &(i, j)) in edges.iter().enumerate() {
        let (gi, gj) = (owner(i)?, owner(j)?);
        if gi != gj {
            return Err(Error::Graph(format!(
                "edge line {} ({i}, {j}) crosses from graph {gi} to graph {gj}",
                k + 1
            )));
        }
        let base = starts[gi] as u32;
        per_graph[gi].push((i - base, j - base));
        if meta.task == Task::Edge {
            per_graph_labels[gi].push(labels[k]);
        }
    }

    let mut graphs = Vec::with_capacity(sizes.len());
    for (k, &n) in sizes.iter().enumerate() {
        let (lo, hi) = (starts[k], starts[k + 1]);
        let graph_labels = match meta.task {
            Task::Node => Labels::Node(labels[lo..hi].to_vec()),
            Task::Edge => Labels::Edge {
                pairs: per_graph[k].clone(),
                classes: std::mem::take(&mut per_graph_labels[k]),
            },
            Task::Graph => Labels::Graph(vec![labels[k]]),
        };
        graphs.push(Graph::from_edges(
            n,
            &per_graph[k],
            features[lo * meta.feat_dim..hi * meta.feat_dim].to_vec(),
            meta.feat_dim,
            meta.num_classes,
            graph_labels,
        )?);
    }
    Ok(graphs)
}

fn create(path: PathBuf) -> Result<std::io::BufWriter<fs::File>> {
    fs::File::create(&path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_lines<T: fmt::Display>(path: PathBuf, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = create(path.clone())?;
    for item in items {
        writeln!(w, "{item}").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Writes graphs in the neutral directory format. For edge tasks the
/// labelled pairs become `edges.tsv`; otherwise every CSR slot is written.
pub fn write_dataset(dir: &Path, graphs: &[Graph], task: Task, splits: &SplitMasks) -> Result<()> {
    let Some(first) = graphs.first() else {
        return Err(Error::Empty("dataset"));
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut edges = Vec::new();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut shift = 0u32;
    for g in graphs {
        match (task, g.labels()) {
            (Task::Edge, Labels::Edge { pairs, classes }) => {
                edges.extend(pairs.iter().map(|&(i, j)| (i + shift, j + shift)));
                labels.extend_from_slice(classes);
            }
            (Task::Node, Labels::Node(v)) | (Task::Graph, Labels::Graph(v)) => {
                edges.extend(g.edges().map(|(i, j)| (i + shift, j + shift)));
                labels.extend_from_slice(v);
            }
            _ => return Err(Error::Graph(format!("graph labels do not fit a {task} task"))),
        }
        features.extend_from_slice(g.features());
        shift += g.num_nodes() as u32;
    }

    let meta = DatasetMeta {
        num_nodes: shift as usize,
        num_edges: edges.len(),
        feat_dim: first.feat_dim(),
        num_classes: first.num_classes(),
        task,
        num_graphs: graphs.len(),
    };
    let meta_path = dir.join("meta.txt");
    fs::write(&meta_path, meta.to_kv().to_text()).map_err(|e| Error::io(meta_path, e))?;
    write_lines(dir.join("edges.tsv"), edges.iter().map(|(i, j)| format!("{i}\t{j}")))?;
    sgf::write_file(&dir.join("features.bin"), meta.num_nodes, meta.feat_dim, &features)?;
    write_lines(dir.join("labels.txt"), &labels)?;
    write_lines(dir.join("split_train.txt"), &splits.train)?;
    write_lines(dir.join("split_val.txt"), &splits.val)?;
    write_lines(dir.join("split_test.txt"), &splits.test)?;
    if graphs.len() > 1 {
        write_lines(dir.join("graph_sizes.txt"), graphs.iter().map(Graph::num_nodes))?;
    }
    Ok(())
}
