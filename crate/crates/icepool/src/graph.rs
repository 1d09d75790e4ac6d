//! Graphs, labeled datasets, flat-file ingestion, and synthetic families.
//!
//! Datasets follow the common flat-file benchmark layout: `<DS>_A.txt`
//! holds one `row, col` edge per line over 1-based global node ids (each
//! undirected edge appears in both directions), `<DS>_graph_indicator.txt`
//! maps each node to its graph, `<DS>_graph_labels.txt` gives one label
//! per graph, and an optional `<DS>_node_labels.txt` gives one label per
//! node. Node labels become one-hot features; without them, nodes get
//! capped degree-bucket one-hots.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Highest degree bucket used when featurizing nodes by degree.
pub const DEGREE_BUCKET_CAP: usize = 64;

/// An undirected, unweighted graph with node features and a class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adjacency: Array2<u8>,
    features: Array2<f64>,
    label: usize,
    name: Option<String>,
}

impl Graph {
    /// Builds a graph, validating that `adjacency` is square, binary,
    /// symmetric, and hollow, and that `features` has one row per node.
    pub fn new(adjacency: Array2<u8>, features: Array2<f64>, label: usize) -> Result<Self> {
        let (r, c) = adjacency.dim();
        if r != c {
            return Err(Error::InvalidArgument(format!(
                "adjacency must be square, got {r}x{c}"
            )));
        }
        for i in 0..r {
            if adjacency[[i, i]] != 0 {
                return Err(Error::InvalidArgument(format!(
                    "adjacency has a self-loop at node {i}"
                )));
            }
            for j in 0..c {
                if adjacency[[i, j]] > 1 {
                    return Err(Error::InvalidArgument(format!(
                        "adjacency entry ({i},{j}) is {} but must be 0 or 1",
                        adjacency[[i, j]]
                    )));
                }
                if adjacency[[i, j]] != adjacency[[j, i]] {
                    return Err(Error::InvalidArgument(format!(
                        "adjacency is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        if features.nrows() != r {
            return Err(Error::InvalidArgument(format!(
                "feature matrix has {} rows for {r} nodes",
                features.nrows()
            )));
        }
        Ok(Self {
            adjacency,
            features,
            label,
            name: None,
        })
    }

    /// Builds a graph on `n` nodes from an undirected edge list.
    /// Duplicate edges collapse; self-loops are rejected.
    pub fn from_edges(
        n: usize,
        edges: &[(usize, usize)],
        features: Array2<f64>,
        label: usize,
    ) -> Result<Self> {
        let mut adjacency = Array2::<u8>::zeros((n, n));
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidArgument(format!(
                    "edge ({u},{v}) references a node outside 0..{n}"
                )));
            }
            if u == v {
                return Err(Error::InvalidArgument(format!("edge ({u},{v}) is a self-loop")));
            }
            adjacency[[u, v]] = 1;
            adjacency[[v, u]] = 1;
        }
        Self::new(adjacency, features, label)
    }

    pub fn n(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &Array2<u8> {
        &self.adjacency
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    /// Replaces the feature matrix; the row count must match the node count.
    pub fn set_features(&mut self, features: Array2<f64>) -> Result<()> {
        if features.nrows() != self.n() {
            return Err(Error::InvalidArgument(format!(
                "feature matrix has {} rows for {} nodes",
                features.nrows(),
                self.n()
            )));
        }
        self.features = features;
        Ok(())
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency.row(node).iter().map(|&x| x as usize).sum()
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n()).map(|i| self.degree(i)).collect()
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        let total: usize = self.adjacency.iter().map(|&x| x as usize).sum();
        total / 2
    }

    pub fn neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency
            .row(node)
            .into_iter()
            .enumerate()
            .filter(|&(_, &x)| x != 0)
            .map(|(j, _)| j)
            .collect::<Vec<_>>()
            .into_iter()
    }
}

/// A collection of graphs sharing a label space and feature dimension.
#[derive(Debug, Clone)]
pub struct Dataset {
    graphs: Vec<Graph>,
    num_classes: usize,
    feature_dim: usize,
}

impl Dataset {
    /// Wraps graphs into a dataset, inferring `num_classes` from the
    /// largest label and checking that feature dimensions agree.
    pub fn new(graphs: Vec<Graph>) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::InvalidArgument(
                "dataset must contain at least one graph".into(),
            ));
        }
        let feature_dim = graphs[0].features().ncols();
        for (i, g) in graphs.iter().enumerate() {
            if g.features().ncols() != feature_dim {
                return Err(Error::InvalidArgument(format!(
                    "graph {i} has feature dimension {} but the dataset uses {feature_dim}",
                    g.features().ncols()
                )));
            }
        }
        let num_classes = graphs.iter().map(|g| g.label()).max().unwrap() + 1;
        Ok(Self {
            graphs,
            num_classes,
            feature_dim,
        })
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn graph(&self, index: usize) -> &Graph {
        &self.graphs[index]
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Graph> {
        self.graphs.iter()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn mean_nodes(&self) -> f64 {
        let total: usize = self.graphs.iter().map(|g| g.n()).sum();
        total as f64 / self.graphs.len() as f64
    }
}

/// One-hot degree features: row `i` has a 1 in bucket `min(deg(i), cap)`,
/// giving a fixed width of `cap + 1` columns.
pub fn degree_features(g: &Graph, cap: usize) -> Array2<f64> {
    degree_bucket_features(&g.degrees(), cap)
}

fn degree_bucket_features(degrees: &[usize], cap: usize) -> Array2<f64> {
    let mut features = Array2::<f64>::zeros((degrees.len(), cap + 1));
    for (i, &d) in degrees.iter().enumerate() {
        features[[i, d.min(cap)]] = 1.0;
    }
    features
}

/// Degree cap shared across a dataset: the global maximum degree, clamped
/// to [`DEGREE_BUCKET_CAP`] so feature width stays bounded.
fn shared_degree_cap<'a>(degree_lists: impl Iterator<Item = &'a Vec<usize>>) -> usize {
    degree_lists
        .flat_map(|ds| ds.iter().copied())
        .max()
        .unwrap_or(0)
        .min(DEGREE_BUCKET_CAP)
}

fn file_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    if !path.is_file() {
        return Err(Error::MissingFile {
            path: path.to_path_buf(),
        });
    }
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, line)| (i + 1, line.trim().to_string()))
        .filter(|(_, line)| !line.is_empty())
        .collect())
}

fn parse_int(path: &Path, line: usize, text: &str, what: &str) -> Result<i64> {
    text.parse::<i64>().map_err(|_| Error::Format {
        path: path.to_path_buf(),
        line,
        message: format!("expected an integer {what}, got {text:?}"),
    })
}

/// Loads a flat-file dataset named `name`. Files are looked up directly
/// under `root_dir`, then under `root_dir/<name>/`.
///
/// Graph and node labels may be arbitrary integers; each label space is
/// remapped to contiguous 0-based ids by sorted order. With node labels
/// present, features are their one-hots; otherwise degree buckets.
pub fn load_tu_dataset(root_dir: &Path, name: &str) -> Result<Dataset> {
    let probe = root_dir.join(format!("{name}_A.txt"));
    let dir = if probe.is_file() {
        root_dir.to_path_buf()
    } else {
        root_dir.join(name)
    };
    let file = |suffix: &str| dir.join(format!("{name}_{suffix}.txt"));

    let indicator_path = file("graph_indicator");
    let indicator_lines = file_lines(&indicator_path)?;
    if indicator_lines.is_empty() {
        return Err(Error::Format {
            path: indicator_path.clone(),
            line: 1,
            message: "graph indicator file contains no nodes".into(),
        });
    }
    let n_total = indicator_lines.len();
    let mut raw_graph_ids = Vec::with_capacity(n_total);
    for (line, text) in &indicator_lines {
        raw_graph_ids.push(parse_int(&indicator_path, *line, text, "graph id")?);
    }
    let mut id_map = BTreeMap::new();
    for &id in &raw_graph_ids {
        let next = id_map.len();
        id_map.entry(id).or_insert(next);
    }
    let num_graphs = id_map.len();
    let mut node_graph = vec![0usize; n_total];
    let mut node_local = vec![0usize; n_total];
    let mut graph_sizes = vec![0usize; num_graphs];
    for (node, &raw) in raw_graph_ids.iter().enumerate() {
        let g = id_map[&raw];
        node_graph[node] = g;
        node_local[node] = graph_sizes[g];
        graph_sizes[g] += 1;
    }

    let edges_path = file("A");
    let mut edge_lists: Vec<Vec<(usize, usize)>> = vec![Vec::new(); num_graphs];
    for (line, text) in file_lines(&edges_path)? {
        let mut parts = text.split(',');
        let (u_text, v_text) = match (parts.next(), parts.next(), parts.next()) {
            (Some(u), Some(v), None) => (u.trim(), v.trim()),
            _ => {
                return Err(Error::Format {
                    path: edges_path.clone(),
                    line,
                    message: format!("expected \"row, col\", got {text:?}"),
                })
            }
        };
        let u = parse_int(&edges_path, line, u_text, "node id")?;
        let v = parse_int(&edges_path, line, v_text, "node id")?;
        for id in [u, v] {
            if id < 1 || id as usize > n_total {
                return Err(Error::Format {
                    path: edges_path.clone(),
                    line,
                    message: format!("node id {id} outside 1..={n_total}"),
                });
            }
        }
        let (u, v) = (u as usize - 1, v as usize - 1);
        if node_graph[u] != node_graph[v] {
            return Err(Error::Format {
                path: edges_path.clone(),
                line,
                message: format!("edge ({}, {}) crosses graph boundaries", u + 1, v + 1),
            });
        }
        if u == v {
            continue;
        }
        edge_lists[node_graph[u]].push((node_local[u], node_local[v]));
    }

    let labels_path = file("graph_labels");
    let label_lines = file_lines(&labels_path)?;
    if label_lines.len() != num_graphs {
        return Err(Error::Format {
            path: labels_path.clone(),
            line: label_lines.len().max(1),
            message: format!(
                "found {} graph labels for {num_graphs} graphs",
                label_lines.len()
            ),
        });
    }
    let mut raw_labels = Vec::with_capacity(num_graphs);
    for (line, text) in &label_lines {
        raw_labels.push(parse_int(&labels_path, *line, text, "graph label")?);
    }
    let mut label_values: Vec<i64> = raw_labels.clone();
    label_values.sort_unstable();
    label_values.dedup();
    let labels: Vec<usize> = raw_labels
        .iter()
        .map(|l| label_values.binary_search(l).unwrap())
        .collect();

    let node_labels_path = file("node_labels");
    let features_per_graph: Vec<Array2<f64>> = if node_labels_path.is_file() {
        let node_label_lines = file_lines(&node_labels_path)?;
        if node_label_lines.len() != n_total {
            return Err(Error::Format {
                path: node_labels_path.clone(),
                line: node_label_lines.len().max(1),
                message: format!(
                    "found {} node labels for {n_total} nodes",
                    node_label_lines.len()
                ),
            });
        }
        let mut raw = Vec::with_capacity(n_total);
        for (line, text) in &node_label_lines {
            raw.push(parse_int(&node_labels_path, *line, text, "node label")?);
        }
        let mut values: Vec<i64> = raw.clone();
        values.sort_unstable();
        values.dedup();
        let dim = values.len();
        let mut per_graph: Vec<Array2<f64>> = graph_sizes
            .iter()
            .map(|&sz| Array2::zeros((sz, dim)))
            .collect();
        for (node, &raw_label) in raw.iter().enumerate() {
            let idx = values.binary_search(&raw_label).unwrap();
            per_graph[node_graph[node]][[node_local[node], idx]] = 1.0;
        }
        per_graph
    } else {
        let degree_lists: Vec<Vec<usize>> = edge_lists
            .iter()
            .zip(&graph_sizes)
            .map(|(edges, &sz)| {
                let mut adjacency = Array2::<u8>::zeros((sz, sz));
                for &(u, v) in edges {
                    adjacency[[u, v]] = 1;
                    adjacency[[v, u]] = 1;
                }
                (0..sz)
                    .map(|i| adjacency.row(i).iter().map(|&x| x as usize).sum())
                    .collect()
            })
            .collect();
        let cap = shared_degree_cap(degree_lists.iter());
        degree_lists
            .iter()
            .map(|ds| degree_bucket_features(ds, cap))
            .collect()
    };

    let mut graphs = Vec::with_capacity(num_graphs);
    for (g, (edges, features)) in edge_lists.into_iter().zip(features_per_graph).enumerate() {
        graphs.push(
            Graph::from_edges(graph_sizes[g], &edges, features, labels[g])?
                .with_name(format!("{name}/{g}")),
        );
    }
    Dataset::new(graphs)
}

/// Writes `ds` in the flat-file layout under `dir` so that
/// `load_tu_dataset(dir, name)` reads it back. Labels are written as the
/// stored 0-based ids. With `write_node_labels`, each node's label is the
/// argmax of its feature row; otherwise features are re-derived from
/// degrees on load.
pub fn save_tu_dataset(ds: &Dataset, dir: &Path, name: &str, write_node_labels: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut a = fs::File::create(dir.join(format!("{name}_A.txt")))?;
    let mut indicator = fs::File::create(dir.join(format!("{name}_graph_indicator.txt")))?;
    let mut labels = fs::File::create(dir.join(format!("{name}_graph_labels.txt")))?;
    let mut node_labels = if write_node_labels {
        Some(fs::File::create(dir.join(format!("{name}_node_labels.txt")))?)
    } else {
        None
    };

    let mut offset = 0usize;
    for (g, graph) in ds.iter().enumerate() {
        writeln!(labels, "{}", graph.label())?;
        for u in 0..graph.n() {
            writeln!(indicator, "{}", g + 1)?;
            for v in 0..graph.n() {
                if graph.adjacency()[[u, v]] != 0 {
                    writeln!(a, "{}, {}", offset + u + 1, offset + v + 1)?;
                }
            }
            if let Some(f) = node_labels.as_mut() {
                let row = graph.features().row(u);
                let mut best = 0;
                for j in 1..row.len() {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                writeln!(f, "{best}")?;
            }
        }
        offset += graph.n();
    }
    Ok(())
}

/// Built-in synthetic dataset families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticFamily {
    /// Two random communities; the class controls inter-community density.
    TwoCommunity,
    /// A ring of cliques; the class controls how many cliques.
    RingOfCliques,
}

impl fmt::Display for SyntheticFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::TwoCommunity => write!(f, "two_community"),
            Self::RingOfCliques => write!(f, "ring_of_cliques"),
        }
    }
}

impl FromStr for SyntheticFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_community" => Ok(Self::TwoCommunity),
            "ring_of_cliques" => Ok(Self::RingOfCliques),
            other => Err(Error::InvalidArgument(format!(
                "unknown synthetic family {other:?}; expected two_community or ring_of_cliques"
            ))),
        }
    }
}

/// Generates `count` labeled graphs (`count` must be even and at least 2,
/// so both classes appear). Graph `i` gets class `i % 2` and its own RNG
/// stream derived from `seed`, so regenerating with the same arguments is
/// reproducible graph by graph.
pub fn generate_synthetic(family: SyntheticFamily, count: usize, seed: u64) -> Result<Dataset> {
    if count < 2 || !count.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "synthetic count must be even and at least 2, got {count}"
        )));
    }
    let mut adjacencies = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1 + i as u64);
        let class = i % 2;
        let adjacency = match family {
            SyntheticFamily::TwoCommunity => two_community_adjacency(&mut rng, class),
            SyntheticFamily::RingOfCliques => ring_of_cliques_adjacency(&mut rng, class),
        };
        adjacencies.push((adjacency, class));
    }

    let degree_lists: Vec<Vec<usize>> = adjacencies
        .iter()
        .map(|(a, _)| {
            (0..a.nrows())
                .map(|i| a.row(i).iter().map(|&x| x as usize).sum())
                .collect()
        })
        .collect();
    let cap = shared_degree_cap(degree_lists.iter());

    let mut graphs = Vec::with_capacity(count);
    for (i, ((adjacency, class), degrees)) in adjacencies.into_iter().zip(degree_lists).enumerate()
    {
        let features = degree_bucket_features(&degrees, cap);
        graphs.push(Graph::new(adjacency, features, class)?.with_name(format!("{family}/{i}")));
    }
    Dataset::new(graphs)
}

fn two_community_adjacency(rng: &mut ChaCha8Rng, class: usize) -> Array2<u8> {
    let na = rng.random_range(7..=10);
    let nb = rng.random_range(7..=10);
    let n = na + nb;
    let p_inter = if class == 0 { 0.04 } else { 0.35 };
    let mut a = Array2::<u8>::zeros((n, n));
    for u in 0..n {
        for v in (u + 1)..n {
            let same = (u < na) == (v < na);
            let p = if same { 0.55 } else { p_inter };
            if rng.random_bool(p) {
                a[[u, v]] = 1;
                a[[v, u]] = 1;
            }
        }
    }
    a
}

fn ring_of_cliques_adjacency(rng: &mut ChaCha8Rng, class: usize) -> Array2<u8> {
    let cliques = if class == 0 { 3 } else { 5 };
    let sizes: Vec<usize> = (0..cliques).map(|_| rng.random_range(4..=6)).collect();
    let n: usize = sizes.iter().sum();
    let mut starts = Vec::with_capacity(cliques);
    let mut acc = 0;
    for &s in &sizes {
        starts.push(acc);
        acc += s;
    }
    let mut a = Array2::<u8>::zeros((n, n));
    for (c, &s) in sizes.iter().enumerate() {
        let base = starts[c];
        for u in 0..s {
            for v in (u + 1)..s {
                a[[base + u, base + v]] = 1;
                a[[base + v, base + u]] = 1;
            }
        }
    }
    for c in 0..cliques {
        let d = (c + 1) % cliques;
        let u = starts[c] + rng.random_range(0..sizes[c]);
        let v = starts[d] + rng.random_range(0..sizes[d]);
        if u != v {
            a[[u, v]] = 1;
            a[[v, u]] = 1;
        }
    }
    a
}
