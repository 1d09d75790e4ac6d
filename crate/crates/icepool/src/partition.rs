//! Node clustering for coarsening: seeded heavy-edge matching, partition
//! files, and the assignment/sampling operators built from a partition.
//!
//! Cluster ids are always contiguous from 0 and ordered by each cluster's
//! smallest member node, so equal partitions have equal representations.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;

/// A partition of `n` nodes into `k` non-empty clusters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    membership: Vec<usize>,
    node_lists: Vec<Vec<usize>>,
}

impl Partition {
    /// Builds a partition from raw per-node cluster assignments. Ids are
    /// compacted to 0-based contiguous values in order of first
    /// appearance, which orders clusters by smallest member.
    pub fn from_membership(raw: &[usize]) -> Self {
        let mut remap = BTreeMap::new();
        let mut membership = Vec::with_capacity(raw.len());
        for &id in raw {
            let next = remap.len();
            let compact = *remap.entry(id).or_insert(next);
            membership.push(compact);
        }
        let mut node_lists = vec![Vec::new(); remap.len()];
        for (node, &c) in membership.iter().enumerate() {
            node_lists[c].push(node);
        }
        Self {
            membership,
            node_lists,
        }
    }

    /// Every node in its own cluster.
    pub fn identity(n: usize) -> Self {
        Self::from_membership(&(0..n).collect::<Vec<_>>())
    }

    /// All nodes in one cluster.
    pub fn single(n: usize) -> Self {
        Self::from_membership(&vec![0; n])
    }

    pub fn n(&self) -> usize {
        self.membership.len()
    }

    /// Number of clusters.
    pub fn k(&self) -> usize {
        self.node_lists.len()
    }

    pub fn membership(&self) -> &[usize] {
        &self.membership
    }

    pub fn cluster_of(&self, node: usize) -> usize {
        self.membership[node]
    }

    /// Nodes of cluster `c` in ascending order.
    pub fn node_list(&self, c: usize) -> &[usize] {
        &self.node_lists[c]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.node_lists.iter().map(|l| l.len()).collect()
    }
}

/// Coarsens `g` to exactly `target_k` clusters by rounds of heavy-edge
/// matching: inter-cluster edges are visited by descending total weight
/// and greedily matched. The seed only breaks exact weight ties, through
/// a fixed pseudo-random cluster ordering. When matching alone cannot
/// reach `target_k` (no inter-cluster edges remain), the smallest
/// clusters are merged pairwise until the count is exact.
pub fn heavy_edge_partition(g: &Graph, target_k: usize, seed: u64) -> Result<Partition> {
    let n = g.n();
    if target_k < 1 || target_k > n {
        return Err(Error::InvalidArgument(format!(
            "target cluster count {target_k} outside 1..={n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut partition = Partition::identity(n);

    while partition.k() > target_k {
        let k = partition.k();
        let mut weights: BTreeMap<(usize, usize), u64> = BTreeMap::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if g.adjacency()[[u, v]] != 0 {
                    let (cu, cv) = (partition.cluster_of(u), partition.cluster_of(v));
                    if cu != cv {
                        *weights.entry((cu.min(cv), cu.max(cv))).or_insert(0) += 1;
                    }
                }
            }
        }
        if weights.is_empty() {
            break;
        }

        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(&mut rng);
        let mut rank = vec![0usize; k];
        for (pos, &c) in order.iter().enumerate() {
            rank[c] = pos;
        }
        let mut edges: Vec<((usize, usize), u64)> = weights.into_iter().collect();
        edges.sort_by_key(|&((c, d), w)| {
            (
                std::cmp::Reverse(w),
                rank[c].min(rank[d]),
                rank[c].max(rank[d]),
            )
        });

        let mut matched = vec![false; k];
        let mut merge_into = vec![usize::MAX; k];
        let mut merges = 0usize;
        for ((c, d), _) in edges {
            if matched[c] || matched[d] {
                continue;
            }
            matched[c] = true;
            matched[d] = true;
            merge_into[c.max(d)] = c.min(d);
            merges += 1;
            if k - merges == target_k {
                break;
            }
        }
        if merges == 0 {
            break;
        }
        let raw: Vec<usize> = partition
            .membership()
            .iter()
            .map(|&c| if merge_into[c] == usize::MAX { c } else { merge_into[c] })
            .collect();
        partition = Partition::from_membership(&raw);
    }

    while partition.k() > target_k {
        let mut clusters: Vec<usize> = (0..partition.k()).collect();
        clusters.sort_by_key(|&c| (partition.node_list(c).len(), partition.node_list(c)[0]));
        let (keep, merge) = (clusters[0], clusters[1]);
        let raw: Vec<usize> = partition
            .membership()
            .iter()
            .map(|&c| if c == merge { keep } else { c })
            .collect();
        partition = Partition::from_membership(&raw);
    }
    Ok(partition)
}

/// Reads a partition from a text file with one integer cluster id per
/// node per line. The line count must equal the node count of `g`; ids
/// may be arbitrary and are compacted.
pub fn load_partition(path: &Path, g: &Graph) -> Result<Partition> {
    if !path.is_file() {
        return Err(Error::MissingFile {
            path: path.to_path_buf(),
        });
    }
    let text = fs::read_to_string(path)?;
    let mut raw = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let id: i64 = line.parse().map_err(|_| Error::Format {
            path: path.to_path_buf(),
            line: i + 1,
            message: format!("expected an integer cluster id, got {line:?}"),
        })?;
        if id < 0 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("cluster id {id} is negative"),
            });
        }
        raw.push(id as usize);
    }
    if raw.len() != g.n() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            line: raw.len().max(1),
            message: format!("found {} assignments for {} nodes", raw.len(), g.n()),
        });
    }
    Ok(Partition::from_membership(&raw))
}

/// The N x K binary assignment matrix: entry (i, c) is 1 iff node `i`
/// belongs to cluster `c`. Each row sums to exactly 1.
pub fn assignment_matrix(p: &Partition) -> Array2<u8> {
    let mut s = Array2::<u8>::zeros((p.n(), p.k()));
    for (node, &c) in p.membership().iter().enumerate() {
        s[[node, c]] = 1;
    }
    s
}

/// The N x |cluster c| sampling operator whose column `m` selects the
/// m-th node of cluster `c`: entry (node_list(c)[m], m) is 1.
pub fn sampling_operator(p: &Partition, c: usize) -> Array2<f64> {
    let nodes = p.node_list(c);
    let mut op = Array2::<f64>::zeros((p.n(), nodes.len()));
    for (m, &node) in nodes.iter().enumerate() {
        op[[node, m]] = 1.0;
    }
    op
}
