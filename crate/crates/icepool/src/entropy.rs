//! Connection entropy: how evenly a cluster's outgoing edges to another
//! cluster spread over its own nodes.
//!
//! For a connected ordered pair (i, j), the connection distribution
//! assigns node m of cluster i the fraction of the pair's edges incident
//! to it; the entropy of that distribution (natural log) is `h[i, j]`.
//! All edges leaving one node give entropy 0, a perfectly even spread
//! over n nodes gives `ln n`. Entropies stack with the coarse adjacency
//! into a K x K x 3 edge attribute tensor.

use ndarray::{Array1, Array2, Array3};

use crate::coarsen::CoarseningResult;
use crate::error::{Error, Result};

/// Entropy matrix and the stacked coarse edge attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyFeatures {
    /// K x K entropies; diagonal and unconnected pairs hold 0.
    pub h: Array2<f64>,
    /// K x K x 3 tensor: coarse edge counts, `h`, and `h` transposed.
    pub edge_features: Array3<f64>,
}

/// The connection distribution of ordered pair (i, j): entry m is the
/// fraction of the pair's edges incident to node m of cluster i.
pub fn connection_distribution(
    cr: &CoarseningResult,
    i: usize,
    j: usize,
) -> Result<Array1<f64>> {
    let k = cr.a_coar.nrows();
    if i >= k || j >= k {
        return Err(Error::InvalidArgument(format!(
            "cluster pair ({i}, {j}) outside 0..{k}"
        )));
    }
    if i == j {
        return Err(Error::InvalidArgument(format!(
            "connection distribution needs distinct clusters, got ({i}, {j})"
        )));
    }
    let block = cr
        .pair_blocks
        .get(&(i, j))
        .ok_or(Error::UndefinedDistribution { i, j })?;
    let total: f64 = block.iter().map(|&x| x as f64).sum();
    let mut dist = Array1::<f64>::zeros(block.nrows());
    for (m, row) in block.rows().into_iter().enumerate() {
        dist[m] = row.iter().map(|&x| x as f64).sum::<f64>() / total;
    }
    Ok(dist)
}

/// Computes `h` for every connected ordered pair and assembles the
/// K x K x 3 edge attribute tensor.
pub fn connection_entropy(cr: &CoarseningResult) -> EntropyFeatures {
    let k = cr.a_coar.nrows();
    let mut h = Array2::<f64>::zeros((k, k));
    for &(i, j) in cr.pair_blocks.keys() {
        let dist = connection_distribution(cr, i, j)
            .expect("pair_blocks only holds connected distinct pairs");
        h[[i, j]] = dist
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum();
    }
    let mut edge_features = Array3::<f64>::zeros((k, k, 3));
    for i in 0..k {
        for j in 0..k {
            edge_features[[i, j, 0]] = cr.a_coar[[i, j]] as f64;
            edge_features[[i, j, 1]] = h[[i, j]];
            edge_features[[i, j, 2]] = h[[j, i]];
        }
    }
    EntropyFeatures { h, edge_features }
}
