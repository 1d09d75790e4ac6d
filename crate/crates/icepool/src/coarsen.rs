//! Coarse operators induced by a partition: the coarse adjacency, pooled
//! node features, the intra/inter edge split, and per-cluster-pair
//! connection blocks.
//!
//! For clusters i and j with node lists `G(i)` and `G(j)` (ascending),
//! the connection block `B(i->j)` has entry `[m, n] = A[G(i)[m], G(j)[n]]`.
//! Blocks exist for ordered pairs of distinct clusters joined by at least
//! one edge, and `B(j->i)` is always the transpose of `B(i->j)`.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::partition::Partition;

/// Coarse operators for one (graph, partition) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseningResult {
    /// K x K edge counts between clusters; diagonal entries count both
    /// endpoints of intra-cluster edges, so they are twice the edge count.
    pub a_coar: Array2<u64>,
    /// K x d cluster feature sums.
    pub x_coar: Array2<f64>,
    /// N x N adjacency restricted to intra-cluster edges.
    pub a_int: Array2<u8>,
    /// N x N adjacency restricted to inter-cluster edges.
    pub a_ext: Array2<u8>,
    /// Connection blocks for connected ordered pairs of distinct clusters.
    pub pair_blocks: BTreeMap<(usize, usize), Array2<u8>>,
}

/// Builds all coarse operators for `g` under `p`.
pub fn coarsen(g: &Graph, p: &Partition) -> CoarseningResult {
    assert_eq!(
        p.n(),
        g.n(),
        "partition covers {} nodes but the graph has {}",
        p.n(),
        g.n()
    );
    let n = g.n();
    let k = p.k();
    let d = g.features().ncols();
    let mut a_coar = Array2::<u64>::zeros((k, k));
    let mut x_coar = Array2::<f64>::zeros((k, d));
    let mut a_int = Array2::<u8>::zeros((n, n));
    let mut a_ext = Array2::<u8>::zeros((n, n));

    for u in 0..n {
        let cu = p.cluster_of(u);
        for f in 0..d {
            x_coar[[cu, f]] += g.features()[[u, f]];
        }
        for v in 0..n {
            if g.adjacency()[[u, v]] != 0 {
                let cv = p.cluster_of(v);
                a_coar[[cu, cv]] += 1;
                if cu == cv {
                    a_int[[u, v]] = 1;
                } else {
                    a_ext[[u, v]] = 1;
                }
            }
        }
    }

    let mut pair_blocks = BTreeMap::new();
    for i in 0..k {
        for j in 0..k {
            if i != j && a_coar[[i, j]] > 0 {
                pair_blocks.insert((i, j), extract_block(g.adjacency(), p, i, j));
            }
        }
    }

    CoarseningResult {
        a_coar,
        x_coar,
        a_int,
        a_ext,
        pair_blocks,
    }
}

fn extract_block(m: &Array2<u8>, p: &Partition, i: usize, j: usize) -> Array2<u8> {
    let rows = p.node_list(i);
    let cols = p.node_list(j);
    let mut block = Array2::<u8>::zeros((rows.len(), cols.len()));
    for (bm, &u) in rows.iter().enumerate() {
        for (bn, &v) in cols.iter().enumerate() {
            block[[bm, bn]] = m[[u, v]];
        }
    }
    block
}

/// Connection blocks widened to walk reachability: entry `[m, n]` is 1
/// iff a walk of length `radius` or `radius - 1` joins the two nodes
/// (a length-0 walk joins a node to itself). With `radius` 1 the blocks
/// match [`coarsen`]'s, since cross-cluster nodes are always distinct.
pub fn extended_pair_blocks(
    g: &Graph,
    p: &Partition,
    radius: usize,
) -> Result<BTreeMap<(usize, usize), Array2<u8>>> {
    if radius < 1 {
        return Err(Error::InvalidArgument(
            "extension radius must be at least 1".into(),
        ));
    }
    assert_eq!(
        p.n(),
        g.n(),
        "partition covers {} nodes but the graph has {}",
        p.n(),
        g.n()
    );
    let n = g.n();
    let mut lower = Array2::<u8>::eye(n);
    let mut upper = g.adjacency().clone();
    for _ in 1..radius {
        lower = upper.clone();
        upper = bool_matmul(&upper, g.adjacency());
    }
    let mut reach = upper;
    reach.zip_mut_with(&lower, |r, &l| *r |= l);

    let mut blocks = BTreeMap::new();
    for i in 0..p.k() {
        for j in 0..p.k() {
            if i == j {
                continue;
            }
            let block = extract_block(&reach, p, i, j);
            if block.iter().any(|&x| x != 0) {
                blocks.insert((i, j), block);
            }
        }
    }
    Ok(blocks)
}

fn bool_matmul(a: &Array2<u8>, b: &Array2<u8>) -> Array2<u8> {
    let n = a.nrows();
    let mut out = Array2::<u8>::zeros((n, b.ncols()));
    for i in 0..n {
        for k in 0..a.ncols() {
            if a[[i, k]] != 0 {
                for j in 0..b.ncols() {
                    out[[i, j]] |= b[[k, j]];
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn worked_example() -> (Graph, Partition) {
        let g = Graph::from_edges(
            6,
            &[(0, 1), (1, 2), (3, 4), (0, 3), (0, 4), (1, 5)],
            Array2::eye(6),
            0,
        )
        .unwrap();
        let p = Partition::from_membership(&[0, 0, 0, 1, 1, 1]);
        (g, p)
    }

    #[test]
    fn worked_example_operators() {
        let (g, p) = worked_example();
        let cr = coarsen(&g, &p);
        assert_eq!(cr.a_coar, array![[4u64, 3], [3, 2]]);
        assert_eq!(
            cr.pair_blocks[&(0, 1)],
            array![[1u8, 1, 0], [0, 0, 1], [0, 0, 0]]
        );
        assert_eq!(cr.pair_blocks[&(1, 0)], cr.pair_blocks[&(0, 1)].t());
        let x_expected = array![
            [1.0, 1.0, 1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0, 1.0, 1.0]
        ];
        assert_eq!(cr.x_coar, x_expected);
    }

    #[test]
    fn intra_and_inter_parts_sum_to_the_adjacency() {
        let (g, p) = worked_example();
        let cr = coarsen(&g, &p);
        let sum = &cr.a_int + &cr.a_ext;
        assert_eq!(&sum, g.adjacency());
        assert_eq!(cr.a_int[[0, 1]], 1);
        assert_eq!(cr.a_ext[[0, 3]], 1);
        assert_eq!(cr.a_ext[[0, 1]], 0);
    }

    #[test]
    fn single_cluster_has_no_inter_structure() {
        let (g, _) = worked_example();
        let p = Partition::single(6);
        let cr = coarsen(&g, &p);
        assert_eq!(cr.a_coar, array![[12u64]]);
        assert_eq!(cr.a_ext, Array2::<u8>::zeros((6, 6)));
        assert!(cr.pair_blocks.is_empty());
        assert_eq!(&cr.a_int, g.adjacency());
    }

    #[test]
    fn identity_partition_reproduces_the_adjacency() {
        let (g, _) = worked_example();
        let p = Partition::identity(6);
        let cr = coarsen(&g, &p);
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(cr.a_coar[[i, j]], g.adjacency()[[i, j]] as u64);
            }
        }
        assert_eq!(cr.a_int, Array2::<u8>::zeros((6, 6)));
    }

    #[test]
    fn off_diagonal_counts_match_block_sums() {
        let (g, p) = worked_example();
        let cr = coarsen(&g, &p);
        for (&(i, j), block) in &cr.pair_blocks {
            let total: u64 = block.iter().map(|&x| x as u64).sum();
            assert_eq!(cr.a_coar[[i, j]], total);
        }
    }

    #[test]
    fn extended_radius_one_matches_plain_blocks() {
        let (g, p) = worked_example();
        let cr = coarsen(&g, &p);
        let ext = extended_pair_blocks(&g, &p, 1).unwrap();
        assert_eq!(ext, cr.pair_blocks);
    }

    #[test]
    fn extended_radius_two_reaches_two_hop_neighbors() {
        let (g, p) = worked_example();
        let ext = extended_pair_blocks(&g, &p, 2).unwrap();
        assert_eq!(ext[&(0, 1)], array![[1u8, 1, 1], [1, 1, 1], [0, 0, 1]]);
        assert_eq!(ext[&(1, 0)], ext[&(0, 1)].t());
    }

    #[test]
    fn extended_rejects_radius_zero() {
        let (g, p) = worked_example();
        assert!(extended_pair_blocks(&g, &p, 0).is_err());
    }

    #[test]
    fn disconnected_cluster_pairs_have_no_block() {
        let g = Graph::from_edges(4, &[(0, 1), (2, 3)], Array2::zeros((4, 1)), 0).unwrap();
        let p = Partition::from_membership(&[0, 0, 1, 1]);
        let cr = coarsen(&g, &p);
        assert!(cr.pair_blocks.is_empty());
        for radius in 1..=4 {
            assert!(extended_pair_blocks(&g, &p, radius).unwrap().is_empty());
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        prop_compose! {
            fn arb_instance()(n in 2usize..=14)(
                n in Just(n),
                raw_edges in proptest::collection::vec((0..n, 0..n), 0..n * 2),
                raw_membership in proptest::collection::vec(0..4usize, n),
                raw_features in proptest::collection::vec(-2.0f64..2.0, n * 3),
            ) -> (Graph, Partition) {
                let edges: Vec<(usize, usize)> =
                    raw_edges.into_iter().filter(|(u, v)| u != v).collect();
                let features = Array2::from_shape_vec((n, 3), raw_features).unwrap();
                let g = Graph::from_edges(n, &edges, features, 0).unwrap();
                (g, Partition::from_membership(&raw_membership))
            }
        }

        proptest! {
            #[test]
            fn matches_triple_loop_oracle((g, p) in arb_instance()) {
                let cr = coarsen(&g, &p);
                let k = p.k();
                for i in 0..k {
                    for j in 0..k {
                        let mut count = 0u64;
                        for &u in p.node_list(i) {
                            for &v in p.node_list(j) {
                                count += g.adjacency()[[u, v]] as u64;
                            }
                        }
                        prop_assert_eq!(cr.a_coar[[i, j]], count);
                    }
                    for f in 0..g.features().ncols() {
                        let sum: f64 = p.node_list(i)
                            .iter()
                            .map(|&u| g.features()[[u, f]])
                            .sum();
                        prop_assert!((cr.x_coar[[i, f]] - sum).abs() < 1e-12);
                    }
                }
                let recomposed = &cr.a_int + &cr.a_ext;
                prop_assert_eq!(&recomposed, g.adjacency());
            }

            #[test]
            fn blocks_transpose_consistently((g, p) in arb_instance()) {
                let cr = coarsen(&g, &p);
                for (&(i, j), block) in &cr.pair_blocks {
                    prop_assert!(cr.pair_blocks.contains_key(&(j, i)));
                    prop_assert_eq!(&cr.pair_blocks[&(j, i)], &block.t().to_owned());
                }
            }

            #[test]
            fn extension_grows_with_radius((g, p) in arb_instance()) {
                let r1 = extended_pair_blocks(&g, &p, 1).unwrap();
                let r2 = extended_pair_blocks(&g, &p, 2).unwrap();
                for (key, block) in &r1 {
                    let wider = &r2[key];
                    for (pos, &x) in block.indexed_iter() {
                        if x != 0 {
                            prop_assert_eq!(wider[pos], 1);
                        }
                    }
                }
            }
        }
    }
}
