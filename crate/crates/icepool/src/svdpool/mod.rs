//! Per-pair SVD pooling: decompose every connection block, lift the
//! singular vectors back to original-node coordinates, and aggregate
//! them into pooled feature matrices.
//!
//! For each connected ordered pair (i, j) the block `B(i->j)` has SVD
//! `U S V^T`; component l lifts to a length-N vector supported on
//! cluster i's nodes, scaled by `sqrt(sigma_l)` when weighting is on.
//! Row j of the l-th aggregation matrix sums those lifted left vectors
//! over all i, so cluster j sees the edge structure of its neighbors.
//! With weighting on, radius 1, and full rank, summing the lifted outer
//! products over pairs and components reproduces the inter-cluster
//! adjacency exactly; [`verify_reconstruction`] measures that residual.

pub mod svd;

use std::collections::BTreeMap;

use ndarray::Array2;

pub use svd::{svd, SvdTriplet};

use crate::coarsen::{extended_pair_blocks, CoarseningResult};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::partition::Partition;

const SVD_TOL: f64 = 1e-10;

/// Decompositions and pooled operators for one (graph, partition) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdPoolComponents {
    /// Number of components kept per pair.
    pub rank: usize,
    /// Walk radius of the connection blocks (1 = direct edges).
    pub radius: usize,
    /// Whether lifted vectors carry `sqrt(sigma)` weights.
    pub weighted: bool,
    /// Unweighted SVD triplets per connected ordered pair. The (j, i)
    /// triplet is the (i, j) one with sides swapped, so lifted vectors
    /// from opposite directions match exactly.
    pub per_pair: BTreeMap<(usize, usize), SvdTriplet>,
    /// Per component, the K x N matrix of aggregated lifted left vectors.
    pub aggregation: Vec<Array2<f64>>,
    /// Per component, the K x d pooled features `aggregation[l] * X`.
    pub pooled: Vec<Array2<f64>>,
}

/// Decomposes every connection block and assembles `rank` aggregation
/// and pooled matrices. Components past a block's rank contribute
/// nothing, so `rank` may exceed the smallest block dimension.
pub fn build_components(
    g: &Graph,
    p: &Partition,
    cr: &CoarseningResult,
    rank: usize,
    radius: usize,
    weighted: bool,
) -> Result<SvdPoolComponents> {
    if rank < 1 {
        return Err(Error::InvalidArgument(
            "component rank must be at least 1".into(),
        ));
    }
    let blocks: BTreeMap<(usize, usize), Array2<u8>> = if radius == 1 {
        cr.pair_blocks.clone()
    } else {
        extended_pair_blocks(g, p, radius)?
    };

    let mut per_pair = BTreeMap::new();
    for (&(i, j), block) in &blocks {
        if i >= j {
            continue;
        }
        let as_f64 = block.map(|&x| x as f64);
        let t = svd(&as_f64, SVD_TOL)?;
        per_pair.insert(
            (j, i),
            SvdTriplet {
                u: t.v.clone(),
                sigma: t.sigma.clone(),
                v: t.u.clone(),
            },
        );
        per_pair.insert((i, j), t);
    }

    let k = p.k();
    let n = p.n();
    let mut aggregation = Vec::with_capacity(rank);
    let mut pooled = Vec::with_capacity(rank);
    for l in 0..rank {
        let mut agg = Array2::<f64>::zeros((k, n));
        for (&(i, j), t) in &per_pair {
            if l >= t.sigma.len() || t.sigma[l] == 0.0 {
                continue;
            }
            let w = if weighted { t.sigma[l].sqrt() } else { 1.0 };
            for (m, &node) in p.node_list(i).iter().enumerate() {
                agg[[j, node]] += w * t.u[[m, l]];
            }
        }
        let pool = agg.dot(g.features());
        aggregation.push(agg);
        pooled.push(pool);
    }

    Ok(SvdPoolComponents {
        rank,
        radius,
        weighted,
        per_pair,
        aggregation,
        pooled,
    })
}

/// Outcome of re-assembling the inter-cluster adjacency from components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructionReport {
    /// Largest absolute entry of (reconstruction - target).
    pub residual: f64,
    /// True when the components were built under the conditions that
    /// make the reconstruction exact: weighting on, radius 1, and rank
    /// covering every block's nonzero singular values.
    pub exact_expected: bool,
    /// True when the target is the walk-extended inter matrix (radius
    /// above 1) rather than the plain inter-cluster adjacency.
    pub against_extended: bool,
}

/// Sums the lifted outer products of every pair's retained components
/// and compares them against the inter-cluster structure the components
/// were built from.
pub fn verify_reconstruction(
    g: &Graph,
    p: &Partition,
    comps: &SvdPoolComponents,
) -> ReconstructionReport {
    let n = g.n();
    let mut target = Array2::<f64>::zeros((n, n));
    let blocks = if comps.radius == 1 {
        crate::coarsen::coarsen(g, p).pair_blocks
    } else {
        extended_pair_blocks(g, p, comps.radius)
            .expect("radius was validated when the components were built")
    };
    for (&(i, j), block) in &blocks {
        for (m, &u) in p.node_list(i).iter().enumerate() {
            for (nn, &v) in p.node_list(j).iter().enumerate() {
                target[[u, v]] = block[[m, nn]] as f64;
            }
        }
    }

    let mut recon = Array2::<f64>::zeros((n, n));
    let mut rank_sufficient = true;
    for (&(i, j), t) in &comps.per_pair {
        let nonzero = t.sigma.iter().filter(|&&s| s > 0.0).count();
        if comps.rank < nonzero {
            rank_sufficient = false;
        }
        let keep = comps.rank.min(t.sigma.len());
        for l in 0..keep {
            let w = if comps.weighted { t.sigma[l] } else { 1.0 };
            if w == 0.0 {
                continue;
            }
            for (m, &u) in p.node_list(i).iter().enumerate() {
                for (nn, &v) in p.node_list(j).iter().enumerate() {
                    recon[[u, v]] += w * t.u[[m, l]] * t.v[[nn, l]];
                }
            }
        }
    }

    let residual = recon
        .iter()
        .zip(target.iter())
        .map(|(r, t)| (r - t).abs())
        .fold(0.0, f64::max);
    ReconstructionReport {
        residual,
        exact_expected: comps.weighted && comps.radius == 1 && rank_sufficient,
        against_extended: comps.radius > 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coarsen::coarsen;
    use ndarray::Array2;

    fn worked_example() -> (Graph, Partition, CoarseningResult) {
        let g = Graph::from_edges(
            6,
            &[(0, 1), (1, 2), (3, 4), (0, 3), (0, 4), (1, 5)],
            Array2::eye(6),
            0,
        )
        .unwrap();
        let p = Partition::from_membership(&[0, 0, 0, 1, 1, 1]);
        let cr = coarsen(&g, &p);
        (g, p, cr)
    }

    #[test]
    fn worked_example_reconstructs_exactly() {
        let (g, p, cr) = worked_example();
        let comps = build_components(&g, &p, &cr, 3, 1, true).unwrap();
        let report = verify_reconstruction(&g, &p, &comps);
        assert!(report.exact_expected);
        assert!(!report.against_extended);
        assert!(report.residual <= 1e-10, "residual {}", report.residual);
    }

    #[test]
    fn rank_covering_nonzero_spectrum_is_already_exact() {
        let (g, p, cr) = worked_example();
        let comps = build_components(&g, &p, &cr, 2, 1, true).unwrap();
        let report = verify_reconstruction(&g, &p, &comps);
        assert!(report.exact_expected);
        assert!(report.residual <= 1e-10);
    }

    #[test]
    fn truncated_rank_leaves_a_residual() {
        let (g, p, cr) = worked_example();
        let comps = build_components(&g, &p, &cr, 1, 1, true).unwrap();
        let report = verify_reconstruction(&g, &p, &comps);
        assert!(!report.exact_expected);
        assert!(report.residual > 0.1);
    }

    #[test]
    fn zeroed_components_leave_the_full_target() {
        let (g, p, cr) = worked_example();
        let mut comps = build_components(&g, &p, &cr, 3, 1, true).unwrap();
        for t in comps.per_pair.values_mut() {
            t.sigma.fill(0.0);
        }
        let report = verify_reconstruction(&g, &p, &comps);
        assert_eq!(report.residual, 1.0);
    }

    #[test]
    fn unweighted_components_are_not_expected_exact() {
        let (g, p, cr) = worked_example();
        let comps = build_components(&g, &p, &cr, 3, 1, false).unwrap();
        let report = verify_reconstruction(&g, &p, &comps);
        assert!(!report.exact_expected);
        assert!(report.residual > 0.1);
    }

    #[test]
    fn opposite_directions_swap_sides_exactly() {
        let (g, p, cr) = worked_example();
        let comps = build_components(&g, &p, &cr, 3, 1, true).unwrap();
        let fwd = &comps.per_pair[&(0, 1)];
        let rev = &comps.per_pair[&(1, 0)];
        assert_eq!(fwd.u, rev.v);
        assert_eq!(fwd.v, rev.u);
        assert_eq!(fwd.sigma, rev.sigma);
    }

    #[test]
    fn pooled_features_are_aggregation_times_features() {
        let (g, p, cr) = worked_example();
        let comps = build_components(&g, &p, &cr, 2, 1, true).unwrap();
        assert_eq!(comps.aggregation.len(), 2);
        assert_eq!(comps.pooled.len(), 2);
        for l in 0..2 {
            assert_eq!(comps.aggregation[l].dim(), (2, 6));
            assert_eq!(comps.pooled[l].dim(), (2, 6));
            let expected = comps.aggregation[l].dot(g.features());
            assert_eq!(comps.pooled[l], expected);
        }
    }

    #[test]
    fn aggregation_rows_are_supported_on_neighboring_clusters() {
        let (g, p, cr) = worked_example();
        let comps = build_components(&g, &p, &cr, 3, 1, true).unwrap();
        for agg in &comps.aggregation {
            for ((j, node), &value) in agg.indexed_iter() {
                if value != 0.0 {
                    let i = p.cluster_of(node);
                    assert_ne!(i, j);
                    assert!(cr.pair_blocks.contains_key(&(i, j)));
                }
            }
        }
    }

    #[test]
    fn single_cluster_yields_zero_components() {
        let (g, _, _) = worked_example();
        let p = Partition::single(6);
        let cr = coarsen(&g, &p);
        let comps = build_components(&g, &p, &cr, 2, 1, true).unwrap();
        assert!(comps.per_pair.is_empty());
        for agg in &comps.aggregation {
            assert!(agg.iter().all(|&x| x == 0.0));
        }
        let report = verify_reconstruction(&g, &p, &comps);
        assert_eq!(report.residual, 0.0);
        assert!(report.exact_expected);
    }

    #[test]
    fn wider_radius_reconstructs_the_extended_matrix() {
        let (g, p, cr) = worked_example();
        let comps = build_components(&g, &p, &cr, 6, 2, true).unwrap();
        let report = verify_reconstruction(&g, &p, &comps);
        assert!(report.against_extended);
        assert!(!report.exact_expected);
        assert!(report.residual <= 1e-8, "residual {}", report.residual);
    }

    #[test]
    fn rejects_zero_rank() {
        let (g, p, cr) = worked_example();
        assert!(build_components(&g, &p, &cr, 0, 1, true).is_err());
    }

    #[test]
    fn build_is_deterministic() {
        let (g, p, cr) = worked_example();
        let a = build_components(&g, &p, &cr, 3, 1, true).unwrap();
        let b = build_components(&g, &p, &cr, 3, 1, true).unwrap();
        assert_eq!(a, b);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        prop_compose! {
            fn arb_instance()(n in 4usize..=12)(
                n in Just(n),
                raw_edges in proptest::collection::vec((0..n, 0..n), 1..n * 2),
                raw_membership in proptest::collection::vec(0..3usize, n),
            ) -> (Graph, Partition) {
                let edges: Vec<(usize, usize)> =
                    raw_edges.into_iter().filter(|(u, v)| u != v).collect();
                let g = Graph::from_edges(n, &edges, Array2::eye(n), 0).unwrap();
                (g, Partition::from_membership(&raw_membership))
            }
        }

        proptest! {
            #[test]
            fn full_rank_weighted_reconstruction_is_exact((g, p) in arb_instance()) {
                let cr = coarsen(&g, &p);
                let comps = build_components(&g, &p, &cr, g.n(), 1, true).unwrap();
                let report = verify_reconstruction(&g, &p, &comps);
                prop_assert!(report.exact_expected);
                prop_assert!(report.residual <= 1e-8, "residual {}", report.residual);
            }

            #[test]
            fn exactness_flag_implies_tiny_residual((g, p) in arb_instance()) {
                let cr = coarsen(&g, &p);
                for rank in 1..=g.n() {
                    let comps =
                        build_components(&g, &p, &cr, rank, 1, true).unwrap();
                    let report = verify_reconstruction(&g, &p, &comps);
                    if report.exact_expected {
                        prop_assert!(
                            report.residual <= 1e-8,
                            "rank {rank} residual {}",
                            report.residual
                        );
                    }
                }
            }
        }
    }
}
