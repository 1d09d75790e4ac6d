//! ICEPool: information-preserving graph coarsening for graph classification.
//!
//! The crate turns a labeled graph into a small coarse graph whose node and
//! edge attributes retain enough structure to classify the original:
//!
//! - [`graph`] loads flat-file datasets, generates synthetic families, and
//!   derives degree-bucket node features.
//! - [`partition`] groups nodes into clusters by seeded heavy-edge matching.
//! - [`coarsen`] builds the coarse adjacency, pooled features, and the
//!   per-cluster-pair connection blocks.
//! - [`entropy`] turns connection blocks into entropy edge attributes.
//! - [`svdpool`] decomposes each connection block and assembles pooled
//!   feature matrices that can reconstruct the inter-cluster adjacency.
//! - [`cegat`] runs single-head attention over the coarse graph, with two
//!   edge-attribute treatments, plus analytic gradients.
//! - [`pipeline`] wires the stages together for inference, training, and
//!   ablation sweeps.

pub mod cegat;
pub mod coarsen;
pub mod entropy;
pub mod error;
pub mod graph;
pub mod partition;
pub mod pipeline;
pub mod svdpool;
pub mod tensor_archive;

pub use error::{Error, Result};
