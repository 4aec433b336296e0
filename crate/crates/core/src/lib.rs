//! Scene labeling with recursive context propagation over random parse trees.
//!
//! The pipeline segments an image into super-pixels, builds their adjacency
//! graph, draws random binary parse trees by merging adjacent regions, and
//! runs a four-module recursive network that propagates context bottom-up
//! and then top-down before classifying every node. Training can add the
//! loss of pure internal nodes, and inference can decode a tree-structured
//! MRF over the per-node label distributions.

pub mod error;
pub mod forest;
pub mod gradcheck;
pub mod ingest;
pub mod metrics;
pub mod mrf;
pub mod net;
pub mod numeric;
pub mod trainer;

pub use error::{Error, Result};
