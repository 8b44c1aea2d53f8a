//! Exact-majority population protocols on interaction graphs.
//!
//! The crate is organised bottom-up: [`graph`] and [`spectral`] describe the
//! interaction topology, [`engine`] runs a pairwise protocol under the uniform
//! edge scheduler, and [`dynamics`], [`clock`] and [`majority`] implement the
//! protocols themselves. [`experiment`] and [`stats`] drive seeded studies.

pub mod clock;
pub mod dynamics;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod majority;
pub mod rng;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
pub use graph::{build_graph, graph_stats, Graph, GraphFamily, GraphStats};
