//! Killed random walks, rooted spanning forests, Doob transforms and
//! Temperleyan dimers, with exact oracles for the identities linking them.

pub mod dimers;
pub mod doob;
pub mod elliptic;
pub mod graph;
pub mod isoradial;
pub mod linalg;
pub mod matrix;
pub mod nearcrit;
pub mod par;
pub mod periodic;
pub mod planar;
pub mod scalar;
pub mod walks;

pub use graph::{Edge, GraphError, RootedForest, WeightedGraph};
pub use matrix::Matrix;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
