//! Interpretable fair clustering trees.
//!
//! A clustering tree is a binary decision tree over numerical and
//! categorical features whose k leaves are the clusters. Trees are fitted
//! either by best-first growth on a compactness-plus-fairness objective
//! ([`fit_ifct`]) or by compactness-only over-expansion followed by
//! fairness-guided pruning ([`fit_ifct_p`]).

mod error;

pub mod data;
pub mod grow;
pub mod losses;
pub mod metrics;
pub mod model_io;
pub mod prune;
pub mod report;
pub mod split;
pub mod tree;

pub use data::{load_csv, ColumnRole, Dataset, Sample, Schema};
pub use error::{Error, Result};
pub use grow::fit_ifct;
pub use prune::{fit_ifct_p, grow_full};
pub use tree::{Algorithm, ClusteringTree, FitConfig};
