//! Distributed weighted nearest-neighbor classification.
//!
//! The crate splits a training set into `s` shards, fits the same weighted
//! nearest-neighbor (WNN) rule on each shard, and combines the shard outputs
//! either by majority vote (M-DNN) or by averaging the local regression
//! estimates (W-DNN). Around that core it provides:
//!
//! * [`weights`]: uniform k-NN, optimal (OWNN) and bagged-1-NN-equivalent
//!   weight vectors, and the formulas that turn an oracle parameter into a
//!   per-shard parameter;
//! * [`neighbors`]: exact k-nearest orderings (brute force and k-d tree);
//! * [`simgen`]: Gaussian-mixture simulation designs with their exact
//!   posterior `η(x)`;
//! * [`evaluation`] and [`tuning`]: risk, regret and instability estimates,
//!   and cross-validated parameter selection;
//! * [`theory`]: dimension-only constants governing the regret ratios;
//! * [`experiment`]: config-driven experiment grids with CSV output.

pub mod data;
pub mod ensemble;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod neighbors;
pub mod rng;
pub mod simgen;
pub mod theory;
pub mod tuning;
pub mod weights;

pub use data::{squared_distance, validate_dataset, Dataset, Label, QueryPoint};
pub use ensemble::{fit_oracle_wnn, make_partition, Aggregation, DnnModel, Partition};
pub use error::{Error, Result};
pub use neighbors::{order_neighbors, order_neighbors_tree, KdTree, NeighborOrdering};
pub use rng::SeededRng;
pub use weights::{WeightScheme, WeightVector};
