//! Concrete problem instances and the dataset reader they use.

pub mod compositional;
pub mod reweighting;
pub mod sparse;
pub mod temperature;
pub mod toy;

pub use compositional::{compositional_as_bilevel, ClosureInner, ClosureOuter, CompositionalTask, InnerMap, OuterObjective};
pub use reweighting::{ReweightingConfig, ReweightingProblem, WeightMode};
pub use sparse::{parse_sparse_text, read_sparse_file, serialize_sparse_text, write_sparse_file, SparseDataset, SparseRow};
pub use temperature::{temperature_task, MultiTaskTemperatureProblem};
pub use toy::{toy_dataset, toy_reweighting};
