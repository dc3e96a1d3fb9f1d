//! Growing binary hierarchy of goal-space modules: routing, saturation,
//! boundary fitting, splitting and per-leaf training.

mod boundary;
mod hierarchy;
mod key;
mod persist;

pub use boundary::{
    fit_boundary, fit_linear_svm, median_labels, principal_axis_split, Boundary, BoundaryFit,
    BoundaryMethod, SvmConfig,
};
pub use hierarchy::{
    Hierarchy, HierarchyNode, HolmesConfig, Member, NodeSummary, PathStep, Route, SplitOutcome,
    TrainReport, TreeSnapshot,
};
pub use key::{NodeKey, Side};
