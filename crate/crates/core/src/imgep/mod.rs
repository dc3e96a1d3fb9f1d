//! Goal exploration loop: random bootstrap, goal-space selection, goal
//! sampling, nearest-neighbour mutation policy, periodic training and splits.

mod config;
mod explorer;
mod policy;

pub use config::{Guidance, RunConfig, Variant};
pub use explorer::{ExploreEvent, Explorer, RunSummary};
pub use policy::{
    goal_box, goal_space_weights, nearest_member, sample_goal, sample_goal_space,
    sample_parameters, score_leaves_by_category, LeafScores,
};
