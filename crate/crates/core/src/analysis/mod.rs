//! Evaluation: representational similarity, binned diversity, pattern
//! categories and reconstruction reports.

mod categorize;
mod diversity;
mod report;
mod rsa;

pub use categorize::{categorize, circular_extent, components, CategorizerConfig, Component, PatternCategory};
pub use diversity::{diversity, diversity_curve, DiversityBins, BINS_PER_AXIS};
pub use report::{node_representations, reconstruction_report, ReconstructionReport};
pub use rsa::{
    average_ranks, correlation_distance, rdm, rsa, rsa_matrix, spearman, Rdm, RsaMatrix, RsaResult,
    MIN_COMMON_IMAGES,
};
