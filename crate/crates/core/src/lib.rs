//! Valid instrument selection by agglomerative clustering of
//! just-identified 2SLS estimates followed by Sargan downward testing.

pub mod clustering;
pub mod data;
pub mod error;
pub mod estimation;
pub mod io;
mod linalg;
pub mod selection;
pub mod simulation;

pub use clustering::{
    generic_merge_path, pairwise_distances, partition_at, ward_merge_path, Dendrogram, Linkage,
    Metric, MetricSpec,
};
pub use data::{
    partial_out_controls, validate, Dataset, Diagnostic, IvCombination, ModelFit, SelectionConfig,
    SignificanceRule,
};
pub use error::{Error, Result};
pub use estimation::{
    first_stage, first_stage_strength, just_identified_all, post_selection_tsls, sargan,
    JustIdentifiedEstimate, SarganOutcome,
};
pub use selection::{
    downward_test, largest_family, late_groups, plausibly_exogenous_union_ci, run_selection,
    select_valid, FamilySelection, LateResult, SelectionResult,
};
