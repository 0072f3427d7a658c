//! MILP problem representation, the counterexample encodings and LP I/O.

mod bound;
mod encode;
mod lp_format;
mod problem;

pub use encode::{
    build_explanation_milp, build_minimal_state_milp, coverage_gaps, covering_candidates, describable_targets,
    EncodingOptions, ModelError, DEFAULT_EPSILON,
};
pub use bound::{ReachabilityBound, UnitSearch};
pub use lp_format::{export_lp, parse_lp, LpParseError};
pub use problem::{Column, Constraint, MilpProblem, Relation, VarKind, VarTag};
