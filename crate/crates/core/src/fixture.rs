//! The nine-cell warehouse used throughout the tests and documentation.

use crate::mdp::{Mdp, ReachabilityRequirement, TargetSpec};
use crate::model_file::parse_model;
use crate::templates::Vocabulary;

/// Model file text of the nine-cell warehouse.
pub const SMALL_WAREHOUSE: &str = include_str!("../data/small_warehouse.mdp");

/// Threshold of the requirement "the robot enters the human zone with
/// probability at most 0.3".
pub const SMALL_WAREHOUSE_LAMBDA: f64 = 0.3;

pub fn small_warehouse() -> (Mdp, Vocabulary) {
    parse_model(SMALL_WAREHOUSE, "small_warehouse.mdp").expect("bundled model parses")
}

pub fn small_warehouse_requirement(m: &Mdp) -> ReachabilityRequirement {
    let zone = m.prop_by_name("in_human_zone").expect("bundled model has a human zone");
    ReachabilityRequirement::new(TargetSpec::Proposition(zone), SMALL_WAREHOUSE_LAMBDA).expect("valid threshold")
}
