//! Instances shared by the benchmarks.

use cexplain_core::fixture::{small_warehouse, small_warehouse_requirement};
use cexplain_core::milp::{build_explanation_milp, EncodingOptions, MilpProblem, DEFAULT_EPSILON};
use cexplain_core::templates::enumerate_candidates;
use cexplain_core::warehouse::{generate_grid, GridLayout};
use cexplain_core::{Mdp, ReachabilityRequirement, TargetSpec, Vocabulary};

/// A model, its vocabulary and the requirement to explain.
pub struct Instance {
    pub mdp: Mdp,
    pub vocabulary: Vocabulary,
    pub requirement: ReachabilityRequirement,
}

pub fn small_warehouse_instance() -> Instance {
    let (mdp, vocabulary) = small_warehouse();
    let requirement = small_warehouse_requirement(&mdp);
    Instance { mdp, vocabulary, requirement }
}

/// The `n`×`n` grid warehouse with the human zone as target at `lambda`.
pub fn grid_instance(n: usize, lambda: f64) -> Instance {
    let w = generate_grid(&GridLayout::default_for(n)).expect("default layout is valid");
    let zone = w.mdp.prop_by_name(&w.target_prop).expect("target proposition exists");
    let requirement = ReachabilityRequirement::new(TargetSpec::Proposition(zone), lambda).expect("valid threshold");
    Instance { mdp: w.mdp, vocabulary: w.vocabulary, requirement }
}

/// The explanation MILP of `inst` with single-proposition sentences.
pub fn explanation_problem(inst: &Instance) -> MilpProblem {
    let enc = EncodingOptions { epsilon: DEFAULT_EPSILON, terminal_action: inst.mdp.action_by_name("stop") };
    build_explanation_milp(&inst.mdp, &inst.requirement, &enumerate_candidates(&inst.mdp, 1), &enc)
        .expect("model is describable")
}
