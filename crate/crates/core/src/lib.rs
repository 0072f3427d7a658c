//! Counterexample explanations for MDP reachability requirements.

pub mod explain;
pub mod fixture;
pub mod mdp;
pub mod milp;
pub mod model_file;
pub mod pipeline;
pub mod random;
pub mod solver;
pub mod templates;
pub mod warehouse;

pub use explain::{CounterexampleSubsystem, ExplainError, Explanation, Verdict};
pub use mdp::{
    ActionId, Choice, Mdp, MdpBuilder, MdpError, PropId, ReachabilityRequirement, StateId, Strategy, TargetSet,
    TargetSpec,
};
pub use milp::{EncodingOptions, MilpProblem, ModelError};
pub use solver::{MilpSolution, SolveStatus, SolverConfig};
pub use templates::{Sentence, SentenceTuple, Vocabulary};
