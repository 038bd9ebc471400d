//! Scenario-based portfolio selection under a Value-at-Risk constraint,
//! solved as a difference-of-convex program with DCA and boosted DCA.

pub mod bench;
pub mod data;
pub mod error;
pub mod objective;
pub mod risk;
pub mod simplex;
pub mod solvers;
pub mod subproblem;

pub use data::{load_scenarios, DataFormat, ScenarioSet};
pub use error::{Error, Result};
pub use objective::ProblemSpec;
