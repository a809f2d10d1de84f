//! Post-earthquake building-portfolio recovery: damage simulation and
//! resource-constrained repair scheduling.
//!
//! The crate models a community of buildings on a grid, exposes it to a
//! scenario earthquake (ground-motion field with inter- and intra-event
//! uncertainty, lognormal fragility curves, stochastic repair durations),
//! and schedules a limited pool of repair crews over time. Scheduling is
//! framed as a Markov decision process whose reward is "people re-housed
//! per day"; the planner is a Monte Carlo rollout policy built on top of
//! configurable base heuristics, with an exact dynamic-programming solver
//! for small instances used as a verification oracle.
//!
//! The crate is `no_std` (with `alloc`) and fully deterministic: all
//! randomness flows through [`rng::Stream`], a counter-based generator
//! whose substreams are keyed by entity ids, so results are reproducible
//! regardless of evaluation order or worker count. IO, file formats and
//! the command-line runner live in the companion `recovery-cli` crate.

#![no_std]
// Validations use negated comparisons (`!(x > 0.0)`) so NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod community;
pub mod damage;
pub mod hazard;
pub mod mdp;
pub mod rng;
pub mod solver;

mod math;

pub use community::{AgeCounts, AgeGroup, Building, BuildingId, CellId, CommunityModel, GridCell};
pub use damage::{ArchetypeCatalog, DamageState, FragilityCurve, RepairTimeModel, ScenarioRealization};
pub use hazard::{GmpeParams, IntensityField, ScenarioConfig};
pub use mdp::{RecoveryEnv, RecoveryState, RepairAction, RewardTiming, RuBudget, TransitionOutcome};
pub use solver::{BasePolicy, PolicyTrace, RolloutConfig};
