//! Policies over the recovery process: base heuristics, the Monte Carlo
//! rollout policy, and an exact finite-horizon solver for small instances.
//!
//! Rollout estimates each candidate action's Q-value by simulating
//! trajectories that fix the first state-action pair and follow the base
//! policy afterwards, drawing trajectories in batches until the estimate's
//! coefficient of variation falls below the configured dispersion target.
//! Joint actions are built one crew at a time in a fixed cell-then-id
//! order; the assignments already committed stay fixed inside the
//! simulated first step while the base policy completes the remainder.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::community::{AgeCounts, BuildingId};
use crate::damage::{ArchetypeCatalog, DamageError};
use crate::math;
use crate::mdp::{BuildingPhase, MdpError, RecoveryEnv, RecoveryState, RepairAction};
use crate::rng::Stream;

mod durations;
mod exact;
mod sim;

pub use durations::DurationModel;
pub use exact::ExactDp;

/// Heuristic used to complete actions inside rollout simulations (and as a
/// standalone policy).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasePolicy {
    /// Assign each free crew to the waiting building with the highest
    /// occupants-per-expected-repair-day rate (ties to the lowest id).
    #[default]
    GreedyOccupancyRate,
    /// Assign uniformly at random among waiting buildings.
    Random,
    /// Assign by ascending building id.
    FixedOrder,
}

/// Which policy drives a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Base,
    Rollout,
}

/// Rollout planner knobs. Defaults: discount 0.99 and dispersion target
/// 0.1, with the trajectory horizon derived from the workload when unset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    /// Per-epoch discount factor, in (0, 1).
    pub gamma: f64,
    /// Trajectory horizon K (epochs after the first step). Defaults to
    /// damaged-buildings / total-crews + 5.
    pub horizon: Option<u32>,
    /// Stop sampling once the Q estimate's coefficient of variation
    /// (standard error / |mean|) is at or below this.
    pub dispersion_target: f64,
    /// Trajectory batch size and minimum count; at least 2.
    pub n_mc_min: u32,
    /// Hard cap on trajectories per Q estimate.
    pub n_mc_max: u32,
    pub base_policy: BasePolicy,
    /// Candidates evaluated per crew, ranked by the greedy rate.
    pub candidate_cap: u32,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            gamma: 0.99,
            horizon: None,
            dispersion_target: 0.1,
            n_mc_min: 8,
            n_mc_max: 64,
            base_policy: BasePolicy::GreedyOccupancyRate,
            candidate_cap: 10,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(SolverError::BadConfig("gamma must be in (0, 1)"));
        }
        if !(self.dispersion_target > 0.0) {
            return Err(SolverError::BadConfig("dispersion_target must be > 0"));
        }
        if self.n_mc_min < 2 {
            return Err(SolverError::BadConfig("n_mc_min must be at least 2"));
        }
        if self.n_mc_max < self.n_mc_min {
            return Err(SolverError::BadConfig("n_mc_max must be >= n_mc_min"));
        }
        if self.candidate_cap == 0 {
            return Err(SolverError::BadConfig("candidate_cap must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SolverError {
    BadConfig(&'static str),
    BadDurationSupport { building: BuildingId, reason: &'static str },
    /// The exact solver needs finite duration supports.
    ContinuousDurations(BuildingId),
    StateSpaceOverflow { count: usize, limit: usize },
    ActionSpaceOverflow { count: usize, limit: usize },
    /// Exact policy evaluation only supports deterministic base policies.
    RandomBaseNotEnumerable,
    Mdp(MdpError),
    Damage(DamageError),
}

impl fmt::Display for SolverError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolverError::BadConfig(msg) => write!(f, "invalid solver config: {msg}"),
            SolverError::BadDurationSupport { building, reason } => {
                write!(f, "bad duration support for building {building}: {reason}")
            }
            SolverError::ContinuousDurations(b) => write!(
                f,
                "building {b} has a continuous duration distribution; exact solving needs finite support"
            ),
            SolverError::StateSpaceOverflow { count, limit } => {
                write!(f, "state space exceeds {limit} states (reached {count})")
            }
            SolverError::ActionSpaceOverflow { count, limit } => {
                write!(f, "action space exceeds {limit} actions (reached {count})")
            }
            SolverError::RandomBaseNotEnumerable => {
                write!(f, "the random base policy cannot be evaluated exactly")
            }
            SolverError::Mdp(e) => write!(f, "{e}"),
            SolverError::Damage(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for SolverError {}

impl From<MdpError> for SolverError {
    fn from(e: MdpError) -> Self {
        SolverError::Mdp(e)
    }
}

impl From<DamageError> for SolverError {
    fn from(e: DamageError) -> Self {
        SolverError::Damage(e)
    }
}

/// One Monte Carlo Q estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QEstimate {
    pub q_hat: f64,
    pub n_used: u32,
    /// Final coefficient of variation of the mean (se / max(|mean|, 1e-6)).
    pub cov: f64,
}

/// Aggregated sampling statistics across Q estimates.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RolloutStats {
    pub q_calls: u64,
    pub trajectories: u64,
    /// Calls that hit `n_mc_max` before reaching the dispersion target.
    pub capped_calls: u64,
    /// Largest CoV among calls that stopped below `n_mc_max`.
    pub max_cov_converged: f64,
    /// Crew assignments committed without simulation (single candidate).
    pub singleton_commits: u64,
}

impl RolloutStats {
    fn record(&mut self, est: &QEstimate, n_mc_max: u32) {
        self.q_calls += 1;
        self.trajectories += est.n_used as u64;
        if est.n_used < n_mc_max {
            if est.cov > self.max_cov_converged {
                self.max_cov_converged = est.cov;
            }
        } else {
            self.capped_calls += 1;
        }
    }

    pub fn merge(&mut self, other: &RolloutStats) {
        self.q_calls += other.q_calls;
        self.trajectories += other.trajectories;
        self.capped_calls += other.capped_calls;
        self.max_cov_converged = self.max_cov_converged.max(other.max_cov_converged);
        self.singleton_commits += other.singleton_commits;
    }

    pub fn mean_trajectories_per_call(&self) -> f64 {
        if self.q_calls == 0 {
            0.0
        } else {
            self.trajectories as f64 / self.q_calls as f64
        }
    }
}

/// Precomputed planning state for one scenario realization: static greedy
/// orderings, the planner's duration model, and reusable scratch space.
pub struct SolverContext<'a> {
    pub env: &'a RecoveryEnv<'a>,
    pub config: RolloutConfig,
    pub stats: RolloutStats,
    durations: DurationModel,
    /// Total occupants per building.
    occupants: Vec<u64>,
    /// Cell index per building.
    cell_of: Vec<u32>,
    /// Per cell: initially damaged buildings by descending greedy rate
    /// (occupants / expected days), ties by ascending id.
    greedy_order: Vec<Vec<u32>>,
    /// Per cell: initially damaged buildings by ascending id.
    id_order: Vec<Vec<u32>>,
    horizon: u32,
    scratch: sim::Scratch,
    committed_mark: Vec<u32>,
    committed_epoch: u32,
}

impl<'a> SolverContext<'a> {
    pub fn new(
        env: &'a RecoveryEnv<'a>,
        durations: DurationModel,
        config: RolloutConfig,
    ) -> Result<Self, SolverError> {
        config.validate()?;
        let n = env.model.buildings.len();
        if durations.n_buildings() != n {
            return Err(SolverError::BadConfig(
                "duration model does not cover the building set",
            ));
        }
        let occupants: Vec<u64> = env.model.buildings.iter().map(|b| b.occupants.total()).collect();
        let cell_of: Vec<u32> = env.model.buildings.iter().map(|b| b.cell_id.0).collect();

        let n_cells = env.model.n_cells();
        let mut greedy_order: Vec<Vec<u32>> = vec![Vec::new(); n_cells];
        for b in &env.model.buildings {
            if env.realization.damage_states[b.id.0 as usize].is_damaged() {
                greedy_order[b.cell_id.0 as usize].push(b.id.0);
            }
        }
        let id_order = greedy_order.clone();
        for list in greedy_order.iter_mut() {
            list.sort_by(|&x, &y| {
                let rx = occupants[x as usize] as f64 / durations.expected_days(BuildingId(x));
                let ry = occupants[y as usize] as f64 / durations.expected_days(BuildingId(y));
                ry.partial_cmp(&rx).unwrap().then(x.cmp(&y))
            });
        }

        let damaged_total: u32 = id_order.iter().map(|l| l.len() as u32).sum();
        let horizon = config.horizon.unwrap_or_else(|| {
            let crews = env.budget.total().max(1);
            damaged_total.div_ceil(crews) + 5
        });

        Ok(SolverContext {
            env,
            config,
            stats: RolloutStats::default(),
            durations,
            occupants,
            cell_of,
            greedy_order,
            id_order,
            horizon,
            scratch: sim::Scratch::new(n, n_cells),
            committed_mark: vec![0; n],
            committed_epoch: 0,
        })
    }

    /// Context with the planner's duration beliefs taken from the catalog.
    pub fn from_catalog(
        env: &'a RecoveryEnv<'a>,
        catalog: &ArchetypeCatalog,
        config: RolloutConfig,
    ) -> Result<Self, SolverError> {
        let durations = DurationModel::from_catalog(env.model, env.realization, catalog)?;
        SolverContext::new(env, durations, config)
    }

    /// Effective trajectory horizon K.
    pub fn horizon(&self) -> u32 {
        self.horizon
    }

    pub fn durations(&self) -> &DurationModel {
        &self.durations
    }

    pub fn take_stats(&mut self) -> RolloutStats {
        core::mem::take(&mut self.stats)
    }

    /// The base policy's full assignment for `state`: every free crew gets
    /// a waiting building from its own cell while any remain.
    pub fn base_action(
        &self,
        policy: BasePolicy,
        state: &RecoveryState,
        stream: &Stream,
    ) -> RepairAction {
        let mut targets: Vec<BuildingId> = Vec::new();
        for cell in 0..self.env.model.n_cells() {
            let free = state.free_rus[cell] as usize;
            if free == 0 {
                continue;
            }
            let order = match policy {
                BasePolicy::GreedyOccupancyRate => &self.greedy_order[cell],
                BasePolicy::Random | BasePolicy::FixedOrder => &self.id_order[cell],
            };
            let mut feasible: Vec<u32> = order
                .iter()
                .copied()
                .filter(|&b| state.phases[b as usize] == BuildingPhase::Damaged)
                .collect();
            let take = free.min(feasible.len());
            if policy == BasePolicy::Random {
                let mut cell_stream = stream.derive(cell as u64);
                for i in 0..take {
                    let j = i + cell_stream.next_index(feasible.len() - i);
                    feasible.swap(i, j);
                }
            }
            targets.extend(feasible[..take].iter().map(|&b| BuildingId(b)));
        }
        RepairAction::new(targets)
    }

    /// Monte Carlo estimate of the Q value of `(state, action)` under the
    /// base policy: trajectories fix the first state-action pair, then
    /// follow the base policy for up to K further epochs, sampled in
    /// batches until the dispersion target is met.
    pub fn estimate_q(
        &mut self,
        state: &RecoveryState,
        action: &RepairAction,
        stream: &Stream,
    ) -> Result<QEstimate, SolverError> {
        self.env.check_action(state, action)?;
        let root = sim::RootView::from_state(self.env, &self.greedy_order, &self.id_order, state);
        let first: Vec<u32> = action.targets.iter().map(|b| b.0).collect();
        Ok(self.estimate_core(&root, &first, stream))
    }

    fn estimate_core(
        &mut self,
        root: &sim::RootView<'_>,
        first_action: &[u32],
        stream: &Stream,
    ) -> QEstimate {
        let base = self.config.base_policy;
        let gamma = self.config.gamma;
        let horizon = self.horizon;
        let n_min = self.config.n_mc_min;
        let n_max = self.config.n_mc_max;
        let target = self.config.dispersion_target;
        let refs = sim::SimRefs {
            occupants: &self.occupants,
            cell_of: &self.cell_of,
            greedy_order: &self.greedy_order,
            id_order: &self.id_order,
            durations: &self.durations,
            timing: self.env.timing,
        };
        let mut n = 0u32;
        let mut sum = 0.0f64;
        let mut sumsq = 0.0f64;
        let (mean, cov);
        loop {
            let batch = n_min.min(n_max - n);
            for i in 0..batch {
                let traj_stream = stream.derive(1 + (n + i) as u64);
                let g = sim::simulate(
                    &refs,
                    &mut self.scratch,
                    root,
                    first_action,
                    base,
                    gamma,
                    horizon,
                    &traj_stream,
                );
                sum += g;
                sumsq += g * g;
            }
            n += batch;
            let m = sum / n as f64;
            let var = ((sumsq - n as f64 * m * m) / (n as f64 - 1.0)).max(0.0);
            let se = math::sqrt(var / n as f64);
            let c = se / math::abs(m).max(1e-6);
            if c <= target || n >= n_max {
                mean = m;
                cov = c;
                break;
            }
        }
        let est = QEstimate { q_hat: mean, n_used: n, cov };
        self.stats.record(&est, n_max);
        est
    }

    /// Rollout decision: build the joint action one crew at a time in
    /// cell-then-id order. For each crew, estimate Q for up to
    /// `candidate_cap` targets (greedy-ranked), holding committed
    /// assignments fixed and letting the base policy complete the rest
    /// inside the simulated first step; commit the argmax (ties to the
    /// lowest building id).
    pub fn rollout_action(&mut self, state: &RecoveryState, stream: &Stream) -> RepairAction {
        let root = sim::RootView::from_state(self.env, &self.greedy_order, &self.id_order, state);
        self.committed_epoch = self.committed_epoch.wrapping_add(1);
        if self.committed_epoch == 0 {
            self.committed_mark.iter_mut().for_each(|m| *m = 0);
            self.committed_epoch = 1;
        }
        let mark = self.committed_epoch;

        let mut committed: Vec<u32> = Vec::new();
        let mut committed_per_cell = vec![0u32; root.free.len()];
        let mut slot = 0u64;
        let mut candidates: Vec<u32> = Vec::new();
        let mut first_action: Vec<u32> = Vec::new();

        for cell in 0..root.free.len() {
            let mut remaining = root.free[cell];
            while remaining > 0 {
                candidates.clear();
                let order = &self.greedy_order[cell];
                let mut idx = root.greedy_cursor[cell];
                while idx < order.len() && (candidates.len() as u32) < self.config.candidate_cap {
                    let b = order[idx];
                    if root.is_waiting(b) && self.committed_mark[b as usize] != mark {
                        candidates.push(b);
                    }
                    idx += 1;
                }
                let Some(&first_candidate) = candidates.first() else {
                    break; // no waiting targets left in this cell
                };
                let chosen = if candidates.len() == 1 {
                    self.stats.singleton_commits += 1;
                    first_candidate
                } else {
                    // All candidates of a slot share trajectory substreams
                    // (common random numbers), so their Q estimates differ
                    // only through the action itself.
                    let slot_stream = stream.derive(slot);
                    let mut best: Option<(f64, u32)> = None;
                    for &cand in &candidates {
                        first_action.clear();
                        first_action.extend_from_slice(&committed);
                        first_action.push(cand);
                        self.complete_with_base(
                            &root,
                            &committed_per_cell,
                            cand,
                            &mut first_action,
                            mark,
                            &slot_stream.derive(0),
                        );
                        let est = self.estimate_core(&root, &first_action, &slot_stream);
                        let better = match best {
                            None => true,
                            Some((bq, bid)) => {
                                est.q_hat > bq || (est.q_hat == bq && cand < bid)
                            }
                        };
                        if better {
                            best = Some((est.q_hat, cand));
                        }
                    }
                    best.expect("candidate list is nonempty").1
                };
                committed.push(chosen);
                self.committed_mark[chosen as usize] = mark;
                committed_per_cell[cell] += 1;
                remaining -= 1;
                slot += 1;
            }
        }
        RepairAction::new(committed.into_iter().map(BuildingId).collect())
    }

    /// Extend `action` with base-policy assignments for every crew not yet
    /// spoken for, skipping committed targets and `extra`.
    fn complete_with_base(
        &self,
        root: &sim::RootView,
        committed_per_cell: &[u32],
        extra: u32,
        action: &mut Vec<u32>,
        mark: u32,
        stream: &Stream,
    ) {
        let extra_cell = self.cell_of[extra as usize] as usize;
        for (cell, (&cell_free, &taken)) in root.free.iter().zip(committed_per_cell).enumerate() {
            let mut free = cell_free - taken;
            if cell == extra_cell {
                free -= 1;
            }
            if free == 0 {
                continue;
            }
            let order = match self.config.base_policy {
                BasePolicy::GreedyOccupancyRate => &self.greedy_order[cell],
                BasePolicy::Random | BasePolicy::FixedOrder => &self.id_order[cell],
            };
            let start = match self.config.base_policy {
                BasePolicy::GreedyOccupancyRate => root.greedy_cursor[cell],
                _ => root.id_cursor[cell],
            };
            let feasible_iter = order[start..]
                .iter()
                .copied()
                .filter(|&b| root.is_waiting(b) && self.committed_mark[b as usize] != mark && b != extra);
            if self.config.base_policy == BasePolicy::Random {
                let mut feasible: Vec<u32> = feasible_iter.collect();
                let take = (free as usize).min(feasible.len());
                let mut cell_stream = stream.derive(cell as u64);
                for i in 0..take {
                    let j = i + cell_stream.next_index(feasible.len() - i);
                    feasible.swap(i, j);
                }
                action.extend_from_slice(&feasible[..take]);
            } else {
                action.extend(feasible_iter.take(free as usize));
            }
        }
    }
}

/// Snapshot of one cell for trace reporting.
#[derive(Clone, Debug, PartialEq)]
pub struct CellSnapshot {
    pub housed: AgeCounts,
    /// Waiting plus under-repair buildings.
    pub damaged_remaining: u32,
    pub under_repair: u32,
    pub free_rus: u32,
}

/// One row per decision epoch (row 0 is the post-hazard snapshot).
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: u32,
    pub elapsed_days: u64,
    pub epoch_days: u64,
    pub reward: f64,
    pub assigned: Vec<BuildingId>,
    pub completed: Vec<BuildingId>,
    pub housed_total: AgeCounts,
    pub cells: Vec<CellSnapshot>,
}

/// Full execution record of one policy on one realization.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyTrace {
    pub epochs: Vec<EpochRecord>,
    pub discounted_return: f64,
    pub total_days: u64,
    pub stats: RolloutStats,
}

/// Execute `kind` on the environment (realized durations) until terminal,
/// recording per-epoch, per-cell occupancy. Deterministic given the stream.
pub fn run_policy(
    env: &RecoveryEnv<'_>,
    catalog: &ArchetypeCatalog,
    kind: PolicyKind,
    config: &RolloutConfig,
    stream: &Stream,
) -> Result<PolicyTrace, SolverError> {
    let mut ctx = SolverContext::from_catalog(env, catalog, config.clone())?;
    run_policy_with(&mut ctx, kind, stream)
}

/// As [`run_policy`], reusing an existing context (stats accumulate there
/// and are also returned in the trace).
pub fn run_policy_with(
    ctx: &mut SolverContext<'_>,
    kind: PolicyKind,
    stream: &Stream,
) -> Result<PolicyTrace, SolverError> {
    let env = ctx.env;
    let model = env.model;
    let n_cells = model.n_cells();
    let mut state = env.initial_state();

    let mut cells: Vec<CellSnapshot> = (0..n_cells)
        .map(|c| CellSnapshot {
            housed: AgeCounts::default(),
            damaged_remaining: 0,
            under_repair: 0,
            free_rus: env.budget.per_cell[c],
        })
        .collect();
    let mut housed_total = AgeCounts::default();
    for b in &model.buildings {
        let snap = &mut cells[b.cell_id.0 as usize];
        if state.phases[b.id.0 as usize].habitable() {
            snap.housed.add(&b.occupants);
            housed_total.add(&b.occupants);
        } else {
            snap.damaged_remaining += 1;
        }
    }

    let mut epochs = vec![EpochRecord {
        epoch: 0,
        elapsed_days: 0,
        epoch_days: 0,
        reward: 0.0,
        assigned: Vec::new(),
        completed: Vec::new(),
        housed_total,
        cells: cells.clone(),
    }];

    let mut discounted_return = 0.0;
    let mut discount = 1.0;
    let mut k: u32 = 0;
    let guard = model.buildings.len() as u32 + 2;
    while !state.is_terminal() {
        assert!(k < guard, "recovery did not terminate within {guard} epochs");
        let epoch_stream = stream.derive(k as u64);
        let action = match kind {
            PolicyKind::Base => ctx.base_action(ctx.config.base_policy, &state, &epoch_stream),
            PolicyKind::Rollout => ctx.rollout_action(&state, &epoch_stream),
        };
        let out = env.step(&state, &action)?;
        discounted_return += discount * out.reward;
        discount *= ctx.config.gamma;

        for &b in &action.targets {
            cells[model.buildings[b.0 as usize].cell_id.0 as usize].under_repair += 1;
        }
        for &b in &out.completed {
            let building = &model.buildings[b.0 as usize];
            let snap = &mut cells[building.cell_id.0 as usize];
            snap.under_repair -= 1;
            snap.damaged_remaining -= 1;
            snap.housed.add(&building.occupants);
            housed_total.add(&building.occupants);
        }
        for (snap, &free) in cells.iter_mut().zip(&out.next_state.free_rus) {
            snap.free_rus = free;
        }

        epochs.push(EpochRecord {
            epoch: k + 1,
            elapsed_days: out.next_state.elapsed_days,
            epoch_days: out.epoch_days,
            reward: out.reward,
            assigned: action.targets.clone(),
            completed: out.completed.clone(),
            housed_total,
            cells: cells.clone(),
        });
        state = out.next_state;
        k += 1;
    }

    Ok(PolicyTrace {
        epochs,
        discounted_return,
        total_days: state.elapsed_days,
        stats: ctx.stats,
    })
}

/// Discounted return of a recorded trace under `gamma` (recomputed from
/// the per-epoch rewards).
pub fn discounted_return(trace: &PolicyTrace, gamma: f64) -> f64 {
    let mut total = 0.0;
    let mut discount = 1.0;
    for row in &trace.epochs[1..] {
        total += discount * row.reward;
        discount *= gamma;
    }
    total
}
