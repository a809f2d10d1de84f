//! Exact finite-horizon solver for small instances.
//!
//! Enumerates every feasible joint action and every duration outcome
//! (finite supports required), memoizing values over the reachable state
//! graph. Every epoch completes at least one repair, so the graph is
//! acyclic and one backward pass yields the exact optimum; a state-count
//! guard protects against accidental blowups. Also evaluates a fixed
//! deterministic base policy exactly, which is the oracle the Monte Carlo
//! estimator is tested against.
//!
//! Kept deliberately independent of the rollout machinery: no shared
//! orderings, cursors or sampling — only the transition mechanics are
//! common.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::community::BuildingId;
use crate::mdp::{BuildingPhase, RecoveryEnv, RecoveryState, RepairAction};

use super::durations::DurationModel;
use super::{BasePolicy, SolverError};

const UNBOUNDED: u32 = u32::MAX;

struct MemoEntry {
    value: f64,
    action: RepairAction,
}

pub struct ExactDp<'a> {
    env: &'a RecoveryEnv<'a>,
    durations: &'a DurationModel,
    gamma: f64,
    /// Transition budget from the root; anything at or above the remaining
    /// repair count behaves as an infinite horizon.
    horizon: u32,
    max_states: usize,
    memo: BTreeMap<Vec<u64>, MemoEntry>,
    visited: Vec<(RecoveryState, u32)>,
}

impl<'a> ExactDp<'a> {
    pub fn new(
        env: &'a RecoveryEnv<'a>,
        durations: &'a DurationModel,
        gamma: f64,
        horizon: u32,
    ) -> Self {
        ExactDp {
            env,
            durations,
            gamma,
            horizon,
            max_states: 1_000_000,
            memo: BTreeMap::new(),
            visited: Vec::new(),
        }
    }

    pub fn with_max_states(mut self, limit: usize) -> Self {
        self.max_states = limit;
        self
    }

    pub fn states_visited(&self) -> usize {
        self.memo.len()
    }

    /// Optimal value of `state` under the configured horizon.
    pub fn value(&mut self, state: &RecoveryState) -> Result<f64, SolverError> {
        self.value_rec(state, self.horizon)
    }

    /// Optimal action at `state` (the empty action only at terminal states).
    pub fn optimal_action(&mut self, state: &RecoveryState) -> Result<RepairAction, SolverError> {
        if state.is_terminal() {
            return Ok(RepairAction::empty());
        }
        self.value(state)?;
        let key = self.key_for(state, self.horizon);
        self.memo
            .get(&key)
            .map(|e| e.action.clone())
            .ok_or(SolverError::BadConfig("horizon must be at least 1"))
    }

    /// Q(state, action): expected reward plus discounted optimal value of
    /// the successor.
    pub fn q_value(
        &mut self,
        state: &RecoveryState,
        action: &RepairAction,
    ) -> Result<f64, SolverError> {
        self.q_rec(state, action, self.horizon)
    }

    /// Exact K-horizon Q of a deterministic base policy: the first action
    /// is fixed, then the base policy runs for up to `k` further epochs.
    /// This is the quantity the Monte Carlo estimator approximates.
    pub fn policy_q(
        &self,
        state: &RecoveryState,
        action: &RepairAction,
        base: BasePolicy,
        k: u32,
    ) -> Result<f64, SolverError> {
        if base == BasePolicy::Random {
            return Err(SolverError::RandomBaseNotEnumerable);
        }
        self.env.check_action(state, action)?;
        let mut q = 0.0;
        for (prob, reward, next) in self.outcomes(state, action)? {
            q += prob * (reward + self.gamma * self.policy_value(&next, base, k)?);
        }
        Ok(q)
    }

    fn policy_value(
        &self,
        state: &RecoveryState,
        base: BasePolicy,
        remaining: u32,
    ) -> Result<f64, SolverError> {
        if remaining == 0 || state.is_terminal() {
            return Ok(0.0);
        }
        let action = self.base_action(state, base);
        let mut v = 0.0;
        for (prob, reward, next) in self.outcomes(state, &action)? {
            v += prob * (reward + self.gamma * self.policy_value(&next, base, remaining - 1)?);
        }
        Ok(v)
    }

    /// Sup-norm change from one application of the optimality backup to
    /// the memoized value table. Near zero for an exact solution.
    pub fn bellman_residual(&mut self) -> Result<f64, SolverError> {
        let snapshot: Vec<(RecoveryState, u32)> = self.visited.clone();
        let mut worst = 0.0f64;
        for (state, budget) in snapshot {
            let stored = self.memo[&self.key_for(&state, budget)].value;
            let mut best = f64::NEG_INFINITY;
            for action in self.enumerate_actions(&state)? {
                let q = self.q_rec(&state, &action, budget)?;
                if q > best {
                    best = q;
                }
            }
            let diff = (best - stored).abs();
            if diff > worst {
                worst = diff;
            }
        }
        Ok(worst)
    }

    fn value_rec(&mut self, state: &RecoveryState, budget: u32) -> Result<f64, SolverError> {
        if budget == 0 || state.is_terminal() {
            return Ok(0.0);
        }
        let key = self.key_for(state, budget);
        if let Some(entry) = self.memo.get(&key) {
            return Ok(entry.value);
        }
        let mut best = f64::NEG_INFINITY;
        let mut best_action: Option<RepairAction> = None;
        for action in self.enumerate_actions(state)? {
            let q = self.q_rec(state, &action, budget)?;
            if q > best {
                best = q;
                best_action = Some(action);
            }
        }
        if self.memo.len() >= self.max_states {
            return Err(SolverError::StateSpaceOverflow {
                count: self.memo.len() + 1,
                limit: self.max_states,
            });
        }
        self.memo.insert(
            key,
            MemoEntry {
                value: best,
                action: best_action.expect("non-terminal state has a feasible action"),
            },
        );
        self.visited.push((state.clone(), budget));
        Ok(best)
    }

    fn q_rec(
        &mut self,
        state: &RecoveryState,
        action: &RepairAction,
        budget: u32,
    ) -> Result<f64, SolverError> {
        let next_budget = budget.saturating_sub(1);
        let mut q = 0.0;
        for (prob, reward, next) in self.outcomes(state, action)? {
            q += prob * (reward + self.gamma * self.value_rec(&next, next_budget)?);
        }
        Ok(q)
    }

    /// All (probability, reward, successor) triples of one action:
    /// the cartesian product of the targets' duration supports.
    fn outcomes(
        &self,
        state: &RecoveryState,
        action: &RepairAction,
    ) -> Result<Vec<(f64, f64, RecoveryState)>, SolverError> {
        let supports: Vec<Vec<(u32, f64)>> = action
            .targets
            .iter()
            .map(|&b| self.durations.enumerate(b))
            .collect::<Result<_, _>>()?;
        let combos: usize = supports.iter().map(|s| s.len()).product();
        if combos > 100_000 {
            return Err(SolverError::ActionSpaceOverflow {
                count: combos,
                limit: 100_000,
            });
        }
        let mut out = Vec::with_capacity(combos.max(1));
        let mut pick = vec![0usize; supports.len()];
        loop {
            let mut prob = 1.0;
            let durations: Vec<u32> = supports
                .iter()
                .zip(&pick)
                .map(|(support, &i)| {
                    prob *= support[i].1;
                    support[i].0
                })
                .collect();
            let step = self
                .env
                .step_with_durations(state, action, &durations)
                .map_err(SolverError::Mdp)?;
            out.push((prob, step.reward, step.next_state));
            // next combination
            let mut dim = 0;
            loop {
                if dim == pick.len() {
                    return Ok(out);
                }
                pick[dim] += 1;
                if pick[dim] < supports[dim].len() {
                    break;
                }
                pick[dim] = 0;
                dim += 1;
            }
        }
    }

    /// Every feasible joint action: per cell, all size-k subsets of the
    /// waiting buildings where k = min(free crews, waiting), combined
    /// across cells.
    fn enumerate_actions(&self, state: &RecoveryState) -> Result<Vec<RepairAction>, SolverError> {
        let model = self.env.model;
        let mut per_cell: Vec<Vec<Vec<u32>>> = Vec::with_capacity(model.n_cells());
        let mut total: u128 = 1;
        for cell in &model.cells {
            let waiting: Vec<u32> = cell
                .building_ids
                .iter()
                .map(|b| b.0)
                .filter(|&b| state.phases[b as usize] == BuildingPhase::Damaged)
                .collect();
            let k = (state.free_rus[cell.cell_id.0 as usize] as usize).min(waiting.len());
            let choices = combinations(&waiting, k);
            total = total.saturating_mul(choices.len() as u128);
            if total > 100_000 {
                return Err(SolverError::ActionSpaceOverflow {
                    count: usize::MAX,
                    limit: 100_000,
                });
            }
            per_cell.push(choices);
        }
        let mut actions = Vec::with_capacity(total as usize);
        let mut current: Vec<u32> = Vec::new();
        build_product(&per_cell, 0, &mut current, &mut actions);
        Ok(actions)
    }

    /// The deterministic base policies, reimplemented from the policy
    /// definition (not shared with the simulator).
    fn base_action(&self, state: &RecoveryState, base: BasePolicy) -> RepairAction {
        let model = self.env.model;
        let mut targets: Vec<BuildingId> = Vec::new();
        for cell in &model.cells {
            let mut waiting: Vec<u32> = cell
                .building_ids
                .iter()
                .map(|b| b.0)
                .filter(|&b| state.phases[b as usize] == BuildingPhase::Damaged)
                .collect();
            if base == BasePolicy::GreedyOccupancyRate {
                waiting.sort_by(|&x, &y| {
                    let rx = model.buildings[x as usize].occupants.total() as f64
                        / self.durations.expected_days(BuildingId(x));
                    let ry = model.buildings[y as usize].occupants.total() as f64
                        / self.durations.expected_days(BuildingId(y));
                    ry.partial_cmp(&rx).unwrap().then(x.cmp(&y))
                });
            }
            let take = (state.free_rus[cell.cell_id.0 as usize] as usize).min(waiting.len());
            targets.extend(waiting[..take].iter().map(|&b| BuildingId(b)));
        }
        RepairAction::new(targets)
    }

    fn key_for(&self, state: &RecoveryState, budget: u32) -> Vec<u64> {
        let work = state
            .phases
            .iter()
            .filter(|p| !matches!(p, BuildingPhase::Intact | BuildingPhase::Repaired))
            .count() as u32;
        let canon = if budget >= work { UNBOUNDED } else { budget };
        let mut key = Vec::with_capacity(state.phases.len() + 2);
        key.push(canon as u64);
        key.push(state.elapsed_days);
        key.extend(state.phases.iter().map(|p| match p {
            BuildingPhase::Intact => 0u64,
            BuildingPhase::Damaged => 1,
            BuildingPhase::Repaired => 2,
            BuildingPhase::UnderRepair { finish_day } => 3 + finish_day,
        }));
        key
    }
}

fn combinations(items: &[u32], k: usize) -> Vec<Vec<u32>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.iter().map(|&i| items[i]).collect());
        // advance the combination indices
        let mut dim = k;
        loop {
            if dim == 0 {
                return out;
            }
            dim -= 1;
            if idx[dim] != dim + items.len() - k {
                idx[dim] += 1;
                for j in (dim + 1)..k {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

fn build_product(
    per_cell: &[Vec<Vec<u32>>],
    depth: usize,
    current: &mut Vec<u32>,
    out: &mut Vec<RepairAction>,
) {
    if depth == per_cell.len() {
        out.push(RepairAction::new(
            current.iter().map(|&b| BuildingId(b)).collect(),
        ));
        return;
    }
    for choice in &per_cell[depth] {
        let len = current.len();
        current.extend_from_slice(choice);
        build_product(per_cell, depth + 1, current, out);
        current.truncate(len);
    }
}
