//! Fast trajectory simulation for rollout estimates.
//!
//! Thousands of short trajectories branch off the same decision-epoch
//! state, so copying the full per-building state each time would dominate
//! the run. Instead a trajectory reads the shared root snapshot and layers
//! its own changes on top:
//!
//! * in-progress repairs from the real state are an immutable sorted list
//!   consumed through a cursor (non-preemption means a trajectory can
//!   never cancel them);
//! * the trajectory's own assignments live in a small local heap;
//! * "locally touched" is tracked with a stamp array, reset in O(1) by
//!   bumping the trajectory counter.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Reverse;

use crate::community::BuildingId;
use crate::mdp::{BuildingPhase, RecoveryEnv, RecoveryState, RewardTiming};
use crate::rng::Stream;

use super::durations::DurationModel;
use super::BasePolicy;

/// Immutable snapshot of the real state at one decision epoch.
pub(crate) struct RootView<'s> {
    phases: &'s [BuildingPhase],
    /// In-progress repairs, ascending by (finish day, building).
    pub busy_sorted: Vec<(u64, u32)>,
    pub free: Vec<u32>,
    pub elapsed: u64,
    /// Per-cell index of the first still-waiting entry in the greedy (resp.
    /// id) ordering; scans start here.
    pub greedy_cursor: Vec<usize>,
    pub id_cursor: Vec<usize>,
}

impl<'s> RootView<'s> {
    pub fn from_state(
        env: &RecoveryEnv<'_>,
        greedy_order: &[Vec<u32>],
        id_order: &[Vec<u32>],
        state: &'s RecoveryState,
    ) -> Self {
        let mut busy_sorted: Vec<(u64, u32)> = state
            .phases
            .iter()
            .enumerate()
            .filter_map(|(i, p)| match p {
                BuildingPhase::UnderRepair { finish_day } => Some((*finish_day, i as u32)),
                _ => None,
            })
            .collect();
        busy_sorted.sort_unstable();

        let waiting = |b: u32| state.phases[b as usize] == BuildingPhase::Damaged;
        let cursor_for = |order: &[Vec<u32>]| -> Vec<usize> {
            order
                .iter()
                .map(|list| list.iter().position(|&b| waiting(b)).unwrap_or(list.len()))
                .collect()
        };
        let _ = env;
        RootView {
            phases: &state.phases,
            busy_sorted,
            free: state.free_rus.clone(),
            elapsed: state.elapsed_days,
            greedy_cursor: cursor_for(greedy_order),
            id_cursor: cursor_for(id_order),
        }
    }

    #[inline]
    pub fn is_waiting(&self, b: u32) -> bool {
        self.phases[b as usize] == BuildingPhase::Damaged
    }
}

/// Borrowed planner tables used by every trajectory.
pub(crate) struct SimRefs<'a> {
    pub occupants: &'a [u64],
    pub cell_of: &'a [u32],
    pub greedy_order: &'a [Vec<u32>],
    pub id_order: &'a [Vec<u32>],
    pub durations: &'a DurationModel,
    pub timing: RewardTiming,
}

/// Reusable per-trajectory state.
pub(crate) struct Scratch {
    stamp: Vec<u32>,
    epoch: u32,
    heap: BinaryHeap<Reverse<(u64, u32)>>,
    free: Vec<u32>,
    cursor: Vec<usize>,
}

impl Scratch {
    pub fn new(n_buildings: usize, n_cells: usize) -> Self {
        Scratch {
            stamp: vec![0; n_buildings],
            epoch: 0,
            heap: BinaryHeap::new(),
            free: vec![0; n_cells],
            cursor: vec![0; n_cells],
        }
    }

    fn begin(&mut self, root: &RootView<'_>, base: BasePolicy) {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.epoch = 1;
        }
        self.heap.clear();
        self.free.clear();
        self.free.extend_from_slice(&root.free);
        self.cursor.clear();
        self.cursor.extend_from_slice(match base {
            BasePolicy::GreedyOccupancyRate => &root.greedy_cursor,
            BasePolicy::Random | BasePolicy::FixedOrder => &root.id_cursor,
        });
    }

    #[inline]
    fn touched(&self, b: u32) -> bool {
        self.stamp[b as usize] == self.epoch
    }

    /// Durations are drawn from a substream keyed by building id, so a
    /// building repairs in the same sampled time in every candidate
    /// evaluation that shares a trajectory stream (common random numbers:
    /// candidate comparisons then reflect the actions, not draw luck).
    #[inline]
    fn assign(&mut self, refs: &SimRefs<'_>, b: u32, now: u64, duration_root: &Stream) {
        debug_assert!(!self.touched(b), "building {b} assigned twice in one trajectory");
        self.stamp[b as usize] = self.epoch;
        let mut sub = duration_root.derive(b as u64);
        let d = refs.durations.sample(BuildingId(b), &mut sub) as u64;
        self.heap.push(Reverse((now + d, b)));
        self.free[refs.cell_of[b as usize] as usize] -= 1;
    }

    /// Base-policy assignment of every free crew that still has a target.
    #[allow(clippy::too_many_arguments)]
    fn base_assign(
        &mut self,
        refs: &SimRefs<'_>,
        root: &RootView<'_>,
        base: BasePolicy,
        now: u64,
        epoch_index: u32,
        duration_root: &Stream,
        select_root: &Stream,
    ) {
        for cell in 0..self.free.len() {
            if self.free[cell] == 0 {
                continue;
            }
            match base {
                BasePolicy::GreedyOccupancyRate | BasePolicy::FixedOrder => {
                    let order: &[u32] = match base {
                        BasePolicy::GreedyOccupancyRate => &refs.greedy_order[cell],
                        _ => &refs.id_order[cell],
                    };
                    while self.free[cell] > 0 {
                        let mut idx = self.cursor[cell];
                        while idx < order.len() {
                            let b = order[idx];
                            if root.is_waiting(b) && !self.touched(b) {
                                break;
                            }
                            idx += 1;
                        }
                        self.cursor[cell] = idx;
                        if idx == order.len() {
                            break;
                        }
                        self.assign(refs, order[idx], now, duration_root);
                    }
                }
                BasePolicy::Random => {
                    let order = &refs.id_order[cell];
                    let mut feasible: Vec<u32> = order[self.cursor[cell]..]
                        .iter()
                        .copied()
                        .filter(|&b| root.is_waiting(b) && !self.touched(b))
                        .collect();
                    let take = (self.free[cell] as usize).min(feasible.len());
                    let mut pick_stream =
                        select_root.derive(epoch_index as u64).derive(cell as u64);
                    for i in 0..take {
                        let j = i + pick_stream.next_index(feasible.len() - i);
                        feasible.swap(i, j);
                        self.assign(refs, feasible[i], now, duration_root);
                    }
                }
            }
        }
    }
}

/// Run one trajectory: apply `first_action` with freshly sampled
/// durations, advance to each completion, and follow the base policy for
/// up to `horizon` further epochs (stopping early at terminal states).
/// Returns the discounted return with per-epoch discounting.
#[allow(clippy::too_many_arguments)]
pub(crate) fn simulate(
    refs: &SimRefs<'_>,
    scratch: &mut Scratch,
    root: &RootView<'_>,
    first_action: &[u32],
    base: BasePolicy,
    gamma: f64,
    horizon: u32,
    stream: &Stream,
) -> f64 {
    scratch.begin(root, base);
    let duration_root = stream.derive(0);
    let select_root = stream.derive(1);
    let mut shared_idx = 0usize;
    let mut elapsed = root.elapsed;
    let mut ret = 0.0f64;
    let mut discount = 1.0f64;

    for &b in first_action {
        debug_assert!(root.is_waiting(b));
        scratch.assign(refs, b, elapsed, &duration_root);
    }

    for k in 0..=horizon {
        if k > 0 {
            scratch.base_assign(refs, root, base, elapsed, k, &duration_root, &select_root);
        }
        let shared_next = root.busy_sorted.get(shared_idx).map(|&(t, _)| t);
        let local_next = scratch.heap.peek().map(|&Reverse((t, _))| t);
        let t = match (shared_next, local_next) {
            (Some(a), Some(b)) => a.min(b),
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => break, // terminal: nothing in progress anywhere
        };

        // Rehoused occupants accumulate in integer arithmetic, so the
        // epoch reward is independent of completion processing order.
        let mut rehoused: u64 = 0;
        while shared_idx < root.busy_sorted.len() && root.busy_sorted[shared_idx].0 == t {
            let b = root.busy_sorted[shared_idx].1;
            rehoused += refs.occupants[b as usize];
            scratch.free[refs.cell_of[b as usize] as usize] += 1;
            shared_idx += 1;
        }
        while let Some(&Reverse((finish, b))) = scratch.heap.peek() {
            if finish != t {
                break;
            }
            scratch.heap.pop();
            rehoused += refs.occupants[b as usize];
            scratch.free[refs.cell_of[b as usize] as usize] += 1;
        }

        let denom = match refs.timing {
            RewardTiming::Cumulative => t,
            RewardTiming::EpochLocal => t - elapsed,
        };
        elapsed = t;
        ret += discount * (rehoused as f64 / denom as f64);
        discount *= gamma;
    }
    ret
}
