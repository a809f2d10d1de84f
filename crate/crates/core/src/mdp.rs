//! The recovery decision process: states track per-building repair
//! progress, actions assign repair crews ("resource units", RUs) to
//! damaged buildings within their own grid cell, and transitions are
//! event-driven — the clock jumps to the next repair completion.
//!
//! Assignments are non-preemptive: once a crew starts a building it works
//! until completion. Each cell's crew budget is 20% of its damaged
//! buildings (rounded up), so crews concentrate where damage does. The
//! per-epoch reward is people newly re-housed divided by repair time,
//! where "repair time" is, by default, the cumulative days since the
//! hazard (see [`RewardTiming`]).

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::community::{AgeCounts, BuildingId, CellId, CommunityModel};
use crate::damage::ScenarioRealization;

/// Which repair-time denominator the per-epoch reward divides by.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardTiming {
    /// reward = newly housed / cumulative days since the hazard.
    #[default]
    Cumulative,
    /// reward = newly housed / days this epoch took.
    EpochLocal,
}

/// Repair crews available per cell: `ceil(0.2 * damaged)` where there is
/// damage, zero elsewhere.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuBudget {
    pub per_cell: Vec<u32>,
}

impl RuBudget {
    pub fn total(&self) -> u32 {
        self.per_cell.iter().sum()
    }
}

/// The 20% rule: each cell gets one crew per five damaged buildings,
/// rounded up, and none when it has no damage.
pub fn compute_ru_budget(model: &CommunityModel, realization: &ScenarioRealization) -> RuBudget {
    let mut damaged = vec![0u32; model.n_cells()];
    for b in &model.buildings {
        if realization.damage_states[b.id.0 as usize].is_damaged() {
            damaged[b.cell_id.0 as usize] += 1;
        }
    }
    RuBudget {
        per_cell: damaged.iter().map(|&d| d.div_ceil(5)).collect(),
    }
}

/// Where one building is in its repair lifecycle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BuildingPhase {
    /// Undamaged by the hazard; habitable throughout.
    Intact,
    /// Damaged, waiting for a crew.
    Damaged,
    /// A crew is working; completes at the absolute day `finish_day`.
    UnderRepair { finish_day: u64 },
    /// Repair complete; habitable again.
    Repaired,
}

impl BuildingPhase {
    pub fn habitable(self) -> bool {
        matches!(self, BuildingPhase::Intact | BuildingPhase::Repaired)
    }
}

/// MDP state: per-building phase, elapsed days since the hazard, and free
/// crews per cell.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryState {
    pub phases: Vec<BuildingPhase>,
    pub elapsed_days: u64,
    pub free_rus: Vec<u32>,
}

impl RecoveryState {
    /// Post-hazard initial state: damaged buildings wait, all crews free.
    pub fn initial(realization: &ScenarioRealization, budget: &RuBudget) -> Self {
        RecoveryState {
            phases: realization
                .damage_states
                .iter()
                .map(|s| {
                    if s.is_damaged() {
                        BuildingPhase::Damaged
                    } else {
                        BuildingPhase::Intact
                    }
                })
                .collect(),
            elapsed_days: 0,
            free_rus: budget.per_cell.clone(),
        }
    }

    /// True when nothing is waiting for repair and nothing is in progress.
    pub fn is_terminal(&self) -> bool {
        !self
            .phases
            .iter()
            .any(|p| matches!(p, BuildingPhase::Damaged | BuildingPhase::UnderRepair { .. }))
    }
}

/// Buildings in `cell` that can take a crew now: damaged, not repaired,
/// not already being worked on.
pub fn feasible_assignment_targets(
    state: &RecoveryState,
    model: &CommunityModel,
    cell: CellId,
) -> Vec<BuildingId> {
    model.cells[cell.0 as usize]
        .building_ids
        .iter()
        .copied()
        .filter(|b| state.phases[b.0 as usize] == BuildingPhase::Damaged)
        .collect()
}

/// A joint assignment for one decision epoch: the buildings that receive a
/// crew, across all cells. Canonically sorted by id.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairAction {
    pub targets: Vec<BuildingId>,
}

impl RepairAction {
    pub fn new(mut targets: Vec<BuildingId>) -> Self {
        targets.sort_unstable();
        RepairAction { targets }
    }

    pub fn empty() -> Self {
        RepairAction::default()
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Result of one event-driven epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionOutcome {
    pub next_state: RecoveryState,
    /// Persons re-housed this epoch divided by the configured repair-time
    /// denominator; zero on the terminal self-loop.
    pub reward: f64,
    /// Days the epoch took; at least 1 except on the terminal self-loop.
    pub epoch_days: u64,
    /// Buildings whose repair completed this epoch.
    pub completed: Vec<BuildingId>,
    /// Occupants of the completed buildings.
    pub newly_housed: AgeCounts,
}

#[derive(Clone, Debug, PartialEq)]
pub enum MdpError {
    UnknownBuilding(BuildingId),
    /// Assigned to a building that is not damaged-and-waiting.
    NotAssignable { building: BuildingId, phase: BuildingPhase },
    DuplicateTarget(BuildingId),
    /// Per-cell assignment count must equal min(free crews, waiting
    /// buildings) — crews never idle while work remains in their cell.
    WrongCellCount {
        cell: CellId,
        assigned: u32,
        expected: u32,
    },
    SizeMismatch { state: usize, model: usize },
}

impl fmt::Display for MdpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MdpError::UnknownBuilding(b) => write!(f, "action targets unknown building {b}"),
            MdpError::NotAssignable { building, phase } => {
                write!(f, "building {building} cannot be assigned (phase {phase:?})")
            }
            MdpError::DuplicateTarget(b) => write!(f, "building {b} assigned twice"),
            MdpError::WrongCellCount { cell, assigned, expected } => write!(
                f,
                "cell {cell}: action assigns {assigned} crews, feasibility requires {expected}"
            ),
            MdpError::SizeMismatch { state, model } => write!(
                f,
                "state covers {state} buildings, model has {model}"
            ),
        }
    }
}

impl core::error::Error for MdpError {}

/// The generative environment: realized damage plus realized repair
/// durations. Planner-side simulations use their own duration model; the
/// environment always pays out the realized durations.
pub struct RecoveryEnv<'a> {
    pub model: &'a CommunityModel,
    pub realization: &'a ScenarioRealization,
    pub budget: RuBudget,
    pub timing: RewardTiming,
}

impl<'a> RecoveryEnv<'a> {
    pub fn new(
        model: &'a CommunityModel,
        realization: &'a ScenarioRealization,
        timing: RewardTiming,
    ) -> Self {
        debug_assert_eq!(model.buildings.len(), realization.damage_states.len());
        RecoveryEnv {
            model,
            realization,
            budget: compute_ru_budget(model, realization),
            timing,
        }
    }

    pub fn initial_state(&self) -> RecoveryState {
        RecoveryState::initial(self.realization, &self.budget)
    }

    /// Validate that `action` is exactly feasible in `state`.
    pub fn check_action(&self, state: &RecoveryState, action: &RepairAction) -> Result<(), MdpError> {
        if state.phases.len() != self.model.buildings.len() {
            return Err(MdpError::SizeMismatch {
                state: state.phases.len(),
                model: self.model.buildings.len(),
            });
        }
        let n_cells = self.model.n_cells();
        let mut assigned = vec![0u32; n_cells];
        let mut last: Option<BuildingId> = None;
        for &b in &action.targets {
            if b.0 as usize >= state.phases.len() {
                return Err(MdpError::UnknownBuilding(b));
            }
            if last == Some(b) {
                return Err(MdpError::DuplicateTarget(b));
            }
            debug_assert!(last.is_none_or(|l| l < b), "action must be sorted");
            last = Some(b);
            let phase = state.phases[b.0 as usize];
            if phase != BuildingPhase::Damaged {
                return Err(MdpError::NotAssignable { building: b, phase });
            }
            assigned[self.model.buildings[b.0 as usize].cell_id.0 as usize] += 1;
        }
        let mut waiting = vec![0u32; n_cells];
        for (i, p) in state.phases.iter().enumerate() {
            if *p == BuildingPhase::Damaged {
                waiting[self.model.buildings[i].cell_id.0 as usize] += 1;
            }
        }
        for cell in 0..n_cells {
            let expected = state.free_rus[cell].min(waiting[cell]);
            if assigned[cell] != expected {
                return Err(MdpError::WrongCellCount {
                    cell: CellId(cell as u32),
                    assigned: assigned[cell],
                    expected,
                });
            }
        }
        Ok(())
    }

    /// One epoch with the realized durations from the scenario.
    pub fn step(&self, state: &RecoveryState, action: &RepairAction) -> Result<TransitionOutcome, MdpError> {
        self.check_action(state, action)?;
        let durations: Vec<u32> = action
            .targets
            .iter()
            .map(|b| self.realization.durations_days[b.0 as usize])
            .collect();
        Ok(self.apply(state, action, &durations))
    }

    /// One epoch with caller-supplied durations for the newly assigned
    /// buildings (used by the exact solver to enumerate outcomes).
    pub fn step_with_durations(
        &self,
        state: &RecoveryState,
        action: &RepairAction,
        durations: &[u32],
    ) -> Result<TransitionOutcome, MdpError> {
        self.check_action(state, action)?;
        assert_eq!(durations.len(), action.targets.len());
        Ok(self.apply(state, action, durations))
    }

    /// Assumes `action` already validated. Assign crews, jump to the next
    /// completion day, release finished crews, and pay the reward.
    fn apply(&self, state: &RecoveryState, action: &RepairAction, durations: &[u32]) -> TransitionOutcome {
        let mut next = state.clone();
        for (&b, &d) in action.targets.iter().zip(durations) {
            debug_assert!(d >= 1, "repair durations are at least one day");
            next.phases[b.0 as usize] = BuildingPhase::UnderRepair {
                finish_day: state.elapsed_days + d as u64,
            };
            next.free_rus[self.model.buildings[b.0 as usize].cell_id.0 as usize] -= 1;
        }

        let earliest = next
            .phases
            .iter()
            .filter_map(|p| match p {
                BuildingPhase::UnderRepair { finish_day } => Some(*finish_day),
                _ => None,
            })
            .min();
        let Some(finish) = earliest else {
            // Terminal: nothing in progress and (by feasibility) nothing
            // waiting. Absorbing self-loop with zero reward.
            return TransitionOutcome {
                next_state: next,
                reward: 0.0,
                epoch_days: 0,
                completed: Vec::new(),
                newly_housed: AgeCounts::default(),
            };
        };

        let mut completed = Vec::new();
        let mut newly_housed = AgeCounts::default();
        for (i, p) in next.phases.iter_mut().enumerate() {
            if *p == (BuildingPhase::UnderRepair { finish_day: finish }) {
                *p = BuildingPhase::Repaired;
                let b = &self.model.buildings[i];
                completed.push(b.id);
                newly_housed.add(&b.occupants);
                next.free_rus[b.cell_id.0 as usize] += 1;
            }
        }
        let epoch_days = finish - state.elapsed_days;
        next.elapsed_days = finish;

        let denom = match self.timing {
            RewardTiming::Cumulative => next.elapsed_days,
            RewardTiming::EpochLocal => epoch_days,
        };
        let reward = newly_housed.total() as f64 / denom as f64;

        TransitionOutcome {
            next_state: next,
            reward,
            epoch_days,
            completed,
            newly_housed,
        }
    }
}

/// Occupants, by age group, of currently habitable buildings.
pub fn housed_population(state: &RecoveryState, model: &CommunityModel) -> AgeCounts {
    let mut counts = AgeCounts::default();
    for b in &model.buildings {
        if state.phases[b.id.0 as usize].habitable() {
            counts.add(&b.occupants);
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::community::{generate_testbed, AgeCounts, TestbedConfig};
    use crate::damage::DamageState;
    use crate::rng::Stream;

    /// Hand-built model: one cell, `occupants` per building, everyone home.
    fn tiny_model(occupants: &[u32]) -> CommunityModel {
        use crate::community::{Building, GridCell};
        let buildings: Vec<Building> = occupants
            .iter()
            .enumerate()
            .map(|(i, &occ)| Building {
                id: BuildingId(i as u32),
                cell_id: CellId(0),
                occupants: AgeCounts {
                    children: 0,
                    adults: occ,
                    seniors: 0,
                },
                occupied: occ > 0,
                archetype_id: 0,
            })
            .collect();
        let model = CommunityModel {
            cells: vec![GridCell {
                cell_id: CellId(0),
                centroid: (0.0, 0.0),
                building_ids: buildings.iter().map(|b| b.id).collect(),
            }],
            buildings,
            total_population: occupants.iter().map(|&o| o as u64).sum(),
            age_fractions: [0.0, 1.0, 0.0],
        };
        model.validate().unwrap();
        model
    }

    fn realization(damage: &[DamageState], durations: &[u32], n: usize) -> ScenarioRealization {
        ScenarioRealization {
            im: vec![0.5; n],
            damage_states: damage.to_vec(),
            durations_days: durations.to_vec(),
        }
    }

    #[test]
    fn ru_budget_twenty_percent_rule() {
        let model = tiny_model(&[1; 10]);
        let damage = vec![DamageState::Moderate; 10];
        let real = realization(&damage, &[30; 10], 10);
        let budget = compute_ru_budget(&model, &real);
        assert_eq!(budget.per_cell, vec![2]); // ceil(0.2 * 10)

        let mut seven = vec![DamageState::None; 10];
        for s in seven.iter_mut().take(7) {
            *s = DamageState::Minor;
        }
        let real7 = realization(&seven, &[10; 10], 10);
        assert_eq!(compute_ru_budget(&model, &real7).per_cell, vec![2]); // ceil(1.4)

        let none = vec![DamageState::None; 10];
        let real0 = realization(&none, &[0; 10], 10);
        assert_eq!(compute_ru_budget(&model, &real0).per_cell, vec![0]);
    }

    #[test]
    fn single_building_reward_arithmetic() {
        // 40 occupants, 20-day repair, from day 0: reward 40/20 = 2.
        let model = tiny_model(&[40]);
        let real = realization(&[DamageState::Major], &[20], 1);
        let env = RecoveryEnv::new(&model, &real, RewardTiming::Cumulative);
        let state = env.initial_state();
        assert!(!state.is_terminal());
        let action = RepairAction::new(vec![BuildingId(0)]);
        let out = env.step(&state, &action).unwrap();
        assert_eq!(out.reward, 2.0);
        assert_eq!(out.epoch_days, 20);
        assert_eq!(out.next_state.elapsed_days, 20);
        assert!(out.next_state.is_terminal());
        assert_eq!(out.completed, vec![BuildingId(0)]);
    }

    #[test]
    fn cumulative_timing_divides_by_total_elapsed() {
        // Same building assigned at elapsed 30: reward 40/50 = 0.8.
        let model = tiny_model(&[40]);
        let real = realization(&[DamageState::Major], &[20], 1);
        let env = RecoveryEnv::new(&model, &real, RewardTiming::Cumulative);
        let mut state = env.initial_state();
        state.elapsed_days = 30;
        let out = env.step(&state, &RepairAction::new(vec![BuildingId(0)])).unwrap();
        assert_eq!(out.reward, 0.8);

        let env_local = RecoveryEnv::new(&model, &real, RewardTiming::EpochLocal);
        let out_local = env_local
            .step(&state, &RepairAction::new(vec![BuildingId(0)]))
            .unwrap();
        assert_eq!(out_local.reward, 2.0);
    }

    #[test]
    fn terminal_state_absorbs() {
        let model = tiny_model(&[10]);
        let real = realization(&[DamageState::None], &[0], 1);
        let env = RecoveryEnv::new(&model, &real, RewardTiming::Cumulative);
        let state = env.initial_state();
        assert!(state.is_terminal());
        let out = env.step(&state, &RepairAction::empty()).unwrap();
        assert_eq!(out.reward, 0.0);
        assert_eq!(out.epoch_days, 0);
        assert_eq!(out.next_state, state);
    }

    #[test]
    fn feasibility_requires_full_assignment() {
        let model = tiny_model(&[5, 5, 5, 5, 5, 5, 5, 5, 5, 5]);
        let damage = vec![DamageState::Moderate; 10];
        let real = realization(&damage, &[30; 10], 10);
        let env = RecoveryEnv::new(&model, &real, RewardTiming::Cumulative);
        let state = env.initial_state();
        // Budget is 2; assigning one crew is under-assignment.
        let err = env
            .step(&state, &RepairAction::new(vec![BuildingId(0)]))
            .unwrap_err();
        assert!(matches!(err, MdpError::WrongCellCount { expected: 2, .. }), "{err}");
        // Assigning three is over-assignment.
        let err = env
            .step(
                &state,
                &RepairAction::new(vec![BuildingId(0), BuildingId(1), BuildingId(2)]),
            )
            .unwrap_err();
        assert!(matches!(err, MdpError::WrongCellCount { .. }));
        // Exactly two is accepted.
        let out = env
            .step(&state, &RepairAction::new(vec![BuildingId(0), BuildingId(1)]))
            .unwrap();
        assert_eq!(out.next_state.free_rus, vec![2]); // both completed together
    }

    #[test]
    fn cannot_assign_undamaged_or_busy() {
        let model = tiny_model(&[5, 5]);
        let real = realization(&[DamageState::Minor, DamageState::None], &[10, 0], 2);
        let env = RecoveryEnv::new(&model, &real, RewardTiming::Cumulative);
        let state = env.initial_state();
        let err = env
            .step(&state, &RepairAction::new(vec![BuildingId(1)]))
            .unwrap_err();
        assert!(matches!(err, MdpError::NotAssignable { .. }));
        assert_eq!(
            feasible_assignment_targets(&state, &model, CellId(0)),
            vec![BuildingId(0)]
        );
    }

    #[test]
    fn non_preemption_and_event_clock() {
        // Two damaged (10- and 25-day repairs), one crew each epoch.
        let model = tiny_model(&[8, 9, 0, 0, 0]);
        let damage = vec![
            DamageState::Moderate,
            DamageState::Moderate,
            DamageState::None,
            DamageState::None,
            DamageState::None,
        ];
        let real = realization(&damage, &[10, 25, 0, 0, 0], 5);
        let env = RecoveryEnv::new(&model, &real, RewardTiming::Cumulative);
        let state = env.initial_state();
        assert_eq!(env.budget.per_cell, vec![1]);

        let out1 = env.step(&state, &RepairAction::new(vec![BuildingId(1)])).unwrap();
        assert_eq!(out1.next_state.elapsed_days, 25);
        assert_eq!(out1.reward, 9.0 / 25.0);
        // Crew came back, second building now assignable.
        let out2 = env
            .step(&out1.next_state, &RepairAction::new(vec![BuildingId(0)]))
            .unwrap();
        assert_eq!(out2.next_state.elapsed_days, 35);
        assert_eq!(out2.reward, 8.0 / 35.0);
        assert!(out2.next_state.is_terminal());
    }

    #[test]
    fn housed_population_counts_only_habitable() {
        let model = tiny_model(&[10, 20, 30]);
        let damage = vec![DamageState::None, DamageState::Collapse, DamageState::Major];
        let real = realization(&damage, &[0, 60, 40], 3);
        let env = RecoveryEnv::new(&model, &real, RewardTiming::Cumulative);
        let state = env.initial_state();
        assert_eq!(housed_population(&state, &model).total(), 10);
        let out = env
            .step(&state, &RepairAction::new(vec![BuildingId(2)]))
            .unwrap();
        assert_eq!(housed_population(&out.next_state, &model).total(), 40);
    }

    #[test]
    fn full_recovery_on_generated_model() {
        let config = TestbedConfig {
            grid_rows: 2,
            grid_cols: 2,
            n_buildings: 40,
            total_population: 130,
            ..TestbedConfig::default()
        };
        let model = generate_testbed(&config, &Stream::new(8)).unwrap();
        let mut damage = vec![DamageState::None; 40];
        let mut durations = vec![0u32; 40];
        let mut stream = Stream::new(55);
        for i in 0..40 {
            if stream.next_f64() < 0.5 {
                damage[i] = DamageState::Moderate;
                durations[i] = 5 + stream.next_index(40) as u32;
            }
        }
        let real = ScenarioRealization {
            im: vec![0.4; 40],
            damage_states: damage,
            durations_days: durations,
        };
        let env = RecoveryEnv::new(&model, &real, RewardTiming::Cumulative);
        let mut state = env.initial_state();
        let full = housed_population(&RecoveryState::initial(
            &ScenarioRealization {
                im: real.im.clone(),
                damage_states: vec![DamageState::None; 40],
                durations_days: vec![0; 40],
            },
            &RuBudget { per_cell: vec![0; 4] },
        ), &model);

        let mut last_housed = housed_population(&state, &model).total();
        let mut epochs = 0;
        while !state.is_terminal() {
            // Assign every free crew to the lowest-id feasible target.
            let mut targets = Vec::new();
            for cell in 0..model.n_cells() {
                let feasible = feasible_assignment_targets(&state, &model, CellId(cell as u32));
                let take = (state.free_rus[cell] as usize).min(feasible.len());
                targets.extend_from_slice(&feasible[..take]);
            }
            let out = env.step(&state, &RepairAction::new(targets)).unwrap();
            // RU conservation and monotone recovery at every epoch.
            let housed = housed_population(&out.next_state, &model).total();
            assert!(housed >= last_housed);
            last_housed = housed;
            let mut busy = vec![0u32; model.n_cells()];
            for (i, p) in out.next_state.phases.iter().enumerate() {
                if matches!(p, BuildingPhase::UnderRepair { .. }) {
                    busy[model.buildings[i].cell_id.0 as usize] += 1;
                }
            }
            for (cell, &budget) in env.budget.per_cell.iter().enumerate() {
                assert_eq!(out.next_state.free_rus[cell] + busy[cell], budget);
            }
            state = out.next_state;
            epochs += 1;
            assert!(epochs < 1000, "did not terminate");
        }
        assert_eq!(housed_population(&state, &model).total(), full.total());
        assert_eq!(housed_population(&state, &model).total(), model.total_population);
    }
}
