//! Solver correctness against the exact solver on small instances.

use recovery_core::community::{AgeCounts, Building, BuildingId, CellId, CommunityModel, GridCell};
use recovery_core::damage::{DamageState, ScenarioRealization};
use recovery_core::mdp::{RecoveryEnv, RewardTiming};
use recovery_core::rng::Stream;
use recovery_core::solver::{
    BasePolicy, DurationModel, ExactDp, RolloutConfig, SolverContext,
};

/// Builds a model with the given occupant counts per cell.
fn grid_model(cells: &[Vec<u32>]) -> CommunityModel {
    let mut buildings = Vec::new();
    let mut grid = Vec::new();
    for (c, occupants) in cells.iter().enumerate() {
        let mut ids = Vec::new();
        for &occ in occupants {
            let id = BuildingId(buildings.len() as u32);
            ids.push(id);
            buildings.push(Building {
                id,
                cell_id: CellId(c as u32),
                occupants: AgeCounts { children: 0, adults: occ, seniors: 0 },
                occupied: occ > 0,
                archetype_id: 0,
            });
        }
        grid.push(GridCell {
            cell_id: CellId(c as u32),
            centroid: (c as f64, 0.0),
            building_ids: ids,
        });
    }
    CommunityModel {
        total_population: buildings.iter().map(|b| b.occupants.total()).sum(),
        cells: grid,
        buildings,
        age_fractions: [0.0, 1.0, 0.0],
    }
}

struct TinyInstance {
    model: CommunityModel,
    realization: ScenarioRealization,
    supports: Vec<Vec<(u32, f64)>>,
}

/// Random instance with at most `max_buildings` buildings over one or two
/// cells; deterministic durations when `stochastic` is false, otherwise
/// two-point supports.
fn random_tiny(stream: &mut Stream, max_buildings: usize, stochastic: bool) -> TinyInstance {
    let n = 2 + stream.next_index(max_buildings - 1);
    let two_cells = n >= 2 && stream.next_f64() < 0.5;
    let mut cells: Vec<Vec<u32>> = if two_cells { vec![vec![], vec![]] } else { vec![vec![]] };
    for _ in 0..n {
        let occ = 5 + stream.next_index(60) as u32;
        let c = stream.next_index(cells.len());
        cells[c].push(occ);
    }
    let model = grid_model(&cells);
    let n = model.buildings.len();

    let mut damage_states = Vec::with_capacity(n);
    let mut durations = Vec::with_capacity(n);
    let mut supports = Vec::with_capacity(n);
    for _ in 0..n {
        // Keep everything damaged so the instances stay interesting.
        damage_states.push(DamageState::Moderate);
        let d = 5 + stream.next_index(40) as u32;
        if stochastic {
            let d2 = d + 1 + stream.next_index(30) as u32;
            supports.push(vec![(d, 0.5), (d2, 0.5)]);
            durations.push(if stream.next_f64() < 0.5 { d } else { d2 });
        } else {
            supports.push(vec![(d, 1.0)]);
            durations.push(d);
        }
    }
    TinyInstance {
        realization: ScenarioRealization {
            im: vec![0.5; n],
            damage_states,
            durations_days: durations,
        },
        model,
        supports,
    }
}

/// On deterministic tiny instances the rollout decision must achieve the
/// optimal Q at (nearly) every decision point, and the Monte Carlo
/// estimate must equal the exact base-policy Q.
#[test]
fn rollout_matches_exact_dp_on_tiny_instances() {
    let mut gen = Stream::new(0x0D15_EA5E);
    let mut decision_points = 0u32;
    let mut optimal_hits = 0u32;
    for case in 0..24 {
        let instance = random_tiny(&mut gen, 4, false);
        let env = RecoveryEnv::new(&instance.model, &instance.realization, RewardTiming::Cumulative);
        let durations = DurationModel::discrete(instance.supports.clone()).unwrap();
        let horizon = instance.model.buildings.len() as u32 + 2;
        let config = RolloutConfig {
            horizon: Some(horizon),
            n_mc_min: 2,
            n_mc_max: 8,
            ..RolloutConfig::default()
        };
        let mut ctx = SolverContext::new(&env, durations.clone(), config.clone()).unwrap();
        let mut dp = ExactDp::new(&env, &durations, config.gamma, horizon);

        let mut state = env.initial_state();
        let run_stream = Stream::new(1000 + case);
        let mut epoch = 0u64;
        while !state.is_terminal() {
            let action = ctx.rollout_action(&state, &run_stream.derive(epoch));
            let v_star = dp.value(&state).unwrap();
            let q_rollout = dp.q_value(&state, &action).unwrap();
            decision_points += 1;
            if q_rollout >= v_star - 1e-9 {
                optimal_hits += 1;
            }
            // The estimator is exact in the zero-variance case.
            let est = ctx
                .estimate_q(&state, &action, &run_stream.derive(epoch).derive(77))
                .unwrap();
            let exact = dp
                .policy_q(&state, &action, BasePolicy::GreedyOccupancyRate, horizon)
                .unwrap();
            assert!(
                (est.q_hat - exact).abs() < 1e-9,
                "case {case}: estimate {} vs exact {exact}",
                est.q_hat
            );
            assert_eq!(est.cov, 0.0);
            state = env.step(&state, &action).unwrap().next_state;
            epoch += 1;
        }
        assert!(dp.bellman_residual().unwrap() < 1e-9);
    }
    let hit_rate = optimal_hits as f64 / decision_points as f64;
    assert!(
        hit_rate >= 0.95,
        "rollout optimal at {optimal_hits}/{decision_points} decision points"
    );
}

/// With two-point duration supports the estimator must agree with exact
/// enumeration to within Monte Carlo error: the aggregate of repeated
/// estimates is z-tested against the enumerated Q.
#[test]
fn estimate_q_unbiased_on_stochastic_instance() {
    let mut gen = Stream::new(0xBEEF);
    for case in 0..6 {
        let instance = random_tiny(&mut gen, 3, true);
        let env = RecoveryEnv::new(&instance.model, &instance.realization, RewardTiming::Cumulative);
        let durations = DurationModel::discrete(instance.supports.clone()).unwrap();
        let horizon = instance.model.buildings.len() as u32 + 2;
        let config = RolloutConfig {
            horizon: Some(horizon),
            n_mc_min: 64,
            n_mc_max: 64,
            dispersion_target: 1e-9, // force the full budget
            ..RolloutConfig::default()
        };
        let mut ctx = SolverContext::new(&env, durations.clone(), config.clone()).unwrap();
        let dp = ExactDp::new(&env, &durations, config.gamma, horizon);

        let state = env.initial_state();
        let action = ctx.base_action(BasePolicy::GreedyOccupancyRate, &state, &Stream::new(0));
        let exact = dp
            .policy_q(&state, &action, BasePolicy::GreedyOccupancyRate, horizon)
            .unwrap();

        let reps = 30u64;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for rep in 0..reps {
            let est = ctx
                .estimate_q(&state, &action, &Stream::new(40_000 + 100 * case + rep))
                .unwrap();
            sum += est.q_hat;
            sumsq += est.q_hat * est.q_hat;
        }
        let mean = sum / reps as f64;
        let var = ((sumsq - reps as f64 * mean * mean) / (reps as f64 - 1.0)).max(0.0);
        let se = (var / reps as f64).sqrt().max(1e-12);
        let z = (mean - exact) / se;
        assert!(
            z.abs() < 3.5,
            "case {case}: estimator mean {mean} vs exact {exact}, z = {z}"
        );
    }
}

/// Dispersion control: every estimate that stops under the trajectory cap
/// reports a CoV at or below the target.
#[test]
fn dispersion_control_holds() {
    let mut gen = Stream::new(0xFACE);
    let instance = random_tiny(&mut gen, 4, true);
    let env = RecoveryEnv::new(&instance.model, &instance.realization, RewardTiming::Cumulative);
    let durations = DurationModel::discrete(instance.supports.clone()).unwrap();
    let config = RolloutConfig {
        n_mc_min: 4,
        n_mc_max: 256,
        ..RolloutConfig::default()
    };
    let mut ctx = SolverContext::new(&env, durations, config.clone()).unwrap();
    let mut state = env.initial_state();
    let run_stream = Stream::new(5);
    let mut epoch = 0u64;
    while !state.is_terminal() {
        let action = ctx.rollout_action(&state, &run_stream.derive(epoch));
        state = env.step(&state, &action).unwrap().next_state;
        epoch += 1;
    }
    let stats = ctx.take_stats();
    assert!(stats.q_calls > 0);
    assert!(
        stats.max_cov_converged <= config.dispersion_target,
        "recorded CoV {} above target",
        stats.max_cov_converged
    );
}
