//! Scenario runner: community -> hazard -> damage -> policies -> files.
//!
//! Replications are independent: each gets its own substreams derived
//! from the master seed, workers only pick replication indices off a
//! counter, and all files are written by the parent in replication order —
//! so output bytes do not depend on the worker count.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use recovery_core::community::{generate_testbed, CommunityModel};
use recovery_core::damage::{realize_scenario, ArchetypeCatalog, ScenarioRealization};
use recovery_core::hazard::sample_intensity_field;
use recovery_core::mdp::RecoveryEnv;
use recovery_core::rng::{domain, Stream};
use recovery_core::solver::{run_policy_with, PolicyKind, PolicyTrace, SolverContext};

use crate::config::{resolve, validate_config, CommunitySource, PolicySelection, RunConfig};
use crate::formats::{
    self, CsvFile, RealizationFile, RealizationRecord, SeedRecord, GRID_TIMELINE_HEADER,
    RECOVERY_CURVE_HEADER,
};

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub replications: Option<u32>,
    pub policy: Option<PolicySelection>,
    pub threads: Option<usize>,
    pub replay: Option<PathBuf>,
}

struct RepResult {
    replication: u32,
    seeds: SeedRecord,
    eta: f64,
    realization: ScenarioRealization,
    total_rus: u32,
    horizon: u32,
    base: Option<PolicyTrace>,
    rollout: Option<PolicyTrace>,
}

/// Load a config, resolve its community, and run the whole experiment.
/// Returns the output directory.
pub fn run(config_path: &Path, opts: &RunOptions) -> Result<PathBuf> {
    let started = Instant::now();
    let mut config = RunConfig::load(config_path).context("config stage failed")?;
    if let Some(seed) = opts.seed {
        config.master_seed = seed;
    }
    if let Some(out) = &opts.out_dir {
        config.outputs = out.clone();
    }
    if let Some(reps) = opts.replications {
        config.replications = reps;
    }
    if let Some(policy) = opts.policy {
        config.policy = policy;
    }
    let config_dir = config_path.parent().unwrap_or(Path::new(".")).to_path_buf();

    let violations = validate_config(&config, &config_dir);
    if !violations.is_empty() {
        bail!("config stage failed: {}", violations.join("; "));
    }

    let master = Stream::new(config.master_seed);
    let model = load_model(&config, &config_dir, &master).context("community stage failed")?;
    let catalog_path = resolve(&config_dir, config.catalog.as_ref().expect("validated above"));
    let catalog = formats::load_catalog(&catalog_path).context("config stage failed")?;

    let inputs = match &opts.replay {
        None => (0..config.replications)
            .map(|r| fresh_inputs(r, &config, &master))
            .collect::<Vec<_>>(),
        Some(path) => replay_inputs(path, &model).context("config stage failed")?,
    };

    let results = run_replications(&config, &model, &catalog, inputs, opts.threads)?;

    write_outputs(&config, &model, &results).context("output stage failed")?;
    eprintln!(
        "run complete: {} replication(s), {} -> {} in {:.1}s",
        results.len(),
        config_path.display(),
        config.outputs.display(),
        started.elapsed().as_secs_f64()
    );
    Ok(config.outputs.clone())
}

/// Resolve the community once per run; every replication shares it.
pub fn load_model(config: &RunConfig, config_dir: &Path, master: &Stream) -> Result<CommunityModel> {
    match &config.community {
        CommunitySource::Generate(testbed) => {
            generate_testbed(testbed, &master.derive(domain::COMMUNITY))
                .map_err(|e| anyhow!("{e}"))
        }
        CommunitySource::Load(path) => formats::load_community(&resolve(config_dir, path)),
    }
}

/// Per-replication environment inputs: either sampled fresh or replayed.
struct RepInputs {
    replication: u32,
    seeds: SeedRecord,
    /// None: sample hazard and damage from the seeds. Some: replay.
    recorded: Option<(f64, ScenarioRealization)>,
}

fn fresh_inputs(r: u32, config: &RunConfig, master: &Stream) -> RepInputs {
    let rep_stream = master.derive(domain::REPLICATION).derive(r as u64);
    let hazard = match config.scenario.seed {
        Some(s) => Stream::new(s).derive(r as u64),
        None => rep_stream.derive(domain::HAZARD),
    };
    let damage = rep_stream.derive(domain::DAMAGE);
    let solver = match config.solver.seed {
        Some(s) => Stream::new(s).derive(r as u64),
        None => rep_stream.derive(domain::SOLVER),
    };
    RepInputs {
        replication: r,
        seeds: SeedRecord {
            hazard: hazard.state(),
            damage: damage.state(),
            solver_base: solver.derive(0).state(),
            solver_rollout: solver.derive(1).state(),
        },
        recorded: None,
    }
}

fn replay_inputs(path: &Path, model: &CommunityModel) -> Result<Vec<RepInputs>> {
    let file = formats::load_realization(path)?;
    if file.n_buildings as usize != model.n_buildings() {
        bail!(
            "realization file covers {} buildings but the community has {}",
            file.n_buildings,
            model.n_buildings()
        );
    }
    Ok(file
        .replications
        .into_iter()
        .map(|record| RepInputs {
            replication: record.replication,
            seeds: record.seeds,
            recorded: Some((record.eta, record.to_scenario_realization())),
        })
        .collect())
}

fn run_replications(
    config: &RunConfig,
    model: &CommunityModel,
    catalog: &ArchetypeCatalog,
    inputs: Vec<RepInputs>,
    threads: Option<usize>,
) -> Result<Vec<RepResult>> {
    let n = inputs.len();
    let threads = threads
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|p| p.get())
                .unwrap_or(1)
        })
        .clamp(1, n.max(1));

    if threads <= 1 || n <= 1 {
        return inputs
            .into_iter()
            .map(|input| simulate_replication(config, model, catalog, input))
            .collect();
    }

    let slots: Vec<Mutex<Option<Result<RepResult>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let inputs: Vec<Mutex<Option<RepInputs>>> =
        inputs.into_iter().map(|i| Mutex::new(Some(i))).collect();
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let input = inputs[i].lock().unwrap().take().expect("input taken once");
                let result = simulate_replication(config, model, catalog, input);
                *slots[i].lock().unwrap() = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("worker filled every slot"))
        .collect()
}

fn simulate_replication(
    config: &RunConfig,
    model: &CommunityModel,
    catalog: &ArchetypeCatalog,
    input: RepInputs,
) -> Result<RepResult> {
    let r = input.replication;
    let (eta, realization) = match input.recorded {
        Some(recorded) => recorded,
        None => {
            let scenario = config.scenario.to_core();
            let field = sample_intensity_field(
                model,
                &scenario,
                &Stream::from_state(input.seeds.hazard),
            )
            .with_context(|| format!("hazard stage failed (replication {r})"))?;
            let realization = realize_scenario(
                model,
                &field,
                catalog,
                &Stream::from_state(input.seeds.damage),
            )
            .with_context(|| format!("hazard stage failed (replication {r})"))?;
            (field.eta, realization)
        }
    };

    let (base, rollout, horizon, total_rus) = {
        let env = RecoveryEnv::new(model, &realization, config.solver.reward_timing);
        let rollout_config = config.solver.to_core();
        let total_rus = env.budget.total();
        let mut horizon = 0;

        let mut run_one = |kind: PolicyKind, seed_state: u64| -> Result<PolicyTrace> {
            let mut ctx = SolverContext::from_catalog(&env, catalog, rollout_config.clone())
                .map_err(|e| anyhow!("{e}"))
                .with_context(|| format!("solve stage failed (replication {r})"))?;
            horizon = ctx.horizon();
            run_policy_with(&mut ctx, kind, &Stream::from_state(seed_state))
                .map_err(|e| anyhow!("{e}"))
                .with_context(|| format!("solve stage failed (replication {r})"))
        };

        let base = if config.policy.runs_base() {
            Some(run_one(PolicyKind::Base, input.seeds.solver_base)?)
        } else {
            None
        };
        let rollout = if config.policy.runs_rollout() {
            Some(run_one(PolicyKind::Rollout, input.seeds.solver_rollout)?)
        } else {
            None
        };
        (base, rollout, horizon, total_rus)
    };

    Ok(RepResult {
        replication: r,
        seeds: input.seeds,
        eta,
        total_rus,
        realization,
        horizon,
        base,
        rollout,
    })
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    master_seed: u64,
    replications: u32,
    policies: Vec<&'static str>,
    gamma: f64,
    reward_timing: recovery_core::mdp::RewardTiming,
    checkpoint_days: &'a [u64],
    per_replication: Vec<RepSummary>,
    aggregate: Aggregate,
}

#[derive(Serialize)]
struct RepSummary {
    replication: u32,
    seeds: SeedRecord,
    damaged_buildings: u32,
    total_rus: u32,
    horizon: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    base: Option<PolicySummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rollout: Option<PolicySummary>,
}

#[derive(Serialize)]
struct PolicySummary {
    discounted_return: f64,
    total_recovery_days: u64,
    epochs: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_mc: Option<NmcStats>,
}

#[derive(Serialize)]
struct NmcStats {
    q_calls: u64,
    trajectories: u64,
    mean_trajectories_per_call: f64,
    capped_calls: u64,
    max_cov_converged: f64,
    singleton_commits: u64,
}

#[derive(Serialize)]
struct Aggregate {
    #[serde(skip_serializing_if = "Option::is_none")]
    base: Option<AggregatePolicy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rollout: Option<AggregatePolicy>,
}

#[derive(Serialize)]
struct AggregatePolicy {
    mean_discounted_return: f64,
    mean_total_recovery_days: f64,
}

fn policy_summary(trace: &PolicyTrace, with_nmc: bool) -> PolicySummary {
    PolicySummary {
        discounted_return: trace.discounted_return,
        total_recovery_days: trace.total_days,
        epochs: trace.epochs.len() as u32 - 1,
        n_mc: with_nmc.then(|| NmcStats {
            q_calls: trace.stats.q_calls,
            trajectories: trace.stats.trajectories,
            mean_trajectories_per_call: trace.stats.mean_trajectories_per_call(),
            capped_calls: trace.stats.capped_calls,
            max_cov_converged: trace.stats.max_cov_converged,
            singleton_commits: trace.stats.singleton_commits,
        }),
    }
}

fn aggregate_policy(results: &[RepResult], pick: fn(&RepResult) -> Option<&PolicyTrace>) -> Option<AggregatePolicy> {
    let traces: Vec<&PolicyTrace> = results.iter().filter_map(pick).collect();
    if traces.is_empty() {
        return None;
    }
    let n = traces.len() as f64;
    Some(AggregatePolicy {
        mean_discounted_return: traces.iter().map(|t| t.discounted_return).sum::<f64>() / n,
        mean_total_recovery_days: traces.iter().map(|t| t.total_days as f64).sum::<f64>() / n,
    })
}

fn write_outputs(config: &RunConfig, model: &CommunityModel, results: &[RepResult]) -> Result<()> {
    let out = &config.outputs;
    std::fs::create_dir_all(out)?;

    // realization.json
    let realization = RealizationFile {
        master_seed: config.master_seed,
        magnitude: config.scenario.magnitude,
        epicenter: config.scenario.epicenter,
        n_buildings: model.n_buildings() as u32,
        replications: results
            .iter()
            .map(|r| RealizationRecord {
                replication: r.replication,
                seeds: r.seeds,
                eta: r.eta,
                im: r.realization.im.clone(),
                damage_states: r.realization.damage_states.clone(),
                durations_days: r.realization.durations_days.clone(),
            })
            .collect(),
    };
    formats::write_json_pretty(&realization, &out.join("realization.json"))?;

    // summary.json
    let mut policies = Vec::new();
    if config.policy.runs_base() {
        policies.push("base");
    }
    if config.policy.runs_rollout() {
        policies.push("rollout");
    }
    let summary = SummaryFile {
        master_seed: config.master_seed,
        replications: results.len() as u32,
        policies,
        gamma: config.solver.gamma,
        reward_timing: config.solver.reward_timing,
        checkpoint_days: &config.checkpoint_days,
        per_replication: results
            .iter()
            .map(|r| RepSummary {
                replication: r.replication,
                seeds: r.seeds,
                damaged_buildings: r.realization.n_damaged() as u32,
                total_rus: r.total_rus,
                horizon: r.horizon,
                base: r.base.as_ref().map(|t| policy_summary(t, false)),
                rollout: r.rollout.as_ref().map(|t| policy_summary(t, true)),
            })
            .collect(),
        aggregate: Aggregate {
            base: aggregate_policy(results, |r| r.base.as_ref()),
            rollout: aggregate_policy(results, |r| r.rollout.as_ref()),
        },
    };
    formats::write_json_pretty(&summary, &out.join("summary.json"))?;

    // recovery_curve.csv
    let mut curve = CsvFile::create(&out.join("recovery_curve.csv"), RECOVERY_CURVE_HEADER)?;
    for (name, pick) in policy_picks(config) {
        for r in results {
            let Some(trace) = pick(r) else { continue };
            for row in &trace.epochs {
                curve.row(format_args!(
                    "epoch,{name},{},{},{},{},{},{},{}",
                    r.replication,
                    row.epoch,
                    row.elapsed_days,
                    row.housed_total.total(),
                    row.housed_total.children,
                    row.housed_total.adults,
                    row.housed_total.seniors
                ))?;
            }
            for &day in &config.checkpoint_days {
                let row = trace
                    .epochs
                    .iter()
                    .rev()
                    .find(|row| row.elapsed_days <= day)
                    .unwrap_or(&trace.epochs[0]);
                curve.row(format_args!(
                    "checkpoint,{name},{},{},{},{},{},{},{}",
                    r.replication,
                    row.epoch,
                    day,
                    row.housed_total.total(),
                    row.housed_total.children,
                    row.housed_total.adults,
                    row.housed_total.seniors
                ))?;
            }
        }
    }
    curve.finish()?;

    // grid_timeline.csv
    let mut grid = CsvFile::create(&out.join("grid_timeline.csv"), GRID_TIMELINE_HEADER)?;
    for (name, pick) in policy_picks(config) {
        for r in results {
            let Some(trace) = pick(r) else { continue };
            for row in &trace.epochs {
                for (cell_id, cell) in row.cells.iter().enumerate() {
                    grid.row(format_args!(
                        "{name},{},{},{},{cell_id},{},{},{}",
                        r.replication,
                        row.epoch,
                        row.elapsed_days,
                        cell.housed.total(),
                        cell.damaged_remaining,
                        cell.free_rus
                    ))?;
                }
            }
        }
    }
    grid.finish()?;
    Ok(())
}

type PolicyPick = fn(&RepResult) -> Option<&PolicyTrace>;

fn policy_picks(config: &RunConfig) -> Vec<(&'static str, PolicyPick)> {
    let mut picks: Vec<(&'static str, PolicyPick)> = Vec::new();
    if config.policy.runs_base() {
        picks.push(("base", |r| r.base.as_ref()));
    }
    if config.policy.runs_rollout() {
        picks.push(("rollout", |r| r.rollout.as_ref()));
    }
    picks
}
