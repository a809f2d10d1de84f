//! What the planner believes about repair durations.
//!
//! The environment pays out the durations realized in the scenario; the
//! planner only ever sees the repair-time *model*, so its rollout
//! simulations resample durations every trajectory. A finite-support
//! variant exists so the exact solver can enumerate outcomes and so
//! Monte Carlo estimates can be checked against exact expectations.

use alloc::vec;
use alloc::vec::Vec;

use crate::community::{BuildingId, CommunityModel};
use crate::damage::{ArchetypeCatalog, DamageError, RepairDistribution, ScenarioRealization};
use crate::math;
use crate::rng::Stream;

use super::SolverError;

#[derive(Clone, Debug)]
enum DurKind {
    /// Undamaged; never sampled.
    NoRepair,
    Fixed(u32),
    LogNormal { mu: f64, sigma: f64 },
    Exponential { mean: f64 },
    Discrete(Vec<(u32, f64)>),
}

/// Per-building planner-side duration distributions.
#[derive(Clone, Debug)]
pub struct DurationModel {
    kinds: Vec<DurKind>,
    expected: Vec<f64>,
}

impl DurationModel {
    /// Planner model induced by the catalog and the realized damage states.
    pub fn from_catalog(
        model: &CommunityModel,
        realization: &ScenarioRealization,
        catalog: &ArchetypeCatalog,
    ) -> Result<Self, DamageError> {
        catalog.validate()?;
        let mut kinds = Vec::with_capacity(model.buildings.len());
        let mut expected = Vec::with_capacity(model.buildings.len());
        for b in &model.buildings {
            let state = realization.damage_states[b.id.0 as usize];
            let Some(severity) = state.severity_index() else {
                kinds.push(DurKind::NoRepair);
                expected.push(0.0);
                continue;
            };
            let repair = &catalog.get(b.id, b.archetype_id)?.repair;
            let mean = repair.mean_days[severity];
            let cov = repair.dispersion[severity];
            let kind = match repair.distribution {
                RepairDistribution::Deterministic => {
                    fixed_from_mean(mean)
                }
                RepairDistribution::Lognormal if cov == 0.0 => fixed_from_mean(mean),
                RepairDistribution::Lognormal => {
                    let sigma2 = math::ln(1.0 + cov * cov);
                    DurKind::LogNormal {
                        mu: math::ln(mean) - 0.5 * sigma2,
                        sigma: math::sqrt(sigma2),
                    }
                }
                RepairDistribution::Exponential => DurKind::Exponential { mean },
            };
            kinds.push(kind);
            expected.push(mean);
        }
        Ok(DurationModel { kinds, expected })
    }

    /// Explicit finite support per building: `(days, probability)` pairs.
    /// Undamaged buildings pass an empty list.
    pub fn discrete(supports: Vec<Vec<(u32, f64)>>) -> Result<Self, SolverError> {
        let mut kinds = Vec::with_capacity(supports.len());
        let mut expected = Vec::with_capacity(supports.len());
        for (i, support) in supports.into_iter().enumerate() {
            if support.is_empty() {
                kinds.push(DurKind::NoRepair);
                expected.push(0.0);
                continue;
            }
            let total: f64 = support.iter().map(|&(_, p)| p).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(SolverError::BadDurationSupport {
                    building: BuildingId(i as u32),
                    reason: "probabilities must sum to 1",
                });
            }
            if support.iter().any(|&(d, p)| d == 0 || p < 0.0) {
                return Err(SolverError::BadDurationSupport {
                    building: BuildingId(i as u32),
                    reason: "durations must be >= 1 day with nonnegative probability",
                });
            }
            let mean = support.iter().map(|&(d, p)| d as f64 * p).sum();
            kinds.push(DurKind::Discrete(support));
            expected.push(mean);
        }
        Ok(DurationModel { kinds, expected })
    }

    pub fn n_buildings(&self) -> usize {
        self.kinds.len()
    }

    /// Expected duration in days; 0 for undamaged buildings.
    #[inline]
    pub fn expected_days(&self, b: BuildingId) -> f64 {
        self.expected[b.0 as usize]
    }

    /// Draw one duration (whole days, at least 1).
    #[inline]
    pub fn sample(&self, b: BuildingId, stream: &mut Stream) -> u32 {
        match &self.kinds[b.0 as usize] {
            DurKind::NoRepair => {
                debug_assert!(false, "sampled duration for undamaged building {b}");
                1
            }
            DurKind::Fixed(d) => *d,
            DurKind::LogNormal { mu, sigma } => {
                let raw = math::exp(mu + sigma * stream.next_normal());
                (math::ceil(raw) as u32).max(1)
            }
            DurKind::Exponential { mean } => {
                let raw = -mean * math::ln(stream.next_open_f64());
                (math::ceil(raw) as u32).max(1)
            }
            DurKind::Discrete(support) => {
                let mut u = stream.next_f64();
                for &(d, p) in support {
                    if u < p {
                        return d;
                    }
                    u -= p;
                }
                support[support.len() - 1].0
            }
        }
    }

    /// All possible outcomes for one building, or an error if the
    /// distribution is continuous (the exact solver needs finite support).
    pub fn enumerate(&self, b: BuildingId) -> Result<Vec<(u32, f64)>, SolverError> {
        match &self.kinds[b.0 as usize] {
            DurKind::NoRepair => Err(SolverError::BadDurationSupport {
                building: b,
                reason: "building is undamaged",
            }),
            DurKind::Fixed(d) => Ok(vec![(*d, 1.0)]),
            DurKind::Discrete(support) => Ok(support.clone()),
            DurKind::LogNormal { .. } | DurKind::Exponential { .. } => {
                Err(SolverError::ContinuousDurations(b))
            }
        }
    }
}

fn fixed_from_mean(mean: f64) -> DurKind {
    DurKind::Fixed((math::ceil(mean) as u32).max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::community::{generate_testbed, TestbedConfig};
    use crate::damage::{DamageState, RepairTimeModel};

    #[test]
    fn catalog_model_matches_repair_means() {
        let config = TestbedConfig {
            grid_rows: 1,
            grid_cols: 1,
            n_buildings: 3,
            total_population: 9,
            occupancy_rate: 1.0,
            ..TestbedConfig::default()
        };
        let model = generate_testbed(&config, &Stream::new(1)).unwrap();
        let catalog = ArchetypeCatalog::default();
        let realization = ScenarioRealization {
            im: vec![0.5; 3],
            damage_states: vec![DamageState::None, DamageState::Minor, DamageState::Collapse],
            durations_days: vec![0, 4, 300],
        };
        let durations = DurationModel::from_catalog(&model, &realization, &catalog).unwrap();
        let repair = RepairTimeModel::default();
        assert_eq!(durations.expected_days(BuildingId(0)), 0.0);
        assert_eq!(durations.expected_days(BuildingId(1)), repair.mean_days[0]);
        assert_eq!(durations.expected_days(BuildingId(2)), repair.mean_days[3]);
    }

    #[test]
    fn discrete_sampling_matches_support() {
        let durations = DurationModel::discrete(vec![vec![(2, 0.25), (10, 0.75)]]).unwrap();
        let mut stream = Stream::new(3);
        let n = 200_000;
        let mut short = 0u32;
        for _ in 0..n {
            match durations.sample(BuildingId(0), &mut stream) {
                2 => short += 1,
                10 => {}
                other => panic!("sampled {other}, not in support"),
            }
        }
        let freq = short as f64 / n as f64;
        assert!((freq - 0.25).abs() < 0.005, "freq {freq}");
        assert_eq!(durations.expected_days(BuildingId(0)), 8.0);
        assert_eq!(
            durations.enumerate(BuildingId(0)).unwrap(),
            vec![(2, 0.25), (10, 0.75)]
        );
    }

    #[test]
    fn discrete_rejects_bad_supports() {
        assert!(DurationModel::discrete(vec![vec![(2, 0.5), (3, 0.4)]]).is_err());
        assert!(DurationModel::discrete(vec![vec![(0, 1.0)]]).is_err());
    }
}
