//! Damage assessment: lognormal fragility curves map intensity measures to
//! sampled damage states; a per-state repair-time model samples stochastic
//! restoration durations (whole days, minimum one).
//!
//! Damage states follow the four-level naming Minor / Moderate / Major /
//! Collapse plus None. These correspond one-to-one with the HAZUS levels
//! Slight / Moderate / Extensive / Complete.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::community::{BuildingId, CommunityModel};
use crate::hazard::IntensityField;
use crate::math;
use crate::rng::Stream;

/// Structural damage severity, totally ordered.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum DamageState {
    None = 0,
    Minor = 1,
    Moderate = 2,
    Major = 3,
    Collapse = 4,
}

impl DamageState {
    /// The four damaged levels, mildest first.
    pub const DAMAGED: [DamageState; 4] = [
        DamageState::Minor,
        DamageState::Moderate,
        DamageState::Major,
        DamageState::Collapse,
    ];

    pub fn is_damaged(self) -> bool {
        self != DamageState::None
    }

    /// Index into per-damaged-state parameter arrays (Minor = 0).
    pub fn severity_index(self) -> Option<usize> {
        match self {
            DamageState::None => None,
            s => Some(s as usize - 1),
        }
    }
}

impl fmt::Display for DamageState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            DamageState::None => "none",
            DamageState::Minor => "minor",
            DamageState::Moderate => "moderate",
            DamageState::Major => "major",
            DamageState::Collapse => "collapse",
        };
        f.write_str(name)
    }
}

/// Lognormal fragility: median capacity `theta` (g) and dispersion `beta`
/// (ln units) per damaged state, mildest first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FragilityCurve {
    pub theta: [f64; 4],
    pub beta: [f64; 4],
}

impl Default for FragilityCurve {
    fn default() -> Self {
        FragilityCurve {
            theta: [0.25, 0.5, 0.9, 1.6],
            beta: [0.6, 0.6, 0.6, 0.6],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepairDistribution {
    Deterministic,
    Lognormal,
    Exponential,
}

/// Expected repair duration and variability per damaged state, mildest
/// first. Undamaged buildings need no repair (duration 0 by definition).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepairTimeModel {
    pub mean_days: [f64; 4],
    /// Coefficient of variation per state; ignored by `Deterministic` and
    /// `Exponential` (the latter's CoV is fixed at 1).
    pub dispersion: [f64; 4],
    pub distribution: RepairDistribution,
}

impl Default for RepairTimeModel {
    fn default() -> Self {
        RepairTimeModel {
            mean_days: [5.0, 60.0, 180.0, 360.0],
            dispersion: [0.5, 0.5, 0.5, 0.5],
            distribution: RepairDistribution::Lognormal,
        }
    }
}

/// A fragility curve plus repair-time model for one building class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Archetype {
    pub name: String,
    pub fragility: FragilityCurve,
    pub repair: RepairTimeModel,
}

/// All building classes referenced by `Building::archetype_id`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeCatalog {
    pub archetypes: Vec<Archetype>,
}

impl Default for ArchetypeCatalog {
    /// A single generic residential archetype.
    fn default() -> Self {
        ArchetypeCatalog {
            archetypes: alloc::vec![Archetype {
                name: String::from("residential"),
                fragility: FragilityCurve::default(),
                repair: RepairTimeModel::default(),
            }],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DamageError {
    NonPositiveIm(f64),
    UndamagedHasNoRepair,
    BadCurve(String),
    BadRepairModel(String),
    UnknownArchetype { building: BuildingId, archetype_id: u32 },
    FieldSizeMismatch { field: usize, buildings: usize },
    EmptyCatalog,
}

impl fmt::Display for DamageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DamageError::NonPositiveIm(im) => write!(f, "intensity measure must be > 0, got {im}"),
            DamageError::UndamagedHasNoRepair => {
                write!(f, "repair time is undefined for damage state none")
            }
            DamageError::BadCurve(msg) => write!(f, "invalid fragility curve: {msg}"),
            DamageError::BadRepairModel(msg) => write!(f, "invalid repair-time model: {msg}"),
            DamageError::UnknownArchetype { building, archetype_id } => write!(
                f,
                "building {building} references archetype {archetype_id} not in catalog"
            ),
            DamageError::FieldSizeMismatch { field, buildings } => write!(
                f,
                "intensity field covers {field} buildings, model has {buildings}"
            ),
            DamageError::EmptyCatalog => write!(f, "archetype catalog is empty"),
        }
    }
}

impl core::error::Error for DamageError {}

impl FragilityCurve {
    pub fn validate(&self) -> Result<(), DamageError> {
        for i in 0..4 {
            if !(self.theta[i] > 0.0) {
                return Err(DamageError::BadCurve(format!(
                    "theta[{i}] must be > 0, got {}",
                    self.theta[i]
                )));
            }
            if !(self.beta[i] > 0.0) {
                return Err(DamageError::BadCurve(format!(
                    "beta[{i}] must be > 0, got {}",
                    self.beta[i]
                )));
            }
        }
        for i in 1..4 {
            if self.theta[i] <= self.theta[i - 1] {
                return Err(DamageError::BadCurve(format!(
                    "theta must be strictly increasing; theta[{}]={} >= theta[{i}]={}",
                    i - 1,
                    self.theta[i - 1],
                    self.theta[i]
                )));
            }
        }
        Ok(())
    }
}

impl RepairTimeModel {
    pub fn validate(&self) -> Result<(), DamageError> {
        for i in 0..4 {
            if !(self.mean_days[i] > 0.0) {
                return Err(DamageError::BadRepairModel(format!(
                    "mean_days[{i}] must be > 0, got {}",
                    self.mean_days[i]
                )));
            }
            if !(self.dispersion[i] >= 0.0) {
                return Err(DamageError::BadRepairModel(format!(
                    "dispersion[{i}] must be >= 0, got {}",
                    self.dispersion[i]
                )));
            }
        }
        for i in 1..4 {
            if self.mean_days[i] <= self.mean_days[i - 1] {
                return Err(DamageError::BadRepairModel(format!(
                    "mean_days must be strictly increasing; [{}]={} >= [{i}]={}",
                    i - 1,
                    self.mean_days[i - 1],
                    self.mean_days[i]
                )));
            }
        }
        Ok(())
    }

    /// Expected duration in days for a damaged state.
    pub fn mean_for(&self, state: DamageState) -> f64 {
        match state.severity_index() {
            Some(i) => self.mean_days[i],
            None => 0.0,
        }
    }
}

impl ArchetypeCatalog {
    pub fn validate(&self) -> Result<(), DamageError> {
        if self.archetypes.is_empty() {
            return Err(DamageError::EmptyCatalog);
        }
        for a in &self.archetypes {
            a.fragility.validate()?;
            a.repair.validate()?;
        }
        Ok(())
    }

    pub fn get(&self, building: BuildingId, archetype_id: u32) -> Result<&Archetype, DamageError> {
        self.archetypes
            .get(archetype_id as usize)
            .ok_or(DamageError::UnknownArchetype {
                building,
                archetype_id,
            })
    }
}

/// P(damage >= state | im): the lognormal fragility CDF
/// `Phi(ln(im / theta) / beta)`. By convention P(>= None) = 1.
pub fn exceedance_probability(
    curve: &FragilityCurve,
    state: DamageState,
    im: f64,
) -> Result<f64, DamageError> {
    if !(im > 0.0) {
        return Err(DamageError::NonPositiveIm(im));
    }
    Ok(match state.severity_index() {
        None => 1.0,
        Some(i) => exceedance_raw(curve, i, im),
    })
}

#[inline]
fn exceedance_raw(curve: &FragilityCurve, severity: usize, im: f64) -> f64 {
    math::normal_cdf(math::ln(im / curve.theta[severity]) / curve.beta[severity])
}

/// Probability of each damage state (None..Collapse) at a given im.
///
/// These are consecutive differences of the exceedance probabilities,
/// taken over the monotone envelope from the severe end so they stay
/// nonnegative even for curves whose unequal dispersions cross; for
/// equal-dispersion curves the envelope is the raw exceedance. Matches the
/// distribution realized by [`sample_damage_state`]. Sums to 1.
pub fn state_probabilities(curve: &FragilityCurve, im: f64) -> Result<[f64; 5], DamageError> {
    if !(im > 0.0) {
        return Err(DamageError::NonPositiveIm(im));
    }
    let mut ex = [0.0f64; 4];
    for (i, e) in ex.iter_mut().enumerate() {
        *e = exceedance_raw(curve, i, im);
    }
    for i in (0..3).rev() {
        ex[i] = ex[i].max(ex[i + 1]);
    }
    Ok([
        1.0 - ex[0],
        ex[0] - ex[1],
        ex[1] - ex[2],
        ex[2] - ex[3],
        ex[3],
    ])
}

/// Sample a damage state: draw u ~ U(0,1) and return the most severe state
/// whose exceedance probability exceeds u (None if even Minor does not).
pub fn sample_damage_state(
    curve: &FragilityCurve,
    im: f64,
    stream: &mut Stream,
) -> Result<DamageState, DamageError> {
    if !(im > 0.0) {
        return Err(DamageError::NonPositiveIm(im));
    }
    let u = stream.next_f64();
    Ok(damage_state_from_uniform(curve, im, u))
}

/// Deterministic core of the damage draw; exposed for coupling tests.
pub fn damage_state_from_uniform(curve: &FragilityCurve, im: f64, u: f64) -> DamageState {
    for severity in (0..4).rev() {
        if exceedance_raw(curve, severity, im) > u {
            return DamageState::DAMAGED[severity];
        }
    }
    DamageState::None
}

/// Sample a repair duration for a damaged state. Durations are rounded up
/// to whole days with a minimum of one day.
pub fn sample_repair_time(
    model: &RepairTimeModel,
    state: DamageState,
    stream: &mut Stream,
) -> Result<u32, DamageError> {
    let Some(severity) = state.severity_index() else {
        return Err(DamageError::UndamagedHasNoRepair);
    };
    let mean = model.mean_days[severity];
    let cov = model.dispersion[severity];
    let raw = match model.distribution {
        RepairDistribution::Deterministic => mean,
        RepairDistribution::Lognormal => {
            if cov == 0.0 {
                mean
            } else {
                // Parameterized so the sampled mean is `mean` and the
                // coefficient of variation is `cov`.
                let sigma2 = math::ln(1.0 + cov * cov);
                let mu = math::ln(mean) - 0.5 * sigma2;
                math::exp(mu + math::sqrt(sigma2) * stream.next_normal())
            }
        }
        RepairDistribution::Exponential => -mean * math::ln(stream.next_open_f64()),
    };
    Ok((math::ceil(raw) as u32).max(1))
}

/// Everything sampled about one earthquake: intensity, damage state and
/// realized repair duration per building. Durations are 0 for undamaged
/// buildings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRealization {
    pub im: Vec<f64>,
    pub damage_states: Vec<DamageState>,
    pub durations_days: Vec<u32>,
}

impl ScenarioRealization {
    pub fn n_damaged(&self) -> usize {
        self.damage_states.iter().filter(|s| s.is_damaged()).count()
    }
}

/// Sample damage states and repair durations for every building. Draws use
/// substreams keyed by building id, so the realization is independent of
/// evaluation order. Deterministic given `(field, stream)`.
pub fn realize_scenario(
    model: &CommunityModel,
    field: &IntensityField,
    catalog: &ArchetypeCatalog,
    stream: &Stream,
) -> Result<ScenarioRealization, DamageError> {
    catalog.validate()?;
    if field.im.len() != model.buildings.len() {
        return Err(DamageError::FieldSizeMismatch {
            field: field.im.len(),
            buildings: model.buildings.len(),
        });
    }
    let mut damage_states = Vec::with_capacity(model.buildings.len());
    let mut durations = Vec::with_capacity(model.buildings.len());
    for b in &model.buildings {
        let archetype = catalog.get(b.id, b.archetype_id)?;
        let mut sub = stream.derive(b.id.0 as u64);
        let state = sample_damage_state(&archetype.fragility, field.im[b.id.0 as usize], &mut sub)?;
        let duration = if state.is_damaged() {
            sample_repair_time(&archetype.repair, state, &mut sub)?
        } else {
            0
        };
        damage_states.push(state);
        durations.push(duration);
    }
    Ok(ScenarioRealization {
        im: field.im.clone(),
        damage_states,
        durations_days: durations,
    })
}
