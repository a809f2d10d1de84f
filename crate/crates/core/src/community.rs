//! Community data model: buildings with occupants on a grid of cells,
//! plus a seeded synthetic testbed generator.
//!
//! The generator reproduces aggregate statistics (building count, total
//! population, occupancy rate, age mix, per-cell density) rather than any
//! real parcel data; two calls with the same config and seed produce
//! identical models.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::rng::Stream;

/// Population age bands used throughout reporting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgeGroup {
    Children,
    Adults,
    Seniors,
}

impl AgeGroup {
    pub const ALL: [AgeGroup; 3] = [AgeGroup::Children, AgeGroup::Adults, AgeGroup::Seniors];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Person counts split by age group, ordered (children, adults, seniors).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[u32; 3]", into = "[u32; 3]")]
pub struct AgeCounts {
    pub children: u32,
    pub adults: u32,
    pub seniors: u32,
}

impl AgeCounts {
    pub fn total(&self) -> u64 {
        self.children as u64 + self.adults as u64 + self.seniors as u64
    }

    pub fn get(&self, group: AgeGroup) -> u32 {
        match group {
            AgeGroup::Children => self.children,
            AgeGroup::Adults => self.adults,
            AgeGroup::Seniors => self.seniors,
        }
    }

    pub fn add_one(&mut self, group: AgeGroup) {
        match group {
            AgeGroup::Children => self.children += 1,
            AgeGroup::Adults => self.adults += 1,
            AgeGroup::Seniors => self.seniors += 1,
        }
    }

    pub fn add(&mut self, other: &AgeCounts) {
        self.children += other.children;
        self.adults += other.adults;
        self.seniors += other.seniors;
    }
}

impl From<[u32; 3]> for AgeCounts {
    fn from(a: [u32; 3]) -> Self {
        AgeCounts {
            children: a[0],
            adults: a[1],
            seniors: a[2],
        }
    }
}

impl From<AgeCounts> for [u32; 3] {
    fn from(c: AgeCounts) -> Self {
        [c.children, c.adults, c.seniors]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BuildingId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellId(pub u32);

impl fmt::Display for BuildingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One building: where it sits, who lives in it, and which fragility
/// archetype it is assessed with. Buildings take their coordinates from
/// their cell's centroid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub id: BuildingId,
    pub cell_id: CellId,
    pub occupants: AgeCounts,
    pub occupied: bool,
    pub archetype_id: u32,
}

/// One rectangular grid cell; repair crews are budgeted per cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub cell_id: CellId,
    /// Centroid in community coordinates, km.
    pub centroid: (f64, f64),
    pub building_ids: Vec<BuildingId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommunityModel {
    pub cells: Vec<GridCell>,
    pub buildings: Vec<Building>,
    pub total_population: u64,
    /// Target fractions (children, adults, seniors); sums to 1.
    pub age_fractions: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub enum CommunityError {
    InvalidConfig(String),
    /// A building refers to a cell that does not exist.
    BadCellRef { building: BuildingId, cell: CellId },
    /// A building is missing from, duplicated in, or misplaced in the
    /// cell partition.
    BrokenPartition { building: BuildingId, detail: String },
    OccupantsInUnoccupied(BuildingId),
    PopulationMismatch { stated: u64, actual: u64 },
    BadAgeFractions { sum: f64 },
    NonContiguousIds { expected: u32, found: BuildingId },
}

impl fmt::Display for CommunityError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CommunityError::InvalidConfig(msg) => write!(f, "invalid testbed config: {msg}"),
            CommunityError::BadCellRef { building, cell } => {
                write!(f, "building {building} references nonexistent cell {cell}")
            }
            CommunityError::BrokenPartition { building, detail } => {
                write!(f, "cell partition broken at building {building}: {detail}")
            }
            CommunityError::OccupantsInUnoccupied(b) => {
                write!(f, "unoccupied building {b} has nonzero occupants")
            }
            CommunityError::PopulationMismatch { stated, actual } => {
                write!(f, "stated population {stated} but occupants sum to {actual}")
            }
            CommunityError::BadAgeFractions { sum } => {
                write!(f, "age fractions sum to {sum}, expected 1")
            }
            CommunityError::NonContiguousIds { expected, found } => {
                write!(f, "building ids must be 0..n in order; expected {expected}, found {found}")
            }
        }
    }
}

impl core::error::Error for CommunityError {}

impl CommunityModel {
    pub fn n_buildings(&self) -> usize {
        self.buildings.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn building(&self, id: BuildingId) -> &Building {
        &self.buildings[id.0 as usize]
    }

    pub fn cell(&self, id: CellId) -> &GridCell {
        &self.cells[id.0 as usize]
    }

    /// Building coordinates: the centroid of its cell.
    pub fn location(&self, id: BuildingId) -> (f64, f64) {
        self.cell(self.building(id).cell_id).centroid
    }

    /// Occupant totals by age group over the whole community.
    pub fn population_by_group(&self) -> AgeCounts {
        let mut counts = AgeCounts::default();
        for b in &self.buildings {
            counts.add(&b.occupants);
        }
        counts
    }

    /// Check every structural invariant; used on load and after generation.
    pub fn validate(&self) -> Result<(), CommunityError> {
        for (i, b) in self.buildings.iter().enumerate() {
            if b.id.0 != i as u32 {
                return Err(CommunityError::NonContiguousIds {
                    expected: i as u32,
                    found: b.id,
                });
            }
            if (b.cell_id.0 as usize) >= self.cells.len() {
                return Err(CommunityError::BadCellRef {
                    building: b.id,
                    cell: b.cell_id,
                });
            }
            if !b.occupied && b.occupants.total() > 0 {
                return Err(CommunityError::OccupantsInUnoccupied(b.id));
            }
        }
        // Partition: every building in exactly the cell that claims it.
        let mut seen = vec![false; self.buildings.len()];
        for cell in &self.cells {
            for &bid in &cell.building_ids {
                let b = self
                    .buildings
                    .get(bid.0 as usize)
                    .ok_or(CommunityError::BrokenPartition {
                        building: bid,
                        detail: String::from("cell lists unknown building"),
                    })?;
                if b.cell_id != cell.cell_id {
                    return Err(CommunityError::BrokenPartition {
                        building: bid,
                        detail: format!(
                            "listed in cell {} but assigned to cell {}",
                            cell.cell_id, b.cell_id
                        ),
                    });
                }
                if seen[bid.0 as usize] {
                    return Err(CommunityError::BrokenPartition {
                        building: bid,
                        detail: String::from("listed in more than one cell"),
                    });
                }
                seen[bid.0 as usize] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(CommunityError::BrokenPartition {
                building: BuildingId(missing as u32),
                detail: String::from("not listed in any cell"),
            });
        }
        let actual: u64 = self.buildings.iter().map(|b| b.occupants.total()).sum();
        if actual != self.total_population {
            return Err(CommunityError::PopulationMismatch {
                stated: self.total_population,
                actual,
            });
        }
        let frac_sum: f64 = self.age_fractions.iter().sum();
        if (frac_sum - 1.0).abs() > 1e-9 {
            return Err(CommunityError::BadAgeFractions { sum: frac_sum });
        }
        Ok(())
    }
}

/// Parameters for the synthetic testbed generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestbedConfig {
    pub grid_rows: u32,
    pub grid_cols: u32,
    /// Cell edge length, km.
    pub cell_size_km: f64,
    pub n_buildings: u32,
    pub total_population: u64,
    /// Fraction of buildings that are occupied, in [0, 1].
    pub occupancy_rate: f64,
    pub mean_household_size: f64,
    /// (children, adults, seniors); must sum to 1 within 1e-6.
    pub age_fractions: [f64; 3],
    /// Relative building density per cell, row-major; empty means uniform.
    pub density_weights: Vec<f64>,
    /// Sampling weights over the archetype catalog; empty means a single
    /// archetype 0.
    pub archetype_weights: Vec<f64>,
}

impl Default for TestbedConfig {
    /// Gilroy-like defaults: a 6x6 grid covering 42 km^2, 14,702 buildings,
    /// 47,905 residents, 95% occupancy, mean household 3.4, age mix
    /// 30.6% / 61% / 8.4%.
    fn default() -> Self {
        TestbedConfig {
            grid_rows: 6,
            grid_cols: 6,
            cell_size_km: 1.0801234497346435, // sqrt(42/36)
            n_buildings: 14_702,
            total_population: 47_905,
            occupancy_rate: 0.95,
            mean_household_size: 3.4,
            age_fractions: [0.306, 0.61, 0.084],
            density_weights: Vec::new(),
            archetype_weights: Vec::new(),
        }
    }
}

impl TestbedConfig {
    pub fn n_cells(&self) -> usize {
        (self.grid_rows as usize) * (self.grid_cols as usize)
    }

    /// Check the generator's preconditions without generating.
    pub fn validate(&self) -> Result<(), CommunityError> {
        let fail = |msg: String| Err(CommunityError::InvalidConfig(msg));
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return fail(String::from("grid must have at least one cell"));
        }
        if !(self.cell_size_km > 0.0) {
            return fail(format!("cell_size_km must be positive, got {}", self.cell_size_km));
        }
        if !(0.0..=1.0).contains(&self.occupancy_rate) {
            return fail(format!(
                "occupancy_rate must be in [0,1], got {}",
                self.occupancy_rate
            ));
        }
        if !(self.mean_household_size > 0.0) {
            return fail(format!(
                "mean_household_size must be positive, got {}",
                self.mean_household_size
            ));
        }
        let frac_sum: f64 = self.age_fractions.iter().sum();
        if (frac_sum - 1.0).abs() > 1e-6 || self.age_fractions.iter().any(|&x| x < 0.0) {
            return fail(format!("age_fractions must be nonnegative and sum to 1, got sum {frac_sum}"));
        }
        if !self.density_weights.is_empty() {
            if self.density_weights.len() != self.n_cells() {
                return fail(format!(
                    "density_weights has {} entries for {} cells",
                    self.density_weights.len(),
                    self.n_cells()
                ));
            }
            if self.density_weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
                return fail(String::from("density_weights must be finite and nonnegative"));
            }
            if self.density_weights.iter().sum::<f64>() <= 0.0 {
                return fail(String::from("density_weights must not sum to zero"));
            }
        }
        if self.archetype_weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return fail(String::from("archetype_weights must be finite and nonnegative"));
        }
        let occupied = occupied_count(self.n_buildings, self.occupancy_rate);
        if self.total_population > 0 && (self.n_buildings == 0 || occupied == 0) {
            return fail(format!(
                "population {} cannot be housed: no occupied buildings",
                self.total_population
            ));
        }
        Ok(())
    }
}

fn occupied_count(n_buildings: u32, rate: f64) -> u32 {
    // Round to nearest; the generator then marks exactly this many occupied.
    libm::round(n_buildings as f64 * rate) as u32
}

/// Apportion `total` items over weights by largest remainder: quotas are
/// floored, then leftover items go to the largest fractional parts (ties
/// to the lower index).
pub fn largest_remainder(total: u32, weights: &[f64]) -> Vec<u32> {
    let wsum: f64 = weights.iter().sum();
    let mut counts: Vec<u32> = Vec::with_capacity(weights.len());
    let mut fractions: Vec<(usize, f64)> = Vec::with_capacity(weights.len());
    let mut assigned = 0u32;
    for (i, &w) in weights.iter().enumerate() {
        let quota = total as f64 * (w / wsum);
        let floor = libm::floor(quota) as u32;
        counts.push(floor);
        assigned += floor;
        fractions.push((i, quota - floor as f64));
    }
    fractions.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    // Quotas sum to `total` exactly, so the leftover is < weights.len().
    let remaining = (total - assigned) as usize;
    for &(i, _) in fractions.iter().take(remaining) {
        counts[i] += 1;
    }
    counts
}

/// Generate a community whose aggregates match `config` exactly: building
/// count, occupied-building count, total population, per-cell counts from
/// the density weights. Deterministic given `(config, stream)`.
pub fn generate_testbed(
    config: &TestbedConfig,
    stream: &Stream,
) -> Result<CommunityModel, CommunityError> {
    config.validate()?;

    let n_cells = config.n_cells();
    let uniform;
    let weights: &[f64] = if config.density_weights.is_empty() {
        uniform = vec![1.0; n_cells];
        &uniform
    } else {
        &config.density_weights
    };
    let per_cell = largest_remainder(config.n_buildings, weights);

    // Grid centered at the origin so epicentral distances are symmetric.
    let s = config.cell_size_km;
    let mut cells: Vec<GridCell> = (0..n_cells)
        .map(|i| {
            let row = (i as u32) / config.grid_cols;
            let col = (i as u32) % config.grid_cols;
            GridCell {
                cell_id: CellId(i as u32),
                centroid: (
                    (col as f64 + 0.5 - config.grid_cols as f64 / 2.0) * s,
                    (row as f64 + 0.5 - config.grid_rows as f64 / 2.0) * s,
                ),
                building_ids: Vec::new(),
            }
        })
        .collect();

    let mut arch_stream = stream.derive(11);
    let mut buildings: Vec<Building> = Vec::with_capacity(config.n_buildings as usize);
    for (cell_idx, &count) in per_cell.iter().enumerate() {
        for _ in 0..count {
            let id = BuildingId(buildings.len() as u32);
            cells[cell_idx].building_ids.push(id);
            buildings.push(Building {
                id,
                cell_id: CellId(cell_idx as u32),
                occupants: AgeCounts::default(),
                occupied: false,
                archetype_id: sample_weighted(&mut arch_stream, &config.archetype_weights),
            });
        }
    }

    // Mark exactly `occupied` buildings occupied, chosen by a seeded
    // partial shuffle.
    let occupied = occupied_count(config.n_buildings, config.occupancy_rate) as usize;
    let mut order: Vec<u32> = (0..config.n_buildings).collect();
    let mut occ_stream = stream.derive(12);
    for i in 0..occupied.min(order.len().saturating_sub(1)) {
        let j = i + occ_stream.next_index(order.len() - i);
        order.swap(i, j);
    }
    let occupied_ids: Vec<u32> = order[..occupied].to_vec();
    for &b in &occupied_ids {
        buildings[b as usize].occupied = true;
    }

    // Household sizes: Poisson(mean) conditioned >= 1, then adjusted one
    // person at a time to hit the target population exactly.
    let mut hh_stream = stream.derive(13);
    let mut current: u64 = 0;
    for &b in &occupied_ids {
        let mut size = 0;
        while size == 0 {
            size = hh_stream.next_poisson(config.mean_household_size);
        }
        buildings[b as usize].occupants.adults = size; // placeholder slot, split below
        current += size as u64;
    }
    let mut adjust = stream.derive(14);
    while current != config.total_population && !occupied_ids.is_empty() {
        let pick = occupied_ids[adjust.next_index(occupied_ids.len())] as usize;
        if current < config.total_population {
            buildings[pick].occupants.adults += 1;
            current += 1;
        } else {
            let size = buildings[pick].occupants.adults;
            if size > 1 {
                buildings[pick].occupants.adults -= 1;
                current -= 1;
            } else if size == 1
                && occupied_ids
                    .iter()
                    .all(|&b| buildings[b as usize].occupants.adults <= 1)
            {
                // Fewer people than occupied buildings: allow emptying.
                buildings[pick].occupants.adults = 0;
                current -= 1;
            }
        }
    }

    // Split each household across age groups (per-person categorical draw,
    // i.e. a multinomial against the target fractions).
    let f = config.age_fractions;
    for &b in &occupied_ids {
        let mut split_stream = stream.derive(15).derive(b as u64);
        let size = buildings[b as usize].occupants.adults;
        let mut counts = AgeCounts::default();
        for _ in 0..size {
            let u = split_stream.next_f64();
            let group = if u < f[0] {
                AgeGroup::Children
            } else if u < f[0] + f[1] {
                AgeGroup::Adults
            } else {
                AgeGroup::Seniors
            };
            counts.add_one(group);
        }
        buildings[b as usize].occupants = counts;
    }

    let model = CommunityModel {
        cells,
        buildings,
        total_population: config.total_population,
        age_fractions: config.age_fractions,
    };
    model.validate()?;
    Ok(model)
}

fn sample_weighted(stream: &mut Stream, weights: &[f64]) -> u32 {
    if weights.len() <= 1 {
        return 0;
    }
    let total: f64 = weights.iter().sum();
    let mut u = stream.next_f64() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i as u32;
        }
        u -= w;
    }
    (weights.len() - 1) as u32
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gilroy_scale_aggregates_match() {
        let config = TestbedConfig::default();
        let model = generate_testbed(&config, &Stream::new(1)).unwrap();
        assert_eq!(model.n_buildings(), 14_702);
        assert_eq!(model.n_cells(), 36);
        assert_eq!(model.total_population, 47_905);
        let by_group = model.population_by_group();
        assert_eq!(by_group.total(), 47_905);
        let occupied = model.buildings.iter().filter(|b| b.occupied).count();
        assert_eq!(occupied, libm::round(14_702.0 * 0.95) as usize);
        // Age split should land near the target fractions.
        let child_frac = by_group.children as f64 / 47_905.0;
        assert!((child_frac - 0.306).abs() < 0.02, "children fraction {child_frac}");
    }

    #[test]
    fn empty_community_is_valid() {
        let config = TestbedConfig {
            grid_rows: 1,
            grid_cols: 1,
            n_buildings: 1,
            total_population: 0,
            occupancy_rate: 0.0,
            density_weights: Vec::new(),
            ..TestbedConfig::default()
        };
        let model = generate_testbed(&config, &Stream::new(0)).unwrap();
        assert_eq!(model.n_buildings(), 1);
        assert!(!model.buildings[0].occupied);
        assert_eq!(model.total_population, 0);
    }

    #[test]
    fn uniform_weights_split_evenly() {
        let config = TestbedConfig {
            grid_rows: 2,
            grid_cols: 2,
            n_buildings: 8,
            total_population: 10,
            occupancy_rate: 1.0,
            density_weights: vec![1.0, 1.0, 1.0, 1.0],
            ..TestbedConfig::default()
        };
        let model = generate_testbed(&config, &Stream::new(3)).unwrap();
        for cell in &model.cells {
            assert_eq!(cell.building_ids.len(), 2);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let bad_rate = TestbedConfig {
            occupancy_rate: 1.5,
            ..TestbedConfig::default()
        };
        assert!(matches!(
            generate_testbed(&bad_rate, &Stream::new(0)),
            Err(CommunityError::InvalidConfig(_))
        ));

        let bad_fractions = TestbedConfig {
            age_fractions: [0.5, 0.5, 0.5],
            ..TestbedConfig::default()
        };
        assert!(generate_testbed(&bad_fractions, &Stream::new(0)).is_err());

        let unhousable = TestbedConfig {
            grid_rows: 1,
            grid_cols: 1,
            n_buildings: 4,
            total_population: 10,
            occupancy_rate: 0.0,
            ..TestbedConfig::default()
        };
        assert!(generate_testbed(&unhousable, &Stream::new(0)).is_err());
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let config = TestbedConfig {
            grid_rows: 3,
            grid_cols: 2,
            n_buildings: 200,
            total_population: 640,
            ..TestbedConfig::default()
        };
        let a = generate_testbed(&config, &Stream::new(99)).unwrap();
        let b = generate_testbed(&config, &Stream::new(99)).unwrap();
        assert_eq!(a, b);
        let c = generate_testbed(&config, &Stream::new(100)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn largest_remainder_exact_and_fair() {
        assert_eq!(largest_remainder(8, &[1.0, 1.0, 1.0, 1.0]), vec![2, 2, 2, 2]);
        assert_eq!(largest_remainder(7, &[1.0, 1.0]), vec![4, 3]);
        let counts = largest_remainder(10, &[3.0, 1.0, 1.0]);
        assert_eq!(counts.iter().sum::<u32>(), 10);
        assert_eq!(counts[0], 6);
    }

    #[test]
    fn archetypes_follow_sampling_weights() {
        let config = TestbedConfig {
            grid_rows: 1,
            grid_cols: 1,
            n_buildings: 2000,
            total_population: 0,
            occupancy_rate: 0.0,
            archetype_weights: vec![0.0, 3.0, 1.0],
            ..TestbedConfig::default()
        };
        let model = generate_testbed(&config, &Stream::new(12)).unwrap();
        let mut counts = [0u32; 3];
        for b in &model.buildings {
            counts[b.archetype_id as usize] += 1;
        }
        assert_eq!(counts[0], 0);
        let one_share = counts[1] as f64 / 2000.0;
        assert!((one_share - 0.75).abs() < 0.05, "share {one_share}");
    }

    #[test]
    fn validate_flags_bad_cell_ref() {
        let config = TestbedConfig {
            grid_rows: 1,
            grid_cols: 2,
            n_buildings: 2,
            total_population: 4,
            occupancy_rate: 1.0,
            ..TestbedConfig::default()
        };
        let mut model = generate_testbed(&config, &Stream::new(4)).unwrap();
        model.buildings[1].cell_id = CellId(99);
        match model.validate() {
            Err(CommunityError::BadCellRef { building, cell }) => {
                assert_eq!(building, BuildingId(1));
                assert_eq!(cell, CellId(99));
            }
            other => panic!("expected BadCellRef, got {other:?}"),
        }
    }
}
