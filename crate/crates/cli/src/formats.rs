//! On-disk formats: community files, archetype catalogs, realization logs
//! and the two CSV outputs. Schemas in `docs/formats.md`.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use recovery_core::community::{Building, CommunityModel, GridCell};
use recovery_core::damage::{ArchetypeCatalog, DamageState, ScenarioRealization};

/// Community file: `meta`, `cells`, `buildings`.
#[derive(Serialize, Deserialize)]
struct CommunityFile {
    meta: CommunityMeta,
    cells: Vec<GridCell>,
    buildings: Vec<Building>,
}

#[derive(Serialize, Deserialize)]
struct CommunityMeta {
    total_population: u64,
    age_fractions: [f64; 3],
}

/// Load and fully validate a community file; invariant violations name
/// the offending building or cell.
pub fn load_community(path: &Path) -> Result<CommunityModel> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read community file {}", path.display()))?;
    let file: CommunityFile = serde_json::from_str(&text)
        .with_context(|| format!("cannot parse community file {}", path.display()))?;
    let model = CommunityModel {
        cells: file.cells,
        buildings: file.buildings,
        total_population: file.meta.total_population,
        age_fractions: file.meta.age_fractions,
    };
    model
        .validate()
        .with_context(|| format!("invalid community in {}", path.display()))?;
    Ok(model)
}

/// Write a community file; loading it back reproduces the model exactly.
pub fn save_community(model: &CommunityModel, path: &Path) -> Result<()> {
    let file = CommunityFile {
        meta: CommunityMeta {
            total_population: model.total_population,
            age_fractions: model.age_fractions,
        },
        cells: model.cells.clone(),
        buildings: model.buildings.clone(),
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write community file {}", path.display()))
}

pub fn load_catalog(path: &Path) -> Result<ArchetypeCatalog> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read catalog file {}", path.display()))?;
    let catalog: ArchetypeCatalog = serde_json::from_str(&text)
        .with_context(|| format!("cannot parse catalog file {}", path.display()))?;
    catalog
        .validate()
        .with_context(|| format!("invalid catalog in {}", path.display()))?;
    Ok(catalog)
}

/// Everything needed to replay a run's environment exactly, per
/// replication, plus the solver stream states.
#[derive(Serialize, Deserialize)]
pub struct RealizationFile {
    pub master_seed: u64,
    pub magnitude: f64,
    pub epicenter: (f64, f64),
    pub n_buildings: u32,
    pub replications: Vec<RealizationRecord>,
}

#[derive(Serialize, Deserialize)]
pub struct RealizationRecord {
    pub replication: u32,
    pub seeds: SeedRecord,
    /// Inter-event residual of the sampled intensity field (ln units).
    pub eta: f64,
    pub im: Vec<f64>,
    pub damage_states: Vec<DamageState>,
    pub durations_days: Vec<u32>,
}

/// Stream states for the named substreams of one replication.
#[derive(Clone, Copy, Serialize, Deserialize)]
pub struct SeedRecord {
    pub hazard: u64,
    pub damage: u64,
    pub solver_base: u64,
    pub solver_rollout: u64,
}

impl RealizationRecord {
    pub fn to_scenario_realization(&self) -> ScenarioRealization {
        ScenarioRealization {
            im: self.im.clone(),
            damage_states: self.damage_states.clone(),
            durations_days: self.durations_days.clone(),
        }
    }
}

pub fn load_realization(path: &Path) -> Result<RealizationFile> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read realization file {}", path.display()))?;
    let file: RealizationFile = serde_json::from_str(&text)
        .with_context(|| format!("cannot parse realization file {}", path.display()))?;
    for record in &file.replications {
        if record.im.len() != file.n_buildings as usize
            || record.damage_states.len() != file.n_buildings as usize
            || record.durations_days.len() != file.n_buildings as usize
        {
            bail!(
                "realization {}: per-building arrays do not cover {} buildings",
                record.replication,
                file.n_buildings
            );
        }
    }
    Ok(file)
}

pub fn write_json_pretty<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub const RECOVERY_CURVE_HEADER: &str =
    "kind,policy,replication,epoch,elapsed_days,housed_total,housed_children,housed_adults,housed_seniors";

pub const GRID_TIMELINE_HEADER: &str =
    "policy,replication,epoch,elapsed_days,cell_id,housed,damaged_remaining,free_rus";

/// A CSV sink with a fixed header; rows are written through `write!`.
pub struct CsvFile {
    out: std::io::BufWriter<fs::File>,
}

impl CsvFile {
    pub fn create(path: &Path, header: &str) -> Result<CsvFile> {
        let file = fs::File::create(path)
            .with_context(|| format!("cannot create {}", path.display()))?;
        let mut out = std::io::BufWriter::new(file);
        writeln!(out, "{header}")?;
        Ok(CsvFile { out })
    }

    pub fn row(&mut self, line: core::fmt::Arguments<'_>) -> Result<()> {
        self.out.write_fmt(line)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}
