//! Expert datasets on disk: a directory holding one scenario JSON and one
//! trajectory binary per instance, plus `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{solve_expert, ExpertConfig, ExpertOutcome};
use crate::domain::{ConstraintSpec, Scenario, TrajectorySet};
use crate::error::{PdmError, Result};
use crate::feasibility::check_feasibility;
use crate::rng::derive_seed;
use crate::scenario::{
    generate, load_scenario, load_trajectories, save_scenario, save_trajectories, FamilyKind, ScenarioFamily,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATASET_VERSION: u32 = 1;
const INSTANCE_TAG: u64 = 0x4453_4554;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub family: FamilyKind,
    pub index: usize,
    /// Generator seed of the instance.
    pub seed: u64,
    pub scenario: String,
    pub trajectory: String,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedDraw {
    pub family: FamilyKind,
    pub index: usize,
    pub seed: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub horizon: usize,
    pub per_family: usize,
    pub families: Vec<ScenarioFamily>,
    pub expert: ExpertConfig,
    pub entries: Vec<DatasetEntry>,
    pub skipped: Vec<SkippedDraw>,
}

impl DatasetManifest {
    /// Generator seeds of every stored instance, for keeping evaluation draws disjoint.
    pub fn seeds(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.seed).collect()
    }
}

#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub family: FamilyKind,
    pub seed: u64,
    pub scenario: Scenario,
    pub trajectory: TrajectorySet,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub items: Vec<DatasetItem>,
}

/// Seed of draw `index` under a family's master seed.
pub fn instance_seed(family: &ScenarioFamily, index: usize) -> u64 {
    derive_seed(family.seed, INSTANCE_TAG ^ family.kind().tag(), index as u64)
}

/// A generated instance together with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioInstance {
    pub family: FamilyKind,
    pub seed: u64,
    pub scenario: Scenario,
}

enum Draw {
    Kept(TrajectorySet, f64),
    Skipped(String),
}

fn solve(inst: &ScenarioInstance, cfg: &ExpertConfig) -> Result<Draw> {
    let spec = ConstraintSpec::from_scenario(&inst.scenario);
    let cfg = ExpertConfig {
        seed: derive_seed(cfg.seed, inst.seed, 0),
        ..cfg.clone()
    };
    Ok(match solve_expert(&inst.scenario, &spec, &cfg)? {
        ExpertOutcome::Solved(sol) => Draw::Kept(sol.trajectory, sol.cost),
        ExpertOutcome::Infeasible(r) => Draw::Skipped(format!(
            "{} (separation {:.3e}, convex {:.3e})",
            r.reason, r.best_separation, r.best_convex
        )),
    })
}

/// Draws `per_family` instances of every family. Draws the generator
/// rejects are returned separately instead of failing the call.
pub fn draw_instances(
    families: &[ScenarioFamily],
    per_family: usize,
) -> Result<(Vec<ScenarioInstance>, Vec<SkippedDraw>)> {
    let mut kept = Vec::new();
    let mut skipped = Vec::new();
    for family in families {
        for index in 0..per_family {
            let seed = instance_seed(family, index);
            let inst = ScenarioFamily {
                params: family.params.clone(),
                seed,
            };
            match generate(&inst) {
                Ok(scenario) => kept.push(ScenarioInstance {
                    family: family.kind(),
                    seed,
                    scenario,
                }),
                Err(PdmError::Generation(reason)) => skipped.push(SkippedDraw {
                    family: family.kind(),
                    index,
                    seed,
                    reason,
                }),
                Err(e) => return Err(e),
            }
        }
    }
    Ok((kept, skipped))
}

/// Solves `per_family` draws of every family and writes the feasible ones to `out`.
pub fn build_dataset(
    families: &[ScenarioFamily],
    per_family: usize,
    cfg: &ExpertConfig,
    out: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    if per_family == 0 {
        return Err(PdmError::contract("per_family must be >= 1"));
    }
    if families.is_empty() {
        return Err(PdmError::contract("need at least one family"));
    }
    let (instances, skipped) = draw_instances(families, per_family)?;
    let mut manifest = DatasetManifest {
        version: DATASET_VERSION,
        horizon: cfg.horizon,
        per_family,
        families: families.to_vec(),
        expert: cfg.clone(),
        entries: Vec::new(),
        skipped,
    };
    solve_into(&instances, cfg, out.as_ref(), &mut manifest)?;
    Ok(manifest)
}

/// Solves the given instances and writes the feasible ones to `out`.
pub fn build_dataset_from(
    instances: &[ScenarioInstance],
    cfg: &ExpertConfig,
    out: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    if instances.is_empty() {
        return Err(PdmError::contract("no instances to solve"));
    }
    let per_family = FamilyKind::ALL
        .iter()
        .map(|k| instances.iter().filter(|i| i.family == *k).count())
        .max()
        .unwrap_or(0);
    let mut manifest = DatasetManifest {
        version: DATASET_VERSION,
        horizon: cfg.horizon,
        per_family,
        families: Vec::new(),
        expert: cfg.clone(),
        entries: Vec::new(),
        skipped: Vec::new(),
    };
    solve_into(instances, cfg, out.as_ref(), &mut manifest)?;
    Ok(manifest)
}

/// Instances are solved in parallel; file names and manifest order depend
/// only on the inputs, so a fixed configuration reproduces the directory
/// byte for byte.
fn solve_into(
    instances: &[ScenarioInstance],
    cfg: &ExpertConfig,
    out: &Path,
    manifest: &mut DatasetManifest,
) -> Result<()> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let draws: Vec<Draw> = instances.par_iter().map(|inst| solve(inst, cfg)).collect::<Result<_>>()?;

    for kind in FamilyKind::ALL {
        let mut attempted = manifest.skipped.iter().filter(|s| s.family == kind).count();
        let mut kept = 0;
        for (index, (inst, d)) in instances.iter().zip(&draws).enumerate() {
            if inst.family != kind {
                continue;
            }
            attempted += 1;
            match d {
                Draw::Kept(traj, cost) => {
                    let stem = format!("{}-{:016x}-{index:04}", kind.name(), inst.seed);
                    let (sname, tname) = (format!("{stem}.json"), format!("{stem}.bin"));
                    save_scenario(&inst.scenario, out.join(&sname))?;
                    save_trajectories(traj, out.join(&tname))?;
                    manifest.entries.push(DatasetEntry {
                        family: kind,
                        index,
                        seed: inst.seed,
                        scenario: sname,
                        trajectory: tname,
                        cost: *cost,
                    });
                    kept += 1;
                }
                Draw::Skipped(reason) => {
                    log::warn!("{} instance {index} (seed {}) skipped: {reason}", kind.name(), inst.seed);
                    manifest.skipped.push(SkippedDraw {
                        family: kind,
                        index,
                        seed: inst.seed,
                        reason: reason.clone(),
                    });
                }
            }
        }
        if attempted > 0 && 2 * kept < attempted {
            return Err(PdmError::Generation(format!(
                "only {kept} of {attempted} {} draws were feasible; generator parameters are likely inconsistent",
                kind.name()
            )));
        }
    }

    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| PdmError::Generation(e.to_string()))?;
    text.push('\n');
    fs::write(out.join(MANIFEST_FILE), text)?;
    Ok(())
}

/// Loads a dataset and re-verifies every stored trajectory with the
/// independent checker.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let path: PathBuf = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path)?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| PdmError::Parse {
        field: "manifest".into(),
        offset: 0,
        message: e.to_string(),
    })?;
    if manifest.version != DATASET_VERSION {
        return Err(PdmError::Version {
            found: manifest.version,
            expected: DATASET_VERSION,
        });
    }
    let mut items = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let scenario = load_scenario(dir.join(&e.scenario))?;
        let trajectory = load_trajectories(dir.join(&e.trajectory))?;
        scenario.check_trajectory_shape(&trajectory)?;
        if trajectory.horizon() != manifest.horizon {
            return Err(PdmError::contract(format!(
                "{} has horizon {}, dataset declares {}",
                e.trajectory,
                trajectory.horizon(),
                manifest.horizon
            )));
        }
        let report = check_feasibility(&trajectory, &scenario, ConstraintSpec::DEFAULT_TOLERANCE)?;
        if !report.is_feasible() {
            return Err(PdmError::contract(format!(
                "{} fails re-verification: {:?}",
                e.trajectory, report.violations[0]
            )));
        }
        items.push(DatasetItem {
            family: e.family,
            seed: e.seed,
            scenario,
            trajectory,
        });
    }
    Ok(Dataset { manifest, items })
}
