//! Metrics, experiment orchestration and result files.

mod metrics;
mod plot;

pub use metrics::{constraint_instances, path_length, straight_line_bound, violation_rate};
pub use plot::{plot, render_svg};

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::domain::{ConstraintSpec, Scenario, TrajectorySet};
use crate::error::{PdmError, Result};
use crate::projection::ProjectionConfig;
use crate::rng::derive_seed;
use crate::samplers::{sample_batch, Method, SamplerConfig, DEFAULT_GUIDANCE_WEIGHT};
use crate::scenario::{generate, FamilyKind, ScenarioFamily};
use crate::schedule::NoiseSchedule;
use crate::score_model::ScoreModel;

const EVAL_TAG: u64 = 0x4556_414c;
/// Draws tried per requested instance before giving up on a family.
const DRAW_BUDGET: usize = 20;

pub const CSV_COLUMNS: &str =
    "method,family,seed,violation_rate,path_length_sum,path_length_mean,feasible,max_residual,proj_wall_ms";

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub families: Vec<FamilyKind>,
    pub instances_per_family: usize,
    pub master_seed: u64,
    pub schedule: NoiseSchedule,
    pub horizon: usize,
    pub guidance_weight: f64,
    pub projection: ProjectionConfig,
    /// Fill the `proj_wall_ms` column. Off by default so output is reproducible.
    pub record_timing: bool,
    /// Generator seeds that must not be drawn, typically the training seeds.
    pub exclude_seeds: BTreeSet<u64>,
}

impl ExperimentConfig {
    pub fn new(methods: Vec<Method>, families: Vec<FamilyKind>, instances_per_family: usize, master_seed: u64) -> Self {
        Self {
            methods,
            families,
            instances_per_family,
            master_seed,
            schedule: NoiseSchedule::default(),
            horizon: 32,
            guidance_weight: DEFAULT_GUIDANCE_WEIGHT,
            projection: ProjectionConfig::default(),
            record_timing: false,
            exclude_seeds: BTreeSet::new(),
        }
    }

    fn sampler(&self, method: Method) -> SamplerConfig {
        let mut cfg = SamplerConfig::new(method, self.schedule.clone(), self.horizon, self.master_seed);
        if method == Method::Gdm {
            cfg.guidance_weight = self.guidance_weight;
        }
        cfg.projection = self.projection.clone();
        cfg
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InstanceRecord {
    pub method: Method,
    pub family: FamilyKind,
    /// Generator seed of the instance.
    pub seed: u64,
    pub violation_rate: Option<f64>,
    pub path_length_sum: Option<f64>,
    pub path_length_mean: Option<f64>,
    pub feasible: bool,
    pub max_residual: Option<f64>,
    pub proj_wall_ms: f64,
    pub error: Option<String>,
    #[serde(skip)]
    pub trajectory: Option<TrajectorySet>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub method: Method,
    pub family: FamilyKind,
    pub instances: usize,
    pub failures: usize,
    pub violation_rate_mean: f64,
    pub violation_rate_std: f64,
    pub path_length_sum_mean: f64,
    pub path_length_sum_std: f64,
    pub path_length_mean_mean: f64,
    pub feasible_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub records: Vec<InstanceRecord>,
    pub summaries: Vec<Summary>,
    pub scenarios: Vec<(FamilyKind, u64, Scenario)>,
    pub record_timing: bool,
    pub master_seed: u64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl EvalReport {
    pub fn summary(&self, method: Method, family: FamilyKind) -> Option<&Summary> {
        self.summaries.iter().find(|s| s.method == method && s.family == family)
    }

    fn summarise(records: &[InstanceRecord], method: Method, family: FamilyKind) -> Summary {
        let rows: Vec<&InstanceRecord> = records
            .iter()
            .filter(|r| r.method == method && r.family == family)
            .collect();
        let ok: Vec<&&InstanceRecord> = rows.iter().filter(|r| r.error.is_none()).collect();
        let pick = |f: fn(&InstanceRecord) -> Option<f64>| ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>();
        let (vr, vr_sd) = mean_std(&pick(|r| r.violation_rate));
        let (pl, pl_sd) = mean_std(&pick(|r| r.path_length_sum));
        let (plm, _) = mean_std(&pick(|r| r.path_length_mean));
        Summary {
            method,
            family,
            instances: rows.len(),
            failures: rows.len() - ok.len(),
            violation_rate_mean: vr,
            violation_rate_std: vr_sd,
            path_length_sum_mean: pl,
            path_length_sum_std: pl_sd,
            path_length_mean_mean: plm,
            feasible_fraction: rows.iter().filter(|r| r.feasible).count() as f64 / rows.len().max(1) as f64,
        }
    }

    /// Per-instance CSV. Comment lines starting with `#` document the
    /// violation-rate denominator and carry the per-family summary.
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut s = String::new();
        s.push_str("# violation_rate = 100 * violated / (pairs*H + N_a*N_o*H + N_a*(H-1) + 2*N_a)\n");
        s.push_str("# instances: agent pair x step, agent x obstacle x step, agent x step (speed), start and goal per agent\n");
        s.push_str("# violated: residual > tolerance; path_length_sum over agents, path_length_mean per agent\n");
        let _ = writeln!(s, "# master_seed={}", self.master_seed);
        s.push_str(CSV_COLUMNS);
        s.push('\n');
        for r in &self.records {
            let timing = if self.record_timing { r.proj_wall_ms.to_string() } else { String::new() };
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.method.name(),
                r.family.name(),
                r.seed,
                cell(r.violation_rate),
                cell(r.path_length_sum),
                cell(r.path_length_mean),
                r.feasible,
                cell(r.max_residual),
                timing
            );
        }
        s.push_str("# summary: method,family,instances,failures,violation_rate_mean,violation_rate_std,path_length_sum_mean,path_length_sum_std,path_length_mean_mean,feasible_fraction\n");
        for m in &self.summaries {
            let _ = writeln!(
                s,
                "# {},{},{},{},{},{},{},{},{},{}",
                m.method.name(),
                m.family.name(),
                m.instances,
                m.failures,
                m.violation_rate_mean,
                m.violation_rate_std,
                m.path_length_sum_mean,
                m.path_length_sum_std,
                m.path_length_mean_mean,
                m.feasible_fraction
            );
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Held-out instances of a family: `count` successful draws whose seeds avoid `exclude`.
pub fn eval_instances(
    kind: FamilyKind,
    count: usize,
    master_seed: u64,
    exclude: &BTreeSet<u64>,
) -> Result<Vec<(u64, Scenario)>> {
    let mut out = Vec::with_capacity(count);
    for i in 0..count * DRAW_BUDGET {
        if out.len() == count {
            break;
        }
        let seed = derive_seed(master_seed, EVAL_TAG ^ kind.tag(), i as u64);
        if exclude.contains(&seed) {
            continue;
        }
        match generate(&ScenarioFamily::new(kind, seed)) {
            Ok(s) => out.push((seed, s)),
            Err(PdmError::Generation(msg)) => log::warn!("{} draw {seed} skipped: {msg}", kind.name()),
            Err(e) => return Err(e),
        }
    }
    if out.len() < count {
        return Err(PdmError::Generation(format!(
            "could only draw {} of {count} {} instances",
            out.len(),
            kind.name()
        )));
    }
    Ok(out)
}

fn model_for<'a>(models: &[&'a dyn ScoreModel], n_agents: usize, horizon: usize) -> Option<&'a dyn ScoreModel> {
    models.iter().copied().find(|m| m.check_shape(n_agents, horizon).is_ok())
}

/// Samples every method on fresh instances of every family and scores the results.
pub fn run_experiment(cfg: &ExperimentConfig, models: &[&dyn ScoreModel]) -> Result<EvalReport> {
    if cfg.instances_per_family == 0 {
        return Err(PdmError::contract("instances_per_family must be >= 1"));
    }
    if cfg.methods.is_empty() || cfg.families.is_empty() {
        return Err(PdmError::contract("need at least one method and one family"));
    }
    for &m in &cfg.methods {
        cfg.sampler(m).validate()?;
    }

    let mut plan = Vec::with_capacity(cfg.families.len());
    for &kind in &cfg.families {
        let n = kind.default_params().n_agents();
        let model = model_for(models, n, cfg.horizon).ok_or_else(|| {
            PdmError::contract(format!(
                "no model accepts {} agents at horizon {} ({})",
                n,
                cfg.horizon,
                kind.name()
            ))
        })?;
        plan.push((kind, model));
    }

    let mut records = Vec::new();
    let mut scenarios = Vec::new();
    for (kind, model) in plan {
        let drawn = eval_instances(kind, cfg.instances_per_family, cfg.master_seed, &cfg.exclude_seeds)?;
        let batch: Vec<Scenario> = drawn.iter().map(|(_, s)| s.clone()).collect();
        for &method in &cfg.methods {
            log::info!("{} on {} x{}", method.name(), kind.name(), batch.len());
            let outs = sample_batch(model, &batch, ConstraintSpec::from_scenario, &cfg.sampler(method))?;
            for ((seed, scenario), out) in drawn.iter().zip(outs) {
                records.push(record(method, kind, *seed, scenario, out)?);
            }
        }
        scenarios.extend(drawn.into_iter().map(|(seed, s)| (kind, seed, s)));
    }

    let mut summaries = Vec::new();
    for &kind in &cfg.families {
        for &method in &cfg.methods {
            summaries.push(EvalReport::summarise(&records, method, kind));
        }
    }
    Ok(EvalReport {
        records,
        summaries,
        scenarios,
        record_timing: cfg.record_timing,
        master_seed: cfg.master_seed,
    })
}

fn record(
    method: Method,
    family: FamilyKind,
    seed: u64,
    scenario: &Scenario,
    out: Result<crate::samplers::SampleOutput>,
) -> Result<InstanceRecord> {
    Ok(match out {
        Ok(o) => {
            let spec = ConstraintSpec::from_scenario(scenario);
            let length = path_length(&o.trajectory);
            InstanceRecord {
                method,
                family,
                seed,
                violation_rate: Some(violation_rate(&o.trajectory, scenario, &spec)?),
                path_length_sum: Some(length),
                path_length_mean: Some(length / scenario.n_agents() as f64),
                feasible: o.feasible,
                max_residual: Some(o.max_residual),
                proj_wall_ms: o.proj_wall_ms,
                error: None,
                trajectory: Some(o.trajectory),
            }
        }
        Err(e @ PdmError::Contract(_)) => return Err(e),
        Err(e) => {
            log::warn!("{} on {} seed {seed} failed: {e}", method.name(), family.name());
            InstanceRecord {
                method,
                family,
                seed,
                violation_rate: None,
                path_length_sum: None,
                path_length_mean: None,
                feasible: false,
                max_residual: None,
                proj_wall_ms: 0.0,
                error: Some(e.to_string()),
                trajectory: None,
            }
        }
    })
}
