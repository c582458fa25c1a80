//! Annealed Langevin samplers: unconstrained (DM), penalty-guided (GDM) and
//! projected (PDM). All three consume the same noise stream for a given seed.
//!
//! The chain lives in world coordinates; the score model is queried at the
//! world-centred point.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{ConstraintSpec, Scenario, TrajectorySet};
use crate::error::{PdmError, Result};
use crate::feasibility::check_feasibility;
use crate::projection::{alm_project_with_state, guidance_gradient, AlmState, ProjectionConfig};
use crate::rng::{derive_seed, fill_standard_normal, rng_from_seed};
use crate::scenario::scenario_to_json;
use crate::schedule::NoiseSchedule;
use crate::score_model::ScoreModel;

pub const DEFAULT_GUIDANCE_WEIGHT: f64 = 10.0;
const BATCH_TAG: u64 = 0x5341_4d50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pdm,
    Dm,
    Gdm,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Pdm, Method::Dm, Method::Gdm];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pdm => "pdm",
            Method::Dm => "dm",
            Method::Gdm => "gdm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| PdmError::contract(format!("unknown method {s:?}; expected pdm, dm or gdm")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub method: Method,
    pub schedule: NoiseSchedule,
    pub horizon: usize,
    /// Penalty weight; must be zero unless the method is GDM.
    pub guidance_weight: f64,
    pub seed: u64,
    /// Project DM/GDM output once at the end, for diagnostics only.
    pub final_snap: bool,
    /// PDM projects after every `project_every`-th inner step and always after the last.
    pub project_every: usize,
    pub projection: ProjectionConfig,
}

impl SamplerConfig {
    pub fn new(method: Method, schedule: NoiseSchedule, horizon: usize, seed: u64) -> Self {
        Self {
            method,
            schedule,
            horizon,
            guidance_weight: if method == Method::Gdm { DEFAULT_GUIDANCE_WEIGHT } else { 0.0 },
            seed,
            final_snap: false,
            project_every: 1,
            projection: ProjectionConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.guidance_weight >= 0.0 && self.guidance_weight.is_finite()) {
            return Err(PdmError::contract("guidance weight must be finite and nonnegative"));
        }
        if self.method != Method::Gdm && self.guidance_weight != 0.0 {
            return Err(PdmError::contract(format!(
                "guidance weight {} given to {}; only gdm uses guidance",
                self.guidance_weight,
                self.method.name()
            )));
        }
        if self.project_every == 0 {
            return Err(PdmError::contract("project_every must be >= 1"));
        }
        if self.horizon < 2 {
            return Err(PdmError::contract("horizon must be >= 2"));
        }
        self.projection.validate()
    }
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub trajectory: TrajectorySet,
    /// PDM: the last projection converged and the checker passes.
    /// DM/GDM: the checker passes.
    pub feasible: bool,
    /// Largest residual the checker saw, separation and convex alike.
    pub max_residual: f64,
    pub proj_wall_ms: f64,
    pub projections: usize,
    /// Projections that hit their iteration cap.
    pub unconverged: usize,
    /// `gamma_t` for `t = T, ..., 1`.
    pub gamma_trace: Vec<f64>,
    /// One terminal projection of DM/GDM output when requested.
    pub snapped: Option<TrajectorySet>,
}

fn project(
    x: &mut [f64],
    scenario: &Scenario,
    spec: &ConstraintSpec,
    cfg: &SamplerConfig,
    state: &mut AlmState,
    out: &mut SampleOutput,
) -> Result<bool> {
    let traj = TrajectorySet::new(scenario.n_agents(), cfg.horizon, x.to_vec())?;
    let p = alm_project_with_state(&traj, scenario, spec, &cfg.projection, state)?;
    out.proj_wall_ms += p.diagnostics.wall_ms;
    out.projections += 1;
    if !p.converged {
        out.unconverged += 1;
    }
    x.copy_from_slice(p.trajectory.as_slice());
    Ok(p.converged)
}

/// Guidance weight at level `t`: `lambda * beta_1 / beta_t`, so the guidance
/// part of every Langevin step is `lambda * beta_1 / (2 beta_T)` times the
/// penalty gradient at all levels. A fixed weight would take explicit steps
/// of size `lambda / 2` at the top level.
pub fn guidance_at(lambda: f64, schedule: &NoiseSchedule, t: usize) -> f64 {
    lambda * schedule.beta(1) / schedule.beta(t)
}

/// Runs one chain of Algorithm-1-style annealed Langevin dynamics.
pub fn sample<M: ScoreModel + ?Sized>(
    model: &M,
    scenario: &Scenario,
    spec: &ConstraintSpec,
    cfg: &SamplerConfig,
) -> Result<SampleOutput> {
    cfg.validate()?;
    scenario.validate()?;
    spec.check(scenario)?;
    let (n, h) = (scenario.n_agents(), cfg.horizon);
    model.check_shape(n, h)?;
    let schedule = &cfg.schedule;
    let cond = model.conditioning(scenario);
    let c = scenario.world_bounds.center();
    let dim = n * h * 2;

    let mut rng = rng_from_seed(cfg.seed);
    let mut x = vec![0.0; dim];
    fill_standard_normal(&mut rng, &mut x);
    let sd = schedule.beta(schedule.n_levels()).sqrt();
    for (i, v) in x.iter_mut().enumerate() {
        *v = c[i % 2] + sd * *v;
    }

    let mut out = SampleOutput {
        trajectory: TrajectorySet::zeros(n, h),
        feasible: false,
        max_residual: f64::INFINITY,
        proj_wall_ms: 0.0,
        projections: 0,
        unconverged: 0,
        gamma_trace: Vec::with_capacity(schedule.n_levels()),
        snapped: None,
    };
    let mut state = AlmState::for_instance(scenario, h, cfg.projection.rho_init);
    let mut centred = vec![0.0; dim];
    let mut score = vec![0.0; dim];
    let mut z = vec![0.0; dim];
    let mut last_converged = true;
    let mut step = 0usize;
    let total = schedule.n_levels() * schedule.inner_steps();

    'levels: for t in (1..=schedule.n_levels()).rev() {
        let gamma = schedule.gamma(t);
        let noise = (2.0 * gamma).sqrt();
        out.gamma_trace.push(gamma);
        for _ in 0..schedule.inner_steps() {
            step += 1;
            for (i, (d, v)) in centred.iter_mut().zip(&x).enumerate() {
                *d = v - c[i % 2];
            }
            model.score(&centred, t, schedule, &cond, &mut score)?;
            if cfg.method == Method::Gdm && cfg.guidance_weight > 0.0 {
                let traj = TrajectorySet::new(n, h, x.clone())?;
                let weight = guidance_at(cfg.guidance_weight, schedule, t);
                let guide = guidance_gradient(&traj, scenario, spec, weight)?;
                score.iter_mut().zip(&guide).for_each(|(s, g)| *s += g);
            }
            fill_standard_normal(&mut rng, &mut z);
            for ((v, s), z) in x.iter_mut().zip(&score).zip(&z) {
                *v += gamma * s + noise * z;
            }
            if x.iter().any(|v| !v.is_finite()) {
                break 'levels;
            }
            if cfg.method == Method::Pdm && (step % cfg.project_every == 0 || step == total) {
                last_converged = project(&mut x, scenario, spec, cfg, &mut state, &mut out)?;
            }
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        log::error!("{} chain produced non-finite coordinates", cfg.method.name());
        return Err(PdmError::NonConvergence {
            iterations: step,
            max_residual: f64::INFINITY,
        });
    }

    let traj = TrajectorySet::new(n, h, x)?;
    let report = check_feasibility(&traj, scenario, spec.tolerance)?;
    out.max_residual = report.worst_separation.max(report.worst_convex);
    out.feasible = report.is_feasible() && (cfg.method != Method::Pdm || last_converged);
    if cfg.method == Method::Pdm && !last_converged {
        log::warn!("final projection did not converge; returning best iterate flagged infeasible");
    }
    if cfg.final_snap && cfg.method != Method::Pdm {
        let mut snap = traj.as_slice().to_vec();
        let mut diag = out.clone();
        project(&mut snap, scenario, spec, cfg, &mut state, &mut diag)?;
        out.snapped = Some(TrajectorySet::new(n, h, snap)?);
    }
    out.trajectory = traj;
    Ok(out)
}

/// Seed of a batch element: a function of the master seed and the scenario
/// content, so reordering a batch reorders its outputs and nothing else.
pub fn element_seed(master: u64, scenario: &Scenario) -> Result<u64> {
    let digest = Sha256::digest(scenario_to_json(scenario)?.as_bytes());
    let word = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    Ok(derive_seed(master, BATCH_TAG, word))
}

/// Samples every scenario in parallel. Failures are reported per element.
pub fn sample_batch<M: ScoreModel + ?Sized>(
    model: &M,
    scenarios: &[Scenario],
    spec_for: impl Fn(&Scenario) -> ConstraintSpec + Sync,
    cfg: &SamplerConfig,
) -> Result<Vec<Result<SampleOutput>>> {
    cfg.validate()?;
    if let Some(first) = scenarios.first() {
        let n = first.n_agents();
        if scenarios.iter().any(|s| s.n_agents() != n) {
            return Err(PdmError::contract("batch mixes agent counts"));
        }
        model.check_shape(n, cfg.horizon)?;
    }
    Ok(scenarios
        .par_iter()
        .map(|s| {
            let cfg = SamplerConfig {
                seed: element_seed(cfg.seed, s)?,
                ..cfg.clone()
            };
            sample(model, s, &spec_for(s), &cfg)
        })
        .collect())
}
