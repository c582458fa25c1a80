//! Synthetic expert demonstrations: short, smooth, collision-free joint
//! trajectories used to train the score model.
//!
//! Each restart starts from straight lines with Gaussian jitter on the
//! interior waypoints and minimises the summed squared step length under all
//! constraints with the augmented-Lagrangian machinery of [`crate::projection`].

mod dataset;

pub use dataset::{
    build_dataset, build_dataset_from, draw_instances, instance_seed, load_dataset, Dataset, DatasetEntry,
    DatasetItem, DatasetManifest, ScenarioInstance, SkippedDraw, MANIFEST_FILE,
};

use serde::{Deserialize, Serialize};

use crate::domain::{ConstraintSpec, Scenario, TrajectorySet};
use crate::error::{PdmError, Result};
use crate::feasibility::check_feasibility;
use crate::projection::terms::Geometry;
use crate::projection::{alm_minimize, AlmState, Objective, ProjectionConfig};
use crate::rng::{derive_seed, rng_from_seed, standard_normal};

const RESTART_TAG: u64 = 0x4558_5054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertConfig {
    /// Outer augmented-Lagrangian iterations per restart.
    pub max_iters: usize,
    /// Cap on the first trial step of every inner solve.
    pub step_size: f64,
    /// Weight on the summed squared step length.
    pub cost_weight: f64,
    pub restarts: usize,
    /// Standard deviation of the jitter added to interior waypoints.
    pub jitter_scale: f64,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            max_iters: 60,
            step_size: 1.0,
            cost_weight: 1.0,
            restarts: 3,
            jitter_scale: 0.02,
            horizon: 32,
            seed: 0,
        }
    }
}

impl ExpertConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || self.restarts == 0 {
            return Err(PdmError::contract("max_iters and restarts must be >= 1"));
        }
        if !(self.step_size > 0.0) || !(self.cost_weight > 0.0) {
            return Err(PdmError::contract("step_size and cost_weight must be positive"));
        }
        if !(self.jitter_scale >= 0.0 && self.jitter_scale.is_finite()) {
            return Err(PdmError::contract("jitter_scale must be finite and nonnegative"));
        }
        if self.horizon < 2 {
            return Err(PdmError::contract("horizon must be >= 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ExpertSolution {
    pub trajectory: TrajectorySet,
    /// Summed squared step length, unweighted.
    pub cost: f64,
    /// Restart that produced the solution.
    pub restart: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfeasibleReport {
    pub restarts: usize,
    pub best_separation: f64,
    pub best_convex: f64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub enum ExpertOutcome {
    Solved(ExpertSolution),
    Infeasible(InfeasibleReport),
}

impl ExpertOutcome {
    pub fn solution(self) -> Option<ExpertSolution> {
        match self {
            ExpertOutcome::Solved(s) => Some(s),
            ExpertOutcome::Infeasible(_) => None,
        }
    }
}

/// Summed squared step length over all agents.
pub fn path_cost(traj: &TrajectorySet) -> f64 {
    let mut total = 0.0;
    for a in 0..traj.n_agents() {
        for h in 0..traj.horizon() - 1 {
            let (p, q) = (traj.get(a, h), traj.get(a, h + 1));
            total += (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2);
        }
    }
    total
}

pub fn solve_expert(scenario: &Scenario, spec: &ConstraintSpec, cfg: &ExpertConfig) -> Result<ExpertOutcome> {
    cfg.validate()?;
    scenario.validate()?;
    let h_len = cfg.horizon;
    let g = Geometry::new(scenario, spec, h_len);
    let proj = ProjectionConfig {
        max_outer: cfg.max_iters,
        ..ProjectionConfig::default()
    };
    let objective = Objective {
        anchor: Vec::new(),
        anchor_weight: 0.0,
        path_weight: cfg.cost_weight,
        max_step: cfg.step_size,
    };

    let mut best: Option<ExpertSolution> = None;
    let mut best_sep = f64::INFINITY;
    let mut best_convex = f64::INFINITY;
    let offer = |best: &mut Option<ExpertSolution>, traj: TrajectorySet, restart: usize| {
        let cost = path_cost(&traj);
        if best.as_ref().is_none_or(|b| cost < b.cost) {
            *best = Some(ExpertSolution {
                trajectory: traj,
                cost,
                restart,
            });
        }
    };

    for restart in 0..cfg.restarts {
        let mut rng = rng_from_seed(derive_seed(cfg.seed, RESTART_TAG, restart as u64));
        let mut init = TrajectorySet::straight_lines(&scenario.starts, &scenario.goals, h_len);
        for a in 0..init.n_agents() {
            for h in 1..h_len - 1 {
                let p = init.get(a, h);
                let jx = cfg.jitter_scale * standard_normal(&mut rng);
                let jy = cfg.jitter_scale * standard_normal(&mut rng);
                init.set(a, h, [p[0] + jx, p[1] + jy]);
            }
        }
        if check_feasibility(&init, scenario, spec.tolerance)?.is_feasible() {
            offer(&mut best, init.clone(), restart);
        }

        let mut x = init.into_vec();
        let mut state = AlmState::for_instance(scenario, h_len, proj.rho_init);
        match alm_minimize(&mut x, &objective, &g, &proj, &mut state) {
            Ok(_) => {}
            Err(PdmError::Infeasible(reason)) => {
                return Ok(ExpertOutcome::Infeasible(InfeasibleReport {
                    restarts: restart,
                    best_separation: f64::INFINITY,
                    best_convex: f64::INFINITY,
                    reason,
                }));
            }
            Err(e) => return Err(e),
        }
        let traj = TrajectorySet::new(scenario.n_agents(), h_len, x)?;
        let report = check_feasibility(&traj, scenario, spec.tolerance)?;
        best_sep = best_sep.min(report.worst_separation);
        best_convex = best_convex.min(report.worst_convex);
        if report.is_feasible() {
            offer(&mut best, traj, restart);
        }
    }

    Ok(match best {
        Some(sol) => ExpertOutcome::Solved(sol),
        None => ExpertOutcome::Infeasible(InfeasibleReport {
            restarts: cfg.restarts,
            best_separation: best_sep,
            best_convex,
            reason: format!("no restart reached tolerance {}", spec.tolerance),
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::WorldBounds;
    use crate::scenario::{corridor_unchecked, CorridorParams};

    fn open_scenario(starts: Vec<[f64; 2]>, goals: Vec<[f64; 2]>) -> Scenario {
        Scenario {
            starts,
            goals,
            obstacles: vec![],
            agent_radius: 0.03,
            v_max: 0.05,
            dt: 1.0,
            world_bounds: WorldBounds::default(),
        }
    }

    #[test]
    fn single_agent_takes_the_straight_line() {
        let s = open_scenario(vec![[0.2, 0.3]], vec![[0.8, 0.5]]);
        let spec = ConstraintSpec::from_scenario(&s);
        let cfg = ExpertConfig::default();
        let sol = solve_expert(&s, &spec, &cfg).unwrap().solution().unwrap();
        let expected = (0.6f64.powi(2) + 0.2f64.powi(2)) / (cfg.horizon - 1) as f64;
        assert!((sol.cost - expected).abs() < 1e-6 * expected.max(1.0), "{} vs {expected}", sol.cost);
        let line = TrajectorySet::straight_lines(&s.starts, &s.goals, cfg.horizon);
        assert!(sol.trajectory.distance(&line) < 1e-3);
    }

    #[test]
    fn crossing_agents_keep_apart() {
        let s = open_scenario(vec![[0.2, 0.2], [0.2, 0.8]], vec![[0.8, 0.8], [0.8, 0.2]]);
        let spec = ConstraintSpec::from_scenario(&s);
        let sol = solve_expert(&s, &spec, &ExpertConfig::default()).unwrap().solution().unwrap();
        let mut closest = f64::INFINITY;
        for h in 0..sol.trajectory.horizon() {
            let (p, q) = (sol.trajectory.get(0, h), sol.trajectory.get(1, h));
            closest = closest.min((p[0] - q[0]).hypot(p[1] - q[1]));
        }
        assert!(closest >= spec.r_agent - spec.tolerance, "closest approach {closest}");
    }

    #[test]
    fn blocked_corridor_reports_infeasible() {
        let p = CorridorParams {
            width: 0.03,
            ..CorridorParams::default()
        };
        assert!(p.width < 2.0 * p.agent_radius);
        let s = corridor_unchecked(&p, 4);
        let spec = ConstraintSpec::from_scenario(&s);
        let cfg = ExpertConfig {
            restarts: 1,
            max_iters: 30,
            ..ExpertConfig::default()
        };
        match solve_expert(&s, &spec, &cfg).unwrap() {
            ExpertOutcome::Infeasible(r) => {
                assert!(r.best_separation.max(r.best_convex) > spec.tolerance, "{r:?}")
            }
            ExpertOutcome::Solved(_) => panic!("blocked corridor solved"),
        }
    }
}
