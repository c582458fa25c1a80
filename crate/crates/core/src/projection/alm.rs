use std::time::Instant;

use serde::Serialize;

use super::convex::{check_reachable, project_in_place, DykstraScratch};
use super::terms::{collision_penalty_listed, hinge_residuals, jacobian_norm_estimate, Candidates, Geometry};
use super::ProjectionConfig;
use crate::domain::{ConstraintSpec, Scenario, TrajectorySet};
use crate::error::{PdmError, Result};

/// Multipliers and penalty weights of the augmented Lagrangian.
#[derive(Debug, Clone, PartialEq)]
pub struct AlmState {
    pub nu_agent: Vec<f64>,
    pub nu_obstacle: Vec<f64>,
    pub rho_agent: f64,
    pub rho_obstacle: f64,
}

impl AlmState {
    pub fn new(n_agent_constraints: usize, n_obstacle_constraints: usize, rho: f64) -> Self {
        Self {
            nu_agent: vec![0.0; n_agent_constraints],
            nu_obstacle: vec![0.0; n_obstacle_constraints],
            rho_agent: rho,
            rho_obstacle: rho,
        }
    }

    pub fn for_instance(scenario: &Scenario, horizon: usize, rho: f64) -> Self {
        let n = scenario.n_agents();
        Self::new(
            n * n.saturating_sub(1) / 2 * horizon,
            n * scenario.n_obstacles() * horizon,
            rho,
        )
    }

    fn matches(&self, g: &Geometry) -> bool {
        self.nu_agent.len() == g.n_agent_constraints()
            && self.nu_obstacle.len() == g.n_obstacle_constraints()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AlmDiagnostics {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub rho_agent: f64,
    pub rho_obstacle: f64,
    pub max_agent_residual: f64,
    pub max_obstacle_residual: f64,
    /// Largest collision residual after each outer iteration (first entry: start).
    pub residual_trace: Vec<f64>,
    pub rho_trace: Vec<(f64, f64)>,
    pub wall_ms: f64,
}

impl AlmDiagnostics {
    pub fn max_residual(&self) -> f64 {
        self.max_agent_residual.max(self.max_obstacle_residual)
    }
}

/// Result of an ALM projection. `converged == false` carries the best iterate found.
#[derive(Debug, Clone)]
pub struct Projection {
    pub trajectory: TrajectorySet,
    pub converged: bool,
    pub diagnostics: AlmDiagnostics,
}

impl Projection {
    /// Turns a non-converged result into an error.
    pub fn into_converged(self) -> Result<TrajectorySet> {
        if self.converged {
            Ok(self.trajectory)
        } else {
            Err(PdmError::NonConvergence {
                iterations: self.diagnostics.outer_iterations,
                max_residual: self.diagnostics.max_residual(),
            })
        }
    }
}

/// Smooth part of the objective: `anchor_weight |x - anchor|^2 + path_weight sum |step|^2`.
#[derive(Debug, Clone)]
pub(crate) struct Objective {
    pub anchor: Vec<f64>,
    pub anchor_weight: f64,
    pub path_weight: f64,
    /// Cap on the first trial step of each inner solve.
    pub max_step: f64,
}

impl Objective {
    pub fn projection(anchor: &[f64]) -> Self {
        Self {
            anchor: anchor.to_vec(),
            anchor_weight: 1.0,
            path_weight: 0.0,
            max_step: f64::INFINITY,
        }
    }

    fn curvature(&self) -> f64 {
        // path Laplacian has spectral radius below 4 per coordinate
        2.0 * self.anchor_weight + 8.0 * self.path_weight
    }

    fn eval(&self, x: &[f64], g: &Geometry, grad: &mut [f64]) -> f64 {
        let mut total = 0.0;
        if self.anchor_weight > 0.0 {
            for ((gi, xi), ai) in grad.iter_mut().zip(x).zip(&self.anchor) {
                let d = xi - ai;
                total += self.anchor_weight * d * d;
                *gi += 2.0 * self.anchor_weight * d;
            }
        }
        if self.path_weight > 0.0 {
            for a in 0..g.n_agents {
                for h in 0..g.horizon - 1 {
                    let (p, q) = (g.idx(a, h), g.idx(a, h + 1));
                    for c in 0..2 {
                        let d = x[q + c] - x[p + c];
                        total += self.path_weight * d * d;
                        grad[q + c] += 2.0 * self.path_weight * d;
                        grad[p + c] -= 2.0 * self.path_weight * d;
                    }
                }
            }
        }
        total
    }
}

struct Workspace {
    grad: Vec<f64>,
    trial: Vec<f64>,
    trial_grad: Vec<f64>,
    res_agent: Vec<f64>,
    res_obstacle: Vec<f64>,
    dykstra: DykstraScratch,
    cand: Candidates,
}

impl Workspace {
    fn new(g: &Geometry, dim: usize) -> Self {
        Self {
            grad: vec![0.0; dim],
            trial: vec![0.0; dim],
            trial_grad: vec![0.0; dim],
            res_agent: vec![0.0; g.n_agent_constraints()],
            res_obstacle: vec![0.0; g.n_obstacle_constraints()],
            dykstra: DykstraScratch::default(),
            cand: Candidates::default(),
        }
    }
}

fn lagrangian(
    x: &[f64],
    obj: &Objective,
    g: &Geometry,
    st: &AlmState,
    cand: &mut Candidates,
    grad: &mut [f64],
) -> f64 {
    grad.iter_mut().for_each(|v| *v = 0.0);
    let mut total = obj.eval(x, g, grad);
    let (ra, ro) = (st.rho_agent, st.rho_obstacle);
    total += collision_penalty_listed(
        x,
        g,
        cand,
        grad,
        |k, h| {
            let nu = st.nu_agent[k];
            (nu * h + ra * h * h, nu + 2.0 * ra * h)
        },
        |k, h| {
            let nu = st.nu_obstacle[k];
            (nu * h + ro * h * h, nu + 2.0 * ro * h)
        },
    );
    total
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

/// Accelerated projected gradient on the augmented Lagrangian over the convex set.
/// Returns the number of gradient steps taken.
fn inner_minimize(
    x: &mut Vec<f64>,
    obj: &Objective,
    g: &Geometry,
    st: &AlmState,
    cfg: &ProjectionConfig,
    ws: &mut Workspace,
) -> usize {
    let rho = st.rho_agent.max(st.rho_obstacle);
    let nu_max = max_of(&st.nu_agent).max(max_of(&st.nu_obstacle));
    let l_hat = jacobian_norm_estimate(x, g);
    let mut step = obj
        .max_step
        .min(1.0 / (obj.curvature() + 4.0 * rho * l_hat + 4.0 * nu_max));

    let mut fx = lagrangian(x, obj, g, st, &mut ws.cand, &mut ws.grad);
    let mut y = x.clone();
    let mut fy = fx;
    let mut gy = ws.grad.clone();
    let mut momentum = 1.0_f64;
    let mut iters = 0;

    while iters < cfg.max_inner {
        iters += 1;
        // backtracking on the projected step from the extrapolated point
        let (fz, moved) = loop {
            for ((t, yi), gi) in ws.trial.iter_mut().zip(&y).zip(&gy) {
                *t = yi - step * gi;
            }
            project_in_place(&mut ws.trial, g, cfg, &mut ws.dykstra);
            let fz = lagrangian(&ws.trial, obj, g, st, &mut ws.cand, &mut ws.trial_grad);
            let mut lin = 0.0;
            let mut sq = 0.0;
            for ((t, yi), gi) in ws.trial.iter().zip(&y).zip(&gy) {
                let d = t - yi;
                lin += gi * d;
                sq += d * d;
            }
            if fz <= fy + lin + 0.5 * sq / step + 1e-15 * fy.abs() || step < 1e-18 {
                break (fz, sq.sqrt());
            }
            step *= 0.5;
        };

        if fz > fx && momentum > 1.0 {
            // function-value restart: drop momentum and retry from x
            momentum = 1.0;
            y.copy_from_slice(x);
            fy = fx;
            gy.copy_from_slice(&ws.grad);
            continue;
        }

        let next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let beta = (momentum - 1.0) / next;
        momentum = next;
        let mut delta = 0.0_f64;
        for i in 0..x.len() {
            let z = ws.trial[i];
            delta = delta.max((z - x[i]).abs());
            y[i] = z + beta * (z - x[i]);
            x[i] = z;
        }
        fx = fz;
        ws.grad.copy_from_slice(&ws.trial_grad);
        if beta == 0.0 {
            fy = fx;
            gy.copy_from_slice(&ws.grad);
        } else {
            fy = lagrangian(&y, obj, g, st, &mut ws.cand, &mut gy);
        }
        let _ = moved;
        if delta <= cfg.inner_tol {
            break;
        }
    }
    iters
}

/// Core ALM loop shared by projection and the expert solver. `x` must hold the
/// primal starting point and is overwritten by the best iterate.
pub(crate) fn alm_minimize(
    x: &mut Vec<f64>,
    obj: &Objective,
    g: &Geometry,
    cfg: &ProjectionConfig,
    state: &mut AlmState,
) -> Result<(bool, AlmDiagnostics)> {
    cfg.validate()?;
    check_reachable(g)?;
    if !state.matches(g) {
        return Err(PdmError::contract("multiplier vectors do not match the instance"));
    }
    let started = Instant::now();
    let mut ws = Workspace::new(g, x.len());
    project_in_place(x, g, cfg, &mut ws.dykstra);

    let mut diag = AlmDiagnostics::default();
    hinge_residuals(x, g, &mut ws.res_agent, &mut ws.res_obstacle);
    let mut prev_a = max_of(&ws.res_agent);
    let mut prev_o = max_of(&ws.res_obstacle);
    diag.residual_trace.push(prev_a.max(prev_o));
    diag.rho_trace.push((state.rho_agent, state.rho_obstacle));

    let mut best = x.clone();
    let mut best_res = prev_a.max(prev_o);
    let mut converged = best_res <= cfg.outer_tol;
    // a feasible start is already optimal for a pure projection, not for a path cost
    let descend_once = obj.path_weight > 0.0;

    while (!converged || descend_once && diag.outer_iterations == 0) && diag.outer_iterations < cfg.max_outer {
        diag.outer_iterations += 1;
        diag.inner_iterations += inner_minimize(x, obj, g, state, cfg, &mut ws);

        hinge_residuals(x, g, &mut ws.res_agent, &mut ws.res_obstacle);
        for (nu, h) in state.nu_agent.iter_mut().zip(&ws.res_agent) {
            *nu += state.rho_agent * h;
        }
        for (nu, h) in state.nu_obstacle.iter_mut().zip(&ws.res_obstacle) {
            *nu += state.rho_obstacle * h;
        }
        let res_a = max_of(&ws.res_agent);
        let res_o = max_of(&ws.res_obstacle);
        if res_a > cfg.outer_tol && res_a > 0.75 * prev_a {
            state.rho_agent = (state.rho_agent * cfg.rho_growth).min(cfg.rho_max);
        }
        if res_o > cfg.outer_tol && res_o > 0.75 * prev_o {
            state.rho_obstacle = (state.rho_obstacle * cfg.rho_growth).min(cfg.rho_max);
        }
        prev_a = res_a;
        prev_o = res_o;
        let res = res_a.max(res_o);
        diag.residual_trace.push(res);
        diag.rho_trace.push((state.rho_agent, state.rho_obstacle));
        if res < best_res {
            best_res = res;
            best.copy_from_slice(x);
        }
        converged = res <= cfg.outer_tol;
    }

    if !converged {
        x.copy_from_slice(&best);
    }
    hinge_residuals(x, g, &mut ws.res_agent, &mut ws.res_obstacle);
    diag.max_agent_residual = max_of(&ws.res_agent);
    diag.max_obstacle_residual = max_of(&ws.res_obstacle);
    diag.rho_agent = state.rho_agent;
    diag.rho_obstacle = state.rho_obstacle;
    diag.wall_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok((converged, diag))
}

/// Augmented-Lagrangian projection of `traj` onto the full feasible set.
///
/// The convex constraints are kept exactly by projecting every inner iterate;
/// the separation constraints enter through multipliers and quadratic
/// penalties on their hinge residuals.
pub fn alm_project(
    traj: &TrajectorySet,
    scenario: &Scenario,
    spec: &ConstraintSpec,
    cfg: &ProjectionConfig,
) -> Result<Projection> {
    let mut state = AlmState::for_instance(scenario, traj.horizon(), cfg.rho_init);
    alm_project_with_state(traj, scenario, spec, cfg, &mut state)
}

/// As [`alm_project`], reusing `state`. Multipliers are reset unless
/// `cfg.carry_multipliers` is set; penalty weights always restart at `rho_init`.
pub fn alm_project_with_state(
    traj: &TrajectorySet,
    scenario: &Scenario,
    spec: &ConstraintSpec,
    cfg: &ProjectionConfig,
    state: &mut AlmState,
) -> Result<Projection> {
    scenario.check_trajectory_shape(traj)?;
    spec.check(scenario)?;
    let g = Geometry::new(scenario, spec, traj.horizon());
    if !state.matches(&g) {
        *state = AlmState::for_instance(scenario, traj.horizon(), cfg.rho_init);
    }
    if !cfg.carry_multipliers {
        state.nu_agent.iter_mut().for_each(|v| *v = 0.0);
        state.nu_obstacle.iter_mut().for_each(|v| *v = 0.0);
    }
    state.rho_agent = cfg.rho_init;
    state.rho_obstacle = cfg.rho_init;

    let obj = Objective::projection(traj.as_slice());
    let mut x = traj.as_slice().to_vec();
    let (converged, diagnostics) = alm_minimize(&mut x, &obj, &g, cfg, state)?;
    Ok(Projection {
        trajectory: TrajectorySet::new(traj.n_agents(), traj.horizon(), x)?,
        converged,
        diagnostics,
    })
}
