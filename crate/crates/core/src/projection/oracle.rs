//! Reference projector: quadratic-penalty continuation from several starting
//! points, each stage minimised with L-BFGS. Every constraint, including the
//! speed limits, enters as a smooth penalty; endpoints are pinned directly.
//! Nothing here shares code with the convex projector or the ALM loop beyond
//! the penalty-term evaluation.

use std::collections::VecDeque;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::terms::{collision_penalty_listed, hinge_residuals, velocity_penalty_sq, Candidates, Geometry};
use crate::domain::{ConstraintSpec, Scenario, TrajectorySet};
use crate::error::{PdmError, Result};

const RHO_START: f64 = 1.0;
const RHO_LIMIT: f64 = 1e8;
const COLLISION_TOL: f64 = 1e-6;
const VELOCITY_TOL: f64 = 1e-6;
const LBFGS_MEMORY: usize = 10;
const LBFGS_MAX_ITERS: usize = 2_000;
const JITTER_SEED: u64 = 0x0bad_cafe;

#[derive(Debug, Clone)]
pub struct OracleReport {
    pub trajectory: TrajectorySet,
    /// Euclidean distance from the input.
    pub distance: f64,
    pub feasible_restarts: usize,
    pub max_residual: f64,
    pub wall_ms: f64,
}

/// Feasible point of smallest distance to `traj` found from `restarts`
/// starting points (the first is `traj` itself, the rest are jittered copies).
pub fn oracle_project(
    traj: &TrajectorySet,
    scenario: &Scenario,
    spec: &ConstraintSpec,
    restarts: usize,
) -> Result<OracleReport> {
    scenario.check_trajectory_shape(traj)?;
    if restarts == 0 {
        return Err(PdmError::contract("oracle needs at least one restart"));
    }
    let started = Instant::now();
    let g = Geometry::new(scenario, spec, traj.horizon());
    let anchor = traj.as_slice();
    let mut rng = ChaCha8Rng::seed_from_u64(JITTER_SEED);
    let jitter = spec.r_agent;

    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    let mut feasible_restarts = 0;
    let mut least_residual = f64::INFINITY;
    for r in 0..restarts {
        let mut x = anchor.to_vec();
        if r > 0 {
            for v in x.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += jitter * z;
            }
        }
        pin_endpoints(&mut x, &g);
        let residual = continuation(&mut x, anchor, &g);
        least_residual = least_residual.min(residual);
        if residual <= 0.0 {
            feasible_restarts += 1;
            let d = distance(&x, anchor);
            if best.as_ref().is_none_or(|(bd, _, _)| d < *bd) {
                let res = max_collision(&x, &g);
                best = Some((d, x, res));
            }
        }
    }

    match best {
        Some((distance, x, max_residual)) => Ok(OracleReport {
            trajectory: TrajectorySet::new(traj.n_agents(), traj.horizon(), x)?,
            distance,
            feasible_restarts,
            max_residual,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        }),
        None => Err(PdmError::OracleFailure {
            restarts,
            best_residual: least_residual,
        }),
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn pin_endpoints(x: &mut [f64], g: &Geometry) {
    for a in 0..g.n_agents {
        let s = g.idx(a, 0);
        let e = g.idx(a, g.horizon - 1);
        x[s..s + 2].copy_from_slice(&g.starts[a]);
        x[e..e + 2].copy_from_slice(&g.goals[a]);
    }
}

fn max_collision(x: &[f64], g: &Geometry) -> f64 {
    let mut ra = vec![0.0; g.n_agent_constraints()];
    let mut ro = vec![0.0; g.n_obstacle_constraints()];
    hinge_residuals(x, g, &mut ra, &mut ro);
    ra.iter().chain(&ro).copied().fold(0.0, f64::max)
}

fn max_speed_excess(x: &[f64], g: &Geometry) -> f64 {
    let mut worst = 0.0_f64;
    for a in 0..g.n_agents {
        for h in 0..g.horizon - 1 {
            let (p, q) = (g.idx(a, h), g.idx(a, h + 1));
            let d = ((x[q] - x[p]).powi(2) + (x[q + 1] - x[p + 1]).powi(2)).sqrt();
            worst = worst.max(d - g.v_step);
        }
    }
    worst
}

/// Runs the penalty continuation in place. Returns 0 once feasible, otherwise
/// the final largest violation.
fn continuation(x: &mut [f64], anchor: &[f64], g: &Geometry) -> f64 {
    let mut rho = RHO_START;
    let mut cand = Candidates::default();
    loop {
        lbfgs(x, g, |p, grad| penalty(p, anchor, g, rho, &mut cand, grad));
        let coll = max_collision(x, g);
        let speed = max_speed_excess(x, g);
        if coll <= COLLISION_TOL && speed <= VELOCITY_TOL {
            return 0.0;
        }
        if rho >= RHO_LIMIT {
            return coll.max(speed);
        }
        rho = (rho * 2.0).min(RHO_LIMIT);
    }
}

fn penalty(
    x: &[f64],
    anchor: &[f64],
    g: &Geometry,
    rho: f64,
    cand: &mut Candidates,
    grad: &mut [f64],
) -> f64 {
    grad.iter_mut().for_each(|v| *v = 0.0);
    let mut f = 0.0;
    for ((gi, xi), ai) in grad.iter_mut().zip(x).zip(anchor) {
        let d = xi - ai;
        f += d * d;
        *gi = 2.0 * d;
    }
    f += collision_penalty_listed(
        x,
        g,
        cand,
        grad,
        |_, h| (rho * h * h, 2.0 * rho * h),
        |_, h| (rho * h * h, 2.0 * rho * h),
    );
    f += velocity_penalty_sq(x, g, rho, grad);
    // endpoints are fixed
    for a in 0..g.n_agents {
        for h in [0, g.horizon - 1] {
            let i = g.idx(a, h);
            grad[i] = 0.0;
            grad[i + 1] = 0.0;
        }
    }
    f
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory BFGS with Armijo backtracking.
fn lbfgs(x: &mut [f64], _g: &Geometry, mut f: impl FnMut(&[f64], &mut [f64]) -> f64) {
    let n = x.len();
    let mut grad = vec![0.0; n];
    let mut fx = f(x, &mut grad);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(LBFGS_MEMORY);
    let mut dir = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial_grad = vec![0.0; n];
    let mut alpha = vec![0.0; LBFGS_MEMORY];

    for _ in 0..LBFGS_MAX_ITERS {
        let gnorm = grad.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if gnorm <= 1e-12 {
            break;
        }
        // two-loop recursion
        dir.copy_from_slice(&grad);
        for (k, (s, y, rho)) in history.iter().enumerate().rev() {
            alpha[k] = rho * dot(s, &dir);
            dir.iter_mut().zip(y).for_each(|(d, yi)| *d -= alpha[k] * yi);
        }
        if let Some((s, y, _)) = history.back() {
            let scale = dot(s, y) / dot(y, y);
            dir.iter_mut().for_each(|d| *d *= scale);
        } else {
            let scale = 1.0 / gnorm.max(1.0);
            dir.iter_mut().for_each(|d| *d *= scale);
        }
        for (k, (s, y, rho)) in history.iter().enumerate() {
            let beta = rho * dot(y, &dir);
            dir.iter_mut().zip(s).for_each(|(d, si)| *d += (alpha[k] - beta) * si);
        }
        dir.iter_mut().for_each(|d| *d = -*d);
        let mut slope = dot(&grad, &dir);
        if slope >= 0.0 {
            history.clear();
            dir.iter_mut().zip(&grad).for_each(|(d, gi)| *d = -gi / gnorm.max(1.0));
            slope = dot(&grad, &dir);
        }

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            trial.iter_mut().zip(x.iter()).zip(&dir).for_each(|((t, xi), d)| *t = xi + step * d);
            let ft = f(&trial, &mut trial_grad);
            if ft <= fx + 1e-4 * step * slope {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        let s: Vec<f64> = trial.iter().zip(x.iter()).map(|(t, xi)| t - xi).collect();
        let y: Vec<f64> = trial_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let fprev = fx;
        x.copy_from_slice(&trial);
        grad.copy_from_slice(&trial_grad);
        fx = f(x, &mut grad);
        if sy > 1e-300 {
            if history.len() == LBFGS_MEMORY {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        if (fprev - fx).abs() <= 1e-16 * fx.abs().max(1e-300) {
            break;
        }
    }
}
