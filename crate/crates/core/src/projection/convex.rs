//! Exact Euclidean projection onto the convex part of the feasible set:
//! pinned endpoints plus a speed limit on every step.
//!
//! Agents decouple, so each is projected on its own. With the endpoints
//! assigned, the remaining set is the intersection of one convex set per
//! step, each with a closed-form projection, and Dykstra's method converges to
//! the projection onto the intersection.

use super::terms::Geometry;
use super::ProjectionConfig;
use crate::domain::{dist, ConstraintSpec, Scenario, TrajectorySet};
use crate::error::{PdmError, Result};

/// Relative slack allowed on the reachability precheck.
const REACH_SLACK: f64 = 1e-12;

/// Projects `traj` onto the set of trajectories with the scenario's endpoints
/// and no step longer than `v_max * dt`.
pub fn project_convex(
    traj: &TrajectorySet,
    scenario: &Scenario,
    spec: &ConstraintSpec,
    cfg: &ProjectionConfig,
) -> Result<TrajectorySet> {
    scenario.check_trajectory_shape(traj)?;
    let g = Geometry::new(scenario, spec, traj.horizon());
    check_reachable(&g)?;
    let mut out = traj.clone();
    let mut scratch = DykstraScratch::default();
    project_in_place(out.as_mut_slice(), &g, cfg, &mut scratch);
    Ok(out)
}

pub(crate) fn check_reachable(g: &Geometry) -> Result<()> {
    let budget = (g.horizon - 1) as f64 * g.v_step;
    for (i, (s, e)) in g.starts.iter().zip(&g.goals).enumerate() {
        let need = dist(*s, *e);
        if need > budget * (1.0 + REACH_SLACK) {
            return Err(PdmError::Infeasible(format!(
                "agent {i} needs {need:.6} but can travel at most {budget:.6} over the horizon"
            )));
        }
    }
    Ok(())
}

/// Dykstra increments kept between calls. Dykstra's method is block
/// coordinate ascent on the dual, so any stored increments are a valid
/// starting point and successive nearby inputs converge in a few sweeps.
#[derive(Debug, Default)]
pub(crate) struct DykstraScratch {
    /// Four per step set and agent: (dx_k, dy_k, dx_{k+1}, dy_{k+1}).
    incr: Vec<f64>,
}

/// Projects every agent in place. Returns the number of sweeps used by the slowest agent.
pub(crate) fn project_in_place(
    x: &mut [f64],
    g: &Geometry,
    cfg: &ProjectionConfig,
    scratch: &mut DykstraScratch,
) -> usize {
    let h_len = g.horizon;
    let per_agent = 4 * (h_len - 1);
    if scratch.incr.len() != per_agent * g.n_agents {
        scratch.incr.clear();
        scratch.incr.resize(per_agent * g.n_agents, 0.0);
    }
    let mut worst = 0;
    for a in 0..g.n_agents {
        let base = g.idx(a, 0);
        let path = &mut x[base..base + 2 * h_len];
        let incr = &mut scratch.incr[a * per_agent..(a + 1) * per_agent];
        let sweeps = project_agent(path, g.starts[a], g.goals[a], g.v_step, cfg, incr);
        worst = worst.max(sweeps);
    }
    worst
}

fn project_agent(
    path: &mut [f64],
    start: [f64; 2],
    goal: [f64; 2],
    v: f64,
    cfg: &ProjectionConfig,
    incr: &mut [f64],
) -> usize {
    let h_len = path.len() / 2;
    path[0] = start[0];
    path[1] = start[1];
    path[2 * h_len - 2] = goal[0];
    path[2 * h_len - 1] = goal[1];
    if h_len <= 2 || max_excess(path, v) <= 0.0 {
        return 0;
    }

    let n_sets = h_len - 1;
    // warm start: x = y - sum of increments on the free points
    for k in 0..n_sets {
        let q = &incr[4 * k..4 * k + 4];
        if k > 0 {
            path[2 * k] -= q[0];
            path[2 * k + 1] -= q[1];
        }
        if k < n_sets - 1 {
            path[2 * k + 2] -= q[2];
            path[2 * k + 3] -= q[3];
        }
    }
    let stop_change = 0.1 * cfg.inner_tol;

    for sweep in 1..=cfg.dykstra_iters {
        let mut change = 0.0_f64;
        for k in 0..n_sets {
            let (a, b) = (2 * k, 2 * k + 2);
            let q = &mut incr[4 * k..4 * k + 4];
            let first_fixed = k == 0;
            let last_fixed = k == n_sets - 1;
            // y = x + increment on the free points of this set
            let mut p = [path[a], path[a + 1]];
            let mut r = [path[b], path[b + 1]];
            if !first_fixed {
                p[0] += q[0];
                p[1] += q[1];
            }
            if !last_fixed {
                r[0] += q[2];
                r[1] += q[3];
            }
            let (pp, rp) = project_step(p, r, v, first_fixed, last_fixed);
            if !first_fixed {
                change = change.max((pp[0] - path[a]).abs()).max((pp[1] - path[a + 1]).abs());
                q[0] = p[0] - pp[0];
                q[1] = p[1] - pp[1];
                path[a] = pp[0];
                path[a + 1] = pp[1];
            }
            if !last_fixed {
                change = change.max((rp[0] - path[b]).abs()).max((rp[1] - path[b + 1]).abs());
                q[2] = r[0] - rp[0];
                q[3] = r[1] - rp[1];
                path[b] = rp[0];
                path[b + 1] = rp[1];
            }
        }
        if change <= stop_change && max_excess(path, v) <= cfg.inner_tol {
            return sweep;
        }
    }
    cfg.dykstra_iters
}

/// Projection onto `{(p, r) : |r - p| <= v}` with either side optionally pinned.
#[inline]
fn project_step(p: [f64; 2], r: [f64; 2], v: f64, p_fixed: bool, r_fixed: bool) -> ([f64; 2], [f64; 2]) {
    let d = [r[0] - p[0], r[1] - p[1]];
    let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
    if len <= v {
        return (p, r);
    }
    let excess = len - v;
    match (p_fixed, r_fixed) {
        (false, false) => {
            let s = 0.5 * excess / len;
            (
                [p[0] + s * d[0], p[1] + s * d[1]],
                [r[0] - s * d[0], r[1] - s * d[1]],
            )
        }
        (true, false) => {
            let s = excess / len;
            (p, [r[0] - s * d[0], r[1] - s * d[1]])
        }
        (false, true) => {
            let s = excess / len;
            ([p[0] + s * d[0], p[1] + s * d[1]], r)
        }
        // both pinned: only possible when H == 2, where reachability was checked
        (true, true) => (p, r),
    }
}

fn max_excess(path: &[f64], v: f64) -> f64 {
    path.chunks_exact(2)
        .zip(path.chunks_exact(2).skip(1))
        .map(|(a, b)| {
            let dx = b[0] - a[0];
            let dy = b[1] - a[1];
            (dx * dx + dy * dy).sqrt() - v
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::WorldBounds;

    fn one_agent(start: [f64; 2], goal: [f64; 2], v: f64) -> Scenario {
        Scenario {
            starts: vec![start],
            goals: vec![goal],
            obstacles: vec![],
            agent_radius: 0.01,
            v_max: v,
            dt: 1.0,
            world_bounds: WorldBounds {
                min: [-2.0, -2.0],
                max: [2.0, 2.0],
            },
        }
    }

    #[test]
    fn identity_on_the_set() {
        let s = one_agent([0.0, 0.0], [1.0, 0.0], 0.3);
        let spec = ConstraintSpec::from_scenario(&s);
        let mut t = TrajectorySet::straight_lines(&s.starts, &s.goals, 6);
        t.set(0, 2, [0.45, 0.1]);
        let p = project_convex(&t, &s, &spec, &ProjectionConfig::default()).unwrap();
        assert!(p.distance(&t) < 1e-12);
    }

    #[test]
    fn lens_midpoint() {
        // Midpoint (0.5, 0.5) between (0,0) and (1,0) with step 0.6 lands on the
        // lens tip where both circles meet: y* = sqrt(0.6^2 - 0.5^2).
        let s = one_agent([0.0, 0.0], [1.0, 0.0], 0.6);
        let spec = ConstraintSpec::from_scenario(&s);
        let mut t = TrajectorySet::zeros(1, 3);
        t.set(0, 0, [0.0, 0.0]);
        t.set(0, 1, [0.5, 0.5]);
        t.set(0, 2, [1.0, 0.0]);
        let p = project_convex(&t, &s, &spec, &ProjectionConfig::default()).unwrap();
        let m = p.get(0, 1);
        assert!((m[0] - 0.5).abs() < 1e-6, "{m:?}");
        assert!((m[1] - 0.11f64.sqrt()).abs() < 1e-6, "{m:?}");
    }

    #[test]
    fn endpoints_are_pinned() {
        let s = one_agent([0.1, 0.2], [0.7, 0.4], 0.2);
        let spec = ConstraintSpec::from_scenario(&s);
        let mut t = TrajectorySet::straight_lines(&s.starts, &s.goals, 8);
        t.set(0, 0, [0.3, -0.2]);
        t.set(0, 7, [1.0, 1.0]);
        let p = project_convex(&t, &s, &spec, &ProjectionConfig::default()).unwrap();
        assert_eq!(p.get(0, 0), [0.1, 0.2]);
        assert_eq!(p.get(0, 7), [0.7, 0.4]);
    }

    #[test]
    fn unreachable_goal_is_infeasible() {
        let s = one_agent([0.0, 0.0], [1.0, 0.0], 0.1);
        let spec = ConstraintSpec::from_scenario(&s);
        let t = TrajectorySet::zeros(1, 5);
        let err = project_convex(&t, &s, &spec, &ProjectionConfig::default()).unwrap_err();
        assert!(matches!(err, PdmError::Infeasible(_)));
    }
}
