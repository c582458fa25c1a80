//! Constraint residuals for a joint trajectory.
//!
//! Anti-collision constraints are written with a nonnegative slack,
//! `R^2 - |p - q|^2 + d = 0`. The optimal slack is `max(0, |p - q|^2 - R^2)`,
//! which leaves the hinge `max(0, R^2 - |p - q|^2)` as the equality violation.
//! Agent pairs are enumerated as `(i, j)` with `i < j` in lexicographic order.

use crate::domain::{dist, dist_sq, ConstraintSpec, Scenario, TrajectorySet};
use crate::error::Result;

/// Hinge residuals of the two anti-collision families.
#[derive(Debug, Clone, PartialEq)]
pub struct CollisionResiduals {
    n_agents: usize,
    n_obstacles: usize,
    horizon: usize,
    /// `(pair, step)` row-major.
    pub agent: Vec<f64>,
    /// `(agent, obstacle, step)` row-major.
    pub obstacle: Vec<f64>,
}

impl CollisionResiduals {
    pub fn n_pairs(&self) -> usize {
        self.n_agents * self.n_agents.saturating_sub(1) / 2
    }

    pub fn agent_at(&self, i: usize, j: usize, step: usize) -> f64 {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.agent[pair_index(self.n_agents, i, j) * self.horizon + step]
    }

    pub fn obstacle_at(&self, agent: usize, obstacle: usize, step: usize) -> f64 {
        self.obstacle[(agent * self.n_obstacles + obstacle) * self.horizon + step]
    }

    pub fn max_agent(&self) -> f64 {
        self.agent.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_obstacle(&self) -> f64 {
        self.obstacle.iter().copied().fold(0.0, f64::max)
    }

    pub fn max(&self) -> f64 {
        self.max_agent().max(self.max_obstacle())
    }
}

/// Endpoint errors and per-step speed excess.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexResiduals {
    horizon: usize,
    /// `(|first - start|, |last - goal|)` per agent.
    pub endpoint: Vec<[f64; 2]>,
    /// `(agent, step)` row-major with `horizon - 1` steps per agent.
    pub velocity_excess: Vec<f64>,
}

impl ConvexResiduals {
    pub fn velocity_at(&self, agent: usize, step: usize) -> f64 {
        self.velocity_excess[agent * (self.horizon - 1) + step]
    }

    pub fn max_endpoint(&self) -> f64 {
        self.endpoint.iter().flatten().copied().fold(0.0, f64::max)
    }

    pub fn max_velocity(&self) -> f64 {
        self.velocity_excess.iter().copied().fold(0.0, f64::max)
    }

    pub fn max(&self) -> f64 {
        self.max_endpoint().max(self.max_velocity())
    }
}

/// Flat index of the unordered pair `i < j` among `n` agents.
#[inline]
pub fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * (2 * n - i - 1) / 2 + (j - i - 1)
}

pub fn collision_residuals(
    traj: &TrajectorySet,
    scenario: &Scenario,
    spec: &ConstraintSpec,
) -> Result<CollisionResiduals> {
    scenario.check_trajectory_shape(traj)?;
    spec.check(scenario)?;
    let n = traj.n_agents();
    let h_len = traj.horizon();
    let r2 = spec.r_agent * spec.r_agent;

    let mut agent = Vec::with_capacity(n * n.saturating_sub(1) / 2 * h_len);
    for i in 0..n {
        for j in i + 1..n {
            for h in 0..h_len {
                agent.push((r2 - dist_sq(traj.get(i, h), traj.get(j, h))).max(0.0));
            }
        }
    }

    let n_obs = scenario.n_obstacles();
    let mut obstacle = Vec::with_capacity(n * n_obs * h_len);
    for i in 0..n {
        for (o, r) in scenario.obstacles.iter().zip(&spec.r_obstacle) {
            let ro2 = r * r;
            for h in 0..h_len {
                obstacle.push((ro2 - dist_sq(traj.get(i, h), o.center)).max(0.0));
            }
        }
    }

    Ok(CollisionResiduals {
        n_agents: n,
        n_obstacles: n_obs,
        horizon: h_len,
        agent,
        obstacle,
    })
}

pub fn convex_residuals(
    traj: &TrajectorySet,
    scenario: &Scenario,
    spec: &ConstraintSpec,
) -> Result<ConvexResiduals> {
    scenario.check_trajectory_shape(traj)?;
    let h_len = traj.horizon();
    let endpoint = (0..traj.n_agents())
        .map(|i| {
            [
                dist(traj.get(i, 0), scenario.starts[i]),
                dist(traj.get(i, h_len - 1), scenario.goals[i]),
            ]
        })
        .collect();
    let mut velocity_excess = Vec::with_capacity(traj.n_agents() * (h_len - 1));
    for i in 0..traj.n_agents() {
        for h in 0..h_len - 1 {
            let step = dist(traj.get(i, h), traj.get(i, h + 1));
            velocity_excess.push((step - spec.v_max_step).max(0.0));
        }
    }
    Ok(ConvexResiduals {
        horizon: h_len,
        endpoint,
        velocity_excess,
    })
}

/// Largest residual across every constraint family.
pub fn max_residual(traj: &TrajectorySet, scenario: &Scenario, spec: &ConstraintSpec) -> Result<f64> {
    let c = collision_residuals(traj, scenario, spec)?;
    let v = convex_residuals(traj, scenario, spec)?;
    Ok(c.max().max(v.max()))
}
