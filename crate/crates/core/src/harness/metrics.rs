use crate::domain::{dist, ConstraintSpec, Scenario, TrajectorySet};
use crate::error::Result;
use crate::residuals::{collision_residuals, convex_residuals};

/// Constraint instances counted by [`violation_rate`]:
/// `pairs * H + N_a * N_o * H + N_a * (H - 1) + 2 * N_a`.
pub fn constraint_instances(n_agents: usize, n_obstacles: usize, horizon: usize) -> usize {
    let pairs = n_agents * n_agents.saturating_sub(1) / 2;
    pairs * horizon + n_agents * n_obstacles * horizon + n_agents * (horizon - 1) + 2 * n_agents
}

/// Percentage of constraint instances whose residual exceeds `spec.tolerance`.
pub fn violation_rate(traj: &TrajectorySet, scenario: &Scenario, spec: &ConstraintSpec) -> Result<f64> {
    let col = collision_residuals(traj, scenario, spec)?;
    let cvx = convex_residuals(traj, scenario, spec)?;
    let tol = spec.tolerance;
    let over = |v: &f64| *v > tol;
    let violated = col.agent.iter().filter(|v| over(v)).count()
        + col.obstacle.iter().filter(|v| over(v)).count()
        + cvx.velocity_excess.iter().filter(|v| over(v)).count()
        + cvx.endpoint.iter().flatten().filter(|v| over(v)).count();
    let total = constraint_instances(traj.n_agents(), scenario.n_obstacles(), traj.horizon());
    Ok(100.0 * violated as f64 / total as f64)
}

/// Summed polyline length over all agents.
pub fn path_length(traj: &TrajectorySet) -> f64 {
    let mut total = 0.0;
    for a in 0..traj.n_agents() {
        for h in 0..traj.horizon() - 1 {
            total += dist(traj.get(a, h), traj.get(a, h + 1));
        }
    }
    total
}

/// `sum_i |goal_i - start_i|`, the shortest possible total path length.
pub fn straight_line_bound(scenario: &Scenario) -> f64 {
    scenario.starts.iter().zip(&scenario.goals).map(|(s, g)| dist(*s, *g)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::WorldBounds;

    fn scenario(starts: Vec<[f64; 2]>, goals: Vec<[f64; 2]>) -> Scenario {
        Scenario {
            starts,
            goals,
            obstacles: vec![],
            agent_radius: 0.05,
            v_max: 0.5,
            dt: 1.0,
            world_bounds: WorldBounds::default(),
        }
    }

    #[test]
    fn feasible_trajectory_has_zero_rate() {
        let s = scenario(vec![[0.1, 0.1], [0.1, 0.9]], vec![[0.9, 0.1], [0.9, 0.9]]);
        let t = TrajectorySet::straight_lines(&s.starts, &s.goals, 5);
        assert_eq!(violation_rate(&t, &s, &ConstraintSpec::from_scenario(&s)).unwrap(), 0.0);
    }

    #[test]
    fn single_violation_is_one_over_total() {
        let s = scenario(vec![[0.1, 0.1], [0.1, 0.9]], vec![[0.9, 0.1], [0.9, 0.9]]);
        let mut t = TrajectorySet::straight_lines(&s.starts, &s.goals, 5);
        t.set(0, 4, [0.9, 0.12]);
        let k = constraint_instances(2, 0, 5);
        let rate = violation_rate(&t, &s, &ConstraintSpec::from_scenario(&s)).unwrap();
        assert_eq!(rate, 100.0 / k as f64);
    }

    #[test]
    fn coincident_agents_violate_every_pair_instance() {
        // Both agents share endpoints so only the pair constraints fail.
        let s = scenario(vec![[0.3, 0.5], [0.3, 0.5]], vec![[0.6, 0.5], [0.6, 0.5]]);
        let t = TrajectorySet::straight_lines(&s.starts, &s.goals, 4);
        let rate = violation_rate(&t, &s, &ConstraintSpec::from_scenario(&s)).unwrap();
        assert_eq!(rate, 100.0 * 4.0 / (4 + 0 + 2 * 3 + 4) as f64);
    }

    #[test]
    fn path_lengths_of_simple_shapes() {
        let line = TrajectorySet::new(1, 5, vec![0.0, 0.0, 0.25, 0.0, 0.5, 0.0, 0.75, 0.0, 1.0, 0.0]).unwrap();
        assert!((path_length(&line) - 1.0).abs() < 1e-15);
        let still = TrajectorySet::new(1, 3, vec![0.4, 0.2, 0.4, 0.2, 0.4, 0.2]).unwrap();
        assert_eq!(path_length(&still), 0.0);
        let corner = TrajectorySet::new(1, 3, vec![0.0, 0.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(path_length(&corner), 2.0);
    }
}
