//! Value types shared by every stage of the pipeline: the joint trajectory
//! tensor, the problem instance, and the derived constraint constants.

use serde::{Deserialize, Serialize};

use crate::error::{PdmError, Result};

pub type Point = [f64; 2];

#[inline]
pub fn dist_sq(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

#[inline]
pub fn dist(a: Point, b: Point) -> f64 {
    dist_sq(a, b).sqrt()
}

/// Joint positions of all agents over the horizon, stored row-major as
/// `(agent, step, coord)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    n_agents: usize,
    horizon: usize,
    positions: Vec<f64>,
}

impl TrajectorySet {
    pub fn new(n_agents: usize, horizon: usize, positions: Vec<f64>) -> Result<Self> {
        if n_agents == 0 {
            return Err(PdmError::contract("trajectory needs at least one agent"));
        }
        if horizon < 2 {
            return Err(PdmError::contract(format!("horizon must be >= 2, got {horizon}")));
        }
        if positions.len() != n_agents * horizon * 2 {
            return Err(PdmError::contract(format!(
                "expected {} coordinates for shape ({n_agents}, {horizon}, 2), got {}",
                n_agents * horizon * 2,
                positions.len()
            )));
        }
        if let Some(i) = positions.iter().position(|v| !v.is_finite()) {
            return Err(PdmError::contract(format!("non-finite coordinate at flat index {i}")));
        }
        Ok(Self {
            n_agents,
            horizon,
            positions,
        })
    }

    pub fn zeros(n_agents: usize, horizon: usize) -> Self {
        Self::new(n_agents, horizon, vec![0.0; n_agents * horizon * 2]).expect("valid shape")
    }

    /// Uniform-speed straight lines from each start to its goal.
    pub fn straight_lines(starts: &[Point], goals: &[Point], horizon: usize) -> Self {
        let mut out = Self::zeros(starts.len(), horizon);
        for (a, (s, g)) in starts.iter().zip(goals).enumerate() {
            for h in 0..horizon {
                let f = h as f64 / (horizon - 1) as f64;
                out.set(a, h, [s[0] + f * (g[0] - s[0]), s[1] + f * (g[1] - s[1])]);
            }
        }
        out
    }

    #[inline]
    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    #[inline]
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.positions
    }

    /// Mutable access to the flat buffer. Callers must keep every value finite.
    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.positions
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.positions
    }

    #[inline]
    pub fn index(&self, agent: usize, step: usize) -> usize {
        (agent * self.horizon + step) * 2
    }

    #[inline]
    pub fn get(&self, agent: usize, step: usize) -> Point {
        let i = self.index(agent, step);
        [self.positions[i], self.positions[i + 1]]
    }

    #[inline]
    pub fn set(&mut self, agent: usize, step: usize, p: Point) {
        let i = self.index(agent, step);
        self.positions[i] = p[0];
        self.positions[i + 1] = p[1];
    }

    pub fn agent(&self, agent: usize) -> &[f64] {
        let i = self.index(agent, 0);
        &self.positions[i..i + 2 * self.horizon]
    }

    pub fn is_finite(&self) -> bool {
        self.positions.iter().all(|v| v.is_finite())
    }

    pub fn distance(&self, other: &TrajectorySet) -> f64 {
        self.positions
            .iter()
            .zip(&other.positions)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn translated(&self, by: Point) -> Self {
        let mut out = self.clone();
        for p in out.positions.chunks_exact_mut(2) {
            p[0] += by[0];
            p[1] += by[1];
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Point,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldBounds {
    pub min: Point,
    pub max: Point,
}

impl Default for WorldBounds {
    fn default() -> Self {
        Self {
            min: [0.0, 0.0],
            max: [1.0, 1.0],
        }
    }
}

impl WorldBounds {
    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    pub fn center(&self) -> Point {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
        ]
    }
}

/// A planning instance. Agents are discs of a shared radius, obstacles are
/// static discs.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub starts: Vec<Point>,
    pub goals: Vec<Point>,
    pub obstacles: Vec<Obstacle>,
    pub agent_radius: f64,
    pub v_max: f64,
    pub dt: f64,
    pub world_bounds: WorldBounds,
}

impl Scenario {
    pub fn n_agents(&self) -> usize {
        self.starts.len()
    }

    pub fn n_obstacles(&self) -> usize {
        self.obstacles.len()
    }

    /// Largest step allowed between consecutive waypoints.
    pub fn max_step(&self) -> f64 {
        self.v_max * self.dt
    }

    /// Checks every instance invariant, returning the first violation.
    pub fn validate(&self) -> Result<()> {
        let n = self.starts.len();
        if n == 0 {
            return Err(PdmError::contract("scenario has no agents"));
        }
        if self.goals.len() != n {
            return Err(PdmError::contract(format!(
                "{n} starts but {} goals",
                self.goals.len()
            )));
        }
        for (name, v) in [
            ("agent_radius", self.agent_radius),
            ("v_max", self.v_max),
            ("dt", self.dt),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(PdmError::contract(format!("{name} must be positive, got {v}")));
            }
        }
        let b = &self.world_bounds;
        if !(b.min[0] < b.max[0] && b.min[1] < b.max[1]) {
            return Err(PdmError::contract("world bounds are empty"));
        }
        for (j, o) in self.obstacles.iter().enumerate() {
            if !(o.radius.is_finite() && o.radius > 0.0) {
                return Err(PdmError::contract(format!("obstacle {j}: radius must be positive")));
            }
            if !(o.center[0].is_finite() && o.center[1].is_finite()) {
                return Err(PdmError::contract(format!("obstacle {j}: non-finite center")));
            }
        }
        let min_sep = 2.0 * self.agent_radius;
        for (kind, pts) in [("start", &self.starts), ("goal", &self.goals)] {
            for (i, p) in pts.iter().enumerate() {
                if !b.contains(*p) {
                    return Err(PdmError::contract(format!("{kind} {i} lies outside the world")));
                }
                for (j, o) in self.obstacles.iter().enumerate() {
                    if dist(*p, o.center) < o.radius + self.agent_radius {
                        return Err(PdmError::contract(format!(
                            "{kind} {i} lies inside inflated obstacle {j}"
                        )));
                    }
                }
                for (j, q) in pts.iter().enumerate().skip(i + 1) {
                    if dist(*p, *q) < min_sep {
                        return Err(PdmError::contract(format!(
                            "{kind}s {i} and {j} are closer than two agent radii"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn check_trajectory_shape(&self, traj: &TrajectorySet) -> Result<()> {
        if traj.n_agents() != self.n_agents() {
            return Err(PdmError::contract(format!(
                "trajectory has {} agents, scenario has {}",
                traj.n_agents(),
                self.n_agents()
            )));
        }
        Ok(())
    }

    pub fn translated(&self, by: Point) -> Self {
        let shift = |p: &Point| [p[0] + by[0], p[1] + by[1]];
        Self {
            starts: self.starts.iter().map(shift).collect(),
            goals: self.goals.iter().map(shift).collect(),
            obstacles: self
                .obstacles
                .iter()
                .map(|o| Obstacle {
                    center: shift(&o.center),
                    radius: o.radius,
                })
                .collect(),
            world_bounds: WorldBounds {
                min: shift(&self.world_bounds.min),
                max: shift(&self.world_bounds.max),
            },
            ..self.clone()
        }
    }
}

/// Constraint constants derived from a [`Scenario`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSpec {
    /// Minimum centre distance between two agents.
    pub r_agent: f64,
    /// Minimum centre distance between an agent and each obstacle.
    pub r_obstacle: Vec<f64>,
    pub v_max_step: f64,
    /// Slack under which a constraint instance still counts as satisfied.
    pub tolerance: f64,
}

impl ConstraintSpec {
    pub const DEFAULT_TOLERANCE: f64 = 1e-4;

    pub fn from_scenario(scenario: &Scenario) -> Self {
        Self::with_tolerance(scenario, Self::DEFAULT_TOLERANCE)
    }

    pub fn with_tolerance(scenario: &Scenario, tolerance: f64) -> Self {
        Self {
            r_agent: 2.0 * scenario.agent_radius,
            r_obstacle: scenario
                .obstacles
                .iter()
                .map(|o| scenario.agent_radius + o.radius)
                .collect(),
            v_max_step: scenario.max_step(),
            tolerance,
        }
    }

    pub(crate) fn check(&self, scenario: &Scenario) -> Result<()> {
        if self.r_obstacle.len() != scenario.n_obstacles() {
            return Err(PdmError::contract(format!(
                "constraint spec covers {} obstacles, scenario has {}",
                self.r_obstacle.len(),
                scenario.n_obstacles()
            )));
        }
        Ok(())
    }
}
