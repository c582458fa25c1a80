//! Procedural instance families and their on-disk formats.

mod io;

pub use io::{
    load_scenario, load_trajectories, read_scenario_json, read_trajectories_binary, save_scenario,
    save_trajectories, scenario_to_json, trajectories_to_binary, SCENARIO_VERSION, TRAJECTORY_MAGIC,
    TRAJECTORY_VERSION,
};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::domain::{dist, Obstacle, Point, Scenario, WorldBounds};
use crate::error::{PdmError, Result};
use crate::rng::{derive_seed, rng_from_seed, Rng};

pub const DEFAULT_RETRY_BUDGET: usize = 10_000;

/// Narrow passage through a wall that spans the world; agents start on both
/// sides and have to trade places through it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorridorParams {
    pub n_agents: usize,
    /// Free width between the inner wall surfaces.
    pub width: f64,
    /// Require `width < 4 * agent_radius`, so agents cannot pass side by side.
    pub must_coordinate: bool,
    pub agent_radius: f64,
    pub v_max: f64,
    pub wall_radius: f64,
    /// Number of disc columns per wall, which sets the corridor length.
    pub wall_columns: usize,
    /// Extra clearance required beyond a single agent diameter.
    pub clearance: f64,
}

impl Default for CorridorParams {
    fn default() -> Self {
        Self {
            n_agents: 2,
            width: 0.125,
            must_coordinate: false,
            agent_radius: 0.025,
            v_max: 0.04,
            wall_radius: 0.05,
            wall_columns: 2,
            clearance: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObstacleDenseParams {
    pub n_obstacles: usize,
    pub n_agents: usize,
    pub agent_radius: f64,
    pub v_max: f64,
    pub obstacle_radius: (f64, f64),
    /// Gap required between an endpoint's disc and any obstacle.
    pub clearance: f64,
}

impl Default for ObstacleDenseParams {
    fn default() -> Self {
        Self {
            n_obstacles: 20,
            n_agents: 4,
            agent_radius: 0.02,
            v_max: 0.06,
            obstacle_radius: (0.03, 0.06),
            clearance: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentDenseParams {
    pub n_agents: usize,
    pub n_obstacles: usize,
    pub agent_radius: f64,
    pub v_max: f64,
    pub obstacle_radius: (f64, f64),
    pub clearance: f64,
}

impl Default for AgentDenseParams {
    fn default() -> Self {
        Self {
            n_agents: 12,
            n_obstacles: 2,
            agent_radius: 0.02,
            v_max: 0.06,
            obstacle_radius: (0.03, 0.05),
            clearance: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum FamilyParams {
    NarrowCorridor(CorridorParams),
    ObstacleDense(ObstacleDenseParams),
    AgentDense(AgentDenseParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FamilyKind {
    NarrowCorridor,
    ObstacleDense,
    AgentDense,
}

impl FamilyKind {
    pub const ALL: [FamilyKind; 3] = [
        FamilyKind::NarrowCorridor,
        FamilyKind::ObstacleDense,
        FamilyKind::AgentDense,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::NarrowCorridor => "narrow-corridor",
            FamilyKind::ObstacleDense => "obstacle-dense",
            FamilyKind::AgentDense => "agent-dense",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "narrow-corridor" | "nc" | "corridor" => Ok(FamilyKind::NarrowCorridor),
            "obstacle-dense" | "od" | "os" => Ok(FamilyKind::ObstacleDense),
            "agent-dense" | "ad" | "as" => Ok(FamilyKind::AgentDense),
            other => Err(PdmError::contract(format!("unknown scenario family `{other}`"))),
        }
    }

    pub fn default_params(self) -> FamilyParams {
        match self {
            FamilyKind::NarrowCorridor => FamilyParams::NarrowCorridor(CorridorParams::default()),
            FamilyKind::ObstacleDense => FamilyParams::ObstacleDense(ObstacleDenseParams::default()),
            FamilyKind::AgentDense => FamilyParams::AgentDense(AgentDenseParams::default()),
        }
    }

    pub(crate) fn tag(self) -> u64 {
        match self {
            FamilyKind::NarrowCorridor => 0x4e43,
            FamilyKind::ObstacleDense => 0x4f44,
            FamilyKind::AgentDense => 0x4144,
        }
    }
}

impl FamilyParams {
    pub fn kind(&self) -> FamilyKind {
        match self {
            FamilyParams::NarrowCorridor(_) => FamilyKind::NarrowCorridor,
            FamilyParams::ObstacleDense(_) => FamilyKind::ObstacleDense,
            FamilyParams::AgentDense(_) => FamilyKind::AgentDense,
        }
    }

    pub fn n_agents(&self) -> usize {
        match self {
            FamilyParams::NarrowCorridor(p) => p.n_agents,
            FamilyParams::ObstacleDense(p) => p.n_agents,
            FamilyParams::AgentDense(p) => p.n_agents,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFamily {
    pub params: FamilyParams,
    pub seed: u64,
}

impl ScenarioFamily {
    pub fn new(kind: FamilyKind, seed: u64) -> Self {
        Self {
            params: kind.default_params(),
            seed,
        }
    }

    pub fn kind(&self) -> FamilyKind {
        self.params.kind()
    }
}

/// Draws an instance. A pure function of `(params, seed)`.
pub fn generate(family: &ScenarioFamily) -> Result<Scenario> {
    let mut rng = rng_from_seed(derive_seed(family.seed, family.kind().tag(), 0));
    let scenario = match &family.params {
        FamilyParams::NarrowCorridor(p) => {
            check_corridor(p)?;
            corridor(p, &mut rng)
        }
        FamilyParams::ObstacleDense(p) => scatter(
            &Scatter {
                n_agents: p.n_agents,
                n_obstacles: p.n_obstacles,
                agent_radius: p.agent_radius,
                v_max: p.v_max,
                obstacle_radius: p.obstacle_radius,
                clearance: p.clearance,
            },
            &mut rng,
        )?,
        FamilyParams::AgentDense(p) => scatter(
            &Scatter {
                n_agents: p.n_agents,
                n_obstacles: p.n_obstacles,
                agent_radius: p.agent_radius,
                v_max: p.v_max,
                obstacle_radius: p.obstacle_radius,
                clearance: p.clearance,
            },
            &mut rng,
        )?,
    };
    scenario.validate()?;
    Ok(scenario)
}

fn check_corridor(p: &CorridorParams) -> Result<()> {
    if p.n_agents == 0 {
        return Err(PdmError::contract("corridor needs at least one agent"));
    }
    if p.wall_columns == 0 || !(p.wall_radius > 0.0) || !(p.agent_radius > 0.0) || !(p.v_max > 0.0) {
        return Err(PdmError::contract("corridor wall and agent sizes must be positive"));
    }
    let min_width = 2.0 * p.agent_radius + p.clearance;
    if p.width < min_width {
        return Err(PdmError::contract(format!(
            "corridor width {} is below the single-file minimum {min_width}",
            p.width
        )));
    }
    if p.must_coordinate && p.width >= 4.0 * p.agent_radius {
        return Err(PdmError::contract(format!(
            "must_coordinate requires width < {}",
            4.0 * p.agent_radius
        )));
    }
    Ok(())
}

/// Corridor builder without the passability check, so that deliberately
/// blocked instances can be constructed.
pub fn corridor_unchecked(p: &CorridorParams, seed: u64) -> Scenario {
    let mut rng = rng_from_seed(derive_seed(seed, FamilyKind::NarrowCorridor.tag(), 0));
    corridor(p, &mut rng)
}

const CORRIDOR_X: (f64, f64) = (0.1, 0.9);
const WALL_OVERHANG: f64 = 0.1;

fn corridor(p: &CorridorParams, rng: &mut Rng) -> Scenario {
    let bounds = WorldBounds::default();
    let gap_center = 0.5 + rng.random_range(-0.08..0.08);
    let half = 0.5 * p.width;
    let spacing = p.wall_radius;

    let mut obstacles = Vec::new();
    for c in 0..p.wall_columns {
        let x = 0.5 + (c as f64 - 0.5 * (p.wall_columns - 1) as f64) * spacing;
        // upper wall: from the gap edge up past the top of the world
        let mut y = gap_center + half + p.wall_radius;
        while y - p.wall_radius <= bounds.max[1] + WALL_OVERHANG {
            obstacles.push(Obstacle { center: [x, y], radius: p.wall_radius });
            y += spacing;
        }
        let mut y = gap_center - half - p.wall_radius;
        while y + p.wall_radius >= bounds.min[1] - WALL_OVERHANG {
            obstacles.push(Obstacle { center: [x, y], radius: p.wall_radius });
            y -= spacing;
        }
    }

    // Agents alternate sides. Each side's column is ordered so that goals
    // reverse the vertical order, which makes opposite-moving straight lines cross.
    let n_left = p.n_agents.div_ceil(2);
    let n_right = p.n_agents - n_left;
    let lane = 2.0 * p.agent_radius + 0.03;
    let column = |count: usize, rng: &mut Rng| -> Vec<f64> {
        let offset = rng.random_range(0.005..0.03);
        (0..count)
            .map(|k| gap_center + offset + lane * (k as f64 - 0.5 * count.saturating_sub(1) as f64))
            .collect()
    };
    let left = column(n_left, rng);
    let right = column(n_right, rng);
    let mut starts = Vec::with_capacity(p.n_agents);
    let mut goals = Vec::with_capacity(p.n_agents);
    let (mut li, mut ri) = (0, 0);
    for a in 0..p.n_agents {
        if a % 2 == 0 {
            let y = left[li];
            starts.push([CORRIDOR_X.0, y]);
            goals.push([CORRIDOR_X.1, 2.0 * gap_center - y]);
            li += 1;
        } else {
            let y = right[ri];
            starts.push([CORRIDOR_X.1, y]);
            goals.push([CORRIDOR_X.0, 2.0 * gap_center - y]);
            ri += 1;
        }
    }

    Scenario {
        starts,
        goals,
        obstacles,
        agent_radius: p.agent_radius,
        v_max: p.v_max,
        dt: 1.0,
        world_bounds: bounds,
    }
}

struct Scatter {
    n_agents: usize,
    n_obstacles: usize,
    agent_radius: f64,
    v_max: f64,
    obstacle_radius: (f64, f64),
    clearance: f64,
}

/// Endpoint pairs are kept between these lengths so a default 32-step horizon
/// can cover them with room to detour.
const MIN_TRIP: f64 = 0.3;
const MAX_TRIP_FRACTION: f64 = 0.6;
const NOMINAL_HORIZON: usize = 32;
const EDGE_MARGIN: f64 = 0.05;

fn scatter(p: &Scatter, rng: &mut Rng) -> Result<Scenario> {
    if p.n_agents == 0 {
        return Err(PdmError::contract("need at least one agent"));
    }
    let (rmin, rmax) = p.obstacle_radius;
    if !(rmin > 0.0 && rmin <= rmax) {
        return Err(PdmError::contract("obstacle radius range must be positive and ordered"));
    }
    let bounds = WorldBounds::default();
    let uniform = |rng: &mut Rng, margin: f64| -> Point {
        [
            rng.random_range(bounds.min[0] + margin..bounds.max[0] - margin),
            rng.random_range(bounds.min[1] + margin..bounds.max[1] - margin),
        ]
    };

    // any two obstacles leave a gap an agent can pass through
    let gap = 2.0 * p.agent_radius + p.clearance;
    let mut obstacles: Vec<Obstacle> = Vec::with_capacity(p.n_obstacles);
    for k in 0..p.n_obstacles {
        let radius = if rmax > rmin { rng.random_range(rmin..rmax) } else { rmin };
        let mut placed = false;
        for _ in 0..DEFAULT_RETRY_BUDGET {
            let center = uniform(rng, 0.1);
            if obstacles
                .iter()
                .all(|o| dist(center, o.center) >= o.radius + radius + gap)
            {
                obstacles.push(Obstacle { center, radius });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(PdmError::Generation(format!(
                "could not place obstacle {k} within {DEFAULT_RETRY_BUDGET} draws"
            )));
        }
    }

    let keep_out = |q: Point, placed: &[Point]| -> bool {
        obstacles
            .iter()
            .all(|o| dist(q, o.center) >= o.radius + p.agent_radius + p.clearance)
            && placed
                .iter()
                .all(|s| dist(q, *s) >= 2.0 * p.agent_radius + p.clearance)
    };

    let max_trip = MAX_TRIP_FRACTION * (NOMINAL_HORIZON - 1) as f64 * p.v_max;
    let mut starts: Vec<Point> = Vec::with_capacity(p.n_agents);
    let mut goals: Vec<Point> = Vec::with_capacity(p.n_agents);
    for a in 0..p.n_agents {
        let mut placed = false;
        for _ in 0..DEFAULT_RETRY_BUDGET {
            let s = uniform(rng, EDGE_MARGIN);
            let g = uniform(rng, EDGE_MARGIN);
            let trip = dist(s, g);
            if trip < MIN_TRIP || trip > max_trip {
                continue;
            }
            if keep_out(s, &starts) && keep_out(g, &goals) {
                starts.push(s);
                goals.push(g);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(PdmError::Generation(format!(
                "could not place agent {a} endpoints within {DEFAULT_RETRY_BUDGET} draws"
            )));
        }
    }

    Ok(Scenario {
        starts,
        goals,
        obstacles,
        agent_radius: p.agent_radius,
        v_max: p.v_max,
        dt: 1.0,
        world_bounds: bounds,
    })
}
