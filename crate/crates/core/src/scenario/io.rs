//! Scenario JSON and trajectory files.
//!
//! Scenario layout:
//! `{ version, agent_radius, v_max, dt, world_bounds, starts, goals, obstacles }`.
//! Only `starts` and `goals` are required.
//!
//! Trajectory binary layout: `b"MAPFTRAJ"`, then `u32` version, `u32` agent
//! count, `u32` horizon, then `agents * horizon * 2` little-endian `f64`.
//! Files ending in `.json` use a JSON variant with the same header fields.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::domain::{Obstacle, Point, Scenario, TrajectorySet, WorldBounds};
use crate::error::{PdmError, Result};

pub const SCENARIO_VERSION: u32 = 1;
pub const TRAJECTORY_VERSION: u32 = 1;
pub const TRAJECTORY_MAGIC: &[u8; 8] = b"MAPFTRAJ";
const HEADER_LEN: usize = 8 + 3 * 4;

const DEFAULT_AGENT_RADIUS: f64 = 0.025;
const DEFAULT_V_MAX: f64 = 0.05;
const DEFAULT_DT: f64 = 1.0;

#[derive(Serialize)]
struct ScenarioOut<'a> {
    version: u32,
    agent_radius: f64,
    v_max: f64,
    dt: f64,
    world_bounds: &'a WorldBounds,
    starts: &'a [Point],
    goals: &'a [Point],
    obstacles: &'a [Obstacle],
}

#[derive(Deserialize)]
struct ScenarioIn<'a> {
    version: Option<u32>,
    agent_radius: Option<f64>,
    v_max: Option<f64>,
    dt: Option<f64>,
    world_bounds: Option<WorldBounds>,
    starts: Vec<Point>,
    goals: Vec<Point>,
    #[serde(borrow, default)]
    obstacles: Vec<&'a RawValue>,
}

pub fn scenario_to_json(s: &Scenario) -> Result<String> {
    let out = ScenarioOut {
        version: SCENARIO_VERSION,
        agent_radius: s.agent_radius,
        v_max: s.v_max,
        dt: s.dt,
        world_bounds: &s.world_bounds,
        starts: &s.starts,
        goals: &s.goals,
        obstacles: &s.obstacles,
    };
    serde_json::to_string_pretty(&out).map_err(|e| PdmError::contract(e.to_string()))
}

pub fn save_scenario(s: &Scenario, path: impl AsRef<Path>) -> Result<()> {
    s.validate()?;
    let mut text = scenario_to_json(s)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    read_scenario_json(&fs::read_to_string(path)?)
}

/// Byte offset of a 1-based (line, column) position.
fn offset_of(src: &str, line: usize, column: usize) -> usize {
    let line_start: usize = src
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(src.len())
}

fn field_from_message(msg: &str) -> String {
    msg.split('`').nth(1).unwrap_or("<document>").to_string()
}

fn key_offset(src: &str, key: &str) -> usize {
    src.find(&format!("\"{key}\"")).unwrap_or(0)
}

pub fn read_scenario_json(src: &str) -> Result<Scenario> {
    let raw: ScenarioIn = serde_json::from_str(src).map_err(|e| {
        let msg = e.to_string();
        PdmError::parse(field_from_message(&msg), offset_of(src, e.line(), e.column()), msg)
    })?;

    if let Some(v) = raw.version {
        if v != SCENARIO_VERSION {
            return Err(PdmError::Version {
                found: v,
                expected: SCENARIO_VERSION,
            });
        }
    }
    let positive = |key: &str, v: Option<f64>, default: f64| -> Result<f64> {
        match v {
            None => Ok(default),
            Some(x) if x > 0.0 && x.is_finite() => Ok(x),
            Some(_) => Err(PdmError::parse(key, key_offset(src, key), format!("{key} must be positive"))),
        }
    };
    let agent_radius = positive("agent_radius", raw.agent_radius, DEFAULT_AGENT_RADIUS)?;
    let v_max = positive("v_max", raw.v_max, DEFAULT_V_MAX)?;
    let dt = positive("dt", raw.dt, DEFAULT_DT)?;

    let mut obstacles = Vec::with_capacity(raw.obstacles.len());
    for (j, item) in raw.obstacles.iter().enumerate() {
        let offset = item.get().as_ptr() as usize - src.as_ptr() as usize;
        let o: Obstacle = serde_json::from_str(item.get()).map_err(|e| {
            PdmError::parse(format!("obstacles[{j}]"), offset + e.column().saturating_sub(1), e.to_string())
        })?;
        if !(o.radius > 0.0 && o.radius.is_finite()) {
            let at = item.get().find("\"radius\"").map_or(offset, |k| offset + k);
            return Err(PdmError::parse(
                format!("obstacles[{j}].radius"),
                at,
                "radius must be positive",
            ));
        }
        obstacles.push(o);
    }

    let scenario = Scenario {
        starts: raw.starts,
        goals: raw.goals,
        obstacles,
        agent_radius,
        v_max,
        dt,
        world_bounds: raw.world_bounds.unwrap_or_default(),
    };
    scenario.validate()?;
    Ok(scenario)
}

#[derive(Serialize, Deserialize)]
struct TrajectoryJson {
    version: u32,
    n_agents: usize,
    horizon: usize,
    positions: Vec<Vec<Point>>,
}

pub fn trajectories_to_binary(t: &TrajectorySet) -> Result<Vec<u8>> {
    if !t.is_finite() {
        return Err(PdmError::contract("refusing to save a trajectory with non-finite coordinates"));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * t.as_slice().len());
    out.extend_from_slice(TRAJECTORY_MAGIC);
    out.extend_from_slice(&TRAJECTORY_VERSION.to_le_bytes());
    out.extend_from_slice(&(t.n_agents() as u32).to_le_bytes());
    out.extend_from_slice(&(t.horizon() as u32).to_le_bytes());
    for v in t.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn read_trajectories_binary(bytes: &[u8]) -> Result<TrajectorySet> {
    if bytes.len() < HEADER_LEN {
        return Err(PdmError::parse(
            "header",
            bytes.len(),
            format!("expected {HEADER_LEN} header bytes, found {}", bytes.len()),
        ));
    }
    if &bytes[..8] != TRAJECTORY_MAGIC {
        return Err(PdmError::parse("magic", 0, "not a MAPFTRAJ file"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let version = word(8);
    if version != TRAJECTORY_VERSION {
        return Err(PdmError::Version {
            found: version,
            expected: TRAJECTORY_VERSION,
        });
    }
    let (n_agents, horizon) = (word(12) as usize, word(16) as usize);
    let expected = HEADER_LEN + n_agents * horizon * 2 * 8;
    if bytes.len() != expected {
        return Err(PdmError::parse(
            "positions",
            bytes.len().min(expected),
            format!("expected {expected} bytes for ({n_agents}, {horizon}), found {}", bytes.len()),
        ));
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    TrajectorySet::new(n_agents, horizon, values)
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

pub fn save_trajectories(t: &TrajectorySet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if is_json(path) {
        if !t.is_finite() {
            return Err(PdmError::contract("refusing to save a trajectory with non-finite coordinates"));
        }
        let doc = TrajectoryJson {
            version: TRAJECTORY_VERSION,
            n_agents: t.n_agents(),
            horizon: t.horizon(),
            positions: (0..t.n_agents())
                .map(|a| (0..t.horizon()).map(|h| t.get(a, h)).collect())
                .collect(),
        };
        let mut text = serde_json::to_string(&doc).map_err(|e| PdmError::contract(e.to_string()))?;
        text.push('\n');
        fs::write(path, text)?;
    } else {
        fs::write(path, trajectories_to_binary(t)?)?;
    }
    Ok(())
}

pub fn load_trajectories(path: impl AsRef<Path>) -> Result<TrajectorySet> {
    let path = path.as_ref();
    if !is_json(path) {
        return read_trajectories_binary(&fs::read(path)?);
    }
    let src = fs::read_to_string(path)?;
    let doc: TrajectoryJson = serde_json::from_str(&src).map_err(|e| {
        let msg = e.to_string();
        PdmError::parse(field_from_message(&msg), offset_of(&src, e.line(), e.column()), msg)
    })?;
    if doc.version != TRAJECTORY_VERSION {
        return Err(PdmError::Version {
            found: doc.version,
            expected: TRAJECTORY_VERSION,
        });
    }
    let rows_ok = doc.positions.len() == doc.n_agents
        && doc.positions.iter().all(|r| r.len() == doc.horizon);
    if !rows_ok {
        return Err(PdmError::parse(
            "positions",
            key_offset(&src, "positions"),
            format!("expected {} rows of {} points", doc.n_agents, doc.horizon),
        ));
    }
    let flat = doc.positions.into_iter().flatten().flatten().collect();
    TrajectorySet::new(doc.n_agents, doc.horizon, flat)
}
