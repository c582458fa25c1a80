//! Stand-alone feasibility checker.
//!
//! Written against the scenario alone, walking time steps in the outer loop
//! and measuring true distances, so it shares no code path with the residual
//! routines or the solvers it is used to audit.

use serde::Serialize;

use crate::domain::{Scenario, TrajectorySet};
use crate::error::{PdmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Start,
    Goal,
    Speed,
    AgentSeparation,
    ObstacleSeparation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub step: usize,
    pub agent: usize,
    /// Second agent or obstacle index, where one applies.
    pub other: Option<usize>,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub violations: Vec<Violation>,
    /// Largest separation deficit `R^2 - d^2` seen, clipped at zero.
    pub worst_separation: f64,
    /// Largest endpoint error or speed excess seen, clipped at zero.
    pub worst_convex: f64,
}

impl FeasibilityReport {
    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every constraint with slack `tolerance`: separation deficits are
/// compared in squared-distance units, endpoint errors and speed excess in
/// distance units.
pub fn check_feasibility(traj: &TrajectorySet, scenario: &Scenario, tolerance: f64) -> Result<FeasibilityReport> {
    let n = scenario.starts.len();
    if traj.n_agents() != n {
        return Err(PdmError::contract(format!(
            "trajectory has {} agents, scenario has {n}",
            traj.n_agents()
        )));
    }
    let horizon = traj.horizon();
    let step_cap = scenario.v_max * scenario.dt;
    let diameter = scenario.agent_radius * 2.0;
    let mut report = FeasibilityReport {
        violations: Vec::new(),
        worst_separation: 0.0,
        worst_convex: 0.0,
    };
    let flag = |report: &mut FeasibilityReport, kind, step, agent, other, amount: f64| {
        let separation = matches!(kind, ViolationKind::AgentSeparation | ViolationKind::ObstacleSeparation);
        if separation {
            report.worst_separation = report.worst_separation.max(amount);
        } else {
            report.worst_convex = report.worst_convex.max(amount);
        }
        if amount > tolerance {
            report.violations.push(Violation {
                kind,
                step,
                agent,
                other,
                amount,
            });
        }
    };

    for a in 0..n {
        let first = traj.get(a, 0);
        let last = traj.get(a, horizon - 1);
        let e0 = (first[0] - scenario.starts[a][0]).hypot(first[1] - scenario.starts[a][1]);
        let e1 = (last[0] - scenario.goals[a][0]).hypot(last[1] - scenario.goals[a][1]);
        flag(&mut report, ViolationKind::Start, 0, a, None, e0);
        flag(&mut report, ViolationKind::Goal, horizon - 1, a, None, e1);
    }

    for h in 0..horizon {
        for a in 0..n {
            let p = traj.get(a, h);
            if h + 1 < horizon {
                let q = traj.get(a, h + 1);
                let len = (q[0] - p[0]).hypot(q[1] - p[1]);
                flag(&mut report, ViolationKind::Speed, h, a, None, (len - step_cap).max(0.0));
            }
            for b in a + 1..n {
                let q = traj.get(b, h);
                let d = (q[0] - p[0]).hypot(q[1] - p[1]);
                let deficit = ((diameter - d) * (diameter + d)).max(0.0);
                flag(&mut report, ViolationKind::AgentSeparation, h, a, Some(b), deficit);
            }
            for (o, obs) in scenario.obstacles.iter().enumerate() {
                let reach = scenario.agent_radius + obs.radius;
                let d = (obs.center[0] - p[0]).hypot(obs.center[1] - p[1]);
                let deficit = ((reach - d) * (reach + d)).max(0.0);
                flag(&mut report, ViolationKind::ObstacleSeparation, h, a, Some(o), deficit);
            }
        }
    }
    Ok(report)
}
