//! Shared evaluation of penalty-style constraint terms and their gradients.

use crate::domain::{dist_sq, ConstraintSpec, Point, Scenario};

/// Fixed direction used when two centres coincide and the hinge gradient is undefined.
const DEGENERATE_DIR: Point = [0.6, 0.8];
const DEGENERATE_EPS: f64 = 1e-9;

/// Flattened instance geometry, laid out for the inner loops.
#[derive(Debug, Clone)]
pub(crate) struct Geometry {
    pub n_agents: usize,
    pub horizon: usize,
    pub r_agent_sq: f64,
    pub obstacles: Vec<(Point, f64)>,
    pub v_step: f64,
    pub starts: Vec<Point>,
    pub goals: Vec<Point>,
}

impl Geometry {
    pub fn new(scenario: &Scenario, spec: &ConstraintSpec, horizon: usize) -> Self {
        Self {
            n_agents: scenario.n_agents(),
            horizon,
            r_agent_sq: spec.r_agent * spec.r_agent,
            obstacles: scenario
                .obstacles
                .iter()
                .zip(&spec.r_obstacle)
                .map(|(o, r)| (o.center, r * r))
                .collect(),
            v_step: spec.v_max_step,
            starts: scenario.starts.clone(),
            goals: scenario.goals.clone(),
        }
    }

    pub fn n_pairs(&self) -> usize {
        self.n_agents * self.n_agents.saturating_sub(1) / 2
    }

    pub fn n_agent_constraints(&self) -> usize {
        self.n_pairs() * self.horizon
    }

    pub fn n_obstacle_constraints(&self) -> usize {
        self.n_agents * self.obstacles.len() * self.horizon
    }

    #[inline]
    pub fn idx(&self, agent: usize, step: usize) -> usize {
        (agent * self.horizon + step) * 2
    }
}

/// Separation vector `p - q`, nudged off zero when the points coincide.
#[inline]
pub(crate) fn separation(p: Point, q: Point) -> Point {
    let d = [p[0] - q[0], p[1] - q[1]];
    if d[0] == 0.0 && d[1] == 0.0 {
        [DEGENERATE_EPS * DEGENERATE_DIR[0], DEGENERATE_EPS * DEGENERATE_DIR[1]]
    } else {
        d
    }
}

#[inline]
fn point(x: &[f64], i: usize) -> Point {
    [x[i], x[i + 1]]
}

/// Hinge residuals of both collision families, written into the given buffers
/// in the same order as [`crate::residuals::collision_residuals`].
pub(crate) fn hinge_residuals(x: &[f64], g: &Geometry, agent: &mut [f64], obstacle: &mut [f64]) {
    let mut k = 0;
    for i in 0..g.n_agents {
        for j in i + 1..g.n_agents {
            for h in 0..g.horizon {
                let d = separation(point(x, g.idx(i, h)), point(x, g.idx(j, h)));
                agent[k] = (g.r_agent_sq - d[0] * d[0] - d[1] * d[1]).max(0.0);
                k += 1;
            }
        }
    }
    let mut k = 0;
    for i in 0..g.n_agents {
        for &(c, r2) in &g.obstacles {
            for h in 0..g.horizon {
                let d = separation(point(x, g.idx(i, h)), c);
                obstacle[k] = (r2 - d[0] * d[0] - d[1] * d[1]).max(0.0);
                k += 1;
            }
        }
    }
}

/// Accumulates `sum phi(H_k)` over violated collision instances and its gradient.
///
/// `phi_agent(k, H)` and `phi_obstacle(k, H)` return `(phi, dphi/dH)` for the
/// instance with flat index `k`; they are only called where `H > 0`.
pub(crate) fn collision_penalty(
    x: &[f64],
    g: &Geometry,
    grad: &mut [f64],
    mut phi_agent: impl FnMut(usize, f64) -> (f64, f64),
    mut phi_obstacle: impl FnMut(usize, f64) -> (f64, f64),
) -> f64 {
    let mut total = 0.0;
    let mut k = 0;
    for i in 0..g.n_agents {
        for j in i + 1..g.n_agents {
            for h in 0..g.horizon {
                let (pi, qi) = (g.idx(i, h), g.idx(j, h));
                let d = separation(point(x, pi), point(x, qi));
                let res = g.r_agent_sq - d[0] * d[0] - d[1] * d[1];
                if res > 0.0 {
                    let (v, dv) = phi_agent(k, res);
                    total += v;
                    // dH/dp = -2 (p - q), dH/dq = +2 (p - q)
                    let cx = 2.0 * dv * d[0];
                    let cy = 2.0 * dv * d[1];
                    grad[pi] -= cx;
                    grad[pi + 1] -= cy;
                    grad[qi] += cx;
                    grad[qi + 1] += cy;
                }
                k += 1;
            }
        }
    }
    let mut k = 0;
    for i in 0..g.n_agents {
        for &(c, r2) in &g.obstacles {
            for h in 0..g.horizon {
                let pi = g.idx(i, h);
                let d = separation(point(x, pi), c);
                let res = r2 - d[0] * d[0] - d[1] * d[1];
                if res > 0.0 {
                    let (v, dv) = phi_obstacle(k, res);
                    total += v;
                    grad[pi] -= 2.0 * dv * d[0];
                    grad[pi + 1] -= 2.0 * dv * d[1];
                }
                k += 1;
            }
        }
    }
    total
}

/// Collision instances that can be violated near a reference point.
///
/// Pairs closer than `R + margin` at the reference are listed; as long as no
/// waypoint has moved more than `margin / 2` since, every violated instance is
/// on the list.
#[derive(Debug, Default)]
pub(crate) struct Candidates {
    reference: Vec<f64>,
    margin: f64,
    /// `(flat index, first point, second point)`.
    agent: Vec<(usize, usize, usize)>,
    /// `(flat index, point, obstacle)`.
    obstacle: Vec<(usize, usize, usize)>,
}

impl Candidates {
    pub fn refresh(&mut self, x: &[f64], g: &Geometry) {
        if self.reference.len() == x.len() && !self.moved_too_far(x) {
            return;
        }
        self.margin = g.r_agent_sq.sqrt();
        self.reference.clear();
        self.reference.extend_from_slice(x);
        self.agent.clear();
        self.obstacle.clear();
        let m = self.margin;
        let reach_a = (g.r_agent_sq.sqrt() + m).powi(2);
        let mut k = 0;
        for i in 0..g.n_agents {
            for j in i + 1..g.n_agents {
                for h in 0..g.horizon {
                    let (pi, qi) = (g.idx(i, h), g.idx(j, h));
                    if dist_sq(point(x, pi), point(x, qi)) < reach_a {
                        self.agent.push((k, pi, qi));
                    }
                    k += 1;
                }
            }
        }
        let mut k = 0;
        for i in 0..g.n_agents {
            for (o, &(c, r2)) in g.obstacles.iter().enumerate() {
                let reach = (r2.sqrt() + m).powi(2);
                for h in 0..g.horizon {
                    let pi = g.idx(i, h);
                    if dist_sq(point(x, pi), c) < reach {
                        self.obstacle.push((k, pi, o));
                    }
                    k += 1;
                }
            }
        }
    }

    fn moved_too_far(&self, x: &[f64]) -> bool {
        let lim = 0.25 * self.margin * self.margin;
        x.chunks_exact(2)
            .zip(self.reference.chunks_exact(2))
            .any(|(a, b)| {
                let dx = a[0] - b[0];
                let dy = a[1] - b[1];
                dx * dx + dy * dy > lim
            })
    }
}

/// [`collision_penalty`] restricted to the candidate list, refreshed first.
pub(crate) fn collision_penalty_listed(
    x: &[f64],
    g: &Geometry,
    cand: &mut Candidates,
    grad: &mut [f64],
    mut phi_agent: impl FnMut(usize, f64) -> (f64, f64),
    mut phi_obstacle: impl FnMut(usize, f64) -> (f64, f64),
) -> f64 {
    cand.refresh(x, g);
    let mut total = 0.0;
    for &(k, pi, qi) in &cand.agent {
        let d = separation(point(x, pi), point(x, qi));
        let res = g.r_agent_sq - d[0] * d[0] - d[1] * d[1];
        if res > 0.0 {
            let (v, dv) = phi_agent(k, res);
            total += v;
            let cx = 2.0 * dv * d[0];
            let cy = 2.0 * dv * d[1];
            grad[pi] -= cx;
            grad[pi + 1] -= cy;
            grad[qi] += cx;
            grad[qi + 1] += cy;
        }
    }
    for &(k, pi, o) in &cand.obstacle {
        let (c, r2) = g.obstacles[o];
        let d = separation(point(x, pi), c);
        let res = r2 - d[0] * d[0] - d[1] * d[1];
        if res > 0.0 {
            let (v, dv) = phi_obstacle(k, res);
            total += v;
            grad[pi] -= 2.0 * dv * d[0];
            grad[pi + 1] -= 2.0 * dv * d[1];
        }
    }
    total
}

/// Curvature estimate of `sum |H|^2`: the largest per-waypoint sum of squared
/// constraint-gradient norms over instances that are violated or nearly so.
pub(crate) fn jacobian_norm_estimate(x: &[f64], g: &Geometry) -> f64 {
    let mut per_point = vec![0.0; x.len() / 2];
    let near = 1.5_f64;
    for h in 0..g.horizon {
        for i in 0..g.n_agents {
            let p = point(x, g.idx(i, h));
            for j in i + 1..g.n_agents {
                let q = point(x, g.idx(j, h));
                let d2 = dist_sq(p, q);
                if d2 < near * near * g.r_agent_sq {
                    // gradient row of one pair instance touches both points
                    let w = 8.0 * d2.max(g.r_agent_sq);
                    per_point[i * g.horizon + h] += w;
                    per_point[j * g.horizon + h] += w;
                }
            }
            for &(c, r2) in &g.obstacles {
                let d2 = dist_sq(p, c);
                if d2 < near * near * r2 {
                    per_point[i * g.horizon + h] += 4.0 * d2.max(r2);
                }
            }
        }
    }
    per_point.into_iter().fold(0.0, f64::max)
}

/// `sum max(0, |step|^2 - v^2)^2` and its gradient, the smooth speed penalty.
pub(crate) fn velocity_penalty_sq(x: &[f64], g: &Geometry, weight: f64, grad: &mut [f64]) -> f64 {
    let v2 = g.v_step * g.v_step;
    let mut total = 0.0;
    for i in 0..g.n_agents {
        for h in 0..g.horizon - 1 {
            let (a, b) = (g.idx(i, h), g.idx(i, h + 1));
            let dx = x[b] - x[a];
            let dy = x[b + 1] - x[a + 1];
            let e = dx * dx + dy * dy - v2;
            if e > 0.0 {
                total += weight * e * e;
                let c = 4.0 * weight * e;
                grad[b] += c * dx;
                grad[b + 1] += c * dy;
                grad[a] -= c * dx;
                grad[a + 1] -= c * dy;
            }
        }
    }
    total
}

/// `sum max(0, |step| - v)^2` and its gradient: the speed-excess hinge squared.
pub(crate) fn velocity_excess_penalty(x: &[f64], g: &Geometry, weight: f64, grad: &mut [f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..g.n_agents {
        for h in 0..g.horizon - 1 {
            let (a, b) = (g.idx(i, h), g.idx(i, h + 1));
            let dx = x[b] - x[a];
            let dy = x[b + 1] - x[a + 1];
            let len = (dx * dx + dy * dy).sqrt();
            let e = len - g.v_step;
            if e > 0.0 {
                total += weight * e * e;
                let c = 2.0 * weight * e / len;
                grad[b] += c * dx;
                grad[b + 1] += c * dy;
                grad[a] -= c * dx;
                grad[a + 1] -= c * dy;
            }
        }
    }
    total
}
