#![allow(dead_code)]

pub mod invariants;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pdm_core::{Obstacle, Scenario, TrajectorySet, WorldBounds};

/// Two agents on crossing routes, up to two obstacles between them, and a
/// speed cap with headroom over the straight-line requirement.
pub fn small_instance(seed: u64, horizon: usize, with_obstacles: bool) -> (Scenario, TrajectorySet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = 0.04;
    let pt = |rng: &mut ChaCha8Rng| [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
    let (starts, goals) = loop {
        let s = [pt(&mut rng), pt(&mut rng)];
        let g = [pt(&mut rng), pt(&mut rng)];
        let d = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).hypot(a[1] - b[1]);
        if d(s[0], s[1]) > 3.0 * r && d(g[0], g[1]) > 3.0 * r && d(s[0], g[0]) > 0.2 && d(s[1], g[1]) > 0.2 {
            break (s.to_vec(), g.to_vec());
        }
    };
    let longest = (0..2)
        .map(|i| (goals[i][0] - starts[i][0]).hypot(goals[i][1] - starts[i][1]))
        .fold(0.0, f64::max);
    let mut sc = Scenario {
        starts,
        goals,
        obstacles: Vec::new(),
        agent_radius: r,
        v_max: 1.6 * longest / (horizon - 1) as f64,
        dt: 1.0,
        world_bounds: WorldBounds::default(),
    };
    if with_obstacles {
        for _ in 0..rng.random_range(0..3) {
            let o = Obstacle {
                center: pt(&mut rng),
                radius: rng.random_range(0.02..0.06),
            };
            let mut trial = sc.clone();
            trial.obstacles.push(o);
            if trial.validate().is_ok() {
                sc = trial;
            }
        }
    }
    let mut traj = TrajectorySet::straight_lines(&sc.starts, &sc.goals, horizon);
    for x in traj.as_mut_slice() {
        *x += rng.random_range(-0.05..0.05);
    }
    (sc, traj)
}

/// Minimiser of `0.5 |x - y|^2` over trajectories with pinned endpoints and
/// steps no longer than `step`, by a log-barrier Newton method.
pub fn barrier_projection(y: &TrajectorySet, sc: &Scenario) -> TrajectorySet {
    let (n, h) = (y.n_agents(), y.horizon());
    let step2 = sc.max_step().powi(2);
    let mut out = y.clone();
    for a in 0..n {
        let ys: Vec<[f64; 2]> = (0..h).map(|k| y.get(a, k)).collect();
        let xs = barrier_agent(&ys, sc.starts[a], sc.goals[a], step2);
        for (k, p) in xs.into_iter().enumerate() {
            out.set(a, k, p);
        }
    }
    out
}

fn barrier_agent(y: &[[f64; 2]], start: [f64; 2], goal: [f64; 2], step2: f64) -> Vec<[f64; 2]> {
    let h = y.len();
    let m = 2 * (h - 2);
    // strictly feasible start: the straight line
    let mut x = DVector::from_fn(m, |i, _| {
        let (k, c) = (i / 2 + 1, i % 2);
        let s = k as f64 / (h - 1) as f64;
        start[c] + s * (goal[c] - start[c])
    });
    let yv = DVector::from_fn(m, |i, _| y[i / 2 + 1][i % 2]);
    let point = |x: &DVector<f64>, k: usize| -> [f64; 2] {
        if k == 0 {
            start
        } else if k == h - 1 {
            goal
        } else {
            [x[2 * (k - 1)], x[2 * (k - 1) + 1]]
        }
    };
    let slacks = |x: &DVector<f64>| -> Option<Vec<f64>> {
        (0..h - 1)
            .map(|k| {
                let (p, q) = (point(x, k), point(x, k + 1));
                let f = step2 - ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2));
                (f > 0.0).then_some(f)
            })
            .collect()
    };
    let value = |x: &DVector<f64>, t: f64| -> Option<f64> {
        let f = slacks(x)?;
        Some(0.5 * t * (x - &yv).norm_squared() - f.iter().map(|v| v.ln()).sum::<f64>())
    };

    let mut t = 1.0;
    while t < 1e12 {
        for _ in 0..100 {
            let f = slacks(&x).expect("iterate stays interior");
            let mut g = (&x - &yv) * t;
            let mut hess = DMatrix::<f64>::identity(m, m) * t;
            for k in 0..h - 1 {
                let (p, q) = (point(&x, k), point(&x, k + 1));
                let d = [q[0] - p[0], q[1] - p[1]];
                // variable offsets of the two ends, if free
                let ends = [(k, -1.0), (k + 1, 1.0)];
                for &(ka, sa) in &ends {
                    if ka == 0 || ka == h - 1 {
                        continue;
                    }
                    for c in 0..2 {
                        let i = 2 * (ka - 1) + c;
                        // d(-ln f)/dx = 2 s d / f
                        g[i] += 2.0 * sa * d[c] / f[k];
                    }
                    for &(kb, sb) in &ends {
                        if kb == 0 || kb == h - 1 {
                            continue;
                        }
                        for c in 0..2 {
                            for e in 0..2 {
                                let (i, j) = (2 * (ka - 1) + c, 2 * (kb - 1) + e);
                                let outer = 4.0 * sa * sb * d[c] * d[e] / (f[k] * f[k]);
                                let curv = if c == e { 2.0 * sa * sb / f[k] } else { 0.0 };
                                hess[(i, j)] += outer + curv;
                            }
                        }
                    }
                }
            }
            let dir = hess.cholesky().expect("barrier hessian is positive definite").solve(&(-&g));
            let dec = -g.dot(&dir);
            if dec < 1e-14 {
                break;
            }
            let f0 = value(&x, t).unwrap();
            let mut s = 1.0;
            loop {
                let cand = &x + &dir * s;
                if let Some(v) = value(&cand, t) {
                    if v <= f0 - 0.25 * s * dec {
                        x = cand;
                        break;
                    }
                }
                s *= 0.5;
                if s < 1e-20 {
                    break;
                }
            }
        }
        t *= 10.0;
    }
    (0..h).map(|k| point(&x, k)).collect()
}

pub fn objective(x: &TrajectorySet, y: &TrajectorySet) -> f64 {
    0.5 * x.distance(y).powi(2)
}
