//! Randomized invariant suites. Each runs `cases` proptest cases and returns
//! a one-line summary, or the shrunk counterexample on failure.

use std::cell::Cell;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use pdm_core::feasibility::check_feasibility;
use pdm_core::harness::{path_length, straight_line_bound, violation_rate};
use pdm_core::projection::{project_convex, ProjectionConfig};
use pdm_core::residuals::{collision_residuals, convex_residuals};
use pdm_core::samplers::{sample, Method, SamplerConfig};
use pdm_core::scenario::{generate, FamilyKind, ScenarioFamily};
use pdm_core::score_model::GaussianScore;
use pdm_core::{ConstraintSpec, NoiseSchedule, Obstacle, Point, Scenario, TrajectorySet, WorldBounds};

pub type SuiteResult = Result<String, String>;

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn point() -> impl Strategy<Value = Point> {
    (0.0..1.0f64, 0.0..1.0f64).prop_map(|(x, y)| [x, y])
}

/// Loose random instance: nothing here is required to be a valid scenario.
fn loose_scenario() -> impl Strategy<Value = Scenario> {
    (2usize..6, 0usize..4).prop_flat_map(|(n, m)| {
        (
            prop::collection::vec(point(), n),
            prop::collection::vec(point(), n),
            prop::collection::vec((point(), 0.02..0.15f64), m),
            0.01..0.08f64,
            0.05..0.5f64,
        )
            .prop_map(|(starts, goals, obs, agent_radius, v_max)| Scenario {
                starts,
                goals,
                obstacles: obs.into_iter().map(|(center, radius)| Obstacle { center, radius }).collect(),
                agent_radius,
                v_max,
                dt: 1.0,
                world_bounds: WorldBounds::default(),
            })
    })
}

fn jittered(sc: &Scenario, horizon: usize, noise: &[f64], scale: f64) -> TrajectorySet {
    let mut t = TrajectorySet::straight_lines(&sc.starts, &sc.goals, horizon);
    for (x, e) in t.as_mut_slice().iter_mut().zip(noise.iter().cycle()) {
        *x += scale * e;
    }
    t
}

fn instance() -> impl Strategy<Value = (Scenario, TrajectorySet)> {
    (loose_scenario(), 2usize..10, prop::collection::vec(-1.0..1.0f64, 64), 0.0..0.2f64)
        .prop_map(|(sc, h, noise, scale)| {
            let t = jittered(&sc, h, &noise, scale);
            (sc, t)
        })
}

/// Agents in separate horizontal lanes with obstacles between the lanes, so
/// the straight-line plan satisfies every constraint.
fn lane_instance() -> impl Strategy<Value = (Scenario, TrajectorySet)> {
    (2usize..6, 2usize..10, 0.2..0.9f64, any::<bool>()).prop_map(|(n, h, fill, with_obstacle)| {
        let lane = 1.0 / n as f64;
        let agent_radius = 0.25 * lane * fill;
        let y = |i: usize| (i as f64 + 0.5) * lane;
        let starts: Vec<Point> = (0..n).map(|i| [0.1, y(i)]).collect();
        let goals: Vec<Point> = (0..n).map(|i| [0.9, y(i)]).collect();
        let obstacles = if with_obstacle {
            vec![Obstacle {
                center: [0.5, lane],
                radius: 0.2 * lane,
            }]
        } else {
            Vec::new()
        };
        let sc = Scenario {
            v_max: 0.8 / (h - 1) as f64 + 1e-3,
            starts,
            goals,
            obstacles,
            agent_radius,
            dt: 1.0,
            world_bounds: WorldBounds::default(),
        };
        let t = TrajectorySet::straight_lines(&sc.starts, &sc.goals, h);
        (sc, t)
    })
}

fn swap_agents(sc: &Scenario, t: &TrajectorySet, a: usize, b: usize) -> (Scenario, TrajectorySet) {
    let mut sc2 = sc.clone();
    sc2.starts.swap(a, b);
    sc2.goals.swap(a, b);
    let mut t2 = t.clone();
    for h in 0..t.horizon() {
        t2.set(a, h, t.get(b, h));
        t2.set(b, h, t.get(a, h));
    }
    (sc2, t2)
}

fn all_residuals(sc: &Scenario, t: &TrajectorySet) -> Vec<f64> {
    let spec = ConstraintSpec::from_scenario(sc);
    let c = collision_residuals(t, sc, &spec).unwrap();
    let v = convex_residuals(t, sc, &spec).unwrap();
    let mut out = c.agent;
    out.extend(c.obstacle);
    out.extend(v.endpoint.iter().flatten());
    out.extend(v.velocity_excess);
    out
}

fn finish<E: std::fmt::Display>(r: Result<(), E>, ok: String) -> SuiteResult {
    r.map(|_| ok).map_err(|e| e.to_string())
}

pub fn residual_nonnegativity(cases: u32) -> SuiteResult {
    let feasible = Cell::new(0usize);
    let strategy = prop_oneof![3 => instance(), 1 => lane_instance()];
    let r = runner(cases).run(&strategy, |(sc, t)| {
        let spec = ConstraintSpec::from_scenario(&sc);
        let c = collision_residuals(&t, &sc, &spec).unwrap();
        let v = convex_residuals(&t, &sc, &spec).unwrap();
        let all = all_residuals(&sc, &t);
        prop_assert!(all.iter().all(|r| *r >= 0.0));
        let report = check_feasibility(&t, &sc, 0.0).unwrap();
        if report.worst_separation == 0.0 {
            prop_assert_eq!(c.max(), 0.0);
        }
        if report.worst_convex == 0.0 {
            prop_assert_eq!(v.max(), 0.0);
        }
        if report.is_feasible() {
            feasible.set(feasible.get() + 1);
            prop_assert!(all.iter().all(|r| *r == 0.0));
        }
        Ok(())
    });
    let r = finish(r, format!("{cases} cases, {} fully feasible", feasible.get()))?;
    if feasible.get() * 10 < cases as usize {
        return Err(format!("too few feasible cases to exercise the zero check: {r}"));
    }
    Ok(r)
}

pub fn residual_symmetry(cases: u32) -> SuiteResult {
    let r = runner(cases).run(&(instance(), (0usize..100, 0usize..100)), |((sc, t), pick)| {
        let n = sc.n_agents();
        let (a, b) = (pick.0 % n, pick.1 % n);
        let (sc2, t2) = swap_agents(&sc, &t, a, b);
        let spec = ConstraintSpec::from_scenario(&sc);
        let before = collision_residuals(&t, &sc, &spec).unwrap();
        let after = collision_residuals(&t2, &sc2, &spec).unwrap();
        let relabel = |i: usize| if i == a { b } else if i == b { a } else { i };
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                for h in 0..t.horizon() {
                    prop_assert_eq!(before.agent_at(i, j, h), after.agent_at(relabel(i), relabel(j), h));
                    prop_assert_eq!(before.agent_at(i, j, h), before.agent_at(j, i, h));
                }
            }
            for o in 0..sc.n_obstacles() {
                for h in 0..t.horizon() {
                    prop_assert_eq!(before.obstacle_at(i, o, h), after.obstacle_at(relabel(i), o, h));
                }
            }
        }
        Ok(())
    });
    finish(r, format!("{cases} cases"))
}

pub fn residual_translation(cases: u32) -> SuiteResult {
    let worst = Cell::new(0.0f64);
    let r = runner(cases).run(&(instance(), (-10.0..10.0f64, -10.0..10.0f64)), |((sc, t), shift)| {
        let by = [shift.0, shift.1];
        let before = all_residuals(&sc, &t);
        let after = all_residuals(&sc.translated(by), &t.translated(by));
        prop_assert_eq!(before.len(), after.len());
        for (x, y) in before.iter().zip(&after) {
            worst.set(worst.get().max((x - y).abs()));
            prop_assert!((x - y).abs() <= 1e-12, "{} vs {}", x, y);
        }
        Ok(())
    });
    finish(r, format!("{cases} cases, worst drift {:.1e}", worst.get()))
}

pub fn path_length_bound(cases: u32) -> SuiteResult {
    let r = runner(cases).run(&instance(), |(sc, mut t)| {
        let last = t.horizon() - 1;
        for i in 0..sc.n_agents() {
            t.set(i, 0, sc.starts[i]);
            t.set(i, last, sc.goals[i]);
        }
        prop_assert!(path_length(&t) >= straight_line_bound(&sc) - 1e-9);
        Ok(())
    });
    finish(r, format!("{cases} cases"))
}

pub fn convex_non_expansive(cases: u32) -> SuiteResult {
    let ran = Cell::new(0usize);
    let strategy = (
        0u64..10_000,
        0usize..3,
        prop::collection::vec(-1.0..1.0f64, 128),
        (0.0..0.3f64, 0.0..0.3f64),
    );
    let r = runner(cases).run(&strategy, |(seed, kind, noise, scale)| {
        let sc = generate(&ScenarioFamily::new(FamilyKind::ALL[kind], seed));
        prop_assume!(sc.is_ok());
        let sc = sc.unwrap();
        let horizon = 32;
        let spec = ConstraintSpec::from_scenario(&sc);
        let cfg = ProjectionConfig {
            inner_tol: 1e-12,
            ..ProjectionConfig::default()
        };
        let (na, nb) = noise.split_at(64);
        let x = jittered(&sc, horizon, na, scale.0);
        let y = jittered(&sc, horizon, nb, scale.1);
        let px = project_convex(&x, &sc, &spec, &cfg).unwrap();
        let py = project_convex(&y, &sc, &spec, &cfg).unwrap();
        ran.set(ran.get() + 1);
        prop_assert!(
            px.distance(&py) <= x.distance(&y) + 1e-9,
            "{} > {}",
            px.distance(&py),
            x.distance(&y)
        );
        Ok(())
    });
    finish(r, format!("{} pairs", ran.get()))
}

fn centred_lines(sc: &Scenario, horizon: usize) -> Vec<f64> {
    let c = sc.world_bounds.center();
    TrajectorySet::straight_lines(&sc.starts, &sc.goals, horizon)
        .as_slice()
        .chunks(2)
        .flat_map(|p| [p[0] - c[0], p[1] - c[1]])
        .collect()
}

/// PDM with a Gaussian score on a short schedule: every sample the sampler
/// flags feasible must pass the independent checker with zero violation rate.
pub fn pdm_feasible_by_construction(cases: u32) -> SuiteResult {
    let strategy = (0u64..10_000, any::<u64>(), any::<bool>(), 0.05..0.5f64);
    let flagged = Cell::new(0usize);
    let ran = Cell::new(0usize);
    let r = runner(cases).run(&strategy, |(scenario_seed, sampler_seed, corridor, std)| {
        let kind = if corridor { FamilyKind::NarrowCorridor } else { FamilyKind::ObstacleDense };
        let sc = generate(&ScenarioFamily::new(kind, scenario_seed));
        prop_assume!(sc.is_ok());
        let sc = sc.unwrap();
        let horizon = 32;
        let spec = ConstraintSpec::from_scenario(&sc);
        let model = GaussianScore {
            mean: centred_lines(&sc, horizon),
            std,
        };
        let schedule = NoiseSchedule::geometric(0.01, 1.0, 3, 1).unwrap();
        let cfg = SamplerConfig::new(Method::Pdm, schedule, horizon, sampler_seed);
        ran.set(ran.get() + 1);
        match sample(&model, &sc, &spec, &cfg) {
            Ok(out) if out.feasible => {
                flagged.set(flagged.get() + 1);
                let report = check_feasibility(&out.trajectory, &sc, spec.tolerance).unwrap();
                prop_assert!(report.is_feasible(), "{:?}", report.violations.first());
                prop_assert_eq!(violation_rate(&out.trajectory, &sc, &spec).unwrap(), 0.0);
            }
            Ok(_) => {}
            Err(e) => prop_assert!(e.exit_code() == 4, "unexpected error {}", e),
        }
        Ok(())
    });
    let summary = format!("{} of {} samples flagged feasible", flagged.get(), ran.get());
    let r = finish(r, summary)?;
    if flagged.get() * 10 < ran.get() * 9 {
        return Err(format!("too few feasible samples to be meaningful: {r}"));
    }
    Ok(r)
}

pub const SUITES: [(&str, fn(u32) -> SuiteResult); 6] = [
    ("residual nonnegativity", residual_nonnegativity),
    ("residual symmetry", residual_symmetry),
    ("residual translation invariance", residual_translation),
    ("convex non-expansiveness", convex_non_expansive),
    ("pdm feasibility by construction", pdm_feasible_by_construction),
    ("path length lower bound", path_length_bound),
];
