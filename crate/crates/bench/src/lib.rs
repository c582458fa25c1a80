//! Fixtures shared by the criterion benches.

use pdm_core::rng::{fill_standard_normal, rng_from_seed};
use pdm_core::scenario::{generate, FamilyKind, ScenarioFamily};
use pdm_core::{Scenario, TrajectorySet};

pub const HORIZON: usize = 32;

/// A generated scenario and its straight-line plan jittered by `noise`.
pub fn fixture(kind: FamilyKind, seed: u64, noise: f64) -> (Scenario, TrajectorySet) {
    let sc = generate(&ScenarioFamily::new(kind, seed)).expect("family generates");
    let mut traj = TrajectorySet::straight_lines(&sc.starts, &sc.goals, HORIZON);
    let mut z = vec![0.0; traj.as_slice().len()];
    fill_standard_normal(&mut rng_from_seed(seed), &mut z);
    for (x, e) in traj.as_mut_slice().iter_mut().zip(z) {
        *x += noise * e;
    }
    (sc, traj)
}
