use super::terms::{collision_penalty, velocity_excess_penalty, Geometry};
use crate::domain::{ConstraintSpec, Scenario, TrajectorySet};
use crate::error::Result;

/// `-weight * grad sum r^2`, where `r` runs over the collision hinge residuals
/// of both families and the per-step speed excess.
pub fn guidance_gradient(
    traj: &TrajectorySet,
    scenario: &Scenario,
    spec: &ConstraintSpec,
    weight: f64,
) -> Result<Vec<f64>> {
    scenario.check_trajectory_shape(traj)?;
    spec.check(scenario)?;
    let g = Geometry::new(scenario, spec, traj.horizon());
    let mut grad = vec![0.0; traj.as_slice().len()];
    violation_energy(traj.as_slice(), &g, &mut grad);
    grad.iter_mut().for_each(|v| *v *= -weight);
    Ok(grad)
}

/// `sum r^2` over all violation residuals, accumulating its gradient into `grad`.
pub(crate) fn violation_energy(x: &[f64], g: &Geometry, grad: &mut [f64]) -> f64 {
    let sq = |_: usize, h: f64| (h * h, 2.0 * h);
    collision_penalty(x, g, grad, sq, sq) + velocity_excess_penalty(x, g, 1.0, grad)
}
