//! Euclidean projection onto the feasible set of a multi-agent instance.
//!
//! * [`project_convex`]: exact projection onto pinned endpoints plus speed limits.
//! * [`alm_project`]: augmented-Lagrangian projection that also enforces
//!   inter-agent and agent-obstacle separation.
//! * [`oracle_project`]: multi-start penalty continuation, slow but simple,
//!   used as a reference and as the timing baseline.
//! * [`guidance_gradient`]: descent direction of the squared violations, used
//!   by the penalty-guided sampler.

mod alm;
mod convex;
mod guidance;
mod oracle;
pub(crate) mod terms;

pub use alm::{alm_project, alm_project_with_state, AlmDiagnostics, AlmState, Projection};
pub(crate) use alm::{alm_minimize, Objective};
pub use convex::project_convex;
pub use guidance::guidance_gradient;
pub use oracle::{oracle_project, OracleReport};

use serde::{Deserialize, Serialize};

use crate::error::{PdmError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    /// Feasibility target on the largest collision hinge residual.
    pub outer_tol: f64,
    pub max_outer: usize,
    /// Accuracy of the convex projection and inner-loop stopping threshold.
    pub inner_tol: f64,
    pub max_inner: usize,
    pub rho_init: f64,
    pub rho_growth: f64,
    pub rho_max: f64,
    /// Sweep cap for Dykstra's method.
    pub dykstra_iters: usize,
    /// Keep multipliers between successive calls that share an [`AlmState`].
    pub carry_multipliers: bool,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            outer_tol: 1e-6,
            max_outer: 60,
            inner_tol: 1e-6,
            max_inner: 400,
            rho_init: 1e2,
            rho_growth: 2.0,
            rho_max: 1e6,
            dykstra_iters: 20_000,
            carry_multipliers: false,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("outer_tol", self.outer_tol),
            ("inner_tol", self.inner_tol),
            ("rho_init", self.rho_init),
            ("rho_max", self.rho_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(PdmError::contract(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.rho_growth > 1.0) {
            return Err(PdmError::contract("rho_growth must exceed 1"));
        }
        if self.rho_init > self.rho_max {
            return Err(PdmError::contract("rho_init exceeds rho_max"));
        }
        if self.max_outer == 0 || self.max_inner == 0 || self.dykstra_iters == 0 {
            return Err(PdmError::contract("iteration caps must be >= 1"));
        }
        Ok(())
    }
}
