use serde::{Deserialize, Serialize};

use crate::error::{PdmError, Result};

/// Per-level noise variances and the Langevin loop counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    inner_steps: usize,
}

impl NoiseSchedule {
    pub const DEFAULT_BETA_MIN: f64 = 0.01;
    pub const DEFAULT_BETA_MAX: f64 = 1.0;
    pub const DEFAULT_LEVELS: usize = 50;
    pub const DEFAULT_INNER_STEPS: usize = 10;

    /// Geometric interpolation between `beta_min` and `beta_max` over `levels` levels.
    pub fn geometric(beta_min: f64, beta_max: f64, levels: usize, inner_steps: usize) -> Result<Self> {
        if !(beta_min > 0.0 && beta_min < beta_max && beta_max <= 1.0) {
            return Err(PdmError::contract(format!(
                "need 0 < beta_min < beta_max <= 1, got ({beta_min}, {beta_max})"
            )));
        }
        if levels < 2 {
            return Err(PdmError::contract(format!("need at least 2 noise levels, got {levels}")));
        }
        let ratio = beta_max / beta_min;
        let mut betas: Vec<f64> = (0..levels)
            .map(|k| beta_min * ratio.powf(k as f64 / (levels - 1) as f64))
            .collect();
        // Pin the top level so that gamma_T is exactly one half.
        betas[levels - 1] = beta_max;
        Self::from_betas(betas, inner_steps)
    }

    /// Builds a schedule from explicit variances. A single level is allowed.
    pub fn from_betas(betas: Vec<f64>, inner_steps: usize) -> Result<Self> {
        if betas.is_empty() {
            return Err(PdmError::contract("schedule needs at least one level"));
        }
        if inner_steps == 0 {
            return Err(PdmError::contract("inner_steps must be >= 1"));
        }
        if !(betas[0] > 0.0) || betas[betas.len() - 1] > 1.0 {
            return Err(PdmError::contract("betas must lie in (0, 1]"));
        }
        if betas.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(PdmError::contract("betas must be strictly increasing"));
        }
        Ok(Self { betas, inner_steps })
    }

    pub fn n_levels(&self) -> usize {
        self.betas.len()
    }

    pub fn inner_steps(&self) -> usize {
        self.inner_steps
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// Variance at 1-based level `t`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// Langevin step size at 1-based level `t`: `beta_t / (2 beta_T)`.
    pub fn gamma(&self, t: usize) -> f64 {
        self.beta(t) / (2.0 * self.betas[self.betas.len() - 1])
    }

    pub fn check_level(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.n_levels() {
            return Err(PdmError::contract(format!(
                "noise level {t} outside 1..={}",
                self.n_levels()
            )));
        }
        Ok(())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::geometric(
            Self::DEFAULT_BETA_MIN,
            Self::DEFAULT_BETA_MAX,
            Self::DEFAULT_LEVELS,
            Self::DEFAULT_INNER_STEPS,
        )
        .expect("default schedule is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_level_geometric_midpoint() {
        let s = NoiseSchedule::geometric(0.01, 1.0, 3, 10).unwrap();
        let b = s.betas();
        assert!((b[0] - 0.01).abs() < 1e-15);
        assert!((b[1] - 0.1).abs() < 1e-15);
        assert_eq!(b[2], 1.0);
    }

    #[test]
    fn top_gamma_is_one_half() {
        for (lo, hi, t) in [(0.01, 1.0, 50), (1e-4, 0.3, 7), (0.2, 0.25, 2)] {
            let s = NoiseSchedule::geometric(lo, hi, t, 1).unwrap();
            assert_eq!(s.gamma(t), 0.5);
        }
    }

    #[test]
    fn level_25_of_default() {
        // 0.01 * 100^(24/49), evaluated independently in extended precision.
        let expected = 0.095_409_547_634_999_39_f64;
        let s = NoiseSchedule::geometric(0.01, 1.0, 50, 10).unwrap();
        assert!((s.beta(25) - expected).abs() < 1e-15, "{}", s.beta(25));
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(NoiseSchedule::geometric(0.0, 1.0, 10, 1).is_err());
        assert!(NoiseSchedule::geometric(0.5, 0.4, 10, 1).is_err());
        assert!(NoiseSchedule::geometric(0.1, 1.5, 10, 1).is_err());
        assert!(NoiseSchedule::geometric(0.1, 1.0, 1, 1).is_err());
        assert!(NoiseSchedule::geometric(0.1, 1.0, 5, 0).is_err());
    }

    #[test]
    fn gamma_strictly_increasing() {
        let s = NoiseSchedule::default();
        for t in 1..s.n_levels() {
            assert!(s.gamma(t) < s.gamma(t + 1));
        }
    }
}
