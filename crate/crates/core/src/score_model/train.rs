use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{conditioning, to_model_space, ScoreNetwork};
use crate::domain::{Scenario, TrajectorySet};
use crate::error::{PdmError, Result};
use crate::rng::{fill_standard_normal, rng_from_seed, Rng};
use crate::schedule::NoiseSchedule;

/// Weight `eta(t)` in front of `beta_t |target - s|^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    One,
    Beta,
}

impl Weighting {
    fn eta(self, beta: f64) -> f64 {
        match self {
            Weighting::One => 1.0,
            Weighting::Beta => beta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weighting: Weighting,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 200,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weighting: Weighting::One,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(PdmError::contract("learning rate must be finite and nonnegative"));
        }
        if self.batch_size == 0 {
            return Err(PdmError::contract("batch size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(PdmError::contract("moment coefficients must lie in [0, 1) and epsilon be positive"));
        }
        Ok(())
    }
}

/// One clean training trajectory in model space with its conditioning.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x0: Vec<f64>,
    pub cond: Vec<f64>,
}

impl Example {
    pub fn new(traj: &TrajectorySet, scenario: &Scenario, obstacle_slots: usize) -> Self {
        Self {
            x0: to_model_space(traj, scenario),
            cond: conditioning(scenario, obstacle_slots),
        }
    }
}

/// Level and standard-normal draw used to perturb one example.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub t: usize,
    pub z: Vec<f64>,
}

/// Samples `x_t ~ N(sqrt(1 - beta_t) x0, beta_t I)` and returns it with the
/// score target `-(x_t - sqrt(1 - beta_t) x0) / beta_t`.
pub fn perturb(x0: &[f64], t: usize, schedule: &NoiseSchedule, rng: &mut Rng) -> Result<(Vec<f64>, Vec<f64>)> {
    schedule.check_level(t)?;
    let mut z = vec![0.0; x0.len()];
    fill_standard_normal(rng, &mut z);
    Ok(perturb_with(x0, t, schedule, &z))
}

pub(crate) fn perturb_with(x0: &[f64], t: usize, schedule: &NoiseSchedule, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let beta = schedule.beta(t);
    let keep = (1.0 - beta).sqrt();
    let sd = beta.sqrt();
    let xt = x0.iter().zip(z).map(|(x, z)| keep * x + sd * z).collect();
    let target = z.iter().map(|z| -z / sd).collect();
    (xt, target)
}

fn draw_noise(batch: &[Example], schedule: &NoiseSchedule, rng: &mut Rng) -> Vec<NoiseDraw> {
    batch
        .iter()
        .map(|ex| {
            let t = rng.random_range(1..=schedule.n_levels());
            let mut z = vec![0.0; ex.x0.len()];
            fill_standard_normal(rng, &mut z);
            NoiseDraw { t, z }
        })
        .collect()
}

/// Batch DSM loss with levels and noise drawn from `rng`.
pub fn dsm_loss_and_grad(
    net: &ScoreNetwork,
    batch: &[Example],
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<(f64, Vec<f64>)> {
    let draws = draw_noise(batch, schedule, rng);
    dsm_loss_and_grad_with(net, batch, &draws, schedule, cfg.weighting)
}

/// Batch DSM loss `mean eta(t) beta_t |target - s|^2` at fixed draws, and its
/// exact gradient with respect to the network parameters.
pub fn dsm_loss_and_grad_with(
    net: &ScoreNetwork,
    batch: &[Example],
    draws: &[NoiseDraw],
    schedule: &NoiseSchedule,
    weighting: Weighting,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(PdmError::contract("empty training batch"));
    }
    if draws.len() != batch.len() {
        return Err(PdmError::contract("one noise draw per example is required"));
    }
    let layout = net.layout();
    let (b, din, dout) = (batch.len(), layout.input_dim(), layout.traj_dim());
    let mut input = Array2::zeros((b, din));
    let mut weights = Vec::with_capacity(b);
    for (r, (ex, d)) in batch.iter().zip(draws).enumerate() {
        schedule.check_level(d.t)?;
        if d.z.len() != dout {
            return Err(PdmError::contract("noise draw has the wrong length"));
        }
        let beta = schedule.beta(d.t);
        let (xt, _) = perturb_with(&ex.x0, d.t, schedule, &d.z);
        let row = input.row_mut(r).into_slice().expect("standard layout");
        net.input_row(&xt, &ex.cond, beta, row)?;
        weights.push(weighting.eta(beta));
    }
    let (out, tape) = net.forward_batch(input);

    // With s = out / sqrt(beta) and target = -z / sqrt(beta) the summand
    // eta beta |target - s|^2 reduces to eta |z + out|^2.
    let mut loss = 0.0;
    let mut d_out = Array2::zeros((b, dout));
    let scale = 1.0 / b as f64;
    for r in 0..b {
        let eta = weights[r];
        let z = &draws[r].z;
        for c in 0..dout {
            let e = z[c] + out[[r, c]];
            loss += eta * e * e;
            d_out[[r, c]] = 2.0 * eta * e * scale;
        }
    }
    loss *= scale;
    let mut grad = vec![0.0; layout.n_params()];
    net.backward(&tape, d_out, &mut grad);
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss per epoch.
    pub loss_history: Vec<f64>,
    pub steps: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
        }
    }
}

/// Adam on the DSM objective. Each epoch visits every example once in a
/// shuffled order, with fresh levels and noise.
///
/// A non-finite loss restores the parameters from the start of that epoch
/// and returns [`PdmError::Divergence`].
pub fn train(
    net: &mut ScoreNetwork,
    examples: &[Example],
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(PdmError::contract("training set is empty"));
    }
    let layout = net.layout().clone();
    for ex in examples {
        if ex.x0.len() != layout.traj_dim() || ex.cond.len() != layout.cond_dim() {
            return Err(PdmError::contract("training example does not match the network layout"));
        }
    }
    let mut rng = rng_from_seed(cfg.seed);
    let mut adam = Adam::new(layout.n_params());
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut report = TrainReport {
        loss_history: Vec::with_capacity(cfg.epochs),
        steps: 0,
    };
    let mut batch = Vec::with_capacity(cfg.batch_size);

    for epoch in 0..cfg.epochs {
        let snapshot = net.params().to_vec();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut seen = 0;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| examples[i].clone()));
            let (loss, grad) = dsm_loss_and_grad(net, &batch, schedule, cfg, &mut rng)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                net.params_mut().copy_from_slice(&snapshot);
                return Err(PdmError::Divergence { epoch });
            }
            adam.update(net.params_mut(), &grad, cfg);
            report.steps += 1;
            total += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        if net.params().iter().any(|p| !p.is_finite()) {
            net.params_mut().copy_from_slice(&snapshot);
            return Err(PdmError::Divergence { epoch });
        }
        let mean = total / seen as f64;
        log::debug!("epoch {epoch}: loss {mean:.6}");
        report.loss_history.push(mean);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score_model::NetworkLayout;

    fn layout() -> NetworkLayout {
        NetworkLayout {
            n_agents: 1,
            horizon: 3,
            obstacle_slots: 1,
            hidden: vec![6, 4],
        }
    }

    fn examples() -> Vec<Example> {
        vec![
            Example {
                x0: vec![0.1, -0.2, 0.0, 0.05, 0.2, 0.1],
                cond: vec![0.1, -0.2, 0.2, 0.1, 0.3, 0.3, 0.05],
            },
            Example {
                x0: vec![-0.3, 0.1, -0.1, 0.0, 0.1, -0.1],
                cond: vec![-0.3, 0.1, 0.1, -0.1, 0.0, 0.0, 0.0],
            },
        ]
    }

    #[test]
    fn zero_noise_draw_gives_scaled_mean_and_zero_target() {
        let s = NoiseSchedule::geometric(0.01, 1.0, 4, 1).unwrap();
        let x0 = [0.3, -0.4];
        let (xt, target) = perturb_with(&x0, 2, &s, &[0.0, 0.0]);
        let k = (1.0 - s.beta(2)).sqrt();
        assert_eq!(xt, vec![k * 0.3, -k * 0.4]);
        assert_eq!(target, vec![0.0, 0.0]);
    }

    #[test]
    fn top_level_returns_the_noise() {
        let s = NoiseSchedule::geometric(0.01, 1.0, 4, 1).unwrap();
        let z = [0.7, -1.2];
        let (xt, target) = perturb_with(&[5.0, 5.0], 4, &s, &z);
        assert_eq!(xt, z.to_vec());
        assert_eq!(target, vec![-0.7, 1.2]);
    }

    #[test]
    fn out_of_range_level_is_rejected() {
        let s = NoiseSchedule::geometric(0.01, 1.0, 4, 1).unwrap();
        let mut rng = rng_from_seed(0);
        assert!(perturb(&[0.0], 0, &s, &mut rng).is_err());
        assert!(perturb(&[0.0], 5, &s, &mut rng).is_err());
    }

    #[test]
    fn beta_weighting_scales_each_term() {
        let s = NoiseSchedule::geometric(0.01, 1.0, 4, 1).unwrap();
        let net = ScoreNetwork::new(layout(), 2).unwrap();
        let ex = &examples()[..1];
        let mut rng = rng_from_seed(3);
        let draws = draw_noise(ex, &s, &mut rng);
        let (one, _) = dsm_loss_and_grad_with(&net, ex, &draws, &s, Weighting::One).unwrap();
        let (beta, _) = dsm_loss_and_grad_with(&net, ex, &draws, &s, Weighting::Beta).unwrap();
        let b = s.beta(draws[0].t);
        // relative to the plain beta_t |.|^2 summand the weighted one carries beta_t^2
        assert!((beta - b * one).abs() <= 1e-14 * one.max(1.0));
    }

    #[test]
    fn exact_noise_prediction_has_zero_loss() {
        // At beta = 1 the input is the noise itself and the skip alone reads it off.
        let layout = NetworkLayout {
            n_agents: 1,
            horizon: 2,
            obstacle_slots: 0,
            hidden: vec![3],
        };
        let mut params = vec![0.0; layout.n_params()];
        *params.last_mut().unwrap() = -1.0;
        let net = ScoreNetwork::from_params(layout, params).unwrap();
        let s = NoiseSchedule::from_betas(vec![1.0], 1).unwrap();
        let ex = vec![Example {
            x0: vec![0.0; 4],
            cond: vec![0.0; 4],
        }];
        let draws = vec![NoiseDraw {
            t: 1,
            z: vec![0.3, -1.0, 2.0, 0.5],
        }];
        let (loss, grad) = dsm_loss_and_grad_with(&net, &ex, &draws, &s, Weighting::One).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let s = NoiseSchedule::geometric(0.01, 1.0, 5, 1).unwrap();
        let mut net = ScoreNetwork::new(layout(), 4).unwrap();
        let ex = examples();
        let mut rng = rng_from_seed(8);
        let draws = draw_noise(&ex, &s, &mut rng);
        let (_, grad) = dsm_loss_and_grad_with(&net, &ex, &draws, &s, Weighting::One).unwrap();
        let h = 1e-5;
        for i in 0..net.params().len() {
            let orig = net.params()[i];
            net.params_mut()[i] = orig + h;
            let (up, _) = dsm_loss_and_grad_with(&net, &ex, &draws, &s, Weighting::One).unwrap();
            net.params_mut()[i] = orig - h;
            let (down, _) = dsm_loss_and_grad_with(&net, &ex, &draws, &s, Weighting::One).unwrap();
            net.params_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            assert!(rel <= 1e-4, "param {i}: fd {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let s = NoiseSchedule::geometric(0.01, 1.0, 5, 1).unwrap();
        let mut net = ScoreNetwork::new(layout(), 4).unwrap();
        let before = net.clone();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            batch_size: 1,
            ..TrainConfig::default()
        };
        train(&mut net, &examples(), &s, &cfg).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn training_is_deterministic() {
        let s = NoiseSchedule::geometric(0.01, 1.0, 5, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 1,
            seed: 42,
            ..TrainConfig::default()
        };
        let mut a = ScoreNetwork::new(layout(), 4).unwrap();
        let mut b = a.clone();
        let ra = train(&mut a, &examples(), &s, &cfg).unwrap();
        let rb = train(&mut b, &examples(), &s, &cfg).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_restores_last_finite_parameters() {
        let s = NoiseSchedule::geometric(0.01, 1.0, 5, 1).unwrap();
        let mut net = ScoreNetwork::new(layout(), 4).unwrap();
        let before = net.clone();
        let mut bad = examples();
        bad[0].x0[0] = f64::NAN;
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        match train(&mut net, &bad, &s, &cfg) {
            Err(PdmError::Divergence { epoch }) => assert_eq!(epoch, 0),
            other => panic!("expected divergence, got {other:?}"),
        }
        assert_eq!(net, before);
    }
}
