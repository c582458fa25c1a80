//! Score models for joint trajectories.
//!
//! The learned model is a tanh MLP over the flattened trajectory, a fixed-size
//! instance embedding and two noise-level features, plus one scalar skip
//! weight `w`. The raw output is
//!
//! ```text
//! out = w * x / sqrt(beta) + sqrt((1 - beta) / beta) * mlp(x, cond, beta)
//! ```
//!
//! and stands for the negated injected noise, so the score is
//! `s = out / sqrt(beta)`. At `w = -1` the MLP acts as a denoiser predicting
//! the clean trajectory, and the score at `beta = 1` is exact whatever the MLP does.
//!
//! Diffusion runs in world-centred coordinates; [`to_model_space`] and
//! [`from_model_space`] convert.

mod checkpoint;
mod train;

pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint, schedule_hash, Checkpoint,
    CheckpointHeader, CHECKPOINT_VERSION,
};
pub use train::{
    dsm_loss_and_grad, dsm_loss_and_grad_with, perturb, train, Example, NoiseDraw, TrainConfig, TrainReport,
    Weighting,
};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{dist_sq, Scenario, TrajectorySet};
use crate::error::{PdmError, Result};
use crate::rng::rng_from_seed;
use crate::schedule::NoiseSchedule;

/// Number of obstacles the embedding describes.
pub const DEFAULT_OBSTACLE_SLOTS: usize = 25;

/// Anything the sampler can query for a score.
pub trait ScoreModel: Sync {
    /// Rejects instances whose `(N_a, H)` the model cannot handle.
    fn check_shape(&self, n_agents: usize, horizon: usize) -> Result<()>;

    /// Per-instance conditioning vector, computed once per sample.
    fn conditioning(&self, scenario: &Scenario) -> Vec<f64>;

    /// Writes the score at model-space point `x` and level `t` into `out`.
    fn score(&self, x: &[f64], t: usize, schedule: &NoiseSchedule, cond: &[f64], out: &mut [f64]) -> Result<()>;
}

/// Score of an isotropic Gaussian `N(mean, std^2 I)`, the same at every level.
#[derive(Debug, Clone)]
pub struct GaussianScore {
    pub mean: Vec<f64>,
    pub std: f64,
}

impl ScoreModel for GaussianScore {
    fn check_shape(&self, n_agents: usize, horizon: usize) -> Result<()> {
        if n_agents * horizon * 2 != self.mean.len() {
            return Err(PdmError::contract(format!(
                "gaussian score has dimension {}, instance needs {}",
                self.mean.len(),
                n_agents * horizon * 2
            )));
        }
        Ok(())
    }

    fn conditioning(&self, _: &Scenario) -> Vec<f64> {
        Vec::new()
    }

    fn score(&self, x: &[f64], _: usize, _: &NoiseSchedule, _: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.mean.len() || out.len() != x.len() {
            return Err(PdmError::contract("gaussian score dimension mismatch"));
        }
        let inv_var = 1.0 / (self.std * self.std);
        for ((o, xi), m) in out.iter_mut().zip(x).zip(&self.mean) {
            *o = -(xi - m) * inv_var;
        }
        Ok(())
    }
}

pub fn to_model_space(traj: &TrajectorySet, scenario: &Scenario) -> Vec<f64> {
    let c = scenario.world_bounds.center();
    traj.as_slice()
        .chunks_exact(2)
        .flat_map(|p| [p[0] - c[0], p[1] - c[1]])
        .collect()
}

pub fn from_model_space(x: &[f64], scenario: &Scenario, horizon: usize) -> Result<TrajectorySet> {
    let c = scenario.world_bounds.center();
    let world = x.chunks_exact(2).flat_map(|p| [p[0] + c[0], p[1] + c[1]]).collect();
    TrajectorySet::new(scenario.n_agents(), horizon, world)
}

/// Instance embedding: centred starts and goals, then the `slots` obstacles
/// nearest the endpoint centroid as `(cx, cy, r)`, zero-padded.
pub fn conditioning(scenario: &Scenario, slots: usize) -> Vec<f64> {
    let c = scenario.world_bounds.center();
    let mut out = Vec::with_capacity(4 * scenario.n_agents() + 3 * slots);
    for p in scenario.starts.iter().chain(&scenario.goals) {
        out.push(p[0] - c[0]);
        out.push(p[1] - c[1]);
    }
    let n = (scenario.starts.len() + scenario.goals.len()) as f64;
    let centroid = scenario
        .starts
        .iter()
        .chain(&scenario.goals)
        .fold([0.0, 0.0], |acc, p| [acc[0] + p[0] / n, acc[1] + p[1] / n]);
    let mut order: Vec<usize> = (0..scenario.obstacles.len()).collect();
    order.sort_by(|&a, &b| {
        let da = dist_sq(scenario.obstacles[a].center, centroid);
        let db = dist_sq(scenario.obstacles[b].center, centroid);
        da.total_cmp(&db).then(a.cmp(&b))
    });
    for k in 0..slots {
        match order.get(k) {
            Some(&o) => {
                let ob = &scenario.obstacles[o];
                out.extend([ob.center[0] - c[0], ob.center[1] - c[1], ob.radius]);
            }
            None => out.extend([0.0; 3]),
        }
    }
    out
}

/// Shape of a [`ScoreNetwork`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkLayout {
    pub n_agents: usize,
    pub horizon: usize,
    pub obstacle_slots: usize,
    pub hidden: Vec<usize>,
}

impl NetworkLayout {
    pub fn new(n_agents: usize, horizon: usize) -> Self {
        Self {
            n_agents,
            horizon,
            obstacle_slots: DEFAULT_OBSTACLE_SLOTS,
            hidden: vec![256; 3],
        }
    }

    pub fn traj_dim(&self) -> usize {
        self.n_agents * self.horizon * 2
    }

    pub fn cond_dim(&self) -> usize {
        4 * self.n_agents + 3 * self.obstacle_slots
    }

    pub fn input_dim(&self) -> usize {
        self.traj_dim() + self.cond_dim() + 2
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(&self.hidden);
        w.push(self.traj_dim());
        w
    }

    /// MLP weights and biases plus the skip weight.
    pub fn n_params(&self) -> usize {
        self.widths().windows(2).map(|w| w[1] * w[0] + w[1]).sum::<usize>() + 1
    }

    /// Hex SHA-256 of the canonical layout description.
    pub fn hash(&self) -> String {
        let text = format!(
            "mlp-tanh-skip;agents={};horizon={};slots={};hidden={:?}",
            self.n_agents, self.horizon, self.obstacle_slots, self.hidden
        );
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.n_agents == 0 || self.horizon < 2 {
            return Err(PdmError::contract("layout needs at least one agent and horizon >= 2"));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(PdmError::contract("hidden widths must be positive"));
        }
        Ok(())
    }
}

/// Fully connected tanh network with a scalar skip. Parameters are stored
/// flat, layer by layer, each as a row-major `(out, in)` weight matrix
/// followed by its bias; the skip weight comes last.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNetwork {
    layout: NetworkLayout,
    params: Vec<f64>,
}

/// Activations kept for the backward pass.
pub(crate) struct Tape {
    /// Input and every post-activation, `(batch, width)`.
    acts: Vec<Array2<f64>>,
    /// Raw MLP output before mixing with the skip.
    mlp: Array2<f64>,
}

/// `(1 / sqrt(beta), sqrt((1 - beta) / beta))` for a noise level.
fn mix(beta: f64) -> (f64, f64) {
    let inv = 1.0 / beta.sqrt();
    (inv, (1.0 - beta).max(0.0).sqrt() * inv)
}

impl ScoreNetwork {
    /// LeCun-normal weights, zero biases, output layer scaled down by 10,
    /// skip weight -1.
    pub fn new(layout: NetworkLayout, seed: u64) -> Result<Self> {
        layout.validate()?;
        let mut rng = rng_from_seed(seed);
        let widths = layout.widths();
        let mut params = Vec::with_capacity(layout.n_params());
        let last = widths.len() - 2;
        for (l, w) in widths.windows(2).enumerate() {
            let scale = if l == last { 0.1 } else { 1.0 } / (w[0] as f64).sqrt();
            let normal = Normal::new(0.0, scale).expect("positive scale");
            params.extend((0..w[0] * w[1]).map(|_| normal.sample(&mut rng)));
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        params.push(-1.0);
        Ok(Self { layout, params })
    }

    pub fn zeros(layout: NetworkLayout) -> Result<Self> {
        layout.validate()?;
        let n = layout.n_params();
        Ok(Self {
            layout,
            params: vec![0.0; n],
        })
    }

    pub fn from_params(layout: NetworkLayout, params: Vec<f64>) -> Result<Self> {
        layout.validate()?;
        if params.len() != layout.n_params() {
            return Err(PdmError::contract(format!(
                "layout needs {} parameters, got {}",
                layout.n_params(),
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(PdmError::contract("non-finite network parameter"));
        }
        Ok(Self { layout, params })
    }

    pub fn layout(&self) -> &NetworkLayout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Views of `(weights, bias)` for every layer.
    fn layers<'a>(&self, params: &'a [f64]) -> Vec<(ArrayView2<'a, f64>, ArrayView1<'a, f64>)> {
        let mut out = Vec::new();
        let mut off = 0;
        for w in self.layout.widths().windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let wv = ArrayView2::from_shape((fan_out, fan_in), &params[off..off + fan_in * fan_out])
                .expect("layout-consistent slice");
            off += fan_in * fan_out;
            let bv = ArrayView1::from(&params[off..off + fan_out]);
            off += fan_out;
            out.push((wv, bv));
        }
        out
    }

    /// Network input row: trajectory, conditioning, `sqrt(beta)`, `ln(beta)`.
    pub(crate) fn input_row(&self, x: &[f64], cond: &[f64], beta: f64, row: &mut [f64]) -> Result<()> {
        let (td, cd) = (self.layout.traj_dim(), self.layout.cond_dim());
        if x.len() != td {
            return Err(PdmError::contract(format!("expected {td} trajectory values, got {}", x.len())));
        }
        if cond.len() != cd {
            return Err(PdmError::contract(format!("expected {cd} conditioning values, got {}", cond.len())));
        }
        row[..td].copy_from_slice(x);
        row[td..td + cd].copy_from_slice(cond);
        row[td + cd] = beta.sqrt();
        row[td + cd + 1] = beta.ln();
        Ok(())
    }

    fn skip(&self) -> f64 {
        self.params[self.params.len() - 1]
    }

    fn row_beta(&self, row: ArrayView1<f64>) -> f64 {
        let sb = row[self.layout.traj_dim() + self.layout.cond_dim()];
        sb * sb
    }

    /// Raw outputs for a batch of input rows.
    pub(crate) fn forward_batch(&self, input: Array2<f64>) -> (Array2<f64>, Tape) {
        let layers = self.layers(&self.params);
        let n = layers.len();
        let mut acts = vec![input];
        for (l, (w, b)) in layers.iter().enumerate() {
            let mut z = acts[l].dot(&w.t());
            z += b;
            if l + 1 < n {
                z.mapv_inplace(f64::tanh);
            }
            acts.push(z);
        }
        let mlp = acts.pop().expect("at least one layer");
        let td = self.layout.traj_dim();
        let skip = self.skip();
        let mut out = mlp.clone();
        for (mut o, inp) in out.rows_mut().into_iter().zip(acts[0].rows()) {
            let (inv, c) = mix(self.row_beta(inp));
            for (v, x) in o.iter_mut().zip(inp.iter().take(td)) {
                *v = skip * x * inv + c * *v;
            }
        }
        (out, Tape { acts, mlp })
    }

    /// Gradient of `sum(d_out * out)` with respect to the parameters.
    pub(crate) fn backward(&self, tape: &Tape, mut d_out: Array2<f64>, grad: &mut [f64]) {
        let td = self.layout.traj_dim();
        let mut d_skip = 0.0;
        for (mut d, inp) in d_out.rows_mut().into_iter().zip(tape.acts[0].rows()) {
            let (inv, c) = mix(self.row_beta(inp));
            for (dv, x) in d.iter_mut().zip(inp.iter().take(td)) {
                d_skip += *dv * x * inv;
                *dv *= c;
            }
        }
        debug_assert_eq!(tape.mlp.dim(), d_out.dim());
        let last = grad.len() - 1;
        grad[last] += d_skip;
        let layers = self.layers(&self.params);
        let widths = self.layout.widths();
        let mut offsets = Vec::with_capacity(layers.len());
        let mut off = 0;
        for w in widths.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let mut delta = d_out;
        for l in (0..layers.len()).rev() {
            let (w, _) = &layers[l];
            let a_prev = &tape.acts[l];
            let (fan_out, fan_in) = w.dim();
            let gw = delta.t().dot(a_prev);
            let gb = delta.sum_axis(Axis(0));
            let o = offsets[l];
            for (g, v) in grad[o..o + fan_in * fan_out].iter_mut().zip(gw.iter()) {
                *g += v;
            }
            for (g, v) in grad[o + fan_in * fan_out..o + fan_in * fan_out + fan_out]
                .iter_mut()
                .zip(gb.iter())
            {
                *g += v;
            }
            if l > 0 {
                let mut d_prev = delta.dot(w);
                // tanh' = 1 - a^2
                d_prev.zip_mut_with(a_prev, |d, a| *d *= 1.0 - a * a);
                delta = d_prev;
            }
        }
    }

    /// Raw network output for one input.
    pub fn forward_raw(&self, x: &[f64], cond: &[f64], beta: f64) -> Result<Vec<f64>> {
        let mut row = vec![0.0; self.layout.input_dim()];
        self.input_row(x, cond, beta, &mut row)?;
        let mut a = Array1::from(row);
        let (inv, c) = mix(beta);
        let layers = self.layers(&self.params);
        let n = layers.len();
        for (l, (w, b)) in layers.iter().enumerate() {
            let mut z = w.dot(&a);
            z += b;
            if l + 1 < n {
                z.mapv_inplace(f64::tanh);
            }
            a = z;
        }
        let skip = self.skip();
        Ok(a.iter().zip(x).map(|(m, x)| skip * x * inv + c * m).collect())
    }

    /// Score estimate at level `t`.
    pub fn forward(&self, x: &[f64], t: usize, schedule: &NoiseSchedule, cond: &[f64]) -> Result<Vec<f64>> {
        schedule.check_level(t)?;
        let beta = schedule.beta(t);
        let mut out = self.forward_raw(x, cond, beta)?;
        let inv = 1.0 / beta.sqrt();
        out.iter_mut().for_each(|v| *v *= inv);
        Ok(out)
    }
}

impl ScoreModel for ScoreNetwork {
    fn check_shape(&self, n_agents: usize, horizon: usize) -> Result<()> {
        if (n_agents, horizon) != (self.layout.n_agents, self.layout.horizon) {
            return Err(PdmError::contract(format!(
                "network expects {} agents over {} steps, instance has {n_agents} over {horizon}",
                self.layout.n_agents, self.layout.horizon
            )));
        }
        Ok(())
    }

    fn conditioning(&self, scenario: &Scenario) -> Vec<f64> {
        conditioning(scenario, self.layout.obstacle_slots)
    }

    fn score(&self, x: &[f64], t: usize, schedule: &NoiseSchedule, cond: &[f64], out: &mut [f64]) -> Result<()> {
        let s = self.forward(x, t, schedule, cond)?;
        if out.len() != s.len() {
            return Err(PdmError::contract("score buffer has the wrong length"));
        }
        out.copy_from_slice(&s);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{fill_standard_normal, rng_from_seed};

    fn tiny() -> NetworkLayout {
        NetworkLayout {
            n_agents: 2,
            horizon: 3,
            obstacle_slots: 2,
            hidden: vec![7, 5],
        }
    }

    /// Plain nested-loop forward pass over the flat parameter vector.
    fn reference_forward(layout: &NetworkLayout, params: &[f64], input: &[f64]) -> Vec<f64> {
        let widths = layout.widths();
        let mut a = input.to_vec();
        let mut off = 0;
        for (l, w) in widths.windows(2).enumerate() {
            let (fi, fo) = (w[0], w[1]);
            let mut next = vec![0.0; fo];
            for r in 0..fo {
                let mut acc = params[off + fi * fo + r];
                for c in 0..fi {
                    acc += params[off + r * fi + c] * a[c];
                }
                next[r] = if l + 2 < widths.len() { acc.tanh() } else { acc };
            }
            off += fi * fo + fo;
            a = next;
        }
        let td = layout.traj_dim();
        let sb = input[td + layout.cond_dim()];
        let skip = params[off];
        (0..td)
            .map(|k| skip * input[k] / sb + ((1.0 - sb * sb) / (sb * sb)).sqrt() * a[k])
            .collect()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = ScoreNetwork::zeros(tiny()).unwrap();
        let s = NoiseSchedule::geometric(0.01, 1.0, 5, 1).unwrap();
        let out = net.forward(&[0.3; 12], 2, &s, &[0.1; 14]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_reference_forward() {
        let layout = tiny();
        let mut net = ScoreNetwork::new(layout.clone(), 11).unwrap();
        let last = net.params().len() - 1;
        net.params_mut()[last] = -0.7;
        let mut rng = rng_from_seed(5);
        let mut x = vec![0.0; 12];
        let mut cond = vec![0.0; 14];
        fill_standard_normal(&mut rng, &mut x);
        fill_standard_normal(&mut rng, &mut cond);
        let beta = 0.3;
        let got = net.forward_raw(&x, &cond, beta).unwrap();
        let mut input = x.clone();
        input.extend(&cond);
        input.extend([beta.sqrt(), beta.ln()]);
        let want = reference_forward(&layout, net.params(), &input);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-12, "{g} vs {w}");
        }
        assert_eq!(got, net.forward_raw(&x, &cond, beta).unwrap());
    }

    #[test]
    fn batch_forward_matches_single() {
        let net = ScoreNetwork::new(tiny(), 3).unwrap();
        let mut rng = rng_from_seed(9);
        let mut rows = Array2::zeros((3, net.layout().input_dim()));
        let mut singles = vec![];
        for r in 0..3 {
            let mut x = vec![0.0; 12];
            fill_standard_normal(&mut rng, &mut x);
            let cond = vec![0.2 * r as f64; 14];
            let mut row = vec![0.0; net.layout().input_dim()];
            net.input_row(&x, &cond, 0.5, &mut row).unwrap();
            rows.row_mut(r).assign(&ArrayView1::from(&row));
            singles.push(net.forward_raw(&x, &cond, 0.5).unwrap());
        }
        let (out, _) = net.forward_batch(rows);
        for r in 0..3 {
            for (a, b) in out.row(r).iter().zip(&singles[r]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn wrong_dimensions_are_rejected() {
        let net = ScoreNetwork::new(tiny(), 1).unwrap();
        assert!(net.forward_raw(&[0.0; 11], &[0.0; 14], 0.5).is_err());
        assert!(net.forward_raw(&[0.0; 12], &[0.0; 13], 0.5).is_err());
        assert!(net.check_shape(3, 3).is_err());
    }

    #[test]
    fn conditioning_pads_and_orders_obstacles() {
        use crate::domain::{Obstacle, WorldBounds};
        let s = Scenario {
            starts: vec![[0.4, 0.5]],
            goals: vec![[0.6, 0.5]],
            obstacles: vec![
                Obstacle { center: [0.9, 0.9], radius: 0.05 },
                Obstacle { center: [0.5, 0.6], radius: 0.02 },
            ],
            agent_radius: 0.01,
            v_max: 0.1,
            dt: 1.0,
            world_bounds: WorldBounds::default(),
        };
        let c = conditioning(&s, 3);
        assert_eq!(c.len(), 4 + 9);
        assert_eq!(&c[..4], &[-0.09999999999999998, 0.0, 0.09999999999999998, 0.0]);
        assert!((c[4] - 0.0).abs() < 1e-15 && (c[6] - 0.02).abs() < 1e-15);
        assert!((c[7] - 0.4).abs() < 1e-15);
        assert_eq!(&c[10..], &[0.0; 3]);
    }
}
