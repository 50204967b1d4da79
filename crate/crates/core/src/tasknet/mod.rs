//! Task-conditioned next-step predictor: a trajectory encoder producing a
//! Gaussian task latent, and a dilated causal convolution stack over a short
//! angle/velocity history whose features are joined with the latent and
//! mapped to the next elbow angle.

mod config;

pub use config::MetaConfig;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Padding, ParamSet, Tensor, UnfoldSpec};
use crate::dataset::{make_windows, TemporalWindow, Trajectory, ELBOW_LIMITS};
use crate::{Error, Result};

/// Mean and spread of the task latent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentDistribution {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentMode {
    /// `mu + sigma * eps`, `eps ~ N(0, I)` drawn from the seed.
    Stochastic(u64),
    /// `mu`.
    Deterministic,
}

/// Latent statistics for a stack of trajectories, `[n, latent_dim]` each.
#[derive(Clone, Debug)]
pub struct LatentBatch {
    pub mu: Tensor,
    pub sigma: Tensor,
}

impl LatentBatch {
    pub fn row(&self, i: usize) -> Result<LatentDistribution> {
        Ok(LatentDistribution {
            mu: self.mu.slice(0, i, 1)?.to_vec(),
            sigma: self.sigma.slice(0, i, 1)?.to_vec(),
        })
    }

    pub fn sample(&self, mode: LatentMode) -> Result<Tensor> {
        match mode {
            LatentMode::Deterministic => Ok(self.mu.clone()),
            LatentMode::Stochastic(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let eps: Vec<f64> = (0..self.mu.numel()).map(|_| StandardNormal.sample(&mut rng)).collect();
                let eps = Tensor::from_vec(self.mu.shape(), eps)?;
                self.mu.add(&self.sigma.mul(&eps)?)
            }
        }
    }
}

/// Draws one latent vector from `dist`.
pub fn sample_latent(dist: &LatentDistribution, mode: LatentMode) -> Result<Vec<f64>> {
    let batch = LatentBatch {
        mu: Tensor::row(&dist.mu),
        sigma: Tensor::row(&dist.sigma),
    };
    Ok(batch.sample(mode)?.to_vec())
}

/// Closed-form `KL(N(mu, sigma^2) || N(0, I))`, summed over every entry.
pub fn loss_kl(mu: &Tensor, sigma: &Tensor) -> Result<Tensor> {
    let terms = mu
        .square()
        .add(&sigma.square())?
        .sub(&sigma.ln().scale(2.0))?
        .add_scalar(-1.0);
    Ok(terms.sum().scale(0.5))
}

/// Windows of one or more trajectories packed for a batched forward pass.
#[derive(Clone, Debug)]
pub struct WindowBatch {
    /// `[windows * history_len, 2]` features, oldest sample first per window.
    pub features: Tensor,
    /// `[windows, 1]` next-step angles.
    pub targets: Tensor,
    /// `[windows, n_traj]` one-hot owner of each window.
    pub owner: Tensor,
    /// `[windows, 1]`: `1 / (n_traj * windows_of_owner)`, so a weighted sum
    /// is the mean over trajectories of the per-trajectory window mean.
    pub weights: Tensor,
    /// `[windows, 1]` last observed angle of each window.
    pub last: Tensor,
    pub windows: usize,
}

/// Named views into the flat parameter list.
struct Layout {
    enc_w1: usize,
    enc_b1: usize,
    enc_wmu: usize,
    enc_bmu: usize,
    enc_wsig: usize,
    enc_bsig: usize,
    res_w: usize,
    conv: Vec<(usize, usize)>,
    head_w1: usize,
    head_b1: usize,
    head_w2: usize,
    head_b2: usize,
    len: usize,
}

impl Layout {
    fn new(layers: usize) -> Self {
        let conv = (0..layers).map(|l| (7 + 2 * l, 8 + 2 * l)).collect();
        let h = 7 + 2 * layers;
        Layout {
            enc_w1: 0,
            enc_b1: 1,
            enc_wmu: 2,
            enc_bmu: 3,
            enc_wsig: 4,
            enc_bsig: 5,
            res_w: 6,
            conv,
            head_w1: h,
            head_b1: h + 1,
            head_w2: h + 2,
            head_b2: h + 3,
            len: h + 4,
        }
    }
}

/// Reconstruction, KL and total loss of one evaluation.
#[derive(Clone, Debug)]
pub struct LossParts {
    pub total: Tensor,
    pub rec: Tensor,
    pub kl: Tensor,
}

/// Network definition; parameters live outside as a [`ParamSet`] or as
/// tensors in [`ParamSet`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskNet {
    config: MetaConfig,
}

/// `softplus(x) = 1` at this value, so fresh encoders start at unit sigma.
const SIGMA_BIAS_INIT: f64 = 0.541_324_854_612_918_1;

impl TaskNet {
    pub fn new(config: MetaConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &MetaConfig {
        &self.config
    }

    fn layout(&self) -> Layout {
        Layout::new(self.config.dilations.len())
    }

    fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        let c = &self.config;
        let (d, he, ch, k) = (c.latent_dim, c.encoder_hidden, c.conv_channels, c.kernel);
        let mut s = vec![
            ("enc.w1".to_string(), vec![2 * c.encoder_resample_len, he]),
            ("enc.b1".into(), vec![1, he]),
            ("enc.w_mu".into(), vec![he, d]),
            ("enc.b_mu".into(), vec![1, d]),
            ("enc.w_sigma".into(), vec![he, d]),
            ("enc.b_sigma".into(), vec![1, d]),
            ("conv.res".into(), vec![2, ch]),
        ];
        for l in 0..c.dilations.len() {
            let c_in = if l == 0 { 2 } else { ch };
            s.push((format!("conv{l}.w"), vec![c_in * k, ch]));
            s.push((format!("conv{l}.b"), vec![1, ch]));
        }
        s.push(("head.w1".into(), vec![c.history_len() * ch + d, c.head_hidden]));
        s.push(("head.b1".into(), vec![1, c.head_hidden]));
        s.push(("head.w2".into(), vec![c.head_hidden, 1]));
        s.push(("head.b2".into(), vec![1, 1]));
        debug_assert_eq!(s.len(), self.layout().len);
        s
    }

    /// Zero-filled parameters with the network's layout.
    pub fn zero_params(&self) -> ParamSet {
        let mut p = ParamSet::new();
        for (name, shape) in self.shapes() {
            let n = shape.iter().product();
            p.push(name, &shape, vec![0.0; n]).expect("layout names are unique");
        }
        p
    }

    /// Gaussian weights with variance `1 / fan_in`, zero biases, unit sigma.
    /// With `residual_output` the last head layer starts at zero, so the
    /// untrained predictor repeats the last angle.
    pub fn init_params(&self, seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        for (name, shape) in self.shapes() {
            let n: usize = shape.iter().product();
            let data = if name.ends_with("b_sigma") {
                vec![SIGMA_BIAS_INIT; n]
            } else if shape[0] == 1 || name.contains(".b") || (self.config.residual_output && name == "head.w2") {
                vec![0.0; n]
            } else {
                let std = 1.0 / (shape[0] as f64).sqrt();
                (0..n)
                    .map(|_| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        std * e
                    })
                    .collect::<Vec<f64>>()
            };
            p.push(name, &shape, data).expect("layout names are unique");
        }
        p
    }

    fn check_params(&self, params: &[Tensor]) -> Result<()> {
        let shapes = self.shapes();
        if params.len() != shapes.len() {
            return Err(Error::shape(
                "tasknet",
                format!("expected {} parameter tensors, got {}", shapes.len(), params.len()),
            ));
        }
        for ((name, shape), t) in shapes.iter().zip(params) {
            if t.shape() != shape.as_slice() {
                return Err(Error::shape(
                    "tasknet",
                    format!("{name}: expected {shape:?}, got {:?}", t.shape()),
                ));
            }
        }
        Ok(())
    }

    fn feature(&self, angle: f64, velocity: f64) -> [f64; 2] {
        [angle - self.config.angle_center, velocity * self.config.velocity_scale]
    }

    /// Interleaved features of one window history sampled every `dt`.
    pub fn history_features(&self, history: &[crate::dataset::Sample], dt: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * history.len());
        for (j, s) in history.iter().enumerate() {
            let v = if self.config.causal_velocity && j > 0 {
                (s.angle - history[j - 1].angle) / dt
            } else {
                s.velocity
            };
            out.extend(self.feature(s.angle, v));
        }
        out
    }

    /// Linear resampling of the trajectory to `encoder_resample_len` samples,
    /// flattened as interleaved `(angle, velocity)` features.
    pub fn encoder_input(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        traj.validate()?;
        let r = self.config.encoder_resample_len;
        let l = traj.len();
        let mut out = Vec::with_capacity(2 * r);
        for i in 0..r {
            let pos = i as f64 * (l - 1) as f64 / (r - 1) as f64;
            let j = (pos.floor() as usize).min(l - 2);
            let w = pos - j as f64;
            let (a, b) = (traj.samples[j], traj.samples[j + 1]);
            out.extend(self.feature(
                a.angle + w * (b.angle - a.angle),
                a.velocity + w * (b.velocity - a.velocity),
            ));
        }
        Ok(out)
    }

    /// Latent statistics of each trajectory, rows in input order.
    pub fn encode_batch(&self, params: &[Tensor], trajs: &[&Trajectory]) -> Result<LatentBatch> {
        self.check_params(params)?;
        let ly = self.layout();
        let mut x = Vec::with_capacity(trajs.len() * 2 * self.config.encoder_resample_len);
        for t in trajs {
            x.extend(self.encoder_input(t)?);
        }
        let n = trajs.len();
        let x = Tensor::from_vec(&[n, 2 * self.config.encoder_resample_len], x)?;
        let ones = Tensor::full(&[n, 1], 1.0);
        let affine =
            |x: &Tensor, w: usize, b: usize| -> Result<Tensor> { x.matmul(&params[w])?.add(&ones.matmul(&params[b])?) };
        let h = affine(&x, ly.enc_w1, ly.enc_b1)?.tanh();
        let mu = affine(&h, ly.enc_wmu, ly.enc_bmu)?;
        let sigma = affine(&h, ly.enc_wsig, ly.enc_bsig)?
            .softplus()
            .add_scalar(self.config.sigma_floor);
        Ok(LatentBatch { mu, sigma })
    }

    pub fn encode(&self, params: &[Tensor], traj: &Trajectory) -> Result<LatentDistribution> {
        self.encode_batch(params, &[traj])?.row(0)
    }

    /// Packs every window of every trajectory.
    pub fn window_batch(&self, trajs: &[&Trajectory]) -> Result<WindowBatch> {
        let h = self.config.history_len();
        let n = trajs.len();
        if n == 0 {
            return Err(Error::BadParams("no trajectories to window".into()));
        }
        let mut features = Vec::new();
        let mut targets = Vec::new();
        let mut owner = Vec::new();
        let mut weights = Vec::new();
        let mut last = Vec::new();
        for (i, t) in trajs.iter().enumerate() {
            let windows = make_windows(t, self.config.delta_t)?;
            let w = 1.0 / (n * windows.len()) as f64;
            for win in &windows {
                features.extend(self.history_features(&win.history, t.dt));
                targets.push(win.target);
                last.push(win.history[h - 1].angle);
                let mut row = vec![0.0; n];
                row[i] = 1.0;
                owner.extend(row);
                weights.push(w);
            }
        }
        let windows = targets.len();
        Ok(WindowBatch {
            features: Tensor::from_vec(&[windows * h, 2], features)?,
            targets: Tensor::from_vec(&[windows, 1], targets)?,
            owner: Tensor::from_vec(&[windows, n], owner)?,
            weights: Tensor::from_vec(&[windows, 1], weights)?,
            last: Tensor::from_vec(&[windows, 1], last)?,
            windows,
        })
    }

    /// Predicted next angles `[windows, 1]` given one latent row per
    /// trajectory (`z` is `[n_traj, latent_dim]`).
    pub fn predict_batch(&self, params: &[Tensor], batch: &WindowBatch, z: &Tensor) -> Result<Tensor> {
        self.check_params(params)?;
        let c = &self.config;
        let ly = self.layout();
        let (b, h, ch) = (batch.windows, c.history_len(), c.conv_channels);
        let rows = Tensor::full(&[b * h, 1], 1.0);
        let x = &batch.features;
        let mut hidden = x.matmul(&params[ly.res_w])?;
        let mut input = x.clone();
        let mut c_in = 2;
        for (l, &(w, bias)) in ly.conv.iter().enumerate() {
            let spec = UnfoldSpec::new(b, h, c_in, c.kernel, c.dilations[l], Padding::Causal)?;
            let pre = input
                .unfold_time(spec)?
                .matmul(&params[w])?
                .add(&rows.matmul(&params[bias])?)?;
            hidden = pre.tanh().add(&hidden)?;
            input = hidden.clone();
            c_in = ch;
        }
        let flat = hidden.reshape(&[b, h * ch])?;
        // [flat, z] * W1 split by rows, so the latent term is computed once
        // per trajectory rather than once per window.
        let w1 = &params[ly.head_w1];
        let w_feat = w1.slice(0, 0, h * ch)?;
        let w_lat = w1.slice(0, h * ch, c.latent_dim)?;
        let ones = Tensor::full(&[b, 1], 1.0);
        let pre = flat
            .matmul(&w_feat)?
            .add(&batch.owner.matmul(&z.matmul(&w_lat)?)?)?
            .add(&ones.matmul(&params[ly.head_b1])?)?;
        let hid = pre.tanh();
        let out = hid
            .matmul(&params[ly.head_w2])?
            .add(&ones.matmul(&params[ly.head_b2])?)?;
        if c.residual_output {
            out.add(&batch.last)
        } else {
            Ok(out)
        }
    }

    /// Next-angle prediction for one window.
    pub fn predict_next(&self, params: &[Tensor], window: &TemporalWindow, z: &[f64], dt: f64) -> Result<f64> {
        let h = self.config.history_len();
        if window.history.len() != h || z.len() != self.config.latent_dim {
            return Err(Error::shape(
                "predict_next",
                format!(
                    "history of {} samples and latent of {} (expected {h} and {})",
                    window.history.len(),
                    z.len(),
                    self.config.latent_dim
                ),
            ));
        }
        let features = self.history_features(&window.history, dt);
        let batch = WindowBatch {
            features: Tensor::from_vec(&[h, 2], features)?,
            targets: Tensor::zeros(&[1, 1]),
            owner: Tensor::full(&[1, 1], 1.0),
            weights: Tensor::full(&[1, 1], 1.0),
            last: Tensor::full(&[1, 1], window.history[h - 1].angle),
            windows: 1,
        };
        Ok(self.predict_batch(params, &batch, &Tensor::row(z))?.item())
    }

    /// Weighted mean squared next-step error of a packed batch.
    pub fn loss_rec_batch(&self, params: &[Tensor], batch: &WindowBatch, z: &Tensor) -> Result<Tensor> {
        let err = self.predict_batch(params, batch, z)?.sub(&batch.targets)?;
        Ok(err.square().mul(&batch.weights)?.sum())
    }

    /// Mean over windows of the squared next-angle error of one trajectory.
    pub fn loss_rec(&self, params: &[Tensor], traj: &Trajectory, z: &[f64]) -> Result<Tensor> {
        let batch = self.window_batch(&[traj])?;
        self.loss_rec_batch(params, &batch, &Tensor::row(z))
    }

    /// `loss_rec + beta * loss_kl`, averaged over trajectories, where each
    /// trajectory is reconstructed under the latent of its own encoding.
    pub fn loss_total_batch(
        &self,
        params: &[Tensor],
        trajs: &[&Trajectory],
        batch: &WindowBatch,
        beta: f64,
        mode: LatentMode,
    ) -> Result<LossParts> {
        let latent = self.encode_batch(params, trajs)?;
        let z = latent.sample(mode)?;
        let rec = self.loss_rec_batch(params, batch, &z)?;
        let kl = loss_kl(&latent.mu, &latent.sigma)?.scale(1.0 / trajs.len() as f64);
        let total = rec.add(&kl.scale(beta))?;
        Ok(LossParts { total, rec, kl })
    }

    pub fn loss_total(
        &self,
        params: &[Tensor],
        trajs: &[&Trajectory],
        beta: f64,
        mode: LatentMode,
    ) -> Result<LossParts> {
        let batch = self.window_batch(trajs)?;
        self.loss_total_batch(params, trajs, &batch, beta, mode)
    }

    /// Autoregressive reference generation from a `(delta_t + 1)`-sample seed.
    ///
    /// Each predicted angle is clamped to the elbow limits, its velocity is
    /// the backward difference to the previous angle, and the window shifts
    /// by one sample. Returns the `n_steps` generated angles.
    pub fn rollout(
        &self,
        params: &[Tensor],
        seed_history: &[crate::dataset::Sample],
        z: &[f64],
        n_steps: usize,
        dt: f64,
    ) -> Result<Vec<f64>> {
        if !(dt > 0.0) {
            return Err(Error::BadParams(format!("dt must be positive, got {dt}")));
        }
        let mut window = TemporalWindow {
            history: seed_history.to_vec(),
            target: 0.0,
        };
        let (lo, hi) = ELBOW_LIMITS;
        let mut out = Vec::with_capacity(n_steps);
        for _ in 0..n_steps {
            let raw = self.predict_next(params, &window, z, dt)?;
            if !raw.is_finite() {
                return Err(Error::NaNDetected(format!("rollout step {}", out.len())));
            }
            let q = raw.clamp(lo, hi);
            let last = window.history[window.history.len() - 1].angle;
            window.history.remove(0);
            window.history.push(crate::dataset::Sample {
                angle: q,
                velocity: (q - last) / dt,
            });
            out.push(q);
        }
        Ok(out)
    }
}
