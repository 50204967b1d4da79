use serde::{Deserialize, Serialize};

use crate::{Error, Result};

fn d_delta_t() -> usize {
    9
}
fn d_latent() -> usize {
    128
}
fn d_channels() -> usize {
    32
}
fn d_kernel() -> usize {
    3
}
fn d_dilations() -> Vec<usize> {
    vec![1, 2]
}
fn d_hidden() -> usize {
    64
}
fn d_resample() -> usize {
    64
}
fn d_beta() -> f64 {
    1e-3
}
fn d_alpha() -> f64 {
    0.01
}
fn d_gamma() -> f64 {
    1e-3
}
fn d_one() -> usize {
    1
}
fn d_five() -> usize {
    5
}
fn d_batch() -> usize {
    4
}
fn d_true() -> bool {
    true
}
fn d_fraction() -> f64 {
    0.5
}
fn d_sigma_floor() -> f64 {
    1e-4
}
fn d_angle_center() -> f64 {
    1.3
}
fn d_velocity_scale() -> f64 {
    0.25
}

/// Architecture and meta-learning hyperparameters. Stored in checkpoints so
/// a parameter set can always be matched with the network that uses it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaConfig {
    /// History length minus one: windows hold `delta_t + 1` samples.
    #[serde(default = "d_delta_t")]
    pub delta_t: usize,
    #[serde(default = "d_latent")]
    pub latent_dim: usize,
    #[serde(default = "d_channels")]
    pub conv_channels: usize,
    #[serde(default = "d_kernel")]
    pub kernel: usize,
    /// One entry per convolution layer.
    #[serde(default = "d_dilations")]
    pub dilations: Vec<usize>,
    #[serde(default = "d_hidden")]
    pub head_hidden: usize,
    #[serde(default = "d_hidden")]
    pub encoder_hidden: usize,
    #[serde(default = "d_resample")]
    pub encoder_resample_len: usize,
    /// KL weight.
    #[serde(default = "d_beta")]
    pub beta: f64,
    /// Inner (adaptation) learning rate.
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    /// Outer (meta) learning rate.
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default = "d_one")]
    pub inner_steps_train: usize,
    #[serde(default = "d_five")]
    pub inner_steps_deploy: usize,
    #[serde(default = "d_batch")]
    pub meta_batch: usize,
    /// Differentiate through the inner update; `false` gives first-order MAML.
    #[serde(default = "d_true")]
    pub second_order: bool,
    #[serde(default = "d_fraction")]
    pub support_fraction: f64,
    #[serde(default = "d_sigma_floor")]
    pub sigma_floor: f64,
    /// Angle feature is `angle - angle_center`.
    #[serde(default = "d_angle_center")]
    pub angle_center: f64,
    /// Velocity feature is `velocity * velocity_scale`.
    #[serde(default = "d_velocity_scale")]
    pub velocity_scale: f64,
    /// Predict the next angle as the last observed angle plus the head's
    /// output instead of the head's output alone.
    #[serde(default)]
    pub residual_output: bool,
    /// Replace the velocity of every window sample after the first with the
    /// backward difference of the window's angles. Stored velocities are
    /// central differences, so the last one would otherwise contain the
    /// target angle, which an autoregressive rollout never has.
    #[serde(default = "d_true")]
    pub causal_velocity: bool,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            delta_t: d_delta_t(),
            latent_dim: d_latent(),
            conv_channels: d_channels(),
            kernel: d_kernel(),
            dilations: d_dilations(),
            head_hidden: d_hidden(),
            encoder_hidden: d_hidden(),
            encoder_resample_len: d_resample(),
            beta: d_beta(),
            alpha: d_alpha(),
            gamma: d_gamma(),
            inner_steps_train: d_one(),
            inner_steps_deploy: d_five(),
            meta_batch: d_batch(),
            second_order: d_true(),
            support_fraction: d_fraction(),
            sigma_floor: d_sigma_floor(),
            angle_center: d_angle_center(),
            velocity_scale: d_velocity_scale(),
            residual_output: false,
            causal_velocity: true,
        }
    }
}

impl MetaConfig {
    /// History samples per window.
    pub fn history_len(&self) -> usize {
        self.delta_t + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let sizes = [
            self.latent_dim,
            self.conv_channels,
            self.kernel,
            self.head_hidden,
            self.encoder_hidden,
            self.meta_batch,
            self.inner_steps_train,
        ];
        if sizes.contains(&0) {
            return bad("latent_dim, conv_channels, kernel, head_hidden, encoder_hidden, meta_batch and inner_steps_train must be positive");
        }
        if self.encoder_resample_len < 2 {
            return bad("encoder_resample_len must be at least 2");
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return bad("dilations must be a non-empty list of positive integers");
        }
        if !(self.alpha > 0.0 && self.gamma > 0.0 && self.beta >= 0.0) {
            return bad("alpha and gamma must be positive and beta non-negative");
        }
        if !(self.support_fraction > 0.0 && self.support_fraction < 1.0) {
            return bad("support_fraction must lie in (0, 1)");
        }
        if !(self.sigma_floor > 0.0 && self.velocity_scale > 0.0) {
            return bad("sigma_floor and velocity_scale must be positive");
        }
        let reals = [
            self.alpha,
            self.gamma,
            self.beta,
            self.sigma_floor,
            self.angle_center,
            self.velocity_scale,
        ];
        if reals.iter().any(|v| !v.is_finite()) {
            return bad("non-finite hyperparameter");
        }
        Ok(())
    }
}
