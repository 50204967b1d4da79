use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::meta::AdaptationReport;
use crate::simcontrol::LyapunovReport;

/// Tracking bound on the mean RMS error of adapted rollouts (rad).
pub const RMS_BOUND: f64 = 0.1;

/// One held-out instance: `steps` adaptation steps from the meta-learned
/// initialization versus from a fresh random initialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub task_id: String,
    pub support: usize,
    pub query: usize,
    pub meta_pre_mse: f64,
    pub meta_query_mse: f64,
    pub random_query_mse: f64,
    /// `meta_query_mse / random_query_mse`
    pub ratio: f64,
    pub meta_better: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingResult {
    pub task_id: String,
    pub samples: usize,
    pub rms_error: f64,
    pub max_abs_error: f64,
    pub saturated_fraction: f64,
    /// RMS gap between the generated reference and the demonstration.
    pub rollout_rms_vs_demo: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub adapt_steps: usize,
    pub alpha: f64,
    pub instances: Vec<InstanceResult>,
    pub fraction_meta_better: f64,
    pub mean_ratio: f64,
    pub median_ratio: f64,
    pub tracking: Vec<TrackingResult>,
    pub mean_rms: f64,
    pub max_rms: f64,
    pub rms_bound: f64,
    pub rms_within_bound: bool,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    values.sum::<f64>() / n as f64
}

impl EvalReport {
    pub fn new(
        seed: u64,
        adapt_steps: usize,
        alpha: f64,
        instances: Vec<InstanceResult>,
        tracking: Vec<TrackingResult>,
    ) -> Self {
        let ratios: Vec<f64> = instances.iter().map(|r| r.ratio).collect();
        let better = instances.iter().filter(|r| r.meta_better).count();
        let mean_rms = mean(tracking.iter().map(|t| t.rms_error));
        Self {
            seed,
            adapt_steps,
            alpha,
            fraction_meta_better: if instances.is_empty() {
                f64::NAN
            } else {
                better as f64 / instances.len() as f64
            },
            mean_ratio: mean(ratios.iter().copied()),
            median_ratio: median(&ratios),
            max_rms: tracking.iter().fold(f64::NAN, |m, t| m.max(t.rms_error)),
            rms_within_bound: mean_rms <= RMS_BOUND,
            mean_rms,
            rms_bound: RMS_BOUND,
            instances,
            tracking,
        }
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# Evaluation report\n");
        let _ = writeln!(
            s,
            "Seed {}, {} adaptation steps at alpha = {}.\n",
            self.seed, self.adapt_steps, self.alpha
        );
        let _ = writeln!(s, "## Adaptation gain\n");
        let _ = writeln!(
            s,
            "Meta-initialization beats random initialization on {:.1}% of {} held-out instances; mean query-loss ratio {:.4}, median {:.4}.\n",
            100.0 * self.fraction_meta_better,
            self.instances.len(),
            self.mean_ratio,
            self.median_ratio
        );
        let _ = writeln!(s, "| task | support | query | meta pre | meta | random | ratio |");
        let _ = writeln!(s, "|---|---:|---:|---:|---:|---:|---:|");
        for r in &self.instances {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {:.3e} | {:.3e} | {:.3e} | {:.4} |",
                r.task_id, r.support, r.query, r.meta_pre_mse, r.meta_query_mse, r.random_query_mse, r.ratio
            );
        }
        let _ = writeln!(s, "\n## Tracking\n");
        let _ = writeln!(
            s,
            "Mean RMS tracking error {:.4} rad (max {:.4}, bound {}): {}.\n",
            self.mean_rms,
            self.max_rms,
            self.rms_bound,
            if self.rms_within_bound {
                "within bound"
            } else {
                "ABOVE bound"
            }
        );
        let _ = writeln!(
            s,
            "| task | samples | RMS (rad) | max abs (rad) | saturated | rollout vs demo (rad) |"
        );
        let _ = writeln!(s, "|---|---:|---:|---:|---:|---:|");
        for t in &self.tracking {
            let _ = writeln!(
                s,
                "| {} | {} | {:.4} | {:.4} | {:.3} | {:.4} |",
                t.task_id, t.samples, t.rms_error, t.max_abs_error, t.saturated_fraction, t.rollout_rms_vs_demo
            );
        }
        s
    }
}

/// Written by `adapt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptSummary {
    pub demo: String,
    pub demo_samples: usize,
    pub alpha: f64,
    #[serde(flatten)]
    pub report: AdaptationReport,
    pub final_loss: f64,
}

/// Written by `simulate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub demo: String,
    pub samples: usize,
    pub dt: f64,
    pub rms_error: f64,
    pub max_abs_error: f64,
    pub saturated_fraction: f64,
    pub rollout_rms_vs_demo: f64,
    pub lyapunov: LyapunovReport,
}

/// Written by `retarget`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetargetSummary {
    pub frames: usize,
    pub side: String,
    pub max_residual: f64,
    pub mean_residual: f64,
    pub unconverged_frames: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(ratio: f64) -> InstanceResult {
        InstanceResult {
            task_id: "t".into(),
            support: 2,
            query: 2,
            meta_pre_mse: 1.0,
            meta_query_mse: ratio,
            random_query_mse: 1.0,
            ratio,
            meta_better: ratio < 1.0,
        }
    }

    #[test]
    fn aggregates() {
        let track = |rms| TrackingResult {
            task_id: "t".into(),
            samples: 10,
            rms_error: rms,
            max_abs_error: rms,
            saturated_fraction: 0.0,
            rollout_rms_vs_demo: 0.0,
        };
        let r = EvalReport::new(
            0,
            5,
            0.01,
            vec![inst(0.2), inst(0.4), inst(1.5)],
            vec![track(0.05), track(0.09)],
        );
        assert!((r.fraction_meta_better - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.mean_ratio - 0.7).abs() < 1e-12);
        assert_eq!(r.median_ratio, 0.4);
        assert!((r.mean_rms - 0.07).abs() < 1e-12);
        assert_eq!(r.max_rms, 0.09);
        assert!(r.rms_within_bound);
        assert!(r.to_markdown().contains("| t | 2 | 2 |"));
    }
}
