use super::{derive_seed, Learner, LossCtx};
use crate::autodiff::Tensor;
use crate::dataset::{split_support_query, MetaDataset, Trajectory};
use crate::tasknet::{LatentMode, TaskNet};
use crate::Result;

/// `1/2 * sum (theta - c)^2`: the scalar task family with closed-form
/// meta-gradients.
#[derive(Clone, Copy, Debug, Default)]
pub struct Quadratic;

impl Learner for Quadratic {
    type Data = f64;

    fn loss(&self, params: &[Tensor], c: &f64, _: LossCtx) -> Result<Tensor> {
        let mut total = Tensor::scalar(0.0);
        for p in params {
            total = total.add(&p.add_scalar(-c).square().sum().scale(0.5))?;
        }
        Ok(total)
    }
}

/// The task network's total loss over a set of trajectories.
#[derive(Clone, Debug)]
pub struct TaskNetLearner {
    pub net: TaskNet,
    pub beta: f64,
}

impl TaskNetLearner {
    pub fn new(net: TaskNet) -> Self {
        let beta = net.config().beta;
        Self { net, beta }
    }
}

impl Learner for TaskNetLearner {
    type Data = Vec<Trajectory>;

    fn loss(&self, params: &[Tensor], data: &Vec<Trajectory>, ctx: LossCtx) -> Result<Tensor> {
        let trajs: Vec<&Trajectory> = data.iter().collect();
        let mode = if ctx.stochastic {
            LatentMode::Stochastic(ctx.seed)
        } else {
            LatentMode::Deterministic
        };
        Ok(self.net.loss_total(params, &trajs, self.beta, mode)?.total)
    }
}

/// Support and query trajectories of one task.
pub type TaskSplit = (Vec<Trajectory>, Vec<Trajectory>);

/// Splits every task once; task `i` uses the seed derived from `(seed, i)`.
pub fn prepare_tasks(data: &MetaDataset, support_fraction: f64, seed: u64) -> Result<Vec<TaskSplit>> {
    data.tasks
        .iter()
        .enumerate()
        .map(|(i, t)| split_support_query(t, support_fraction, derive_seed(&[seed, i as u64])))
        .collect()
}
