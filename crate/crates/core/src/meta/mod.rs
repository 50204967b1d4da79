//! MAML meta-training over task support/query splits, and first-order
//! online adaptation of a meta-learned initialization to one demonstration.

mod learner;

pub use learner::{prepare_tasks, Quadratic, TaskNetLearner, TaskSplit};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{backward, sgd_tensors, AdamState, ParamSet, Tape, Tensor};
use crate::{Error, Result};

/// Evaluation context handed to a [`Learner`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossCtx {
    /// Seed for any sampling inside the loss.
    pub seed: u64,
    /// Sample latents (training) or use their means (evaluation).
    pub stochastic: bool,
}

impl LossCtx {
    pub fn deterministic() -> Self {
        Self {
            seed: 0,
            stochastic: false,
        }
    }
}

/// A differentiable per-task loss over a parameter list.
pub trait Learner: Sync {
    type Data: Sync;

    fn loss(&self, params: &[Tensor], data: &Self::Data, ctx: LossCtx) -> Result<Tensor>;
}

/// Inner-loop settings plus the outer learning rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetaOptions {
    pub alpha: f64,
    pub gamma: f64,
    pub inner_steps: usize,
    pub meta_batch: usize,
    pub second_order: bool,
}

/// Meta-parameters with outer optimizer state and per-iteration losses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaState {
    pub params: ParamSet,
    pub adam: AdamState,
    pub iteration: u64,
    pub seed: u64,
    /// Mean query loss after adaptation, one entry per iteration.
    pub query_history: Vec<f64>,
    /// Mean support loss before adaptation, one entry per iteration.
    pub support_history: Vec<f64>,
}

impl MetaState {
    pub fn new(params: ParamSet, seed: u64) -> Self {
        let adam = AdamState::new(params.numel());
        Self {
            params,
            adam,
            iteration: 0,
            seed,
            query_history: Vec::new(),
            support_history: Vec::new(),
        }
    }
}

/// SplitMix64 finalizer; derives independent seeds from structured tuples.
pub(crate) fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x6d65_7461_6578_6f00, |acc, &p| mix(acc ^ mix(p)))
}

/// `steps` gradient steps `theta <- theta - alpha * grad L_support(theta)`.
///
/// With `second_order` the gradients stay on the tape so the result can be
/// differentiated through; otherwise they enter as constants and the
/// Jacobian of the update is the identity (first-order MAML).
pub fn inner_adapt<L: Learner>(
    learner: &L,
    theta: &[Tensor],
    support: &L::Data,
    alpha: f64,
    steps: usize,
    second_order: bool,
    ctx: LossCtx,
) -> Result<Vec<Tensor>> {
    if !(alpha > 0.0) {
        return Err(Error::BadParams(format!(
            "inner learning rate must be positive, got {alpha}"
        )));
    }
    let mut params = theta.to_vec();
    for step in 0..steps {
        let loss = learner.loss(
            &params,
            support,
            LossCtx {
                seed: mix(ctx.seed ^ step as u64),
                ..ctx
            },
        )?;
        let grads = backward(&loss, &params, second_order).map_err(|e| nan_at(e, &format!("inner step {step}")))?;
        params = sgd_tensors(&params, &grads.tensors, alpha)?;
    }
    Ok(params)
}

fn nan_at(e: Error, place: &str) -> Error {
    match e {
        Error::NaNDetected(m) => Error::NaNDetected(format!("{place}: {m}")),
        other => other,
    }
}

/// Outer gradient of one task's post-adaptation query loss.
#[derive(Clone, Debug)]
pub struct TaskGradient {
    pub grad: Vec<f64>,
    pub query_loss: f64,
    pub support_loss: f64,
}

/// Gradient of `L_query(inner_adapt(theta))` with respect to `theta`.
pub fn task_meta_gradient<L: Learner>(
    learner: &L,
    theta: &ParamSet,
    support: &L::Data,
    query: &L::Data,
    opts: &MetaOptions,
    ctx: LossCtx,
) -> Result<TaskGradient> {
    if opts.inner_steps == 0 {
        return Err(Error::BadParams("inner_steps must be at least 1".into()));
    }
    let tape = Tape::new();
    let leaves = theta.attach(&tape);
    let support_loss = learner
        .loss(
            &leaves,
            support,
            LossCtx {
                seed: mix(ctx.seed),
                ..ctx
            },
        )?
        .item();
    let adapted = inner_adapt(
        learner,
        &leaves,
        support,
        opts.alpha,
        opts.inner_steps,
        opts.second_order,
        ctx,
    )?;
    let query_ctx = LossCtx {
        seed: mix(ctx.seed ^ 0x71_7565_7279),
        ..ctx
    };
    let query = learner.loss(&adapted, query, query_ctx)?;
    let grads = backward(&query, &leaves, false).map_err(|e| nan_at(e, "outer backward"))?;
    Ok(TaskGradient {
        grad: grads.tensors.iter().flat_map(|t| t.to_vec()).collect(),
        query_loss: query.item(),
        support_loss,
    })
}

/// One outer update on a batch of `(support, query)` pairs.
///
/// Task gradients are computed on the worker pool and summed in batch
/// order, so the result does not depend on the number of workers.
pub fn meta_step<L: Learner>(
    learner: &L,
    state: &MetaState,
    batch: &[(&L::Data, &L::Data)],
    opts: &MetaOptions,
) -> Result<MetaState> {
    if batch.is_empty() {
        return Err(Error::BadParams("meta batch is empty".into()));
    }
    let it = state.iteration;
    let results: Vec<Result<TaskGradient>> = batch
        .par_iter()
        .enumerate()
        .map(|(m, (s, q))| {
            let ctx = LossCtx {
                seed: derive_seed(&[state.seed, it, m as u64]),
                stochastic: true,
            };
            task_meta_gradient(learner, &state.params, s, q, opts, ctx)
        })
        .collect();
    let mut total = vec![0.0; state.params.numel()];
    let (mut q_sum, mut s_sum) = (0.0, 0.0);
    for (m, r) in results.into_iter().enumerate() {
        let tg = r.map_err(|e| nan_at(e, &format!("iteration {it}, task {m}")))?;
        for (t, g) in total.iter_mut().zip(&tg.grad) {
            *t += g;
        }
        q_sum += tg.query_loss;
        s_sum += tg.support_loss;
    }
    let mut next = state.clone();
    next.params = next.adam.step_flat(&state.params, &total, opts.gamma)?;
    if !next.params.is_finite() {
        return Err(Error::NaNDetected(format!("parameters after iteration {it}")));
    }
    next.iteration += 1;
    next.query_history.push(q_sum / batch.len() as f64);
    next.support_history.push(s_sum / batch.len() as f64);
    Ok(next)
}

/// Indices of the tasks drawn (with replacement) at `iteration`.
pub fn sample_batch(seed: u64, iteration: u64, n_tasks: usize, batch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, iteration, 0x62_6174_6368]));
    (0..batch).map(|_| rng.random_range(0..n_tasks)).collect()
}

/// Runs `iterations` meta-steps from `state`, calling `hook` after each.
pub fn meta_train<L: Learner>(
    learner: &L,
    tasks: &[(L::Data, L::Data)],
    mut state: MetaState,
    iterations: u64,
    opts: &MetaOptions,
    mut hook: impl FnMut(&MetaState) -> Result<()>,
) -> Result<MetaState> {
    if tasks.len() < 2 {
        return Err(Error::BadParams(format!(
            "meta-training needs at least 2 tasks, got {}",
            tasks.len()
        )));
    }
    if iterations == 0 {
        return Err(Error::BadParams("iterations must be at least 1".into()));
    }
    if opts.meta_batch == 0 {
        return Err(Error::BadParams("meta_batch must be at least 1".into()));
    }
    for _ in 0..iterations {
        let idx = sample_batch(state.seed, state.iteration, tasks.len(), opts.meta_batch);
        let batch: Vec<_> = idx.iter().map(|&i| (&tasks[i].0, &tasks[i].1)).collect();
        state = meta_step(learner, &state, &batch, opts)?;
        hook(&state)?;
    }
    Ok(state)
}

/// Outcome of adapting a parameter set to one demonstration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptationReport {
    pub pre_loss: f64,
    /// Loss after each gradient step.
    pub losses: Vec<f64>,
    pub steps: usize,
    #[serde(skip)]
    pub params: ParamSet,
}

impl AdaptationReport {
    pub fn final_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(self.pre_loss)
    }
}

/// Deterministic first-order gradient descent on `data`, full batch.
pub fn online_adapt<L: Learner>(
    learner: &L,
    theta: &ParamSet,
    data: &L::Data,
    alpha: f64,
    steps: usize,
) -> Result<AdaptationReport> {
    if steps > 0 && !(alpha > 0.0) {
        return Err(Error::BadParams(format!("learning rate must be positive, got {alpha}")));
    }
    let ctx = LossCtx::deterministic();
    let mut params = theta.clone();
    let mut losses = Vec::with_capacity(steps);
    let mut pre_loss = f64::NAN;
    for step in 0..=steps {
        let tape = Tape::new();
        let leaves = params.attach(&tape);
        let loss = learner.loss(&leaves, data, ctx)?;
        if step == 0 {
            pre_loss = loss.item();
        } else {
            losses.push(loss.item());
        }
        if step == steps {
            break;
        }
        let grads = backward(&loss, &leaves, false).map_err(|e| nan_at(e, &format!("adaptation step {step}")))?;
        let next = sgd_tensors(&leaves, &grads.tensors, alpha)?;
        params = params.with_values(&next)?;
    }
    if !pre_loss.is_finite() {
        return Err(Error::NaNDetected("initial adaptation loss".into()));
    }
    Ok(AdaptationReport {
        pre_loss,
        losses,
        steps,
        params,
    })
}

/// Deterministic loss of `params` on `data`.
pub fn evaluate<L: Learner>(learner: &L, params: &ParamSet, data: &L::Data) -> Result<f64> {
    Ok(learner.loss(&params.tensors(), data, LossCtx::deterministic())?.item())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.push("theta", &[1], vec![v]).unwrap();
        p
    }

    fn opts(alpha: f64, second_order: bool) -> MetaOptions {
        MetaOptions {
            alpha,
            gamma: 0.1,
            inner_steps: 1,
            meta_batch: 1,
            second_order,
        }
    }

    #[test]
    fn inner_adapt_examples() {
        let q = Quadratic;
        let tape = Tape::new();
        let theta = [tape.leaf(&Tensor::from_vec(&[1], vec![0.0]).unwrap())];
        let one = inner_adapt(&q, &theta, &1.0, 0.1, 1, false, LossCtx::deterministic()).unwrap();
        assert!((one[0].item() - 0.1).abs() < 1e-15);
        let five = inner_adapt(&q, &theta, &1.0, 0.1, 5, false, LossCtx::deterministic()).unwrap();
        assert!((five[0].item() - (1.0 - 0.9f64.powi(5))).abs() < 1e-15);
        let at_min = [tape.leaf(&Tensor::from_vec(&[1], vec![1.0]).unwrap())];
        let same = inner_adapt(&q, &at_min, &1.0, 0.7, 3, true, LossCtx::deterministic()).unwrap();
        assert_eq!(same[0].item(), 1.0);
    }

    #[test]
    fn quadratic_meta_gradients() {
        let (alpha, theta, c) = (0.1, 0.3, 1.7);
        let p = scalar_param(theta);
        let ctx = LossCtx::deterministic();
        let so = task_meta_gradient(&Quadratic, &p, &c, &c, &opts(alpha, true), ctx).unwrap();
        let fo = task_meta_gradient(&Quadratic, &p, &c, &c, &opts(alpha, false), ctx).unwrap();
        assert!((so.grad[0] - (1.0 - alpha).powi(2) * (theta - c)).abs() < 1e-15);
        assert!((fo.grad[0] - (1.0 - alpha) * (theta - c)).abs() < 1e-15);
    }

    #[test]
    fn equal_targets_at_optimum_do_not_move() {
        let c = 0.4;
        let state = MetaState::new(scalar_param(c), 1);
        let data = [(c, c), (c, c)];
        let batch: Vec<_> = data.iter().map(|(s, q)| (s, q)).collect();
        let next = meta_step(&Quadratic, &state, &batch, &opts(0.2, true)).unwrap();
        assert_eq!(next.params.flatten(), vec![c]);
        assert_eq!(next.query_history, vec![0.0]);
    }

    #[test]
    fn meta_train_preconditions() {
        let state = MetaState::new(scalar_param(0.0), 1);
        let tasks = [(0.0, 0.0), (1.0, 1.0)];
        assert!(meta_train(&Quadratic, &tasks, state.clone(), 0, &opts(0.1, true), |_| Ok(())).is_err());
        assert!(meta_train(&Quadratic, &tasks[..1], state, 5, &opts(0.1, true), |_| Ok(())).is_err());
    }

    #[test]
    fn meta_train_converges_on_quadratics() {
        let tasks = [(1.0, 1.0), (3.0, 3.0)];
        let mut o = opts(0.1, true);
        o.meta_batch = 8;
        o.gamma = 0.02;
        let s = meta_train(
            &Quadratic,
            &tasks,
            MetaState::new(scalar_param(-2.0), 3),
            600,
            &o,
            |_| Ok(()),
        )
        .unwrap();
        assert!((s.params.flatten()[0] - 2.0).abs() < 0.1, "{:?}", s.params.flatten());
        assert_eq!(s.query_history.len(), 600);
        assert_eq!(s.iteration, 600);
    }

    #[test]
    fn online_adapt_zero_steps() {
        let r = online_adapt(&Quadratic, &scalar_param(0.5), &1.5, 0.1, 0).unwrap();
        assert_eq!(r.params, scalar_param(0.5));
        assert_eq!(r.final_loss(), r.pre_loss);
        let r = online_adapt(&Quadratic, &scalar_param(0.5), &1.5, 0.1, 5).unwrap();
        assert_eq!(r.losses.len(), 5);
        assert!(r.final_loss() < r.pre_loss);
    }

    #[test]
    fn nan_reports_inner_step() {
        struct Bad;
        impl Learner for Bad {
            type Data = ();
            fn loss(&self, p: &[Tensor], _: &(), _: LossCtx) -> Result<Tensor> {
                Ok(p[0].ln().sum())
            }
        }
        let tape = Tape::new();
        let theta = [tape.leaf(&Tensor::from_vec(&[1], vec![-1.0]).unwrap())];
        let err = inner_adapt(&Bad, &theta, &(), 0.1, 2, false, LossCtx::deterministic()).unwrap_err();
        assert!(err.to_string().contains("inner step 0"), "{err}");
    }
}
