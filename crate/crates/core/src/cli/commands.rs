use std::path::Path;

use rayon::prelude::*;

use super::report::{AdaptSummary, EvalReport, InstanceResult, RetargetSummary, SimulateSummary, TrackingResult};
use super::{write_json, Context};
use crate::autodiff::{Checkpoint, ParamSet};
use crate::dataset::{
    extract_trajectory, load_meta_dataset, load_trajectory_csv, save_meta_dataset, split_support_query,
    synth_task_family, write_trajectory_csv, FamilyParams, MetaDataset, TaskDataset, Trajectory,
};
use crate::kinematics::{retarget as retarget_frame, HumanModel, IkOptions, MotionFile, Rotation, Vec3};
use crate::meta::{derive_seed, meta_train, online_adapt, prepare_tasks, MetaOptions, MetaState, TaskNetLearner};
use crate::simcontrol::{
    lyapunov_report, resample, simulate_tracking, Controller, ControllerGains, GravityCompensator, LyapunovOptions,
    SimState, SimTrace,
};
use crate::tasknet::{LatentMode, MetaConfig, TaskNet};
use crate::{Error, Result};

type NetCheckpoint = Checkpoint<MetaConfig>;

// Seed domains, so every consumer of the run seed draws an independent stream.
const SEED_SYNTH: u64 = 1;
const SEED_HELDOUT: u64 = 2;
const SEED_SPLIT: u64 = 3;
const SEED_INIT: u64 = 4;
const SEED_META: u64 = 5;
const SEED_EVAL_SPLIT: u64 = 6;
const SEED_EVAL_INIT: u64 = 7;

fn load_net(path: &Path) -> Result<(TaskNet, ParamSet)> {
    let ckpt = NetCheckpoint::load(path)?;
    let net = TaskNet::new(ckpt.config.clone()).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    ckpt.check_layout(&net.zero_params())?;
    Ok((net, ckpt.params))
}

fn rms_gap(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n as f64).sqrt()
}

/// Mean next-angle squared error of `params` on `trajs`, each trajectory
/// encoded by itself with the latent mean.
pub fn query_mse(net: &TaskNet, params: &ParamSet, trajs: &[Trajectory]) -> Result<f64> {
    let refs: Vec<&Trajectory> = trajs.iter().collect();
    Ok(net
        .loss_total(&params.tensors(), &refs, 0.0, LatentMode::Deterministic)?
        .rec
        .item())
}

/// Generates a reference from `demo` with the adapted network (latent mean of
/// the full demonstration, seeded with its first window), resamples it to
/// `sim_dt` and tracks it on the configured plant from rest.
///
/// Returns the reference at the demonstration's sampling step and the trace.
pub fn track_rollout(
    cfg: &super::RunConfig,
    net: &TaskNet,
    params: &ParamSet,
    demo: &Trajectory,
) -> Result<(Vec<f64>, SimTrace)> {
    let p = params.tensors();
    let h = net.config().history_len();
    if demo.len() <= h {
        return Err(Error::TooShort {
            needed: h + 1,
            got: demo.len(),
        });
    }
    let z = net.encode(&p, demo)?.mu;
    let seed = &demo.samples[..h];
    let generated = net.rollout(&p, seed, &z, demo.len() - h, demo.dt)?;
    let reference: Vec<f64> = seed.iter().map(|s| s.angle).chain(generated).collect();
    let fine = resample(&reference, demo.dt, cfg.sim_dt)?;
    let plant = cfg.plant;
    let mut comp = GravityCompensator::new(cfg.m_hat.unwrap_or(plant.m_load), plant.l_m)?;
    comp.g_acc = plant.g_acc;
    let controller = Controller {
        gains: ControllerGains::new(cfg.kp, cfg.kd)?,
        comp,
        tau_max: cfg.tau_max,
        mode: cfg.derivative_mode,
    };
    let trace = simulate_tracking(&plant, &controller, &fine, SimState::at_rest(fine[0]), cfg.sim_dt)?;
    Ok((reference, trace))
}

fn saturated_fraction(trace: &SimTrace) -> f64 {
    trace.saturated.iter().filter(|&&s| s).count() as f64 / trace.len().max(1) as f64
}

pub(crate) fn synth(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let train = cfg
        .train_tasks()?
        .iter()
        .enumerate()
        .map(|(i, p)| synth_task_family(p, cfg.traj_per_task, derive_seed(&[cfg.seed, SEED_SYNTH, i as u64])))
        .collect::<Result<Vec<_>>>()?;
    let heldout = heldout_instances(cfg)?;
    let train = MetaDataset::new(train)?;
    let heldout = MetaDataset::new(heldout)?;
    save_meta_dataset(&train, &ctx.path("dataset"))?;
    save_meta_dataset(&heldout, &ctx.path("heldout"))?;
    ctx.log.line(format!(
        "synth: {} training tasks, {} held-out instances",
        train.len(),
        heldout.len()
    ));
    Ok(())
}

/// Instance `k` of held-out spec `s` rescales the amplitude by a factor drawn
/// from `1 +- heldout_amplitude_spread` and uses its own generator seed.
fn heldout_instances(cfg: &super::RunConfig) -> Result<Vec<TaskDataset>> {
    use rand::{Rng, SeedableRng};
    let mut out = Vec::new();
    for (s, spec) in cfg.heldout_specs()?.iter().enumerate() {
        for k in 0..cfg.heldout_instances {
            let seed = derive_seed(&[cfg.seed, SEED_HELDOUT, s as u64, k as u64]);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let spread = cfg.heldout_amplitude_spread;
            let scale = if spread > 0.0 {
                1.0 + rng.random_range(-spread..=spread)
            } else {
                1.0
            };
            let mut p = FamilyParams {
                task_id: format!("{}_{k}", spec.task_id),
                amplitude: spec.amplitude * scale,
                ..spec.clone()
            };
            // keep the jittered extremes inside the joint limits
            while p.validate().is_err() && p.amplitude > 1e-3 {
                p.amplitude *= 0.95;
            }
            out.push(synth_task_family(&p, cfg.traj_per_task, rng.random())?);
        }
    }
    Ok(out)
}

pub(crate) fn train(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let dir = ctx.input(&cfg.dataset, "dataset", "synth")?;
    let data = load_meta_dataset(&dir)?;
    let net = TaskNet::new(cfg.meta.clone())?;
    let learner = TaskNetLearner::new(net.clone());
    let splits = prepare_tasks(&data, cfg.meta.support_fraction, derive_seed(&[cfg.seed, SEED_SPLIT]))?;
    let opts = MetaOptions {
        alpha: cfg.meta.alpha,
        gamma: cfg.meta.gamma,
        inner_steps: cfg.meta.inner_steps_train,
        meta_batch: cfg.meta.meta_batch,
        second_order: cfg.meta.second_order,
    };
    let ckpt_dir = ctx.path("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let init = net.init_params(derive_seed(&[cfg.seed, SEED_INIT]));
    let state = MetaState::new(init, derive_seed(&[cfg.seed, SEED_META]));
    ctx.log.line(format!(
        "train: {} tasks, {} parameters, {} iterations",
        data.len(),
        state.params.numel(),
        cfg.iterations
    ));
    let state = meta_train(&learner, &splits, state, cfg.iterations, &opts, |s| {
        if !s.params.is_finite() {
            return Err(Error::NaNDetected(format!(
                "meta-parameters at iteration {}",
                s.iteration
            )));
        }
        if s.iteration % cfg.checkpoint_every == 0 || s.iteration == cfg.iterations {
            let path = ckpt_dir.join(format!("iter_{:06}.json", s.iteration));
            NetCheckpoint::new(cfg.meta.clone(), s.params.clone()).save(&path)?;
        }
        if s.iteration % 50 == 0 {
            let n = s.query_history.len();
            let recent = &s.query_history[n.saturating_sub(50)..];
            ctx.log.line(format!(
                "iteration {}: mean query loss {:.4e}",
                s.iteration,
                recent.iter().sum::<f64>() / recent.len() as f64
            ));
        }
        Ok(())
    })?;
    let log_path = ctx.path("train_log.csv");
    let mut w = csv::Writer::from_path(&log_path).map_err(|e| Error::format(&log_path, e.to_string()))?;
    let err = |e: csv::Error| Error::format(&log_path, e.to_string());
    w.write_record(["iteration", "support_loss", "query_loss"])
        .map_err(err)?;
    for (i, (s, q)) in state.support_history.iter().zip(&state.query_history).enumerate() {
        w.write_record([(i + 1).to_string(), s.to_string(), q.to_string()])
            .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(&log_path, e))?;
    NetCheckpoint::new(cfg.meta.clone(), state.params).save(&ctx.path("theta_star.json"))?;
    Ok(())
}

/// The configured demonstration, or the first trajectory of the first
/// held-out task. Returns a label that does not depend on the output path.
fn demonstration(ctx: &Context) -> Result<(String, Trajectory)> {
    let cfg = &ctx.cfg;
    if let Some(p) = &cfg.demo {
        let samples = load_trajectory_csv(p, cfg.dt)?;
        let traj = Trajectory {
            samples,
            dt: cfg.dt,
            task_id: "demo".into(),
            subject_id: "user".into(),
        };
        traj.validate().map_err(|e| Error::format(p, e.to_string()))?;
        let name = p
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        return Ok((name, traj));
    }
    let dir = ctx.input(&cfg.heldout, "heldout", "synth")?;
    let data = load_meta_dataset(&dir)?;
    let task = &data.tasks[0];
    Ok((format!("heldout:{}/0", task.task_id), task.trajectories[0].clone()))
}

pub(crate) fn adapt(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let (net, theta) = load_net(&ctx.input(&cfg.checkpoint, "theta_star.json", "train")?)?;
    let (label, demo) = demonstration(ctx)?;
    let learner = TaskNetLearner::new(net.clone());
    let alpha = net.config().alpha;
    let report = online_adapt(&learner, &theta, &vec![demo.clone()], alpha, cfg.steps())?;
    ctx.log.line(format!(
        "adapt: loss {:.4e} -> {:.4e}",
        report.pre_loss,
        report.final_loss()
    ));
    NetCheckpoint::new(net.config().clone(), report.params.clone()).save(&ctx.path("adapted.json"))?;
    let summary = AdaptSummary {
        demo: label,
        demo_samples: demo.len(),
        alpha,
        final_loss: report.final_loss(),
        report,
    };
    write_json(&ctx.path("adapt_report.json"), &summary)
}

pub(crate) fn simulate(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let (net, params) = load_net(&ctx.input(&cfg.adapted, "adapted.json", "adapt")?)?;
    let (label, demo) = demonstration(ctx)?;
    let (reference, trace) = track_rollout(cfg, &net, &params, &demo)?;
    trace.write_csv(&ctx.path("trace.csv"))?;
    trace.write_plot_data(&ctx.path("plot"))?;
    let mut comp = GravityCompensator::new(cfg.m_hat.unwrap_or(cfg.plant.m_load), cfg.plant.l_m)?;
    comp.g_acc = cfg.plant.g_acc;
    let controller = Controller {
        gains: ControllerGains::new(cfg.kp, cfg.kd)?,
        comp,
        tau_max: cfg.tau_max,
        mode: cfg.derivative_mode,
    };
    let summary = SimulateSummary {
        demo: label,
        samples: trace.len(),
        dt: cfg.sim_dt,
        rms_error: trace.rms_error(),
        max_abs_error: trace.max_abs_error(),
        saturated_fraction: saturated_fraction(&trace),
        rollout_rms_vs_demo: rms_gap(&reference, &demo.angles()),
        lyapunov: lyapunov_report(&trace, &cfg.plant, &controller, &LyapunovOptions::default()),
    };
    ctx.log
        .line(format!("simulate: RMS tracking error {:.4} rad", summary.rms_error));
    write_json(&ctx.path("simulate_report.json"), &summary)
}

pub(crate) fn eval(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let (net, theta) = load_net(&ctx.input(&cfg.checkpoint, "theta_star.json", "train")?)?;
    let data = load_meta_dataset(&ctx.input(&cfg.heldout, "heldout", "synth")?)?;
    let learner = TaskNetLearner::new(net.clone());
    let alpha = net.config().alpha;
    let steps = cfg.steps();
    let n = data.len();
    let tracked: Vec<usize> = (0..cfg.eval_tracking_tasks.min(n))
        .map(|k| k * n / cfg.eval_tracking_tasks.min(n))
        .collect();
    let results = data
        .tasks
        .par_iter()
        .enumerate()
        .map(|(i, task)| -> Result<(InstanceResult, Option<TrackingResult>)> {
            let (support, query) = split_support_query(
                task,
                net.config().support_fraction,
                derive_seed(&[cfg.seed, SEED_EVAL_SPLIT, i as u64]),
            )?;
            let from_meta = online_adapt(&learner, &theta, &support, alpha, steps)?;
            let random = net.init_params(derive_seed(&[cfg.seed, SEED_EVAL_INIT, i as u64]));
            let from_random = online_adapt(&learner, &random, &support, alpha, steps)?;
            let meta_mse = query_mse(&net, &from_meta.params, &query)?;
            let random_mse = query_mse(&net, &from_random.params, &query)?;
            let instance = InstanceResult {
                task_id: task.task_id.clone(),
                support: support.len(),
                query: query.len(),
                meta_pre_mse: query_mse(&net, &theta, &query)?,
                meta_query_mse: meta_mse,
                random_query_mse: random_mse,
                ratio: meta_mse / random_mse,
                meta_better: meta_mse < random_mse,
            };
            let tracking = if tracked.contains(&i) {
                let demo = &support[0];
                let (reference, trace) = track_rollout(cfg, &net, &from_meta.params, demo)?;
                Some(TrackingResult {
                    task_id: task.task_id.clone(),
                    samples: trace.len(),
                    rms_error: trace.rms_error(),
                    max_abs_error: trace.max_abs_error(),
                    saturated_fraction: saturated_fraction(&trace),
                    rollout_rms_vs_demo: rms_gap(&reference, &demo.angles()),
                })
            } else {
                None
            };
            Ok((instance, tracking))
        })
        .collect::<Result<Vec<_>>>()?;
    let (instances, tracking): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let report = EvalReport::new(
        cfg.seed,
        steps,
        alpha,
        instances,
        tracking.into_iter().flatten().collect(),
    );
    ctx.log.line(format!(
        "eval: meta better on {:.1}% of {} instances, mean ratio {:.4}, mean RMS {:.4} rad",
        100.0 * report.fraction_meta_better,
        report.instances.len(),
        report.mean_ratio,
        report.mean_rms
    ));
    write_json(&ctx.path("eval_report.json"), &report)?;
    let md = ctx.path("eval_report.md");
    std::fs::write(&md, report.to_markdown()).map_err(|e| Error::io(&md, e))
}

pub(crate) fn export_latents(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let (net, theta) = load_net(&ctx.input(&cfg.checkpoint, "theta_star.json", "train")?)?;
    let p = theta.tensors();
    let mut sets = vec![(
        "train",
        load_meta_dataset(&ctx.input(&cfg.dataset, "dataset", "synth")?)?,
    )];
    if let Some(dir) = cfg
        .heldout
        .clone()
        .or_else(|| Some(ctx.path("heldout")).filter(|d| d.exists()))
    {
        sets.push(("heldout", load_meta_dataset(&dir)?));
    }
    let d = net.config().latent_dim;
    let path = ctx.path("latents.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::format(&path, e.to_string()))?;
    let err = |e: csv::Error| Error::format(&path, e.to_string());
    let mut header: Vec<String> = ["split", "task_id", "subject_id", "trajectory"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..d).map(|k| format!("mu_{k}")));
    header.extend((0..d).map(|k| format!("sigma_{k}")));
    w.write_record(&header).map_err(err)?;
    let mut rows = 0;
    for (split, data) in &sets {
        for task in &data.tasks {
            for (j, traj) in task.trajectories.iter().enumerate() {
                let latent = net.encode(&p, traj)?;
                let mut row = vec![
                    split.to_string(),
                    task.task_id.clone(),
                    traj.subject_id.clone(),
                    j.to_string(),
                ];
                row.extend(latent.mu.iter().chain(&latent.sigma).map(|v| v.to_string()));
                w.write_record(&row).map_err(err)?;
                rows += 1;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    ctx.log.line(format!("export-latents: {rows} trajectories"));
    Ok(())
}

pub(crate) fn retarget(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let path = cfg
        .motion
        .clone()
        .ok_or_else(|| Error::Config("retarget needs `motion` (keypoint motion JSON)".into()))?;
    let motion = MotionFile::load(&path)?;
    let frames = motion.skeleton_frames();
    if frames.len() < 3 {
        return Err(Error::TooShort {
            needed: 3,
            got: frames.len(),
        });
    }
    let source = motion.tree()?;
    let model = HumanModel::builtin();
    let rv = Vec3::from(cfg.retarget_rotation);
    let q = if rv.norm() > 0.0 {
        Rotation::about_axis(&rv.normalize(), rv.norm())
    } else {
        Rotation::identity()
    };
    let root = source.root();
    let targets = frames
        .iter()
        .map(|f| retarget_frame(f, &source, model.tree(), &q, f.positions[root]))
        .collect::<Result<Vec<_>>>()?;
    let solutions = model.solve_sequence(&targets, &vec![0.0; model.dof()], &IkOptions::default())?;
    let elbow = model
        .elbow_index(cfg.retarget_side)
        .ok_or_else(|| Error::Config(format!("model has no {:?} arm", cfg.retarget_side)))?;
    let angles: Vec<f64> = solutions.iter().map(|s| s.q[elbow]).collect();
    let traj = extract_trajectory(&angles, 1.0 / motion.fps)?.with_ids("retarget", "source");
    let dir = ctx.path("retarget");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_trajectory_csv(&traj, &dir.join("elbow.csv"))?;

    let ik_path = dir.join("ik.csv");
    let mut w = csv::Writer::from_path(&ik_path).map_err(|e| Error::format(&ik_path, e.to_string()))?;
    let err = |e: csv::Error| Error::format(&ik_path, e.to_string());
    let mut header: Vec<String> = ["frame", "residual", "iterations", "converged"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..model.dof()).map(|k| format!("q_{k}")));
    w.write_record(&header).map_err(err)?;
    for (k, s) in solutions.iter().enumerate() {
        let mut row = vec![
            k.to_string(),
            s.residual.to_string(),
            s.iterations.to_string(),
            s.converged.to_string(),
        ];
        row.extend(s.q.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(&ik_path, e))?;

    let summary = RetargetSummary {
        frames: solutions.len(),
        side: format!("{:?}", cfg.retarget_side).to_lowercase(),
        max_residual: solutions.iter().fold(0.0, |m, s| m.max(s.residual)),
        mean_residual: solutions.iter().map(|s| s.residual).sum::<f64>() / solutions.len() as f64,
        unconverged_frames: solutions.iter().filter(|s| !s.converged).count(),
    };
    ctx.log.line(format!(
        "retarget: {} frames, max residual {:.3e}, {} unconverged",
        summary.frames, summary.max_residual, summary.unconverged_frames
    ));
    write_json(&dir.join("summary.json"), &summary)
}
