//! Acceptance suite: one pass/fail line per criterion, nonzero exit if any
//! criterion fails. Runs the bundled demo pipeline twice (criteria 5, 6, 9).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use metaexo_core::autodiff::{ParamSet, Tensor};
use metaexo_core::cli::{run_with_env, Cli, Command, EvalReport, RunConfig, LOG_FILE};
use metaexo_core::kinematics::{
    forward_kinematics, frame_transform, retarget, rodrigues_align, HumanModel, Rotation, Side, Vec3,
};
use metaexo_core::meta::{task_meta_gradient, LossCtx, MetaOptions, Quadratic};
use metaexo_core::simcontrol::{
    integrate_rk4, lyapunov_report, simulate_tracking, Controller, ControllerGains, GravityCompensator,
    LyapunovOptions, PlantModel, SimState,
};
use metaexo_core::tasknet::loss_kl;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{
    convergence_order, energy, gradcheck_random_graphs, kl_numeric, random_pose, regulation_plant, solve_motion_to,
    step_reference,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn autodiff() -> Outcome {
    let start = Instant::now();
    let r = gradcheck_random_graphs(50);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        r.first_order < 1e-5 && r.second_order < 1e-4 && secs < 30.0,
        format!(
            "50 graphs, first-order rel err {:.2e}, hvp rel err {:.2e}, {secs:.1} s",
            r.first_order, r.second_order
        ),
    )
}

fn maml_oracle() -> Outcome {
    let h = 1e-5;
    let mut worst_closed: f64 = 0.0;
    let mut worst_fd: f64 = 0.0;
    for &(alpha, theta, c) in &[
        (0.1, 0.3, 1.7),
        (0.01, -2.0, 0.5),
        (0.5, 4.0, -1.0),
        (0.25, 0.0, 0.0),
        (0.9, 1.0, 3.0),
    ] {
        let mut p = ParamSet::new();
        p.push("theta", &[1], vec![theta]).unwrap();
        for second_order in [true, false] {
            let opts = MetaOptions {
                alpha,
                gamma: 0.1,
                inner_steps: 1,
                meta_batch: 1,
                second_order,
            };
            let g = task_meta_gradient(&Quadratic, &p, &c, &c, &opts, LossCtx::deterministic())
                .unwrap()
                .grad[0];
            let adapted = |t: f64| t - alpha * (t - c);
            let query = |phi: f64| 0.5 * (phi - c) * (phi - c);
            let (closed, fd) = if second_order {
                let fd = (query(adapted(theta + h)) - query(adapted(theta - h))) / (2.0 * h);
                ((1.0 - alpha).powi(2) * (theta - c), fd)
            } else {
                // first order: query gradient at the adapted point, treated as a constant
                let phi = adapted(theta);
                (
                    (1.0 - alpha) * (theta - c),
                    (query(phi + h) - query(phi - h)) / (2.0 * h),
                )
            };
            worst_closed = worst_closed.max((g - closed).abs());
            worst_fd = worst_fd.max((g - fd).abs());
        }
    }
    outcome(
        worst_closed < 1e-8 && worst_fd < 1e-6,
        format!("max |g - closed form| {worst_closed:.2e}, max |g - finite difference| {worst_fd:.2e}"),
    )
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if v.norm() > 1e-2 {
            return v.normalize();
        }
    }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation {
    let axis = random_unit(rng);
    Rotation::about_axis(&axis, rng.random_range(-3.1..3.1))
}

fn kinematics() -> Outcome {
    let start = Instant::now();
    let model = HumanModel::builtin();
    let tree = model.tree();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut align, mut ortho, mut length, mut reroot): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..1000 {
        let (v, b) = (random_unit(&mut rng), random_unit(&mut rng));
        let r = rodrigues_align(&v, &b);
        align = align.max((r.apply(&v) - b).amax());
        ortho = ortho.max(r.orthonormality_error()).max((r.determinant() - 1.0).abs());
        let conj = frame_transform(&random_rotation(&mut rng), &random_rotation(&mut rng));
        ortho = ortho.max(conj.orthonormality_error());

        let rots: Vec<Rotation> = tree.bones().map(|_| random_rotation(&mut rng)).collect();
        let root = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(0.0..2.0),
        );
        let src = forward_kinematics(tree, &rots, root).unwrap();
        for i in tree.bones() {
            let p = tree.parent(i).unwrap();
            length = length.max(((src.positions[i] - src.positions[p]).norm() - tree.length(i)).abs());
        }
        let out = retarget(&src, tree, tree, &Rotation::identity(), root).unwrap();
        for (a, b) in out.positions.iter().zip(&src.positions) {
            reroot = reroot.max((a - b).amax());
        }
    }
    let mut ik: f64 = 0.0;
    for _ in 0..100 {
        let q = random_pose(&model, &mut rng);
        let sol = solve_motion_to(&model, &q);
        for side in [Side::Left, Side::Right] {
            let e = model.elbow_index(side).unwrap();
            ik = ik.max((sol[e] - q[e]).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let invariants = align.max(ortho).max(length).max(reroot);
    outcome(
        invariants < 1e-9 && ik < 1e-6 && secs < 60.0,
        format!(
            "1000 cases: R v = b {align:.1e}, orthonormality {ortho:.1e}, bone length {length:.1e}, identity retarget {reroot:.1e}; \
             100 IK round trips: elbow err {ik:.1e}; {secs:.1} s"
        ),
    )
}

fn kl_closed_form() -> Outcome {
    let kl = |mu: &[f64], sigma: &[f64]| loss_kl(&Tensor::row(mu), &Tensor::row(sigma)).unwrap().item();
    let zero = kl(&[0.0; 4], &[1.0; 4]);
    let half = kl(&[1.0; 3], &[1.0; 3]) / 3.0;
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let (mu, sigma) = (rng.random_range(-3.0..3.0), rng.random_range(0.05..4.0));
        worst = worst.max((kl(&[mu], &[sigma]) - kl_numeric(mu, sigma)).abs());
    }
    outcome(
        zero.abs() < 1e-15 && (half - 0.5).abs() < 1e-15 && worst < 1e-6,
        format!("KL(0,1) = {zero:e}, KL(1,1) per dim = {half}, max |closed - quadrature| {worst:.2e} over 200 cases"),
    )
}

fn stability() -> Outcome {
    let plant = regulation_plant();
    let dt = 1e-3;
    let opts = LyapunovOptions::default();
    let (mut nonincr, mut matched, mut skew, mut final_e, mut match_res): (f64, f64, f64, f64, f64) =
        (1.0, 1.0, 0.0, 0.0, 0.0);
    for kp in [5.0, 20.0, 50.0] {
        for kd in [1.0, 5.0, 10.0] {
            let ctl = Controller::new(
                ControllerGains::new(kp, kd).unwrap(),
                GravityCompensator::for_load(&plant).unwrap(),
            );
            let trace =
                simulate_tracking(&plant, &ctl, &step_reference(0.5, 20.0, dt), SimState::at_rest(0.0), dt).unwrap();
            let r = lyapunov_report(&trace, &plant, &ctl, &opts);
            nonincr = nonincr.min(r.fraction_nonincreasing);
            matched = matched.min(r.fraction_matched);
            match_res = match_res.max(r.max_match_residual);
            skew = skew.max(r.max_skew_residual);
            final_e = final_e.max(trace.e.last().unwrap().abs());
        }
    }
    let pass = nonincr >= 0.99 && match_res <= opts.match_tol && skew < 1e-12 && final_e < 1e-3;
    outcome(
        pass,
        format!(
            "9 gains: min share Vdot <= 1e-9 {:.4}; max |Vdot + kd edot^2| {match_res:.2e} (share within 1e-6 {:.4}); \
             skew residual {skew:.1e}; max final |e| {final_e:.1e}",
            nonincr, matched
        ),
    )
}

fn integrator() -> Outcome {
    let plant = PlantModel::default();
    let init = SimState {
        t: 0.0,
        q: 1.2,
        qd: 0.0,
    };
    let e0 = energy(&plant, init);
    let mut s = init;
    let mut drift: f64 = 0.0;
    for _ in 0..10_000 {
        s = integrate_rk4(&plant, s, 0.0, 1e-3).unwrap();
        drift = drift.max((energy(&plant, s) - e0).abs() / e0);
    }
    let order = convergence_order(&plant, init, 1.0, 0.02);
    outcome(
        drift < 1e-6 && order >= 3.8,
        format!("relative energy drift {drift:.2e} over 10 s, order {order:.3}"),
    )
}

fn demo_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/demo.toml")
}

struct PipelineRun {
    out: PathBuf,
    total: Duration,
    train: Duration,
    error: Option<String>,
}

fn run_pipeline(out: &Path) -> PipelineRun {
    let start = Instant::now();
    let mut train = Duration::ZERO;
    for command in [
        Command::Synth,
        Command::Train,
        Command::Adapt,
        Command::Simulate,
        Command::Eval,
    ] {
        let cli = Cli {
            config: Some(demo_config()),
            seed: None,
            out: out.to_path_buf(),
            command,
        };
        let t = Instant::now();
        if let Err(e) = run_with_env(&cli, Vec::new()) {
            return PipelineRun {
                out: out.to_path_buf(),
                total: start.elapsed(),
                train,
                error: Some(format!("{command:?}: {e}")),
            };
        }
        if command == Command::Train {
            train = t.elapsed();
        }
    }
    PipelineRun {
        out: out.to_path_buf(),
        total: start.elapsed(),
        train,
        error: None,
    }
}

fn collect_files(root: &Path, dir: &Path, into: &mut BTreeMap<PathBuf, Vec<u8>>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_files(root, &path, into);
        } else if path.file_name().is_some_and(|n| n != LOG_FILE) {
            into.insert(
                path.strip_prefix(root).unwrap().to_path_buf(),
                std::fs::read(&path).unwrap(),
            );
        }
    }
}

fn load_report(run: &PipelineRun) -> Option<EvalReport> {
    let text = std::fs::read_to_string(run.out.join("eval_report.json")).ok()?;
    serde_json::from_str(&text).ok()
}

fn adaptation_gain(run: &PipelineRun) -> Outcome {
    let Some(r) = load_report(run) else {
        return outcome(
            false,
            format!("no eval report ({})", run.error.as_deref().unwrap_or("unknown")),
        );
    };
    let n = r.instances.len();
    let pass = n >= 20 && r.fraction_meta_better >= 0.9 && r.mean_ratio < 0.5 && run.train.as_secs_f64() <= 900.0;
    outcome(
        pass,
        format!(
            "{n} held-out instances, meta init better on {:.1}%, mean query-loss ratio {:.4}, training {:.1} s",
            100.0 * r.fraction_meta_better,
            r.mean_ratio,
            run.train.as_secs_f64()
        ),
    )
}

fn tracking_bound(run: &PipelineRun) -> Outcome {
    let Some(r) = load_report(run) else {
        return outcome(
            false,
            format!("no eval report ({})", run.error.as_deref().unwrap_or("unknown")),
        );
    };
    let cfg = RunConfig::load(Some(&demo_config()), Vec::<(String, String)>::new()).unwrap();
    let comp = match cfg.m_hat {
        Some(m) => GravityCompensator::new(m, cfg.plant.l_m).unwrap(),
        None => GravityCompensator::for_load(&cfg.plant).unwrap(),
    };
    let dg = (0..=64)
        .map(|k| comp.mismatch(&cfg.plant, -1.0 + 0.06 * k as f64).abs())
        .fold(0.0, f64::max);
    let rollout_gap = r.tracking.iter().map(|t| t.rollout_rms_vs_demo).sum::<f64>() / r.tracking.len().max(1) as f64;
    outcome(
        r.tracking.len() == 5 && dg == 0.0 && r.mean_rms <= 0.1,
        format!(
            "{} tasks, |dg| max {dg:.1e}, mean RMS {:.4} rad (max {:.4}); mean rollout-vs-demo gap {rollout_gap:.3} rad",
            r.tracking.len(),
            r.mean_rms,
            r.max_rms
        ),
    )
}

fn determinism(a: &PipelineRun, b: &PipelineRun) -> Outcome {
    if let Some(e) = a.error.as_ref().or(b.error.as_ref()) {
        return outcome(false, format!("pipeline failed: {e}"));
    }
    let (mut fa, mut fb) = (BTreeMap::new(), BTreeMap::new());
    collect_files(&a.out, &a.out, &mut fa);
    collect_files(&b.out, &b.out, &mut fb);
    let differing: Vec<_> = fa
        .keys()
        .chain(fb.keys())
        .filter(|k| fa.get(*k) != fb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let slowest = a.total.max(b.total).as_secs_f64();
    outcome(
        differing.is_empty() && slowest < 1200.0 && !fa.is_empty(),
        format!(
            "{} files compared, {} differ{}; slowest run {slowest:.1} s",
            fa.len(),
            differing.len(),
            if differing.is_empty() {
                String::new()
            } else {
                format!(" ({})", differing.join(", "))
            }
        ),
    )
}

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "autodiff gradients", autodiff()),
        (2, "MAML gradient oracle", maml_oracle()),
        (3, "kinematics invariants", kinematics()),
        (4, "KL closed form", kl_closed_form()),
    ];
    let first = run_pipeline(&dir.path().join("run_a"));
    let second = run_pipeline(&dir.path().join("run_b"));
    results.push((5, "adaptation gain", adaptation_gain(&first)));
    results.push((6, "tracking bound", tracking_bound(&first)));
    results.push((7, "stability structure", stability()));
    results.push((8, "integrator", integrator()));
    results.push((9, "end-to-end determinism", determinism(&first, &second)));
    results.sort_by_key(|r| r.0);

    let mut failed = 0;
    for (n, name, o) in &results {
        println!(
            "criterion {n} {:<24} {}  {}",
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!(
        "acceptance: {} of {} criteria pass",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
