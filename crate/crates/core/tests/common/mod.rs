//! Oracles and generators shared by the integration test targets.
#![allow(dead_code)]

use metaexo_core::autodiff::{backward, Padding, Tape, Tensor};
use metaexo_core::simcontrol::{integrate_rk4, PlantModel, SimState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central finite-difference gradient of `f` at `x`.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| rel_err(*x, *y, floor)).fold(0.0, f64::max)
}

/// A randomly wired scalar function of a handful of parameter tensors that
/// exercises every primitive at least once across a batch of seeds.
pub struct RandomGraph {
    pub shapes: Vec<Vec<usize>>,
    choices: [usize; 8],
    dilation: usize,
    padding: Padding,
}

impl RandomGraph {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut choices = [0; 8];
        for c in choices.iter_mut() {
            *c = rng.random_range(0..6);
        }
        Self {
            // x1 [3,4], x2 [4,2], x3 [3,4], kernel [2,3,2], bias [1,2]
            shapes: vec![vec![3, 4], vec![4, 2], vec![3, 4], vec![2, 3, 2], vec![1, 2]],
            choices,
            dilation: rng.random_range(1..=2),
            padding: if rng.random_bool(0.5) {
                Padding::Causal
            } else {
                Padding::Valid
            },
        }
    }

    pub fn numel(&self) -> usize {
        self.shapes.iter().map(|s| s.iter().product::<usize>()).sum()
    }

    pub fn init(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
        (0..self.numel()).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn split(&self, flat: &[f64]) -> Vec<Tensor> {
        let mut off = 0;
        self.shapes
            .iter()
            .map(|s| {
                let n: usize = s.iter().product();
                let t = Tensor::from_vec(s, flat[off..off + n].to_vec()).unwrap();
                off += n;
                t
            })
            .collect()
    }

    fn unary(kind: usize, t: &Tensor) -> Tensor {
        match kind {
            0 => t.tanh(),
            1 => t.relu().add(&t.scale(0.1)).unwrap(),
            2 => t.scale(0.5).exp(),
            3 => t.sigmoid(),
            4 => t.softplus(),
            _ => t.square().add_scalar(0.5).ln(),
        }
    }

    /// Evaluates the graph on `params` (tensors, possibly attached to a tape).
    pub fn eval(&self, p: &[Tensor]) -> Tensor {
        let c = self.choices;
        let (x1, x2, x3, k, b) = (&p[0], &p[1], &p[2], &p[3], &p[4]);
        let h = match c[0] % 3 {
            0 => x1.add(x3),
            1 => x1.sub(x3),
            _ => x1.mul(x3),
        }
        .unwrap();
        let h = Self::unary(c[1], &h);
        // [3,4] @ [4,2] + ones @ bias
        let ones = Tensor::full(&[3, 1], 1.0);
        let m = h.matmul(x2).unwrap().add(&ones.matmul(b).unwrap()).unwrap();
        let m = Self::unary(c[2], &m);
        // concat [3,2] with a slice of x3 [3,2] -> [3,4]
        let cat = Tensor::concat(&[m, x3.slice(1, c[3] % 3, 2).unwrap()], 1).unwrap();
        // dilated conv over 3 channels x 4 steps
        let conv = cat.conv1d_dilated(k, self.dilation, self.padding).unwrap();
        let conv = Self::unary(c[4], &conv);
        // positive denominator for recip
        let denom = conv.square().add_scalar(1.0).recip();
        let r = denom.transpose().unwrap().reshape(&[denom.numel()]).unwrap();
        let tail = x1
            .reshape(&[12])
            .unwrap()
            .slice(0, c[5], r.numel().min(12 - c[5]))
            .unwrap();
        let r = r.slice(0, 0, tail.numel()).unwrap();
        let prod = r.mul(&tail).unwrap().neg();
        let scaled = prod
            .mean()
            .expand(&[2])
            .unwrap()
            .mul(&Tensor::from_vec(&[2], vec![1.0, -0.5]).unwrap())
            .unwrap();
        let a = scaled.sum();
        let bterm = Self::unary(c[6], &x2.slice(0, c[7] % 3, 2).unwrap()).sum();
        let pad = x2.pad(0, 1, 6).unwrap().square().mean();
        // transposed-operand products: [3,4] x [3,4]^T and [3,4]^T x [3,4]
        let gram = if (c[1] + c[3]).is_multiple_of(2) {
            x1.matmul_nt(x3)
        } else {
            x1.matmul_tn(x3)
        }
        .unwrap();
        let gram = Self::unary(c[5] % 6, &gram.scale(0.5)).mean();
        a.add(&bterm.scale(0.3)).unwrap().add(&pad).unwrap().add(&gram).unwrap()
    }

    pub fn value(&self, flat: &[f64]) -> f64 {
        self.eval(&self.split(flat)).item()
    }

    pub fn gradient(&self, flat: &[f64]) -> Vec<f64> {
        let tape = Tape::new();
        let leaves: Vec<Tensor> = self.split(flat).iter().map(|t| tape.leaf(t)).collect();
        let loss = self.eval(&leaves);
        let g = backward(&loss, &leaves, false).unwrap();
        g.tensors.iter().flat_map(|t| t.to_vec()).collect()
    }

    /// Hessian-vector product through a differentiable first backward pass.
    pub fn hvp(&self, flat: &[f64], v: &[f64]) -> Vec<f64> {
        let tape = Tape::new();
        let leaves: Vec<Tensor> = self.split(flat).iter().map(|t| tape.leaf(t)).collect();
        let loss = self.eval(&leaves);
        let g = backward(&loss, &leaves, true).unwrap();
        let vs = self.split(v);
        let mut dot = Tensor::scalar(0.0);
        for (gi, vi) in g.tensors.iter().zip(&vs) {
            dot = dot.add(&gi.mul(vi).unwrap().sum()).unwrap();
        }
        let h = backward(&dot, &leaves, false).unwrap();
        h.tensors.iter().flat_map(|t| t.to_vec()).collect()
    }
}

pub struct GradCheck {
    pub first_order: f64,
    pub second_order: f64,
}

/// Worst relative errors over `n` random graphs, against central differences.
pub fn gradcheck_random_graphs(n: u64) -> GradCheck {
    let h = 1e-5;
    let mut worst1: f64 = 0.0;
    let mut worst2: f64 = 0.0;
    for seed in 0..n {
        let graph = RandomGraph::new(seed);
        let x = graph.init(seed);
        let g = graph.gradient(&x);
        let fd = finite_difference(|p| graph.value(p), &x, h);
        worst1 = worst1.max(max_rel_err(&g, &fd, 1e-3));

        let v = graph.init(seed + 1000);
        let hv = graph.hvp(&x, &v);
        let plus: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a - h * b).collect();
        let gp = graph.gradient(&plus);
        let gm = graph.gradient(&minus);
        let fd_hv: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        worst2 = worst2.max(max_rel_err(&hv, &fd_hv, 1e-3));
    }
    GradCheck {
        first_order: worst1,
        second_order: worst2,
    }
}

/// KL(N(mu, sigma^2) || N(0, 1)) by Simpson's rule over mu +- 12 sigma.
pub fn kl_numeric(mu: f64, sigma: f64) -> f64 {
    let n = 4000;
    let (a, b) = (mu - 12.0 * sigma, mu + 12.0 * sigma);
    let h = (b - a) / n as f64;
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let f = |x: f64| {
        let u = (x - mu) / sigma;
        let log_p = -0.5 * u * u - sigma.ln() - 0.5 * ln2pi;
        let log_q = -0.5 * x * x - 0.5 * ln2pi;
        log_p.exp() * (log_p - log_q)
    };
    let mut s = f(a) + f(b);
    for k in 1..n {
        s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

pub fn regulation_plant() -> PlantModel {
    // no link mass: the load-only compensator is then exact
    PlantModel {
        m_link: 0.0,
        ..PlantModel::default()
    }
}

pub fn step_reference(target: f64, seconds: f64, dt: f64) -> Vec<f64> {
    let n = (seconds / dt).round() as usize + 1;
    let mut r = vec![target; n];
    r[0] = 0.0;
    r
}

pub fn energy(plant: &PlantModel, s: SimState) -> f64 {
    0.5 * plant.inertia(s.q) * s.qd * s.qd + plant.potential(s.q)
}

pub fn free_run(plant: &PlantModel, init: SimState, dt: f64, steps: usize) -> SimState {
    let mut s = init;
    for _ in 0..steps {
        s = integrate_rk4(plant, s, 0.0, dt).unwrap();
    }
    s
}

/// Order estimated from three successive halvings so no reference solution is needed.
pub fn convergence_order(plant: &PlantModel, init: SimState, horizon: f64, dt: f64) -> f64 {
    let run = |h: f64| {
        let steps = (horizon / h).round() as usize;
        let s = free_run(plant, init, h, steps);
        (s.q, s.qd)
    };
    let (a, b, c) = (run(dt), run(dt / 2.0), run(dt / 4.0));
    let d1 = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    let d2 = ((b.0 - c.0).powi(2) + (b.1 - c.1).powi(2)).sqrt();
    (d1 / d2).log2()
}

/// Joint angles drawn inside the model limits, 5% away from each bound.
pub fn random_pose(model: &metaexo_core::kinematics::HumanModel, rng: &mut ChaCha8Rng) -> Vec<f64> {
    model
        .limits()
        .iter()
        .map(|&(lo, hi)| {
            let m = 0.05 * (hi - lo);
            rng.random_range(lo + m..hi - m)
        })
        .collect()
}

/// IK over a 20-frame motion from the rest pose to `q`, warm-started frame
/// to frame; returns the last frame's joint angles.
pub fn solve_motion_to(model: &metaexo_core::kinematics::HumanModel, q: &[f64]) -> Vec<f64> {
    use metaexo_core::kinematics::{IkOptions, Vec3};
    let frames: Vec<_> = (1..=20)
        .map(|s| {
            let qs: Vec<f64> = q.iter().map(|v| v * s as f64 / 20.0).collect();
            model.forward(&qs, Vec3::new(0.0, 0.0, 1.0)).unwrap()
        })
        .collect();
    let sols = model
        .solve_sequence(&frames, &vec![0.0; model.dof()], &IkOptions::default())
        .unwrap();
    sols.last().unwrap().q.clone()
}
