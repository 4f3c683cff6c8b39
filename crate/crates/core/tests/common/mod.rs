//! Independent oracles and checks shared by the integration tests and the
//! acceptance runner. Nothing here calls the library routine it is checking.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use tdher::agents::{Agent, AgentConfig, AgentDims, Algorithm, Batch, OptimizerKind};
use tdher::envs::compute_reward;
use tdher::kfac::{
    compute_damped_inverses, precondition, sample_fisher_stats, update_factors, KfacConfig, KfacLayerState,
    KfacOptimizer,
};
use tdher::linalg::{kron, unvec, vec, Matrix};
use tdher::nn::{init_mlp, mlp_spec, Activation, LayerSpec, Mlp};
use tdher::replay::{Episode, HerBuffer, ReplayConfig, Transition};

pub type Check = Result<String, String>;

pub fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

/// `|a − b| / max(|a|, |b|, 1e-6)`
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn matrix_rel_err(a: &Matrix, b: &Matrix) -> f64 {
    let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    diff / b.frobenius_norm().max(1e-300)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// `B Bᵀ + 0.1 I` rescaled to unit mean eigenvalue.
pub fn random_unit_spd(n: usize, rng: &mut impl Rng) -> Matrix {
    let m = random_spd(n, rng);
    let t = (0..n).map(|i| m.get(i, i)).sum::<f64>() / n as f64;
    m.scaled(1.0 / t)
}

/// `B Bᵀ + 0.1 I` with Gaussian `B`.
pub fn random_spd(n: usize, rng: &mut impl Rng) -> Matrix {
    let b = random_matrix(n, n, rng);
    let mut m = Matrix::from_fn(n, n, |i, j| (0..n).map(|k| b.get(i, k) * b.get(j, k)).sum());
    for i in 0..n {
        m.set(i, i, m.get(i, i) + 0.1);
    }
    m
}

/// Dense inverse by Gauss-Jordan elimination with partial pivoting.
pub fn gauss_jordan_inverse(m: &Matrix) -> Matrix {
    let n = m.rows();
    let mut a: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = m.row(i).to_vec();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .expect("non-empty");
        a.swap(col, pivot);
        let p = a[col][col];
        assert!(p.abs() > 1e-300, "singular matrix");
        for v in a[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
    }
    Matrix::from_fn(n, n, |i, j| a[i][n + j])
}

/// `((A + π√λI) ⊗ (G + √λ/π I))⁻¹ vec(V)` reshaped, with π computed here
/// from the traces.
pub fn brute_force_precondition(act: &Matrix, grad: &Matrix, v: &Matrix, damping: f64) -> Matrix {
    let ta = (0..act.rows()).map(|i| act.get(i, i)).sum::<f64>() / act.rows() as f64;
    let tg = (0..grad.rows()).map(|i| grad.get(i, i)).sum::<f64>() / grad.rows() as f64;
    let pi = if ta <= 1e-12 || tg <= 1e-12 { 1.0 } else { (ta / tg).sqrt() };
    let sl = damping.sqrt();
    let a = Matrix::from_fn(act.rows(), act.cols(), |i, j| act.get(i, j) + if i == j { pi * sl } else { 0.0 });
    let g = Matrix::from_fn(grad.rows(), grad.cols(), |i, j| grad.get(i, j) + if i == j { sl / pi } else { 0.0 });
    let k_inv = gauss_jordan_inverse(&kron(&a, &g));
    let x = vec(v);
    let y = Matrix::from_fn(x.rows(), 1, |i, _| (0..x.rows()).map(|k| k_inv.get(i, k) * x.get(k, 0)).sum());
    unvec(&y, v.rows(), v.cols()).expect("shape")
}

/// Worst relative error of `precondition` against the brute-force oracle
/// over every shape with `in ≤ max_in`, `out ≤ max_out`.
pub fn kfac_oracle_worst(max_in: usize, max_out: usize, pairs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for in_dim in 1..=max_in {
        for out_dim in 1..=max_out {
            for _ in 0..pairs {
                let damping = rng.random_range(0.01..2.0);
                let mut st = KfacLayerState::new(in_dim, out_dim);
                st.act_factor = random_spd(in_dim + 1, &mut rng);
                st.grad_factor = random_spd(out_dim, &mut rng);
                st.step_count = 1;
                compute_damped_inverses(&mut st, damping, 0).expect("SPD factors invert");
                let v = random_matrix(out_dim, in_dim + 1, &mut rng);
                let got = precondition(&st, &v).expect("inverses present");
                let want = brute_force_precondition(&st.act_factor, &st.grad_factor, &v, damping);
                worst = worst.max(matrix_rel_err(&got, &want));
            }
        }
    }
    worst
}

/// Mixed-activation three-layer network used by the gradient checks.
pub fn fd_network(seed: u64) -> Mlp {
    let spec = vec![
        LayerSpec::new(4, 6, Activation::Tanh),
        LayerSpec::new(6, 5, Activation::Relu),
        LayerSpec::new(5, 3, Activation::Identity),
    ];
    init_mlp(&spec, seed).expect("valid spec")
}

fn weighted_output(net: &Mlp, x: &Matrix, c: &Matrix) -> f64 {
    let out = net.predict(x).expect("forward");
    out.data().iter().zip(c.data()).map(|(o, c)| o * c).sum::<f64>()
}

/// Worst relative error between backprop and central differences for
/// `L = (1/B) Σ c ⊙ out` (parameters) and `Σⱼ cᵢⱼ outᵢⱼ` (inputs).
pub fn mlp_fd_worst(net: &Mlp, batch: usize, h: f64, rng: &mut impl Rng) -> f64 {
    let x = random_matrix(batch, net.in_dim(), rng);
    let c = random_matrix(batch, net.out_dim(), rng);
    let (_, cache) = net.forward(&x).expect("forward");
    let bw = net.backward_full(&cache, &c).expect("backward");
    let b = batch as f64;
    let mut worst = 0.0f64;
    for l in 0..net.layers().len() {
        let (rows, cols) = net.layers()[l].params.shape();
        for r in 0..rows {
            for col in 0..cols {
                let mut plus = net.clone();
                let mut minus = net.clone();
                let v = net.layers()[l].params.get(r, col);
                plus.layers_mut()[l].params.set(r, col, v + h);
                minus.layers_mut()[l].params.set(r, col, v - h);
                let fd = (weighted_output(&plus, &x, &c) - weighted_output(&minus, &x, &c)) / (2.0 * h * b);
                worst = worst.max(rel_err(bw.grads[l].get(r, col), fd));
            }
        }
    }
    for i in 0..batch {
        for j in 0..net.in_dim() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.set(i, j, x.get(i, j) + h);
            xm.set(i, j, x.get(i, j) - h);
            let fd = (weighted_output(net, &xp, &c) - weighted_output(net, &xm, &c)) / (2.0 * h);
            worst = worst.max(rel_err(bw.input_grad.get(i, j), fd));
        }
    }
    worst
}

/// Monte-Carlo parameter Fisher of a linear single-output net under the
/// sampled loss, against `std²·I`. Inputs run through every ±1 sign pattern
/// equally often, so `E[a̅ a̅ᵀ] = I` exactly and all error comes from the
/// loss sampling.
pub fn fisher_mc_rel_err(in_dim: usize, samples: usize, std: f64, seed: u64) -> f64 {
    let net = init_mlp(&[LayerSpec::new(in_dim, 1, Activation::Identity)], seed).expect("spec");
    let patterns = 1usize << in_dim;
    let x = Matrix::from_fn(samples, in_dim, |r, c| if (r % patterns >> c) & 1 == 1 { 1.0 } else { -1.0 });
    let stats = sample_fisher_stats(&net, &x, seed ^ 0x5eed, std).expect("stats");
    let s = &stats[0];
    let p = in_dim + 1;
    let mut fisher = Matrix::zeros(p, p);
    for r in 0..samples {
        let g = s.grad.get(r, 0);
        for i in 0..p {
            for j in 0..p {
                fisher.set(i, j, fisher.get(i, j) + g * g * s.act.get(r, i) * s.act.get(r, j) / samples as f64);
            }
        }
    }
    let mut target = Matrix::identity(p);
    target.scale(std * std);
    matrix_rel_err(&fisher, &target)
}

/// Linear least squares trained with K-FAC; counts steps whose loss rose.
pub fn kfac_regression_increases(steps: usize, seed: u64) -> (usize, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = init_mlp(&[LayerSpec::new(3, 2, Activation::Identity)], seed).expect("spec");
    let x = random_matrix(64, 3, &mut rng);
    let w = random_matrix(2, 3, &mut rng);
    let y = Matrix::from_fn(64, 2, |r, c| (0..3).map(|k| x.get(r, k) * w.get(c, k)).sum::<f64>() + 0.5);
    let cfg = KfacConfig { learning_rate: 0.05, momentum: 0.0, inversion_interval: 1, ..Default::default() };
    let mut opt = KfacOptimizer::new(&net, cfg).expect("config");
    let loss = |net: &Mlp| {
        let out = net.predict(&x).expect("forward");
        out.data().iter().zip(y.data()).map(|(o, t)| (o - t).powi(2)).sum::<f64>() / 64.0
    };
    let first = loss(&net);
    let mut prev = first;
    let mut increases = 0;
    for k in 0..steps {
        let (out, cache) = net.forward(&x).expect("forward");
        let g = Matrix::from_fn(64, 2, |r, c| 2.0 * (out.get(r, c) - y.get(r, c)));
        let (grads, _) = net.backward(&cache, &g).expect("backward");
        let stats = sample_fisher_stats(&net, &x, k as u64, 1.0).expect("stats");
        opt.step(&mut net, &grads, &stats).expect("step");
        let l = loss(&net);
        if l > prev {
            increases += 1;
        }
        prev = l;
    }
    (increases, first, prev)
}

/// Cosine between the heavily damped K-FAC direction and the raw gradient,
/// for factors of unit average curvature.
pub fn large_damping_cosine(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut st = KfacLayerState::new(4, 3);
    st.act_factor = random_unit_spd(5, &mut rng);
    st.grad_factor = random_unit_spd(3, &mut rng);
    st.step_count = 1;
    compute_damped_inverses(&mut st, 1e4, 0).expect("invert");
    let g = random_matrix(3, 5, &mut rng);
    let d = precondition(&st, &g).expect("precondition");
    let dot: f64 = d.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
    dot / (d.frobenius_norm() * g.frobenius_norm())
}

/// Factors fed the same statistics converge to the batch moments.
pub fn factor_moments_match(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = init_mlp(&mlp_spec(3, &[4], 2, Activation::Tanh), seed).expect("spec");
    let x = random_matrix(16, 3, &mut rng);
    let stats = sample_fisher_stats(&net, &x, 3, 1.0).expect("stats");
    let mut st = KfacLayerState::for_network(&net);
    for _ in 0..800 {
        for (s, l) in st.iter_mut().zip(&stats) {
            update_factors(s, l, 0.95).expect("update");
        }
    }
    let a = &stats[0].act;
    let want = Matrix::from_fn(a.cols(), a.cols(), |i, j| (0..16).map(|r| a.get(r, i) * a.get(r, j)).sum::<f64>() / 16.0);
    matrix_rel_err(&st[0].act_factor, &want)
}

// ---------------------------------------------------------------- replay

/// Random-walk episode in `dim` dimensions whose rewards come from the
/// reward function, so stored data satisfies the reward contract.
pub fn walk_episode(len: usize, dim: usize, tol: f64, rng: &mut impl Rng) -> Episode {
    let goal: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut transitions = Vec::with_capacity(len);
    for k in 0..len {
        let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.2..0.2)).collect();
        let nx: Vec<f64> = x.iter().zip(&a).map(|(p, d)| p + d).collect();
        transitions.push(Transition {
            state: x.clone(),
            action: a,
            next_state: nx.clone(),
            goal: goal.clone(),
            achieved_goal: x.clone(),
            next_achieved_goal: nx.clone(),
            reward: compute_reward(&nx, &goal, tol).expect("dims"),
            done: k + 1 == len,
        });
        x = nx;
    }
    Episode { transitions }
}

pub struct ReplayReport {
    pub samples: usize,
    pub relabel_fraction: f64,
    pub reward_violations: usize,
    pub causality_violations: usize,
    pub max_len: usize,
    pub capacity: usize,
}

/// Fills a sample-mode future buffer past capacity and draws `samples`
/// transitions in batches of 256.
pub fn replay_suite(samples: usize, seed: u64) -> ReplayReport {
    let tol = 0.05;
    let cfg = ReplayConfig { capacity: 50, future_k: 4, ..Default::default() };
    let capacity = cfg.capacity;
    let mut buf = HerBuffer::new(cfg, tol).expect("config");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_len = 0;
    for _ in 0..120 {
        let ep = walk_episode(rng.random_range(5..30), 2, tol, &mut rng);
        buf.store_episode(ep, &mut rng).expect("valid episode");
        max_len = max_len.max(buf.len());
    }
    let mut relabeled = 0usize;
    let mut reward_violations = 0usize;
    let mut causality_violations = 0usize;
    let mut drawn = 0usize;
    while drawn < samples {
        let n = 256.min(samples - drawn);
        for (t, info) in buf.sample_with_info(n, &mut rng).expect("sample") {
            if t.reward != compute_reward(&t.next_achieved_goal, &t.goal, tol).expect("dims") {
                reward_violations += 1;
            }
            if let Some((e, j)) = info.goal_source {
                relabeled += 1;
                let ep = buf.episode(e).expect("stored");
                if e != info.episode || j < info.timestep || ep.transitions[j].next_achieved_goal != t.goal {
                    causality_violations += 1;
                }
            }
        }
        drawn += n;
    }
    ReplayReport {
        samples,
        relabel_fraction: relabeled as f64 / samples as f64,
        reward_violations,
        causality_violations,
        max_len,
        capacity,
    }
}

// ------------------------------------------------------------------- TD3

pub fn td3_agent(seed: u64, optimizer: OptimizerKind) -> Agent {
    let dims = AgentDims {
        obs_dim: 3,
        goal_dim: 2,
        action_dim: 2,
        action_low: vec![-1.0, -0.5],
        action_high: vec![1.0, 2.0],
    };
    let cfg = AgentConfig {
        algorithm: Algorithm::Td3,
        optimizer,
        hidden: vec![16, 16],
        batch_size: 32,
        ..Default::default()
    };
    Agent::new(dims, cfg, KfacConfig::default(), seed).expect("agent")
}

pub fn random_batch(n: usize, rng: &mut impl Rng) -> Batch {
    let m = |c: usize, rng: &mut dyn rand::RngCore| Matrix::from_fn(n, c, |_, _| rng.random_range(-1.0..1.0));
    Batch {
        states: m(3, rng),
        goals: m(2, rng),
        actions: m(2, rng),
        next_states: m(3, rng),
        rewards: (0..n).map(|_| if rng.random_bool(0.3) { 0.0 } else { -1.0 }).collect(),
        dones: (0..n).map(|_| rng.random_bool(0.25)).collect(),
    }
}

/// Terminal identity, min dominance, recomputed targets and clipped
/// smoothing noise on `trials` random batches.
pub fn td3_target_checks(trials: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for trial in 0..trials {
        let agent = td3_agent(seed + trial as u64, OptimizerKind::Adam);
        let b = random_batch(32, &mut rng);
        let t = agent.td_target_td3(&b, &mut rng).map_err(|e| e.to_string())?;
        let cfg = &agent.config;
        let sg = Matrix::hcat(&[&b.next_states, &b.goals]).expect("shapes");
        let raw = agent.target_actor.predict(&sg).expect("forward");
        let input = Matrix::hcat(&[&sg, &t.actions]).expect("shapes");
        let q1 = agent.target_critics[0].predict(&input).expect("forward");
        let q2 = agent.target_critics[1].predict(&input).expect("forward");
        let lo = -1.0 / (1.0 - cfg.gamma);
        for i in 0..b.len() {
            for j in 0..2 {
                let (low, high) = (agent.dims.action_low[j], agent.dims.action_high[j]);
                let base = 0.5 * (low + high) + 0.5 * (high - low) * raw.get(i, j);
                let n = t.noise.get(i, j);
                ensure(n.abs() <= cfg.target_noise_clip, format!("noise {n} exceeds clip"))?;
                let a = (base + n).clamp(low, high);
                ensure((a - t.actions.get(i, j)).abs() < 1e-12, "smoothed action mismatch")?;
            }
            ensure(t.q1[i] == q1.get(i, 0) && t.q2[i] == q2.get(i, 0), "reported twin values differ")?;
            if b.dones[i] {
                ensure(t.y[i] == b.rewards[i], format!("terminal target {} != reward {}", t.y[i], b.rewards[i]))?;
            } else {
                for q in [q1.get(i, 0), q2.get(i, 0)] {
                    let single = (b.rewards[i] + cfg.gamma * q).clamp(lo, 0.0);
                    ensure(t.y[i] <= single + 1e-12, "target exceeds a single-critic target")?;
                }
                let want = (b.rewards[i] + cfg.gamma * q1.get(i, 0).min(q2.get(i, 0))).clamp(lo, 0.0);
                ensure((t.y[i] - want).abs() < 1e-12, "target is not the clipped min")?;
            }
        }
    }
    Ok(())
}

/// Runs `steps` training steps and returns (critic updates, actor updates).
pub fn td3_delay_counts(steps: usize, optimizer: OptimizerKind, seed: u64) -> (u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agent = td3_agent(seed, optimizer);
    for _ in 0..steps {
        let b = random_batch(16, &mut rng);
        agent.train_on_batch(&b, &mut rng).expect("step");
    }
    (agent.critic_updates(), agent.actor_updates())
}
