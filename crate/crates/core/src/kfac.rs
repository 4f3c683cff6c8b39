//! Kronecker-factored approximate curvature (K-FAC) and the Adam baseline.
//!
//! For a dense layer with augmented input `a̅` and pre-activation gradient
//! `g`, the Fisher block of `vec(W̄)` is approximated by `A ⊗ G` with
//! `A = E[a̅ a̅ᵀ]` and `G = E[g gᵀ]`. Both factors are kept as exponential
//! moving averages and inverted with factored Tikhonov damping:
//!
//! ```text
//! π      = sqrt( (tr A / dim A) / (tr G / dim G) )
//! A⁻¹    = (A + π √λ I)⁻¹
//! G⁻¹    = (G + √λ / π I)⁻¹
//! update = G⁻¹ · ∇W̄ · A⁻¹
//! ```
//!
//! The gradients `g` used for the factors come from a sampled loss: the
//! network output is perturbed with Gaussian noise and the noise itself is
//! back-propagated, which gives the Gauss-Newton / Fisher expectation under
//! the model's own predictive distribution rather than the data labels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_tn, sym_inverse, Matrix};
use crate::nn::{ForwardCache, LayerStats, Mlp};

#[derive(Debug, Clone, PartialEq)]
pub struct KfacConfig {
    pub damping: f64,
    pub momentum: f64,
    pub stat_decay: f64,
    pub learning_rate: f64,
    pub inversion_interval: usize,
    pub fisher_noise_std: f64,
    pub max_update_norm: Option<f64>,
}

impl Default for KfacConfig {
    fn default() -> Self {
        Self {
            damping: 0.8,
            momentum: 0.8,
            stat_decay: 0.95,
            learning_rate: 1e-3,
            inversion_interval: 20,
            fisher_noise_std: 1.0,
            max_update_norm: Some(10.0),
        }
    }
}

impl KfacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("kfac: {m}")));
        if !(self.damping > 0.0 && self.damping.is_finite()) {
            return bad("damping must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.stat_decay > 0.0 && self.stat_decay < 1.0) {
            return bad("stat_decay must lie in (0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.inversion_interval == 0 {
            return bad("inversion_interval must be at least 1");
        }
        if !(self.fisher_noise_std > 0.0 && self.fisher_noise_std.is_finite()) {
            return bad("fisher_noise_std must be positive");
        }
        if let Some(n) = self.max_update_norm {
            if !(n > 0.0) {
                return bad("max_update_norm must be positive");
            }
        }
        Ok(())
    }
}

/// Running Kronecker factors and derived quantities for one dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct KfacLayerState {
    /// `(in+1) × (in+1)`, running `E[a̅ a̅ᵀ]`
    pub act_factor: Matrix,
    /// `out × out`, running `E[g gᵀ]`
    pub grad_factor: Matrix,
    pub inv_act: Option<Matrix>,
    pub inv_grad: Option<Matrix>,
    /// `out × (in+1)`
    pub momentum_buf: Matrix,
    pub step_count: u64,
}

impl KfacLayerState {
    /// Zero factors for a layer with `in_dim` inputs (bias excluded) and
    /// `out_dim` outputs.
    pub fn new(in_dim: usize, out_dim: usize) -> Self {
        Self {
            act_factor: Matrix::zeros(in_dim + 1, in_dim + 1),
            grad_factor: Matrix::zeros(out_dim, out_dim),
            inv_act: None,
            inv_grad: None,
            momentum_buf: Matrix::zeros(out_dim, in_dim + 1),
            step_count: 0,
        }
    }

    pub fn for_network(net: &Mlp) -> Vec<Self> {
        net.layers()
            .iter()
            .map(|l| Self::new(l.spec.in_dim, l.spec.out_dim))
            .collect()
    }

    /// Damped factors `(A + π√λI, G + √λ/π I)` as used by the last inversion.
    pub fn damped_factors(&self, damping: f64) -> (Matrix, Matrix) {
        let (da, dg) = factored_damping(&self.act_factor, &self.grad_factor, damping);
        let mut a = self.act_factor.clone();
        a.add_diag(da);
        let mut g = self.grad_factor.clone();
        g.add_diag(dg);
        (a, g)
    }
}

/// Diagonal shifts `(π√λ, √λ/π)` for the activation and gradient factors.
pub fn factored_damping(act: &Matrix, grad: &Matrix, damping: f64) -> (f64, f64) {
    let ta = act.trace();
    let tg = grad.trace();
    let pi = if ta <= 1e-12 || tg <= 1e-12 {
        1.0
    } else {
        ((ta / act.rows() as f64) / (tg / grad.rows() as f64)).sqrt()
    };
    let root = damping.sqrt();
    (pi * root, root / pi)
}

/// Runs the network, perturbs its output with `Normal(0, noise_std²)` and
/// back-propagates the perturbation, returning the captured statistics.
pub fn sample_fisher_stats(net: &Mlp, input: &Matrix, noise_seed: u64, noise_std: f64) -> Result<Vec<LayerStats>> {
    let (_, cache) = net.forward(input)?;
    sample_fisher_stats_from_cache(net, &cache, noise_seed, noise_std)
}

/// [`sample_fisher_stats`] reusing an existing forward pass.
pub fn sample_fisher_stats_from_cache(
    net: &Mlp,
    cache: &ForwardCache,
    noise_seed: u64,
    noise_std: f64,
) -> Result<Vec<LayerStats>> {
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::Config(format!("invalid fisher noise std {noise_std}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    // ∂/∂out of ½‖out − (out + ξ)‖² is −ξ; the sign is irrelevant to second
    // moments, so ξ is used directly.
    let noise = Matrix::from_fn(cache.batch(), net.out_dim(), |_, _| noise_std * normal.sample(&mut rng));
    let (_, stats) = net.backward(cache, &noise)?;
    Ok(stats)
}

/// Exponential moving average of the factor second moments.
pub fn update_factors(state: &mut KfacLayerState, stats: &LayerStats, decay: f64) -> Result<()> {
    let batch = stats.act.rows();
    if batch == 0 || stats.grad.rows() != batch {
        return Err(Error::shape("layer statistics need matching non-empty batches"));
    }
    if stats.act.cols() != state.act_factor.rows() || stats.grad.cols() != state.grad_factor.rows() {
        return Err(Error::shape(format!(
            "statistics {}x{} / {}x{} do not fit factors of size {} / {}",
            stats.act.rows(),
            stats.act.cols(),
            stats.grad.rows(),
            stats.grad.cols(),
            state.act_factor.rows(),
            state.grad_factor.rows()
        )));
    }
    let inv_batch = 1.0 / batch as f64;
    let aa = matmul_tn(&stats.act, &stats.act)?;
    let gg = matmul_tn(&stats.grad, &stats.grad)?;
    state.act_factor.scale(decay);
    state.act_factor.axpy((1.0 - decay) * inv_batch, &aa)?;
    state.act_factor.symmetrize();
    state.grad_factor.scale(decay);
    state.grad_factor.axpy((1.0 - decay) * inv_batch, &gg)?;
    state.grad_factor.symmetrize();
    state.step_count += 1;
    Ok(())
}

/// Recomputes the factored-Tikhonov damped inverses. `layer` only labels
/// errors.
pub fn compute_damped_inverses(state: &mut KfacLayerState, damping: f64, layer: usize) -> Result<()> {
    if state.step_count == 0 {
        return Err(Error::State(format!("layer {layer} has no curvature statistics yet")));
    }
    let (da, dg) = factored_damping(&state.act_factor, &state.grad_factor, damping);
    let tag = |e: Error| match e {
        Error::Curvature { message, .. } => Error::Curvature { layer: Some(layer), message },
        other => other,
    };
    let inv_act = sym_inverse(&state.act_factor, da).map_err(tag)?;
    let inv_grad = sym_inverse(&state.grad_factor, dg).map_err(tag)?;
    state.inv_act = Some(inv_act);
    state.inv_grad = Some(inv_grad);
    Ok(())
}

/// Natural-gradient direction `G⁻¹ · ∇W̄ · A⁻¹` for one layer.
pub fn precondition(state: &KfacLayerState, grad_wbar: &Matrix) -> Result<Matrix> {
    let (Some(inv_act), Some(inv_grad)) = (&state.inv_act, &state.inv_grad) else {
        return Err(Error::State("precondition called before inverses were computed".into()));
    };
    matmul(&matmul(inv_grad, grad_wbar)?, inv_act)
}

fn check_grads(net: &Mlp, grads: &[Matrix]) -> Result<()> {
    if grads.len() != net.layers().len() {
        return Err(Error::shape(format!(
            "{} gradients for {} layers",
            grads.len(),
            net.layers().len()
        )));
    }
    for (i, (g, l)) in grads.iter().zip(net.layers()).enumerate() {
        if g.shape() != l.params.shape() {
            return Err(Error::shape(format!("gradient {i} does not match layer shape")));
        }
        if !g.is_finite() {
            return Err(Error::Numeric(format!("non-finite gradient in layer {i}")));
        }
    }
    Ok(())
}

/// Momentum step along the preconditioned directions, with a global
/// Frobenius-norm cap on the update. Nothing is modified on error.
pub fn apply_step(net: &mut Mlp, states: &mut [KfacLayerState], grads: &[Matrix], cfg: &KfacConfig) -> Result<()> {
    check_grads(net, grads)?;
    if states.len() != grads.len() {
        return Err(Error::shape("one K-FAC state per layer required"));
    }
    let mut new_bufs = Vec::with_capacity(grads.len());
    for (state, g) in states.iter().zip(grads) {
        let d = precondition(state, g)?;
        let mut buf = state.momentum_buf.scaled(cfg.momentum);
        buf.axpy(1.0, &d)?;
        new_bufs.push(buf);
    }
    let norm = new_bufs.iter().map(|b| b.frobenius_norm().powi(2)).sum::<f64>().sqrt() * cfg.learning_rate;
    let mut step = cfg.learning_rate;
    if let Some(max) = cfg.max_update_norm {
        if norm > max {
            step *= max / norm;
        }
    }
    let mut updated: Vec<Matrix> = Vec::with_capacity(grads.len());
    for (layer, buf) in net.layers().iter().zip(&new_bufs) {
        let mut p = layer.params.clone();
        p.axpy(-step, buf)?;
        if !p.is_finite() {
            return Err(Error::Numeric("K-FAC step produced non-finite parameters".into()));
        }
        updated.push(p);
    }
    for ((layer, p), (state, buf)) in net.layers_mut().iter_mut().zip(updated).zip(states.iter_mut().zip(new_bufs)) {
        layer.params = p;
        state.momentum_buf = buf;
    }
    Ok(())
}

/// K-FAC for a single network: factor refresh, periodic inversion and the
/// momentum step.
#[derive(Debug, Clone)]
pub struct KfacOptimizer {
    pub config: KfacConfig,
    pub states: Vec<KfacLayerState>,
    steps: u64,
}

impl KfacOptimizer {
    pub fn new(net: &Mlp, config: KfacConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { states: KfacLayerState::for_network(net), config, steps: 0 })
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Folds `stats` into the factors, re-inverts every `inversion_interval`
    /// steps (and on the first), then applies `grads`.
    pub fn step(&mut self, net: &mut Mlp, grads: &[Matrix], stats: &[LayerStats]) -> Result<()> {
        check_grads(net, grads)?;
        if stats.len() != self.states.len() {
            return Err(Error::shape("one statistics entry per layer required"));
        }
        let mut states = self.states.clone();
        for (s, st) in states.iter_mut().zip(stats) {
            update_factors(s, st, self.config.stat_decay)?;
        }
        if self.steps % self.config.inversion_interval as u64 == 0 {
            for (i, s) in states.iter_mut().enumerate() {
                compute_damped_inverses(s, self.config.damping, i)?;
            }
        }
        apply_step(net, &mut states, grads, &self.config)?;
        self.states = states;
        self.steps += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
}

impl AdamState {
    pub fn new(net: &Mlp) -> Self {
        let zeros: Vec<Matrix> = net
            .layers()
            .iter()
            .map(|l| Matrix::zeros(l.params.rows(), l.params.cols()))
            .collect();
        Self { m: zeros.clone(), v: zeros, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0 }
    }
}

/// Bias-corrected Adam update. Nothing is modified on error.
pub fn adam_step(net: &mut Mlp, state: &mut AdamState, grads: &[Matrix], lr: f64) -> Result<()> {
    check_grads(net, grads)?;
    if state.m.len() != grads.len() {
        return Err(Error::shape("adam state does not match network"));
    }
    let t = state.step + 1;
    let bc1 = 1.0 - state.beta1.powi(t as i32);
    let bc2 = 1.0 - state.beta2.powi(t as i32);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    for ((layer, g), (m, v)) in net.layers_mut().iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let p = layer.params.data_mut();
        for i in 0..p.len() {
            let gi = g.data()[i];
            let mi = b1 * m.data()[i] + (1.0 - b1) * gi;
            let vi = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            p[i] -= lr * (mi / bc1) / ((vi / bc2).sqrt() + eps);
        }
    }
    state.step = t;
    Ok(())
}
