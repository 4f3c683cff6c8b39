//! Dense multilayer perceptrons with hand-written backpropagation.
//!
//! Each layer keeps its weights and bias in one `out × (in + 1)` matrix
//! `W̄ = [W | b]`, so a layer is the affine map `s = a̅ · W̄ᵀ` applied to the
//! input `a̅ = [a | 1]` with the homogeneous bias coordinate appended. The
//! forward cache stores exactly those augmented inputs, which are also the
//! activation statistics K-FAC needs.
//!
//! Losses follow a batch-mean convention: `output_grad` holds per-sample
//! derivatives `∂ℓᵢ/∂outᵢ` and parameter gradients are those of
//! `(1/batch) Σᵢ ℓᵢ`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_nt, matmul_tn, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn id(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, s: f64) -> f64 {
        match self {
            Activation::Relu => s.max(0.0),
            Activation::Tanh => s.tanh(),
            Activation::Identity => s,
        }
    }

    #[inline]
    fn derivative(self, s: f64) -> f64 {
        match self {
            Activation::Relu => {
                if s > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = s.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self { in_dim, out_dim, activation }
    }
}

/// Hidden layers of `hidden` width with relu, then an output layer with the
/// given activation.
pub fn mlp_spec(in_dim: usize, hidden: &[usize], out_dim: usize, output: Activation) -> Vec<LayerSpec> {
    let mut spec = Vec::with_capacity(hidden.len() + 1);
    let mut prev = in_dim;
    for &h in hidden {
        spec.push(LayerSpec::new(prev, h, Activation::Relu));
        prev = h;
    }
    spec.push(LayerSpec::new(prev, out_dim, output));
    spec
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    /// `out × (in + 1)`, bias in the last column.
    pub params: Matrix,
}

impl Layer {
    pub fn weight(&self, o: usize, i: usize) -> f64 {
        self.params.get(o, i)
    }

    pub fn bias(&self, o: usize) -> f64 {
        self.params.get(o, self.spec.in_dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Per layer: input with the bias coordinate appended, `batch × (in + 1)`.
    pub acts: Vec<Matrix>,
    /// Per layer: pre-activations, `batch × out`.
    pub pre: Vec<Matrix>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.acts.first().map_or(0, Matrix::rows)
    }
}

/// Activations and pre-activation gradients captured for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStats {
    /// `batch × (in + 1)`
    pub act: Matrix,
    /// `batch × out`, per-sample `∂ℓᵢ/∂sᵢ`
    pub grad: Matrix,
}

#[derive(Debug, Clone)]
pub struct Backward {
    /// Per layer `∇W̄`, shaped like the layer's params.
    pub grads: Vec<Matrix>,
    pub stats: Vec<LayerStats>,
    /// Per-sample input gradient `∂ℓᵢ/∂xᵢ`.
    pub input_grad: Matrix,
}

/// Validates the spec and draws weights uniformly from `±1/√in_dim`; biases
/// start at zero.
pub fn init_mlp(spec: &[LayerSpec], seed: u64) -> Result<Mlp> {
    validate_spec(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = spec
        .iter()
        .map(|&s| {
            let bound = 1.0 / (s.in_dim as f64).sqrt();
            let params = Matrix::from_fn(s.out_dim, s.in_dim + 1, |_, c| {
                if c == s.in_dim {
                    0.0
                } else {
                    rng.random_range(-bound..=bound)
                }
            });
            Layer { spec: s, params }
        })
        .collect();
    Ok(Mlp { layers })
}

fn validate_spec(spec: &[LayerSpec]) -> Result<()> {
    if spec.is_empty() {
        return Err(Error::shape("network needs at least one layer"));
    }
    for (i, s) in spec.iter().enumerate() {
        if s.in_dim == 0 || s.out_dim == 0 {
            return Err(Error::shape(format!("layer {i} has a zero dimension")));
        }
    }
    for (i, w) in spec.windows(2).enumerate() {
        if w[0].out_dim != w[1].in_dim {
            return Err(Error::shape(format!(
                "layer {i} outputs {} but layer {} expects {}",
                w[0].out_dim,
                i + 1,
                w[1].in_dim
            )));
        }
    }
    Ok(())
}

impl Mlp {
    /// Builds a network from explicit layer parameters.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Mlp> {
        let spec: Vec<LayerSpec> = layers.iter().map(|l| l.spec).collect();
        validate_spec(&spec)?;
        for (i, l) in layers.iter().enumerate() {
            if l.params.shape() != (l.spec.out_dim, l.spec.in_dim + 1) {
                return Err(Error::shape(format!("layer {i} params do not match its spec")));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn spec(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.out_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.params.data().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.params.is_finite())
    }

    pub fn forward(&self, input: &Matrix) -> Result<(Matrix, ForwardCache)> {
        if input.cols() != self.in_dim() {
            return Err(Error::shape(format!(
                "network expects {} inputs, got {}",
                self.in_dim(),
                input.cols()
            )));
        }
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.with_constant_column(1.0);
        let mut out = Matrix::zeros(0, 0);
        for (i, layer) in self.layers.iter().enumerate() {
            let s = matmul_nt(&x, &layer.params)?;
            let mut h = s.clone();
            let act = layer.spec.activation;
            h.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
            acts.push(x);
            pre.push(s);
            if i + 1 < self.layers.len() {
                x = h.with_constant_column(1.0);
            } else {
                out = h;
                x = Matrix::zeros(0, 0);
            }
        }
        drop(x);
        Ok((out, ForwardCache { acts, pre }))
    }

    /// Output only, no cache.
    pub fn predict(&self, input: &Matrix) -> Result<Matrix> {
        let mut x = input.clone();
        if x.cols() != self.in_dim() {
            return Err(Error::shape(format!(
                "network expects {} inputs, got {}",
                self.in_dim(),
                x.cols()
            )));
        }
        for layer in &self.layers {
            let mut s = matmul_nt(&x.with_constant_column(1.0), &layer.params)?;
            let act = layer.spec.activation;
            s.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
            x = s;
        }
        Ok(x)
    }

    /// Full reverse pass: parameter gradients, K-FAC statistics and the
    /// input gradient.
    pub fn backward_full(&self, cache: &ForwardCache, output_grad: &Matrix) -> Result<Backward> {
        let n = self.layers.len();
        if cache.acts.len() != n || cache.pre.len() != n {
            return Err(Error::State(format!(
                "cache holds {} layers, network has {n}",
                cache.acts.len()
            )));
        }
        let batch = cache.batch();
        if output_grad.shape() != (batch, self.out_dim()) {
            return Err(Error::shape(format!(
                "output gradient is {:?}, expected {:?}",
                output_grad.shape(),
                (batch, self.out_dim())
            )));
        }
        let inv_batch = if batch > 0 { 1.0 / batch as f64 } else { 0.0 };
        let mut grads = vec![Matrix::zeros(0, 0); n];
        let mut stats: Vec<Option<LayerStats>> = vec![None; n];
        let mut upstream = output_grad.clone();
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            let act = layer.spec.activation;
            let mut g = upstream;
            for (gv, sv) in g.data_mut().iter_mut().zip(cache.pre[l].data()) {
                *gv *= act.derivative(*sv);
            }
            let mut gw = matmul_tn(&g, &cache.acts[l])?;
            gw.scale(inv_batch);
            grads[l] = gw;
            // ∂ℓ/∂a̅ = g · W̄, then drop the bias coordinate
            let da = matmul(&g, &layer.params)?;
            upstream = da.col_range(0, layer.spec.in_dim);
            stats[l] = Some(LayerStats { act: cache.acts[l].clone(), grad: g });
        }
        Ok(Backward {
            grads,
            stats: stats.into_iter().map(|s| s.expect("every layer visited")).collect(),
            input_grad: upstream,
        })
    }

    /// Parameter gradients and per-layer statistics.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &Matrix) -> Result<(Vec<Matrix>, Vec<LayerStats>)> {
        let b = self.backward_full(cache, output_grad)?;
        Ok((b.grads, b.stats))
    }

    /// Per-sample gradient of the loss with respect to the network input.
    pub fn grad_through_input(&self, cache: &ForwardCache, output_grad: &Matrix) -> Result<Matrix> {
        Ok(self.backward_full(cache, output_grad)?.input_grad)
    }

    /// Flat view of every parameter, layer by layer, row-major within a layer.
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.params.data().iter().copied()).collect()
    }
}

/// `target ← tau · online + (1 − tau) · target`
pub fn polyak_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    if target.spec() != online.spec() {
        return Err(Error::shape("polyak update between different architectures"));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("polyak rate {tau} outside [0, 1]")));
    }
    for (t, o) in target.layers.iter_mut().zip(&online.layers) {
        for (tv, ov) in t.params.data_mut().iter_mut().zip(o.params.data()) {
            *tv = tau * ov + (1.0 - tau) * *tv;
        }
    }
    Ok(())
}
