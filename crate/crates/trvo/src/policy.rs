//! Differentiable policies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use cvahedge_core::book_env::{ActionVector, HedgingPolicy, StateVector};

use crate::error::{invalid, Result};
use crate::family::{Categorical, DiagGaussian, Family};

/// A policy `π_θ(·|s)` given as a distribution family composed with a
/// differentiable map `s ↦ eta(s; θ)`.
pub trait Policy: Sync {
    type Dist: Family;

    fn family(&self) -> &Self::Dist;
    fn params(&self) -> &[f64];
    fn set_params(&mut self, params: &[f64]) -> Result<()>;

    fn n_params(&self) -> usize {
        self.params().len()
    }

    fn eta(&self, state: &[f64], out: &mut [f64]);

    /// `grad += J(s)ᵀ g` with `J = ∂eta/∂θ`.
    fn eta_vjp(&self, state: &[f64], g: &[f64], grad: &mut [f64]);

    /// `grads[k] += J(s)ᵀ gs[k]` for `k` row-stacked cotangents.
    fn eta_vjp_many(&self, state: &[f64], gs: &[f64], grads: &mut [f64]) {
        let (ne, np) = (self.family().n_eta(), self.n_params());
        for (g, out) in gs.chunks(ne).zip(grads.chunks_mut(np)) {
            self.eta_vjp(state, g, out);
        }
    }

    /// Dense `J(s)`, row-major `n_eta × n_params`.
    fn eta_jacobian(&self, state: &[f64], out: &mut [f64]) {
        let (ne, np) = (self.family().n_eta(), self.n_params());
        out.iter_mut().for_each(|x| *x = 0.0);
        let mut unit = vec![0.0; ne];
        for k in 0..ne {
            unit[k] = 1.0;
            self.eta_vjp(state, &unit, &mut out[k * np..(k + 1) * np]);
            unit[k] = 0.0;
        }
    }

    /// Regression features for state-value baselines.
    fn baseline_features(&self, state: &[f64], out: &mut Vec<f64>);

    /// Feed visited states to any input normalization. The policy's action
    /// distribution must not change.
    fn observe_states(&mut self, _states: &[f64], _state_dim: usize) {}

    /// `J(s)ᵀ ∇_eta log π(a|s)` written into `out`; returns `log π(a|s)`.
    fn score_vjp(&self, state: &[f64], action: &[f64], out: &mut [f64]) -> f64 {
        let f = self.family();
        let mut eta = vec![0.0; f.n_eta()];
        let mut score = vec![0.0; f.n_eta()];
        self.eta(state, &mut eta);
        f.score(&eta, action, &mut score);
        out.iter_mut().for_each(|x| *x = 0.0);
        self.eta_vjp(state, &score, out);
        f.log_prob(&eta, action)
    }

    fn log_prob(&self, state: &[f64], action: &[f64]) -> f64 {
        let mut eta = vec![0.0; self.family().n_eta()];
        self.eta(state, &mut eta);
        self.family().log_prob(&eta, action)
    }
}

/// Draw an action and return it with its log-density.
pub fn policy_sample<P: Policy, R: Rng + ?Sized>(policy: &P, state: &[f64], rng: &mut R) -> (Vec<f64>, f64) {
    let f = policy.family();
    let mut eta = vec![0.0; f.n_eta()];
    policy.eta(state, &mut eta);
    let mut a = vec![0.0; f.action_dim()];
    f.sample(&eta, rng, &mut a);
    let lp = f.log_prob(&eta, &a);
    (a, lp)
}

/// Running per-feature mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub count: f64,
    m2: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Normalizer {
        Normalizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
            count: 0.0,
            m2: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Merge a row-major block of states into the running moments.
    pub fn update(&mut self, states: &[f64]) {
        let d = self.dim();
        let n = (states.len() / d) as f64;
        if n == 0.0 {
            return;
        }
        for k in 0..d {
            let col = states.iter().skip(k).step_by(d);
            let mean_b = col.clone().sum::<f64>() / n;
            let m2_b: f64 = col.map(|x| (x - mean_b) * (x - mean_b)).sum();
            let total = self.count + n;
            let delta = mean_b - self.mean[k];
            self.mean[k] += delta * n / total;
            self.m2[k] += m2_b + delta * delta * self.count * n / total;
            let var = self.m2[k] / total;
            let floor = 1e-12 * self.mean[k].abs().max(1e-300);
            self.std[k] = if var.sqrt() > floor { var.sqrt() } else { 1.0 };
        }
        self.count += n;
    }

    #[inline]
    pub fn apply(&self, state: &[f64], out: &mut [f64]) {
        for k in 0..self.dim() {
            out[k] = (state[k] - self.mean[k]) / self.std[k];
        }
    }
}

/// Widest layer the MLP supports; activations live on the stack.
pub const MAX_WIDTH: usize = 64;
/// Most layers (input included) the MLP supports.
pub const MAX_LAYERS: usize = 6;

type Activations = [[f64; MAX_WIDTH]; MAX_LAYERS];

/// Policy network layout and parameters.
///
/// `weights` stores each layer as a row-major matrix followed by its bias,
/// then the per-dimension `log_std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub sizes: Vec<usize>,
    pub weights: Vec<f64>,
}

impl PolicyParams {
    fn layer_len(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn n_out(&self) -> usize {
        *self.sizes.last().expect("sizes nonempty")
    }

    pub fn log_std(&self) -> &[f64] {
        &self.weights[Self::layer_len(&self.sizes)..]
    }
}

/// Diagonal-Gaussian policy with a tanh MLP mean on standardized inputs.
///
/// The network outputs the mean in units of `family.scale`, so an output of
/// one is an action the size of the scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMlp {
    pub params: PolicyParams,
    pub normalizer: Normalizer,
    pub scale: Vec<f64>,
    #[serde(skip, default = "empty_family")]
    family: DiagGaussian,
}

fn empty_family() -> DiagGaussian {
    DiagGaussian::new(Vec::new())
}

impl GaussianMlp {
    /// Glorot-uniform hidden layers, a zero output layer and
    /// `std = init_std` in scaled units.
    pub fn new(n_in: usize, hidden: &[usize], scale: Vec<f64>, init_std: f64, seed: u64) -> Result<GaussianMlp> {
        let n_out = scale.len();
        let mut sizes = vec![n_in];
        sizes.extend_from_slice(hidden);
        sizes.push(n_out);
        if sizes.iter().any(|&w| w == 0 || w > MAX_WIDTH) || sizes.len() > MAX_LAYERS {
            return invalid(format!(
                "layer widths {sizes:?} must lie in 1..={MAX_WIDTH} with at most {MAX_LAYERS} layers"
            ));
        }
        if !(init_std > 0.0) || scale.iter().any(|s| !(*s > 0.0)) {
            return invalid("initial std and action scales must be positive");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(PolicyParams::layer_len(&sizes) + n_out);
        let n_layers = sizes.len() - 1;
        for (l, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                weights.push(if l + 1 == n_layers { 0.0 } else { rng.random_range(-limit..limit) });
            }
            weights.extend(std::iter::repeat_n(0.0, fan_out));
        }
        weights.extend(std::iter::repeat_n(init_std.ln(), n_out));
        Ok(GaussianMlp {
            params: PolicyParams { sizes, weights },
            normalizer: Normalizer::identity(n_in),
            family: DiagGaussian::new(scale.clone()),
            scale,
        })
    }

    /// Rebuild derived fields after deserialization.
    pub fn restore(mut self) -> Result<GaussianMlp> {
        let sizes = &self.params.sizes;
        if sizes.len() < 2
            || sizes.len() > MAX_LAYERS
            || sizes.iter().any(|&w| w == 0 || w > MAX_WIDTH)
            || self.scale.len() != self.params.n_out()
            || self.normalizer.dim() != sizes[0]
            || self.params.weights.len() != PolicyParams::layer_len(sizes) + self.params.n_out()
        {
            return invalid("inconsistent policy layout");
        }
        if self.params.weights.iter().any(|w| !w.is_finite()) {
            return invalid("non-finite policy parameters");
        }
        self.family = DiagGaussian::new(self.scale.clone());
        Ok(self)
    }

    pub fn n_in(&self) -> usize {
        self.params.sizes[0]
    }

    /// Forward pass; fills the activations of every layer and returns the
    /// mean of `u`.
    fn forward(&self, state: &[f64], acts: &mut Activations) {
        let sizes = &self.params.sizes;
        self.normalizer.apply(state, &mut acts[0][..sizes[0]]);
        let w = &self.params.weights;
        let mut off = 0;
        let n_layers = sizes.len() - 1;
        for l in 0..n_layers {
            let (ni, no) = (sizes[l], sizes[l + 1]);
            let (prev, next) = acts.split_at_mut(l + 1);
            let x = &prev[l][..ni];
            let y = &mut next[0][..no];
            let mat = &w[off..off + ni * no];
            let bias = &w[off + ni * no..off + ni * no + no];
            for j in 0..no {
                let row = &mat[j * ni..(j + 1) * ni];
                let mut s = bias[j];
                for k in 0..ni {
                    s += row[k] * x[k];
                }
                y[j] = if l + 1 == n_layers { s } else { s.tanh() };
            }
            off += ni * no + no;
        }
    }

    fn backward(&self, acts: &Activations, g: &[f64], grad: &mut [f64]) {
        let sizes = &self.params.sizes;
        let n_layers = sizes.len() - 1;
        let n_out = sizes[n_layers];
        let w = &self.params.weights;
        let layer_total = PolicyParams::layer_len(sizes);
        for k in 0..n_out {
            grad[layer_total + k] += g[n_out + k];
        }
        let mut delta = [0.0; MAX_WIDTH];
        delta[..n_out].copy_from_slice(&g[..n_out]);
        let mut off = layer_total;
        for l in (0..n_layers).rev() {
            let (ni, no) = (sizes[l], sizes[l + 1]);
            off -= ni * no + no;
            let x = &acts[l][..ni];
            for j in 0..no {
                let d = delta[j];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[off + j * ni..off + (j + 1) * ni];
                for k in 0..ni {
                    row[k] += d * x[k];
                }
                grad[off + ni * no + j] += d;
            }
            if l > 0 {
                let mat = &w[off..off + ni * no];
                let mut back = [0.0; MAX_WIDTH];
                for j in 0..no {
                    let d = delta[j];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &mat[j * ni..(j + 1) * ni];
                    for k in 0..ni {
                        back[k] += row[k] * d;
                    }
                }
                for k in 0..ni {
                    delta[k] = back[k] * (1.0 - x[k] * x[k]);
                }
            }
        }
    }

    fn acts() -> Activations {
        [[0.0; MAX_WIDTH]; MAX_LAYERS]
    }

    fn mean_out<'a>(&self, acts: &'a Activations) -> &'a [f64] {
        &acts[self.params.sizes.len() - 1][..self.params.n_out()]
    }
}

impl Policy for GaussianMlp {
    type Dist = DiagGaussian;

    fn family(&self) -> &DiagGaussian {
        &self.family
    }

    fn params(&self) -> &[f64] {
        &self.params.weights
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.weights.len() {
            return invalid(format!("expected {} parameters, got {}", self.params.weights.len(), params.len()));
        }
        self.params.weights.copy_from_slice(params);
        Ok(())
    }

    fn eta(&self, state: &[f64], out: &mut [f64]) {
        let mut acts = Self::acts();
        self.forward(state, &mut acts);
        let n_out = self.params.n_out();
        out[..n_out].copy_from_slice(self.mean_out(&acts));
        out[n_out..2 * n_out].copy_from_slice(self.params.log_std());
    }

    fn eta_vjp(&self, state: &[f64], g: &[f64], grad: &mut [f64]) {
        let mut acts = Self::acts();
        self.forward(state, &mut acts);
        self.backward(&acts, g, grad);
    }

    fn score_vjp(&self, state: &[f64], action: &[f64], out: &mut [f64]) -> f64 {
        let mut acts = Self::acts();
        self.forward(state, &mut acts);
        let n_out = self.params.n_out();
        let mut eta = [0.0; 2 * MAX_WIDTH];
        eta[..n_out].copy_from_slice(self.mean_out(&acts));
        eta[n_out..2 * n_out].copy_from_slice(self.params.log_std());
        let mut score = [0.0; 2 * MAX_WIDTH];
        self.family.score(&eta[..2 * n_out], action, &mut score[..2 * n_out]);
        out.iter_mut().for_each(|x| *x = 0.0);
        self.backward(&acts, &score[..2 * n_out], out);
        self.family.log_prob(&eta[..2 * n_out], action)
    }

    fn log_prob(&self, state: &[f64], action: &[f64]) -> f64 {
        let mut acts = Self::acts();
        self.forward(state, &mut acts);
        let n_out = self.params.n_out();
        let mut eta = [0.0; 2 * MAX_WIDTH];
        eta[..n_out].copy_from_slice(self.mean_out(&acts));
        eta[n_out..2 * n_out].copy_from_slice(self.params.log_std());
        self.family.log_prob(&eta[..2 * n_out], action)
    }

    fn eta_vjp_many(&self, state: &[f64], gs: &[f64], grads: &mut [f64]) {
        let mut acts = Self::acts();
        self.forward(state, &mut acts);
        let (ne, np) = (self.family.n_eta(), self.n_params());
        for (g, out) in gs.chunks(ne).zip(grads.chunks_mut(np)) {
            self.backward(&acts, g, out);
        }
    }

    /// `[1, z, z²]` with `z` the standardized state, clipped to ±10.
    fn baseline_features(&self, state: &[f64], out: &mut Vec<f64>) {
        let d = self.n_in();
        let mut z = [0.0; MAX_WIDTH];
        self.normalizer.apply(state, &mut z[..d]);
        out.clear();
        out.push(1.0);
        for &x in &z[..d] {
            out.push(x.clamp(-10.0, 10.0));
        }
        for &x in &z[..d] {
            let c = x.clamp(-10.0, 10.0);
            out.push(c * c);
        }
    }

    /// The first update fixes the input coordinates the initial weights are
    /// defined in; later updates re-express the first layer so outputs are
    /// unchanged.
    fn observe_states(&mut self, states: &[f64], state_dim: usize) {
        assert_eq!(state_dim, self.n_in(), "state dimension mismatch");
        if self.normalizer.count == 0.0 {
            self.normalizer.update(states);
            return;
        }
        let (old_mean, old_std) = (self.normalizer.mean.clone(), self.normalizer.std.clone());
        self.normalizer.update(states);
        let (ni, no) = (self.params.sizes[0], self.params.sizes[1]);
        let w = &mut self.params.weights;
        for j in 0..no {
            let mut shift = 0.0;
            for k in 0..ni {
                let wjk = w[j * ni + k];
                shift += wjk * (self.normalizer.mean[k] - old_mean[k]) / old_std[k];
                w[j * ni + k] = wjk * self.normalizer.std[k] / old_std[k];
            }
            w[ni * no + j] += shift;
        }
    }
}

/// Softmax policy over a finite state set; the state is a one-hot vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularSoftmax {
    pub n_states: usize,
    pub logits: Vec<f64>,
    family: Categorical,
}

impl TabularSoftmax {
    pub fn new(n_states: usize, n_actions: usize) -> TabularSoftmax {
        TabularSoftmax {
            n_states,
            logits: vec![0.0; n_states * n_actions],
            family: Categorical { n: n_actions },
        }
    }

    pub fn with_logits(n_states: usize, logits: Vec<f64>) -> TabularSoftmax {
        let n_actions = logits.len() / n_states;
        TabularSoftmax {
            n_states,
            logits,
            family: Categorical { n: n_actions },
        }
    }

    pub fn n_actions(&self) -> usize {
        self.family.n
    }

    fn index(state: &[f64]) -> usize {
        state.iter().position(|&x| x == 1.0).expect("one-hot state")
    }

    pub fn probs(&self, s: usize) -> Vec<f64> {
        let n = self.n_actions();
        self.family.probs(&self.logits[s * n..(s + 1) * n])
    }
}

impl Policy for TabularSoftmax {
    type Dist = Categorical;

    fn family(&self) -> &Categorical {
        &self.family
    }

    fn params(&self) -> &[f64] {
        &self.logits
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.logits.len() {
            return invalid("parameter length mismatch");
        }
        self.logits.copy_from_slice(params);
        Ok(())
    }

    fn eta(&self, state: &[f64], out: &mut [f64]) {
        let n = self.n_actions();
        let s = Self::index(state);
        out.copy_from_slice(&self.logits[s * n..(s + 1) * n]);
    }

    fn eta_vjp(&self, state: &[f64], g: &[f64], grad: &mut [f64]) {
        let n = self.n_actions();
        let s = Self::index(state);
        for k in 0..n {
            grad[s * n + k] += g[k];
        }
    }

    fn baseline_features(&self, state: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(state);
    }
}

/// Adapts a [`GaussianMlp`] to the environment's policy interface.
#[derive(Debug, Clone, Copy)]
pub struct Actor<'a> {
    pub policy: &'a GaussianMlp,
    /// Sample from the policy; otherwise act with the mean.
    pub stochastic: bool,
}

impl HedgingPolicy for Actor<'_> {
    fn action(&self, state: &StateVector, rng: &mut ChaCha8Rng) -> cvahedge_core::Result<ActionVector> {
        let f = self.policy.family();
        let mut eta = vec![0.0; f.n_eta()];
        self.policy.eta(&state.0, &mut eta);
        let mut a = vec![0.0; f.action_dim()];
        if self.stochastic {
            f.sample(&eta, rng, &mut a);
        } else {
            f.mode(&eta, &mut a);
        }
        Ok(ActionVector(a))
    }
}
