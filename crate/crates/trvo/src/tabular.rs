//! Small finite MDP with an absorbing default state, solvable by exhaustive
//! trajectory enumeration. It is the reference model for gradient checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cvahedge_core::book_env::Trajectory;

use crate::family::Family;
use crate::policy::{Policy, TabularSoftmax};

/// Transition `(next state, probability, reward)`; next state `None` is the
/// absorbing default.
pub type Outcome = (Option<usize>, f64, f64);

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub horizon: usize,
    pub initial: usize,
    /// Indexed `[state][action]`.
    pub transitions: Vec<Vec<Vec<Outcome>>>,
}

/// Exact objectives of a policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exact {
    pub j_hat: f64,
    pub j_norm: f64,
    pub nu2_hat: f64,
    pub mean_gamma_sum: f64,
}

impl TabularMdp {
    /// Two live states and a default state, two actions, three steps.
    pub fn reference() -> TabularMdp {
        TabularMdp {
            n_states: 2,
            n_actions: 2,
            horizon: 3,
            initial: 0,
            transitions: vec![
                vec![
                    vec![(Some(0), 0.5, 1.0), (Some(1), 0.4, 0.5), (None, 0.1, -2.0)],
                    vec![(Some(0), 0.2, 1.5), (Some(1), 0.6, 0.2), (None, 0.2, -3.0)],
                ],
                vec![
                    vec![(Some(0), 0.3, -0.5), (Some(1), 0.6, 0.8), (None, 0.1, -1.0)],
                    vec![(Some(0), 0.7, 0.3), (Some(1), 0.25, 2.5), (None, 0.05, -4.0)],
                ],
            ],
        }
    }

    pub fn one_hot(&self, s: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.n_states];
        v[s] = 1.0;
        v
    }

    /// All `(probability, rewards)` episode outcomes under `probs[s][a]`.
    #[allow(clippy::needless_range_loop)]
    fn enumerate(&self, probs: &[Vec<f64>]) -> Vec<(f64, Vec<f64>)> {
        let mut out = Vec::new();
        let mut stack = vec![(self.initial, 1.0, Vec::new())];
        while let Some((s, p, rewards)) = stack.pop() {
            for a in 0..self.n_actions {
                for &(next, q, r) in &self.transitions[s][a] {
                    let mass = p * probs[s][a] * q;
                    if mass == 0.0 {
                        continue;
                    }
                    let mut rw: Vec<f64> = rewards.clone();
                    rw.push(r);
                    match next {
                        Some(ns) if rw.len() < self.horizon => stack.push((ns, mass, rw)),
                        _ => out.push((mass, rw)),
                    }
                }
            }
        }
        out
    }

    pub fn exact_probs(&self, probs: &[Vec<f64>], gamma: f64) -> Exact {
        let eps = self.enumerate(probs);
        let disc = |rw: &[f64]| rw.iter().rev().fold(0.0, |acc, r| r + gamma * acc);
        let gsum = |n: usize| crate::stats::discount_sum(gamma, n);
        let j_hat: f64 = eps.iter().map(|(p, rw)| p * disc(rw)).sum();
        let j_norm: f64 = eps.iter().map(|(p, rw)| p * disc(rw) / gsum(rw.len())).sum();
        let mean_gamma_sum: f64 = eps.iter().map(|(p, rw)| p * gsum(rw.len())).sum();
        let nu2_hat = eps
            .iter()
            .map(|(p, rw)| {
                let v: f64 = rw
                    .iter()
                    .enumerate()
                    .map(|(i, r)| gamma.powi(i as i32) * (r - j_norm) * (r - j_norm))
                    .sum();
                p * v
            })
            .sum();
        Exact {
            j_hat,
            j_norm,
            nu2_hat,
            mean_gamma_sum,
        }
    }

    pub fn exact(&self, policy: &TabularSoftmax, gamma: f64) -> Exact {
        let probs: Vec<Vec<f64>> = (0..self.n_states).map(|s| policy.probs(s)).collect();
        self.exact_probs(&probs, gamma)
    }

    /// Central-difference gradients of `(Ĵ, ν̂²)` in the policy logits.
    pub fn finite_difference_gradients(&self, policy: &TabularSoftmax, gamma: f64, h: f64) -> (Vec<f64>, Vec<f64>) {
        let n = policy.logits.len();
        let (mut gj, mut gv) = (vec![0.0; n], vec![0.0; n]);
        for k in 0..n {
            let mut up = policy.clone();
            up.logits[k] += h;
            let mut dn = policy.clone();
            dn.logits[k] -= h;
            let (eu, ed) = (self.exact(&up, gamma), self.exact(&dn, gamma));
            gj[k] = (eu.j_hat - ed.j_hat) / (2.0 * h);
            gv[k] = (eu.nu2_hat - ed.nu2_hat) / (2.0 * h);
        }
        (gj, gv)
    }

    /// Sample one episode as an environment trajectory.
    pub fn sample_episode<R: Rng + ?Sized>(&self, policy: &TabularSoftmax, weight: f64, rng: &mut R) -> Trajectory {
        let f = policy.family();
        let mut tr = Trajectory {
            state_dim: self.n_states,
            action_dim: 1,
            states: Vec::with_capacity(self.horizon * self.n_states),
            actions: Vec::with_capacity(self.horizon),
            rewards: Vec::with_capacity(self.horizon),
            times: Vec::with_capacity(self.horizon),
            terminal_state: Vec::new(),
            weight,
            is_weight: 1.0,
            defaulted: false,
            value_start: 0.0,
            value_end: 0.0,
        };
        let mut s = self.initial;
        let mut x = self.one_hot(s);
        let mut eta = vec![0.0; self.n_actions];
        let mut a = [0.0];
        for step in 0..self.horizon {
            policy.eta(&x, &mut eta);
            f.sample(&eta, rng, &mut a);
            let outcomes = &self.transitions[s][a[0] as usize];
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = outcomes[outcomes.len() - 1];
            for o in outcomes {
                acc += o.1;
                if u < acc {
                    pick = *o;
                    break;
                }
            }
            tr.states.extend_from_slice(&x);
            tr.actions.push(a[0]);
            tr.rewards.push(pick.2);
            tr.times.push(step as f64);
            tr.value_end += pick.2;
            match pick.0 {
                Some(ns) => {
                    x[s] = 0.0;
                    x[ns] = 1.0;
                    s = ns;
                }
                None => {
                    tr.defaulted = true;
                    break;
                }
            }
        }
        tr.terminal_state = x;
        tr
    }

    /// Batch of `n` episodes with naive weights `1/n`.
    pub fn sample_batch(&self, policy: &TabularSoftmax, n: usize, seed: u64) -> Vec<Trajectory> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.sample_episode(policy, 1.0 / n as f64, &mut rng)).collect()
    }

    /// Best `Ĵ` over stationary policies on a grid of action probabilities.
    pub fn best_return_on_grid(&self, gamma: f64, points: usize) -> f64 {
        assert_eq!((self.n_states, self.n_actions), (2, 2), "grid search covers 2×2 models");
        let mut best = f64::NEG_INFINITY;
        for i in 0..=points {
            for j in 0..=points {
                let (p, q) = (i as f64 / points as f64, j as f64 / points as f64);
                let e = self.exact_probs(&[vec![p, 1.0 - p], vec![q, 1.0 - q]], gamma);
                best = best.max(e.j_hat);
            }
        }
        best
    }
}
