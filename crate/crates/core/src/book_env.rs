//! The hedging book as an episodic decision process.
//!
//! The book is short nothing and long the CVA of the forward (a negative
//! asset), and may hold CDS contracts (each with its collateral account),
//! USD cash and EUR cash. Every step the agent chooses target sensitivities,
//! the book trades to them, accrues interest, moves to the next market node
//! and settles default if it happened in between. The reward is the change
//! in book value, so undiscounted returns telescope to the terminal value.

use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{MarketParams, Scenario};
use crate::error::{invalid, CoreError, Result};
use crate::market_sim::{Batch, EpisodePath, TimeGrid};
use crate::pricing::pde::{CvaPde, PdeSettings};
use crate::pricing::{exposure_unchecked, Bumps, CdsSlice, CdsSpec, CvaSlice, CVA_QUADRATURE_NODES};

/// Observation handed to policies; see [`StateVector::len_for`] for layout.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(pub Vec<f64>);

impl StateVector {
    pub const DAYS: usize = 0;
    pub const LAMBDA: usize = 1;
    pub const PHI: usize = 2;
    pub const HEDGE_DLAM: usize = 3;
    pub const HEDGE_DPHI: usize = 4;
    pub const CVA: usize = 5;
    pub const CVA_DLAM: usize = 6;
    pub const CVA_DPHI: usize = 7;

    /// `8 + 2·n_cds`: days to maturity, λ, φ, hedge dλ, hedge dφ, CVA, CVA dλ,
    /// CVA dφ, then (value, dλ) per CDS.
    pub fn len_for(n_cds: usize) -> usize {
        8 + 2 * n_cds
    }

    pub fn n_cds(&self) -> usize {
        (self.0.len() - 8) / 2
    }

    pub fn cds_value(&self, m: usize) -> f64 {
        self.0[8 + 2 * m]
    }

    pub fn cds_dlam(&self, m: usize) -> f64 {
        self.0[9 + 2 * m]
    }

    pub fn time_to_maturity_years(&self) -> f64 {
        self.0[Self::DAYS] / 365.0
    }
}

/// Target hedge sensitivities: one λ-sensitivity per CDS, then the φ one.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionVector(pub Vec<f64>);

impl ActionVector {
    pub fn zeros(n_cds: usize) -> ActionVector {
        ActionVector(vec![0.0; n_cds + 1])
    }
}

/// Holdings of the book between decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct BookState {
    pub n_cds: Vec<f64>,
    pub n_usd_cash: f64,
    pub n_eur_cash: f64,
    pub collateral: Vec<f64>,
    pub step_index: usize,
    pub terminated: bool,
    /// Default has been settled; CVA and CDS are gone.
    pub defaulted: bool,
}

/// Market quantities of one CDS at a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdsMark {
    pub mid: f64,
    pub semi_spread: f64,
    pub dlam: f64,
}

/// Market state and prices at one grid node, as if the counterparty is alive.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeMarket {
    pub t: f64,
    pub phi: f64,
    pub lam: f64,
    pub exposure: f64,
    pub cva: f64,
    pub cva_dphi: f64,
    pub cva_dlam: f64,
    pub cds: Vec<CdsMark>,
}

/// A priced episode path, truncated at the settlement node.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketTape {
    pub nodes: Vec<NodeMarket>,
    pub tau: f64,
    pub defaulted: bool,
    pub is_weight: f64,
}

impl MarketTape {
    /// Episode length ε.
    pub fn n_steps(&self) -> usize {
        self.nodes.len() - 1
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub book: BookState,
    pub state: StateVector,
    pub reward: f64,
    pub done: bool,
    /// Trading costs paid at the rebalance (already in `reward`).
    pub trading_cost: f64,
    /// Value jump from settling default at the node, or 0.
    pub settlement: f64,
}

/// Something that maps observations to hedge targets.
pub trait HedgingPolicy: Sync {
    fn action(&self, state: &StateVector, rng: &mut ChaCha8Rng) -> Result<ActionVector>;
}

/// One rollout: decision states, actions and rewards of ε steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub state_dim: usize,
    pub action_dim: usize,
    /// `ε × state_dim`, the states at which actions were taken.
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub times: Vec<f64>,
    pub terminal_state: Vec<f64>,
    /// Weight of the episode in batch estimators.
    pub weight: f64,
    pub is_weight: f64,
    pub defaulted: bool,
    pub value_start: f64,
    pub value_end: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn action(&self, i: usize) -> &[f64] {
        &self.actions[i * self.action_dim..(i + 1) * self.action_dim]
    }

    /// Write one row per step: t, features, action, reward, done.
    pub fn write_csv<W: Write>(&self, episode: usize, out: &mut W, header: bool) -> Result<()> {
        if header {
            let n_cds = (self.state_dim - 8) / 2;
            let mut cols: Vec<String> = ["episode", "t", "days", "lambda", "phi", "hedge_dlam", "hedge_dphi", "cva", "cva_dlam", "cva_dphi"]
                .iter()
                .map(|s| s.to_string())
                .collect();
            for m in 0..n_cds {
                cols.push(format!("cds{m}_value"));
                cols.push(format!("cds{m}_dlam"));
            }
            for m in 0..n_cds {
                cols.push(format!("action_dlam{m}"));
            }
            cols.push("action_dphi".into());
            cols.push("reward".into());
            cols.push("done".into());
            writeln!(out, "{}", cols.join(","))?;
        }
        for i in 0..self.len() {
            let mut row = vec![episode.to_string(), self.times[i].to_string()];
            row.extend(self.state(i).iter().map(|v| v.to_string()));
            row.extend(self.action(i).iter().map(|v| v.to_string()));
            row.push(self.rewards[i].to_string());
            row.push(u8::from(i + 1 == self.len()).to_string());
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

enum CvaEngine {
    Quadrature(Vec<CvaSlice>),
    Pde(CvaPde),
}

/// Scenario-specific pricing caches and the step logic.
pub struct BookEnv {
    pub scenario: Scenario,
    pub grid: Arc<TimeGrid>,
    pub cds: Vec<CdsSpec>,
    cds_slices: Vec<Vec<CdsSlice>>,
    cva: CvaEngine,
    pub bumps: Bumps,
}

impl BookEnv {
    /// Build the environment, pre-computing pricers at every grid node.
    ///
    /// Zero ℚ-correlation uses the quadrature pricer; otherwise the PDE is
    /// solved once with slices at the grid times.
    pub fn new(scenario: &Scenario) -> Result<BookEnv> {
        scenario.validate()?;
        let params = &scenario.market;
        let grid = Arc::new(TimeGrid::from_spec(&scenario.calendar)?);
        if grid.horizon() >= params.forward.maturity {
            return invalid("trading horizon must end before the forward matures");
        }
        let cds = scenario
            .hedges
            .cds_maturities
            .iter()
            .map(|&m| {
                if m <= grid.horizon() {
                    return invalid(format!("CDS maturity {m} inside the trading horizon"));
                }
                CdsSpec::at_par(m, params)
            })
            .collect::<Result<Vec<_>>>()?;
        let times = grid.times();
        let cds_slices = times
            .iter()
            .map(|&t| cds.iter().map(|c| CdsSlice::new(c, t, params)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let cva = if params.correlation.risk_neutral == 0.0 {
            CvaEngine::Quadrature(
                times
                    .iter()
                    .map(|&t| CvaSlice::new(t, params, CVA_QUADRATURE_NODES))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            CvaEngine::Pde(CvaPde::solve(params, times, PdeSettings::default())?)
        };
        Ok(BookEnv {
            scenario: scenario.clone(),
            grid,
            cds,
            cds_slices,
            cva,
            bumps: Bumps::default(),
        })
    }

    pub fn params(&self) -> &MarketParams {
        &self.scenario.market
    }

    pub fn n_cds(&self) -> usize {
        self.cds.len()
    }

    pub fn state_dim(&self) -> usize {
        StateVector::len_for(self.n_cds())
    }

    pub fn action_dim(&self) -> usize {
        self.n_cds() + 1
    }

    /// CVA value and `(∂φ, ∂λ)` at grid node `i`.
    pub fn cva_at(&self, i: usize, phi: f64, lam: f64) -> Result<(f64, f64, f64)> {
        match &self.cva {
            CvaEngine::Quadrature(s) => Ok(s[i].value_and_sensitivities(phi, lam, self.bumps)),
            CvaEngine::Pde(p) => {
                let v = p.value(i, phi, lam)?;
                let (dp, dl) = crate::pricing::sensitivities(|a, b| p.value(i, a, b), phi, lam, self.bumps)?;
                Ok((v, dp, dl))
            }
        }
    }

    fn node(&self, path: &EpisodePath, i: usize) -> Result<NodeMarket> {
        let t = self.grid.times()[i];
        let (phi, lam) = (path.phi[i], path.lam[i]);
        let (cva, cva_dphi, cva_dlam) = self.cva_at(i, phi, lam)?;
        let cds = self.cds_slices[i]
            .iter()
            .map(|s| {
                let (q, d) = s.quote_and_delta(lam, self.bumps.lam_abs);
                CdsMark {
                    mid: q.mid,
                    semi_spread: q.semi_spread,
                    dlam: d,
                }
            })
            .collect();
        Ok(NodeMarket {
            t,
            phi,
            lam,
            exposure: exposure_unchecked(self.params(), phi, t),
            cva,
            cva_dphi,
            cva_dlam,
            cds,
        })
    }

    /// Price a path up to its settlement node `ε`.
    pub fn market_tape(&self, path: &EpisodePath) -> Result<MarketTape> {
        if path.grid.as_ref() != self.grid.as_ref() {
            return invalid("path simulated on a different grid");
        }
        let times = self.grid.times();
        let end = if path.tau <= self.grid.horizon() {
            times.partition_point(|&t| t < path.tau).max(1)
        } else {
            self.grid.n_steps()
        };
        let nodes = (0..=end).map(|i| self.node(path, i)).collect::<Result<Vec<_>>>()?;
        Ok(MarketTape {
            nodes,
            tau: path.tau,
            defaulted: path.defaulted,
            is_weight: path.is_weight,
        })
    }

    /// Book value at a node with the book's current holdings.
    pub fn book_value(&self, book: &BookState, node: &NodeMarket) -> f64 {
        let mut v = book.n_eur_cash + book.n_usd_cash * node.phi;
        if !book.defaulted {
            v += node.cva;
            for (m, c) in node.cds.iter().enumerate() {
                v += book.n_cds[m] * c.mid + book.collateral[m];
            }
        }
        v
    }

    fn features(&self, book: &BookState, node: &NodeMarket) -> StateVector {
        let mut f = Vec::with_capacity(self.state_dim());
        f.push((self.params().forward.maturity - node.t) * 365.0);
        f.push(node.lam);
        f.push(node.phi);
        let alive = !book.defaulted;
        let hedge_dlam: f64 = if alive {
            node.cds.iter().zip(&book.n_cds).map(|(c, n)| n * c.dlam).sum()
        } else {
            0.0
        };
        f.push(hedge_dlam);
        f.push(book.n_usd_cash);
        if alive {
            f.extend([node.cva, node.cva_dlam, node.cva_dphi]);
            for c in &node.cds {
                f.extend([c.mid, c.dlam]);
            }
        } else {
            f.extend(std::iter::repeat_n(0.0, 3 + 2 * self.n_cds()));
        }
        StateVector(f)
    }

    /// Empty hedge book whose cash offsets the CVA, so the initial value is 0.
    pub fn reset(&self, tape: &MarketTape) -> (BookState, StateVector) {
        let n = self.n_cds();
        let book = BookState {
            n_cds: vec![0.0; n],
            n_usd_cash: 0.0,
            n_eur_cash: -tape.nodes[0].cva,
            collateral: vec![0.0; n],
            step_index: 0,
            terminated: false,
            defaulted: false,
        };
        let s = self.features(&book, &tape.nodes[0]);
        (book, s)
    }

    /// Notionals implied by target sensitivities at a node.
    pub fn target_notionals(&self, action: &ActionVector, node: &NodeMarket) -> Result<(Vec<f64>, f64)> {
        if action.0.len() != self.action_dim() {
            return invalid(format!("action has {} entries, expected {}", action.0.len(), self.action_dim()));
        }
        if action.0.iter().any(|a| !a.is_finite()) {
            return invalid("non-finite action");
        }
        let n_cds = node
            .cds
            .iter()
            .zip(&action.0)
            .map(|(c, a)| {
                if c.dlam.abs() < 1e-14 {
                    Err(CoreError::DegenerateHedge("CDS has no λ-sensitivity".into()))
                } else {
                    Ok(a / c.dlam)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((n_cds, action.0[self.n_cds()]))
    }

    /// Value change if the counterparty defaulted at `node` with CDS holdings
    /// `n_cds`: CVA and CDS values drop to zero and pay their default legs.
    pub fn default_jump(&self, node: &NodeMarket, n_cds: &[f64]) -> f64 {
        let lgd = 1.0 - self.params().forward.recovery;
        let mut j = -lgd * node.exposure.max(0.0) - node.cva;
        for (c, n) in node.cds.iter().zip(n_cds) {
            j += n * (-lgd - c.mid);
        }
        j
    }

    pub fn step(&self, book: &BookState, action: &ActionVector, tape: &MarketTape) -> Result<StepOutcome> {
        if book.terminated {
            return Err(CoreError::State("step after termination".into()));
        }
        let i = book.step_index;
        if i >= tape.n_steps() {
            return Err(CoreError::State(format!("step {i} beyond the tape's {} steps", tape.n_steps())));
        }
        let (node, next) = (&tape.nodes[i], &tape.nodes[i + 1]);
        let p = self.params();
        let v_before = self.book_value(book, node);
        let (n_new, usd_new) = self.target_notionals(action, node)?;

        let mut b = book.clone();
        let mut cost = 0.0;
        for (m, c) in node.cds.iter().enumerate() {
            let dn = n_new[m] - b.n_cds[m];
            cost += c.semi_spread * dn.abs() + p.impact * dn * dn;
            b.n_eur_cash -= dn * c.mid;
            let coll = -n_new[m] * c.mid;
            b.n_eur_cash -= coll - b.collateral[m];
            b.collateral[m] = coll;
            b.n_cds[m] = n_new[m];
        }
        let du = usd_new - b.n_usd_cash;
        cost += p.fx.transaction_cost * du.abs() + p.impact * du * du;
        b.n_eur_cash -= du * node.phi;
        b.n_usd_cash = usd_new;

        let dt = next.t - node.t;
        let usd_interest = p.rates.usd * b.n_usd_cash * dt;
        cost += p.fx.transaction_cost * usd_interest.abs();
        b.n_eur_cash += b.n_eur_cash * p.rates.eur * dt + usd_interest * next.phi - cost;
        for c in b.collateral.iter_mut() {
            *c += *c * p.rates.collateral * dt;
        }
        for (m, spec) in self.cds.iter().enumerate() {
            b.n_eur_cash += b.n_cds[m] * spec.coupons_between(node.t, next.t, tape.tau);
        }

        b.step_index = i + 1;
        let mut settlement = 0.0;
        if tape.tau <= next.t {
            let alive_value = self.book_value(&b, next);
            let lgd = 1.0 - p.forward.recovery;
            b.n_eur_cash -= lgd * next.exposure.max(0.0);
            for m in 0..self.n_cds() {
                b.n_eur_cash += -lgd * b.n_cds[m] + b.collateral[m];
                b.n_cds[m] = 0.0;
                b.collateral[m] = 0.0;
            }
            b.defaulted = true;
            b.terminated = true;
            settlement = self.book_value(&b, next) - alive_value;
        }
        if b.step_index == self.grid.n_steps() {
            b.terminated = true;
        }
        let reward = self.book_value(&b, next) - v_before;
        let state = self.features(&b, next);
        Ok(StepOutcome {
            done: b.terminated,
            book: b,
            state,
            reward,
            trading_cost: cost,
            settlement,
        })
    }

    /// Roll out a policy on one path; `weight` is the estimator weight.
    pub fn run_episode<P: HedgingPolicy + ?Sized>(
        &self,
        policy: &P,
        path: &EpisodePath,
        weight: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Trajectory> {
        let tape = self.market_tape(path)?;
        self.run_tape(policy, &tape, weight, rng)
    }

    pub fn run_tape<P: HedgingPolicy + ?Sized>(
        &self,
        policy: &P,
        tape: &MarketTape,
        weight: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Trajectory> {
        let n = tape.n_steps();
        let (sd, ad) = (self.state_dim(), self.action_dim());
        let (mut book, mut state) = self.reset(tape);
        let value_start = self.book_value(&book, &tape.nodes[0]);
        let mut tr = Trajectory {
            state_dim: sd,
            action_dim: ad,
            states: Vec::with_capacity(n * sd),
            actions: Vec::with_capacity(n * ad),
            rewards: Vec::with_capacity(n),
            times: Vec::with_capacity(n),
            terminal_state: Vec::new(),
            weight,
            is_weight: tape.is_weight,
            defaulted: tape.defaulted,
            value_start,
            value_end: value_start,
        };
        loop {
            let a = policy.action(&state, rng)?;
            let out = self.step(&book, &a, tape)?;
            tr.states.extend_from_slice(&state.0);
            tr.actions.extend_from_slice(&a.0);
            tr.rewards.push(out.reward);
            tr.times.push(tape.nodes[book.step_index].t);
            book = out.book;
            state = out.state;
            if out.done {
                break;
            }
        }
        tr.value_end = self.book_value(&book, &tape.nodes[book.step_index]);
        tr.terminal_state = state.0;
        Ok(tr)
    }

    /// Roll out a policy on every path of a batch. Episode `e` draws policy
    /// noise from RNG stream `e` of `seed`, so results do not depend on
    /// thread scheduling.
    pub fn rollout<P: HedgingPolicy + ?Sized>(&self, policy: &P, batch: &Batch, seed: u64) -> Result<Vec<Trajectory>> {
        let w = batch.estimator_weights();
        batch
            .paths
            .par_iter()
            .enumerate()
            .map(|(e, path)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(e as u64);
                self.run_episode(policy, path, w[e], &mut rng)
            })
            .collect()
    }
}

/// Policy that never hedges.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroAction {
    pub n_cds: usize,
}

impl HedgingPolicy for ZeroAction {
    fn action(&self, _state: &StateVector, _rng: &mut ChaCha8Rng) -> Result<ActionVector> {
        Ok(ActionVector::zeros(self.n_cds))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn env() -> BookEnv {
        let mut s = presets::load("default-500bp-2cds").unwrap();
        s.calendar.trading_days = 1;
        BookEnv::new(&s).unwrap()
    }

    fn node() -> NodeMarket {
        NodeMarket {
            t: 0.0,
            phi: 1.1,
            lam: 0.05,
            exposure: 0.04,
            cva: -0.012,
            cva_dphi: -0.03,
            cva_dlam: -0.2,
            cds: vec![
                CdsMark {
                    mid: 0.001,
                    semi_spread: 1e-4,
                    dlam: -0.9,
                },
                CdsMark {
                    mid: -0.002,
                    semi_spread: 2e-4,
                    dlam: -4.0,
                },
            ],
        }
    }

    #[test]
    fn dimensions_follow_the_hedge_set() {
        let e = env();
        assert_eq!(e.n_cds(), 2);
        assert_eq!(e.state_dim(), StateVector::len_for(2));
        assert_eq!(e.action_dim(), 3);
        assert_eq!(StateVector(vec![0.0; 12]).n_cds(), 2);
    }

    #[test]
    fn target_notionals_invert_cds_sensitivities() {
        let e = env();
        let (n, usd) = e.target_notionals(&ActionVector(vec![0.45, -2.0, 0.7]), &node()).unwrap();
        assert!((n[0] + 0.5).abs() < 1e-15 && (n[1] - 0.5).abs() < 1e-15);
        assert_eq!(usd, 0.7);
        assert!(e.target_notionals(&ActionVector(vec![0.0; 2]), &node()).is_err());
        assert!(e.target_notionals(&ActionVector(vec![f64::NAN, 0.0, 0.0]), &node()).is_err());
        let mut flat = node();
        flat.cds[0].dlam = 0.0;
        let err = e.target_notionals(&ActionVector(vec![1.0, 0.0, 0.0]), &flat);
        assert!(matches!(err, Err(CoreError::DegenerateHedge(_))));
    }

    #[test]
    fn default_jump_replaces_marks_by_default_legs() {
        let e = env();
        let lgd = 1.0 - e.params().forward.recovery;
        let nd = node();
        let unhedged = e.default_jump(&nd, &[0.0, 0.0]);
        assert!((unhedged - (-lgd * 0.04 + 0.012)).abs() < 1e-15);
        let hedged = e.default_jump(&nd, &[0.1, 0.0]);
        assert!((hedged - unhedged - 0.1 * (-lgd - 0.001)).abs() < 1e-15);
        let mut otm = nd.clone();
        otm.exposure = -0.05;
        assert!((e.default_jump(&otm, &[0.0, 0.0]) - 0.012).abs() < 1e-15);
    }

    #[test]
    fn features_zero_out_after_default() {
        let e = env();
        let mut book = BookState {
            n_cds: vec![0.5, -0.25],
            n_usd_cash: 0.3,
            n_eur_cash: 0.0,
            collateral: vec![0.0; 2],
            step_index: 0,
            terminated: false,
            defaulted: false,
        };
        let s = e.features(&book, &node());
        assert!((s.0[StateVector::HEDGE_DLAM] - (0.5 * -0.9 + -0.25 * -4.0)).abs() < 1e-15);
        assert_eq!(s.0[StateVector::HEDGE_DPHI], 0.3);
        assert_eq!(s.cds_value(1), -0.002);
        assert_eq!(s.cds_dlam(0), -0.9);
        book.defaulted = true;
        let s = e.features(&book, &node());
        assert!(s.0[StateVector::HEDGE_DLAM..].iter().skip(2).all(|v| *v == 0.0));
        assert_eq!(s.0[StateVector::PHI], 1.1);
    }
}
