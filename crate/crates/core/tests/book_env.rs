use approx::assert_relative_eq;
use cvahedge_core::benchmarks::{Benchmark, BenchmarkKind};
use cvahedge_core::book_env::*;
use cvahedge_core::market_sim::{build_batch, EpisodePath, SamplingMode, NO_DEFAULT};
use cvahedge_core::pricing::cva_quadrature;
use cvahedge_core::{presets, CoreError, IntensityMultiplier, Result, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Gaussian noise around zero at twice the CVA's own sensitivities.
struct RandomAction {
    n_cds: usize,
}

impl HedgingPolicy for RandomAction {
    fn action(&self, s: &StateVector, rng: &mut ChaCha8Rng) -> Result<ActionVector> {
        let mut a = ActionVector::zeros(self.n_cds);
        let scale_l = 2.0 * s.0[StateVector::CVA_DLAM].abs().max(1e-4);
        let scale_p = 2.0 * s.0[StateVector::CVA_DPHI].abs().max(1e-4);
        for m in 0..self.n_cds {
            a.0[m] = scale_l * rng.sample::<f64, _>(StandardNormal);
        }
        a.0[self.n_cds] = scale_p * rng.sample::<f64, _>(StandardNormal);
        Ok(a)
    }
}

fn short(name: &str, days: usize) -> Scenario {
    let mut s = presets::load(name).unwrap();
    s.calendar.trading_days = days;
    s
}

#[test]
fn reset_starts_flat_at_inception_cva() {
    let s = presets::load("nodefault-100bp").unwrap();
    let env = BookEnv::new(&s).unwrap();
    let batch = build_batch(env.params(), &env.grid, 1, 0, SamplingMode::Naive, 0).unwrap();
    let tape = env.market_tape(&batch.paths[0]).unwrap();
    let (book, state) = env.reset(&tape);
    assert_eq!(book.step_index, 0);
    assert!(!book.terminated);
    assert_eq!(state.0.len(), env.state_dim());
    assert_eq!(state.0[StateVector::HEDGE_DLAM], 0.0);
    assert_eq!(state.0[StateVector::HEDGE_DPHI], 0.0);
    assert_relative_eq!(state.0[StateVector::CVA], -3.34e-3, max_relative = 0.01);
    assert_relative_eq!(state.0[StateVector::DAYS], 5.0 * 365.0, max_relative = 1e-12);
    assert!(env.book_value(&book, &tape.nodes[0]).abs() < 1e-18);
}

#[test]
fn returns_telescope_on_random_actions() {
    for name in ["default-500bp", "default-500bp-2cds"] {
        let env = BookEnv::new(&presets::load(name).unwrap()).unwrap();
        let batch = build_batch(env.params(), &env.grid, 500, 100, SamplingMode::Importance, 4).unwrap();
        let policy = RandomAction { n_cds: env.n_cds() };
        let trs = env.rollout(&policy, &batch, 8).unwrap();
        assert_eq!(trs.iter().filter(|t| t.defaulted).count(), 100);
        for t in &trs {
            let ret: f64 = t.rewards.iter().sum();
            let change = t.value_end - t.value_start;
            let scale = t.rewards.iter().map(|r| r.abs()).sum::<f64>().max(change.abs());
            assert!((ret - change).abs() <= 1e-12 * scale, "{ret} vs {change}");
        }
    }
}

#[test]
fn episode_length_follows_default_time() {
    let s = short("default-500bp", 5);
    let env = BookEnv::new(&s).unwrap();
    let batch = build_batch(env.params(), &env.grid, 1, 0, SamplingMode::Naive, 1).unwrap();
    let mut path: EpisodePath = batch.paths[0].clone();
    let times = env.grid.times().to_vec();
    let policy = ZeroAction { n_cds: 1 };
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    path.tau = NO_DEFAULT;
    path.defaulted = false;
    let t = env.run_episode(&policy, &path, 1.0, &mut rng).unwrap();
    assert_eq!(t.len(), env.grid.n_steps());

    path.tau = 0.5 * times[1];
    path.defaulted = true;
    let t = env.run_episode(&policy, &path, 1.0, &mut rng).unwrap();
    assert_eq!(t.len(), 1);
    // unhedged book loses the exposure and the CVA unwinds
    let node = &env.market_tape(&path).unwrap().nodes[1];
    let lgd = 1.0 - env.params().forward.recovery;
    assert!(t.rewards[0] < 0.0 && node.exposure > 0.0);
    assert_relative_eq!(t.value_end, t.rewards[0], max_relative = 1e-12);
    let accrual = -env.market_tape(&path).unwrap().nodes[0].cva * env.params().rates.eur * times[1];
    let cva0 = env.market_tape(&path).unwrap().nodes[0].cva;
    assert_relative_eq!(t.rewards[0], -lgd * node.exposure - cva0 + accrual, max_relative = 1e-9);

    path.tau = times[3];
    let t = env.run_episode(&policy, &path, 1.0, &mut rng).unwrap();
    assert_eq!(t.len(), 3);
    assert_eq!(t.terminal_state[StateVector::CVA], 0.0);
}

#[test]
fn stepping_a_finished_episode_fails() {
    let env = BookEnv::new(&short("nodefault-100bp", 1)).unwrap();
    let batch = build_batch(env.params(), &env.grid, 1, 0, SamplingMode::Naive, 1).unwrap();
    let tape = env.market_tape(&batch.paths[0]).unwrap();
    let (mut book, _) = env.reset(&tape);
    let a = ActionVector::zeros(1);
    for _ in 0..tape.n_steps() {
        let out = env.step(&book, &a, &tape).unwrap();
        book = out.book;
    }
    assert!(book.terminated);
    assert!(matches!(env.step(&book, &a, &tape), Err(CoreError::State(_))));
    assert!(env.step(&BookState { terminated: false, ..book.clone() }, &ActionVector(vec![0.0]), &tape).is_err());
}

/// No volatility, no rates, flat deterministic intensity, no real-world default.
fn flat_market() -> Scenario {
    let mut s = short("nodefault-100bp", 10);
    let m = &mut s.market;
    m.fx.real_world.volatility = 0.0;
    m.fx.risk_neutral.volatility = 0.0;
    m.fx.real_world.drift = 0.0;
    m.fx.risk_neutral.drift = 0.0;
    m.rates.eur = 0.0;
    m.rates.usd = 0.0;
    m.rates.collateral = 0.0;
    m.correlation.real_world = 0.0;
    for c in [&mut m.intensity.real_world, &mut m.intensity.risk_neutral] {
        c.volatility = 0.0;
        c.long_run_mean = m.intensity.initial;
    }
    m.default_multiplier = IntensityMultiplier::Constant(0.0);
    s.costless()
}

#[test]
fn flat_market_rewards_are_cva_theta() {
    let s = flat_market();
    let env = BookEnv::new(&s).unwrap();
    let batch = build_batch(env.params(), &env.grid, 3, 0, SamplingMode::Naive, 2).unwrap();
    let trs = env.rollout(&ZeroAction { n_cds: 1 }, &batch, 0).unwrap();
    let f = &s.market.forward;
    let lam = s.market.intensity.initial;
    let e_plus = (1.0 * f.usd_notional - f.eur_notional).max(0.0);
    let cva = |t: f64| -(1.0 - f.recovery) * e_plus * (1.0 - (-lam * (f.maturity - t)).exp());
    let times = env.grid.times();
    for t in &trs {
        assert_eq!(t.len(), env.grid.n_steps());
        for (i, r) in t.rewards.iter().enumerate() {
            assert_relative_eq!(*r, cva(times[i + 1]) - cva(times[i]), max_relative = 1e-9);
            assert!(*r > 0.0);
        }
    }
}

#[test]
fn zero_action_return_is_cva_revaluation_plus_accrual() {
    let s = short("nodefault-100bp", 30).costless();
    let env = BookEnv::new(&s).unwrap();
    let p = env.params().clone();
    let batch = build_batch(&p, &env.grid, 20, 0, SamplingMode::Naive, 6).unwrap();
    let trs = env.rollout(&ZeroAction { n_cds: 1 }, &batch, 0).unwrap();
    let times = env.grid.times();
    for (path, tr) in batch.paths.iter().zip(&trs) {
        let n = env.grid.n_steps();
        let cva0 = cva_quadrature(path.phi[0], path.lam[0], 0.0, &p).unwrap();
        let cva_n = cva_quadrature(path.phi[n], path.lam[n], times[n], &p).unwrap();
        let mut cash = -cva0;
        for i in 0..n {
            cash *= 1.0 + p.rates.eur * (times[i + 1] - times[i]);
        }
        let ret: f64 = tr.rewards.iter().sum();
        assert_relative_eq!(ret, cva_n - cva0 + (cash + cva0), max_relative = 1e-10);
    }
}

/// Hand-written one-step PnL of fixed holdings: price moves, coupons and
/// interest, with collateral at `−N·mid` absorbing the CDS value.
fn step_pnl_oracle(env: &BookEnv, tape: &MarketTape, i: usize, n_cds: &[f64], n_usd: f64) -> f64 {
    let p = env.params();
    let (a, b) = (&tape.nodes[i], &tape.nodes[i + 1]);
    let dt = b.t - a.t;
    let mut pnl = b.cva - a.cva;
    for (m, n) in n_cds.iter().enumerate() {
        let coll = -n * a.cds[m].mid;
        pnl += n * (b.cds[m].mid - a.cds[m].mid) + coll * p.rates.collateral * dt;
        pnl += n * env.cds[m].coupons_between(a.t, b.t, tape.tau);
    }
    pnl += n_usd * (b.phi - a.phi) + p.rates.usd * n_usd * dt * b.phi;
    pnl
}

#[test]
#[allow(clippy::needless_range_loop)]
fn costless_rewards_match_hand_pnl() {
    let s = short("default-500bp-2cds", 70).costless();
    let env = BookEnv::new(&s).unwrap();
    let batch = build_batch(env.params(), &env.grid, 4, 0, SamplingMode::Naive, 12).unwrap();
    let p = env.params().clone();
    for path in &batch.paths {
        let tape = env.market_tape(path).unwrap();
        let (mut book, _) = env.reset(&tape);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..tape.n_steps() {
            let a = ActionVector(vec![
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
                rng.random_range(-1.0..1.0),
            ]);
            let (n_cds, n_usd) = env.target_notionals(&a, &tape.nodes[i]).unwrap();
            // EUR cash after trading earns interest too
            let cash_before = book.n_eur_cash;
            let out = env.step(&book, &a, &tape).unwrap();
            let mut traded_cash = cash_before;
            for m in 0..2 {
                let dn = n_cds[m] - book.n_cds[m];
                traded_cash -= dn * tape.nodes[i].cds[m].mid;
                traded_cash -= -n_cds[m] * tape.nodes[i].cds[m].mid - book.collateral[m];
            }
            traded_cash -= (n_usd - book.n_usd_cash) * tape.nodes[i].phi;
            let dt = tape.nodes[i + 1].t - tape.nodes[i].t;
            let want = step_pnl_oracle(&env, &tape, i, &n_cds, n_usd) + traded_cash * p.rates.eur * dt;
            if out.settlement == 0.0 {
                assert_relative_eq!(out.reward, want, max_relative = 1e-9, epsilon = 1e-15);
            }
            assert_eq!(out.trading_cost, 0.0);
            book = out.book;
            if out.done {
                break;
            }
        }
    }
}

#[test]
fn trading_costs_only_lower_rewards() {
    let s = short("default-500bp-2cds", 20);
    let costly = BookEnv::new(&s).unwrap();
    let free = BookEnv::new(&s.costless()).unwrap();
    let batch = build_batch(costly.params(), &costly.grid, 40, 10, SamplingMode::Importance, 5).unwrap();
    let policy = RandomAction { n_cds: 2 };
    let a = costly.rollout(&policy, &batch, 1).unwrap();
    let b = free.rollout(&policy, &batch, 1).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.actions, y.actions);
        for (rc, rf) in x.rewards.iter().zip(&y.rewards) {
            assert!(rc <= rf);
        }
    }
}

#[test]
fn cost_is_charged_as_stated() {
    let s = short("default-500bp", 3);
    let env = BookEnv::new(&s).unwrap();
    let free = BookEnv::new(&s.costless()).unwrap();
    let batch = build_batch(env.params(), &env.grid, 1, 0, SamplingMode::Naive, 5).unwrap();
    let tape = env.market_tape(&batch.paths[0]).unwrap();
    let tape_free = free.market_tape(&batch.paths[0]).unwrap();
    let (book, _) = env.reset(&tape);
    let a = ActionVector(vec![0.02, 0.7]);
    let out = env.step(&book, &a, &tape).unwrap();
    let out_free = free.step(&book, &a, &tape_free).unwrap();
    let p = env.params();
    let (n, usd) = env.target_notionals(&a, &tape.nodes[0]).unwrap();
    let dt = tape.nodes[1].t - tape.nodes[0].t;
    let want = tape.nodes[0].cds[0].semi_spread * n[0].abs()
        + p.fx.transaction_cost * (usd.abs() + (p.rates.usd * usd * dt).abs());
    assert_relative_eq!(out.trading_cost, want, max_relative = 1e-12);
    assert_relative_eq!(out_free.reward - out.reward, want, max_relative = 1e-9);
}

#[test]
fn zero_action_policies_agree() {
    let env = BookEnv::new(&short("default-500bp", 10)).unwrap();
    let batch = build_batch(env.params(), &env.grid, 30, 5, SamplingMode::Importance, 2).unwrap();
    let a = env.rollout(&ZeroAction { n_cds: 1 }, &batch, 0).unwrap();
    let bench = Benchmark::new(BenchmarkKind::ZeroAction, &env).unwrap();
    let b = env.rollout(&bench, &batch, 99).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.rewards, y.rewards);
        assert!(x.rewards.iter().all(|r| r.is_finite()));
    }
}

#[test]
fn rollout_weights_follow_the_batch() {
    let env = BookEnv::new(&short("raredefault-100bp", 5)).unwrap();
    let batch = build_batch(env.params(), &env.grid, 50, 5, SamplingMode::Importance, 2).unwrap();
    let trs = env.rollout(&ZeroAction { n_cds: 1 }, &batch, 0).unwrap();
    let w = batch.estimator_weights();
    for (t, w) in trs.iter().zip(&w) {
        assert_eq!(t.weight, *w);
    }
}

#[test]
fn trajectory_csv_has_one_row_per_step() {
    let env = BookEnv::new(&short("default-500bp-2cds", 1)).unwrap();
    let batch = build_batch(env.params(), &env.grid, 1, 0, SamplingMode::Naive, 0).unwrap();
    let trs = env.rollout(&ZeroAction { n_cds: 2 }, &batch, 0).unwrap();
    let mut out = Vec::new();
    trs[0].write_csv(0, &mut out, true).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + trs[0].len());
    let cols = lines[0].split(',').count();
    assert_eq!(cols, 2 + env.state_dim() + env.action_dim() + 2);
    assert!(lines.iter().skip(1).all(|l| l.split(',').count() == cols));
    assert!(lines.last().unwrap().ends_with(",1"));
}

#[test]
fn rejects_cds_maturing_inside_horizon() {
    let mut s = short("default-500bp", 90);
    s.hedges.cds_maturities = vec![0.1];
    assert!(BookEnv::new(&s).is_err());
}
