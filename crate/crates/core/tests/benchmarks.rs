use approx::assert_relative_eq;
use cvahedge_core::benchmarks::*;
use cvahedge_core::book_env::*;
use cvahedge_core::market_sim::{build_batch, SamplingMode};
use cvahedge_core::pricing::{cva_quadrature, sensitivities, Bumps};
use cvahedge_core::{presets, CoreError, Scenario};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn short(name: &str, days: usize) -> Scenario {
    let mut s = presets::load(name).unwrap();
    s.calendar.trading_days = days;
    s
}

/// Unnormalized reward volatility with γ = 1 and equal episode weights.
fn nu2(trs: &[Trajectory]) -> f64 {
    let n = trs.len() as f64;
    let j: f64 = trs.iter().map(|t| t.rewards.iter().sum::<f64>() / t.len() as f64).sum::<f64>() / n;
    trs.iter()
        .map(|t| t.rewards.iter().map(|r| (r - j).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n
}

#[test]
fn parse_and_label() {
    for k in [
        BenchmarkKind::DeltaHedge,
        BenchmarkKind::JumpHedge,
        BenchmarkKind::TwoCdsBaseline,
        BenchmarkKind::ZeroAction,
    ] {
        assert_eq!(k.label().parse::<BenchmarkKind>().unwrap(), k);
    }
    assert!("gamma".parse::<BenchmarkKind>().is_err());
}

#[test]
fn delta_hedge_at_inception_negates_cva_sensitivities() {
    let s = presets::load("nodefault-100bp").unwrap();
    let env = BookEnv::new(&s).unwrap();
    let batch = build_batch(env.params(), &env.grid, 1, 0, SamplingMode::Naive, 0).unwrap();
    let tape = env.market_tape(&batch.paths[0]).unwrap();
    let (_, state) = env.reset(&tape);
    let bench = Benchmark::new(BenchmarkKind::DeltaHedge, &env).unwrap();
    let a = bench.act(&state).unwrap();
    let p = env.params();
    let (dphi, dlam) =
        sensitivities(|x, y| cva_quadrature(x, y, 0.0, p), 1.0, p.intensity.initial, Bumps::default()).unwrap();
    assert_relative_eq!(a.0[0], -dlam, max_relative = 1e-6);
    assert_relative_eq!(a.0[1], -dphi, max_relative = 1e-6);

    let (n, usd) = env.target_notionals(&a, &tape.nodes[0]).unwrap();
    assert_relative_eq!(n[0] * tape.nodes[0].cds[0].dlam, -tape.nodes[0].cva_dlam, max_relative = 1e-10);
    assert_relative_eq!(usd, -tape.nodes[0].cva_dphi, max_relative = 1e-10);
    // the hedger buys protection
    assert!(n[0] < 0.0);
}

#[test]
fn insensitive_cva_needs_no_hedge() {
    let env = BookEnv::new(&presets::load("nodefault-100bp").unwrap()).unwrap();
    let ctx = HedgeContext::from_env(&env);
    let mut s = StateVector(vec![0.0; env.state_dim()]);
    s.0[StateVector::DAYS] = 1000.0;
    s.0[StateVector::PHI] = 0.5;
    s.0[9] = -2.0;
    assert_eq!(delta_hedge_action(&s, &ctx).unwrap().0, vec![0.0, 0.0]);
    // out of the money with no CVA: nothing to lose at default
    assert!(ctx.exposure(&s) < 0.0);
    assert_eq!(jump_hedge_action(&s, &ctx).unwrap().0, vec![0.0, 0.0]);
    s.0[9] = 0.0;
    assert!(matches!(delta_hedge_action(&s, &ctx), Err(CoreError::DegenerateHedge(_))));
}

#[test]
fn delta_hedge_removes_most_reward_volatility() {
    let s = short("nodefault-100bp", 30).costless();
    let env = BookEnv::new(&s).unwrap();
    let batch = build_batch(env.params(), &env.grid, 300, 0, SamplingMode::Naive, 14).unwrap();
    let zero = env.rollout(&ZeroAction { n_cds: 1 }, &batch, 0).unwrap();
    let delta = env.rollout(&Benchmark::new(BenchmarkKind::DeltaHedge, &env).unwrap(), &batch, 0).unwrap();
    let (a, b) = (nu2(&zero), nu2(&delta));
    assert!(b <= 0.1 * a, "delta {b} vs zero {a}");
}

#[test]
fn jump_hedge_neutralises_immediate_default() {
    let s = short("default-500bp", 20).costless();
    let env = BookEnv::new(&s).unwrap();
    let ctx = HedgeContext::from_env(&env);
    let batch = build_batch(env.params(), &env.grid, 20, 20, SamplingMode::Importance, 3).unwrap();
    let bench = Benchmark::new(BenchmarkKind::JumpHedge, &env).unwrap();
    let delta = Benchmark::new(BenchmarkKind::DeltaHedge, &env).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut differs = false;
    let (mut hedged, mut open) = (0.0, 0.0);
    for path in &batch.paths {
        let tape = env.market_tape(path).unwrap();
        let tr = env.run_tape(&bench, &tape, 1.0, &mut rng).unwrap();
        let zero = env.run_tape(&ZeroAction { n_cds: 1 }, &tape, 1.0, &mut rng).unwrap();
        for i in 0..tape.n_steps() {
            let node = &tape.nodes[i];
            let state = StateVector(tr.state(i).to_vec());
            let a = bench.act(&state).unwrap();
            let (n, _) = env.target_notionals(&a, node).unwrap();
            assert!(env.default_jump(node, &n).abs() < 1e-12);
            assert!(ctx.cva_default_jump(&state) + n[0] * ctx.cds_default_jump(&state, 0) < 1e-12);
            differs |= (delta.act(&state).unwrap().0[0] - a.0[0]).abs() > 1e-6;
        }
        // the realized default step still carries the market move since the last rebalance
        hedged += tr.rewards.last().unwrap().abs();
        open += zero.rewards.last().unwrap().abs();
    }
    assert!(hedged < 0.3 * open, "{hedged} vs {open}");
    assert!(differs);
}

#[test]
fn jump_hedge_default_step_in_frozen_market_is_carry_only() {
    let mut s = short("default-500bp", 10).costless();
    let m = &mut s.market;
    m.fx.real_world.volatility = 0.0;
    m.fx.real_world.drift = 0.0;
    m.intensity.real_world.volatility = 0.0;
    m.intensity.real_world.long_run_mean = m.intensity.initial;
    let env = BookEnv::new(&s).unwrap();
    let bench = Benchmark::new(BenchmarkKind::JumpHedge, &env).unwrap();
    let batch = build_batch(env.params(), &env.grid, 10, 10, SamplingMode::Importance, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for path in &batch.paths {
        let tape = env.market_tape(path).unwrap();
        let tr = env.run_tape(&bench, &tape, 1.0, &mut rng).unwrap();
        let zero = env.run_tape(&ZeroAction { n_cds: 1 }, &tape, 1.0, &mut rng).unwrap();
        let (r, r0) = (*tr.rewards.last().unwrap(), *zero.rewards.last().unwrap());
        let dt = tape.nodes[tape.n_steps()].t - tape.nodes[tape.n_steps() - 1].t;
        // what is left is time decay over the step, linear in its length
        assert!(r.abs() <= 2.0 * r0.abs() * dt, "{r} vs {r0} over {dt}");
    }
}

#[test]
fn baseline_solves_both_equations() {
    let s = short("default-500bp-2cds", 20).costless();
    let env = BookEnv::new(&s).unwrap();
    let ctx = HedgeContext::from_env(&env);
    let bench = Benchmark::new(BenchmarkKind::TwoCdsBaseline, &env).unwrap();
    let batch = build_batch(env.params(), &env.grid, 20, 10, SamplingMode::Importance, 8).unwrap();
    let trs = env.rollout(&bench, &batch, 0).unwrap();
    let cva0 = trs[0].state(0)[StateVector::CVA];
    for (path, tr) in batch.paths.iter().zip(&trs) {
        let tape = env.market_tape(path).unwrap();
        for i in 0..tr.len() {
            let state = StateVector(tr.state(i).to_vec());
            let a = bench.act(&state).unwrap();
            let (d1, d2) = (state.cds_dlam(0), state.cds_dlam(1));
            let (n1, n2) = (a.0[0] / d1, a.0[1] / d2);
            let r_lam = n1 * d1 + n2 * d2 + state.0[StateVector::CVA_DLAM];
            let r_jump = n1 * ctx.cds_default_jump(&state, 0)
                + n2 * ctx.cds_default_jump(&state, 1)
                + ctx.cva_default_jump(&state);
            assert!(r_lam.abs() < 1e-12, "{r_lam}");
            assert!(r_jump.abs() < 1e-12, "{r_jump}");
            let (n, _) = env.target_notionals(&a, &tape.nodes[i]).unwrap();
            assert!(env.default_jump(&tape.nodes[i], &n).abs() <= 1e-3 * cva0.abs());
        }
    }
}

#[test]
fn baseline_requires_distinct_maturities() {
    let mut s = short("default-500bp-2cds", 5);
    s.hedges.cds_maturities = vec![5.0, 5.0];
    let env = BookEnv::new(&s).unwrap();
    assert!(matches!(
        Benchmark::new(BenchmarkKind::TwoCdsBaseline, &env),
        Err(CoreError::SingularHedge(_))
    ));
    let ctx = HedgeContext::from_env(&env);
    let batch = build_batch(env.params(), &env.grid, 1, 0, SamplingMode::Naive, 0).unwrap();
    let tape = env.market_tape(&batch.paths[0]).unwrap();
    let (_, state) = env.reset(&tape);
    assert!(matches!(two_cds_baseline_action(&state, &ctx), Err(CoreError::SingularHedge(_))));
    let one = BookEnv::new(&short("default-500bp", 5)).unwrap();
    assert!(Benchmark::new(BenchmarkKind::TwoCdsBaseline, &one).is_err());
}

#[test]
fn delta_hedge_uses_longest_cds_only() {
    let env = BookEnv::new(&short("default-500bp-2cds", 5)).unwrap();
    let batch = build_batch(env.params(), &env.grid, 1, 0, SamplingMode::Naive, 0).unwrap();
    let tape = env.market_tape(&batch.paths[0]).unwrap();
    let (_, state) = env.reset(&tape);
    let a = Benchmark::new(BenchmarkKind::DeltaHedge, &env).unwrap().act(&state).unwrap();
    assert_eq!(env.cds[1].maturity, 5.0);
    assert_eq!(a.0[0], 0.0);
    assert_eq!(a.0[1], -state.0[StateVector::CVA_DLAM]);
}

#[test]
fn benchmarks_ignore_policy_noise() {
    let env = BookEnv::new(&short("default-500bp-2cds", 5)).unwrap();
    let batch = build_batch(env.params(), &env.grid, 10, 3, SamplingMode::Importance, 0).unwrap();
    for kind in [BenchmarkKind::DeltaHedge, BenchmarkKind::JumpHedge, BenchmarkKind::TwoCdsBaseline] {
        let b = Benchmark::new(kind, &env).unwrap();
        let x = env.rollout(&b, &batch, 1).unwrap();
        let y = env.rollout(&b, &batch, 2).unwrap();
        assert_eq!(x, y);
    }
}
