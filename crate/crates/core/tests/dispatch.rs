use mipdqn::dispatch::{
    build_constraints, dispatch_step, evaluation_start, feasibility_check, max_residual, run_day, DispatchContext,
    DispatchSettings,
};
use mipdqn::env::{dg_cost, exchange_cost, Action, DgUnit, EnvState, RewardParams, SystemConfig};
use mipdqn::mip::{BackendKind, SolveOptions};
use mipdqn::neural::DenseNet;
use mipdqn::profiles::{synthesize, DayProfile, SeasonParams};
use mipdqn::rl::{denormalize_action, normalize_action, train, FeatureSpec, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn state(load: f64, pv: f64, dg_prev: Vec<f64>, soc: Vec<f64>) -> EnvState {
    EnvState {
        t: 0,
        pv,
        load,
        price: 1.0,
        dg_prev,
        soc,
    }
}

/// Exact optima: these tests compare Q values at 1e-6.
fn settings() -> DispatchSettings {
    DispatchSettings {
        options: SolveOptions::default(),
        ..DispatchSettings::default()
    }
}

#[test]
fn windows_follow_ramp_and_soc_headroom() {
    let sys = SystemConfig::default();
    let s = state(150.0, 0.0, vec![10.0, 50.0, 100.0], vec![0.8]);
    let cs = build_constraints(&s, &sys).unwrap();
    assert_eq!(cs.windows[0], (10.0, 110.0));
    assert_eq!(cs.windows[3].1, 0.0);
}

#[test]
fn balanced_storage_only_system_is_feasible_at_rest() {
    let mut sys = SystemConfig::default();
    sys.dgs.clear();
    let s = state(80.0, 80.0, vec![], vec![0.5]);
    build_constraints(&s, &sys).unwrap();
    let idle = Action {
        p_dg: vec![],
        p_ess: vec![0.0],
    };
    assert!(feasibility_check(&idle, &s, &sys).is_empty());
}

#[test]
fn audit_reports_balance_shortfall_and_accepts_exact_bounds() {
    let sys = SystemConfig::default();
    let s = state(600.0, 0.0, vec![100.0, 200.0, 250.0], vec![0.5]);
    // Supply 550 + grid 30 leaves 20 kW uncovered.
    let short = Action {
        p_dg: vec![100.0, 200.0, 250.0],
        p_ess: vec![0.0],
    };
    let v = feasibility_check(&short, &s, &sys);
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].constraint, "power_balance");
    assert!((v[0].residual - 20.0).abs() <= 1e-9);
    let edge = Action {
        p_dg: vec![150.0, 300.0, 120.0],
        p_ess: vec![0.0],
    };
    assert!(feasibility_check(&edge, &s, &sys).is_empty(), "{:?}", feasibility_check(&edge, &s, &sys));
}

fn single_dg_system(grid_limit: f64) -> SystemConfig {
    SystemConfig {
        dgs: vec![DgUnit {
            a_cost: 0.0,
            b_cost: 1.0,
            c_cost: 0.0,
            p_min: 0.0,
            p_max: 100.0,
            ramp_up: 1000.0,
            ramp_down: 1000.0,
        }],
        esss: vec![],
        grid_limit,
        sell_coeff: 0.5,
        dt: 1.0,
        horizon: 24,
    }
}

/// Piecewise-linear interpolant of `−(a − 0.3)²` on knots every 0.1,
/// as a one-hidden-layer ReLU net over `[pv, load, dg_prev, a]`.
fn bowl_net() -> DenseNet {
    let f = |a: f64| -(a - 0.3f64).powi(2);
    let knots: Vec<f64> = (-9..=9).map(|k| k as f64 / 10.0).collect();
    let n_hidden = knots.len() + 1;
    let mut w1 = vec![0.0; n_hidden * 4];
    let mut b1 = vec![0.0; n_hidden];
    let mut w2 = vec![0.0; n_hidden];
    // Unit 0 carries a + 1 (always active on [−1, 1]).
    w1[3] = 1.0;
    b1[0] = 1.0;
    let slope = |lo: f64, hi: f64| (f(hi) - f(lo)) / (hi - lo);
    let s0 = slope(-1.0, knots[0]);
    w2[0] = s0;
    let mut prev = s0;
    let mut pts = vec![-1.0];
    pts.extend(&knots);
    pts.push(1.0);
    for (u, k) in knots.iter().enumerate() {
        let s = slope(pts[u + 1], pts[u + 2]);
        w1[(u + 1) * 4 + 3] = 1.0;
        b1[u + 1] = -k;
        w2[u + 1] = s - prev;
        prev = s;
    }
    let b2 = f(-1.0);
    let params: Vec<f64> = w1.into_iter().chain(w2).chain(b1).chain([b2]).collect();
    DenseNet::from_params(&[4, n_hidden, 1], params).unwrap()
}

#[test]
fn dispatch_finds_the_bowl_maximum() {
    let sys = single_dg_system(1000.0);
    let net = bowl_net();
    let spec = FeatureSpec::new(100.0, 100.0);
    let ctx = DispatchContext::new(&net, &spec, &sys, &settings()).unwrap();
    let s = state(40.0, 0.0, vec![50.0], vec![]);
    let r = dispatch_step(&ctx, &s).unwrap();
    assert!((r.action_norm[0] - 0.3).abs() <= 1e-6, "{:?}", r.action_norm);
    assert!((r.action.p_dg[0] - 65.0).abs() <= 1e-4);
}

#[test]
fn balance_equality_pins_the_action() {
    let sys = single_dg_system(0.0);
    let net = bowl_net();
    let spec = FeatureSpec::new(100.0, 100.0);
    let ctx = DispatchContext::new(&net, &spec, &sys, &settings()).unwrap();
    let s = state(75.0, 0.0, vec![50.0], vec![]);
    let r = dispatch_step(&ctx, &s).unwrap();
    assert!((r.action_norm[0] - 0.5).abs() <= 1e-9, "{:?}", r.action_norm);
    assert!(feasibility_check(&r.action, &s, &sys).is_empty());
}

fn quick_model(sys: &SystemConfig, days: &[DayProfile]) -> (DenseNet, FeatureSpec) {
    let cfg = TrainConfig {
        epochs: 40,
        batch_size: 64,
        hidden: vec![16, 16],
        updates_per_epoch: 8,
        ..TrainConfig::default()
    };
    let out = train(sys, days, &cfg, |_| {}).unwrap();
    (out.bundle.q_net, out.features)
}

#[test]
fn mip_action_dominates_random_feasible_actions() {
    let sys = SystemConfig::default();
    let days = synthesize(3, 40, &SeasonParams::default());
    let (net, spec) = quick_model(&sys, &days);
    let ctx = DispatchContext::new(&net, &spec, &sys, &settings()).unwrap();
    let s = evaluation_start(&days[35], &sys).unwrap();
    let r = dispatch_step(&ctx, &s).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cs = build_constraints(&s, &sys).unwrap();
    let feats = spec.featurize(&s, &sys);
    let mut checked = 0;
    while checked < 10_000 {
        // Sample DG1, DG2, ESS and grid; DG3 closes the balance.
        let p1 = rng.random_range(cs.windows[0].0..=cs.windows[0].1);
        let p2 = rng.random_range(cs.windows[1].0..=cs.windows[1].1);
        let pe = rng.random_range(cs.windows[3].0..=cs.windows[3].1);
        let grid = rng.random_range(-sys.grid_limit..=sys.grid_limit);
        let p3 = cs.net_load - p1 - p2 + pe - grid;
        if p3 < cs.windows[2].0 || p3 > cs.windows[2].1 {
            continue;
        }
        let a = Action {
            p_dg: vec![p1, p2, p3],
            p_ess: vec![pe],
        };
        let mut x = feats.clone();
        x.extend(normalize_action(&a, &sys));
        assert!(net.forward(&x).unwrap()[0] <= r.predicted_q + 1e-6);
        checked += 1;
    }
}

#[test]
fn trained_net_day_is_feasible_and_costs_recompute() {
    let sys = SystemConfig::default();
    let days = synthesize(5, 40, &SeasonParams::default());
    let (net, spec) = quick_model(&sys, &days);
    let ctx = DispatchContext::new(&net, &spec, &sys, &settings()).unwrap();
    let traj = run_day(&ctx, &days[30], &RewardParams::default()).unwrap();
    assert_eq!(traj.steps.len(), 24);
    let mut cost = 0.0;
    for st in &traj.steps {
        assert!(feasibility_check(&st.proposed, &st.state, &sys).is_empty());
        assert!(st.outcome.unbalance <= 1e-6);
        let e = &st.outcome.executed;
        let dg: f64 = sys.dgs.iter().zip(&e.p_dg).map(|(d, &p)| dg_cost(d, p).unwrap()).sum();
        cost += (dg + exchange_cost(st.outcome.grid_power, st.state.price, sys.sell_coeff)) * sys.dt;
    }
    assert!((cost - traj.total_cost()).abs() <= 1e-9 * cost.abs().max(1.0));
    assert!(traj.max_residual() <= 1e-6);
}

#[test]
fn zero_grid_capacity_still_balances() {
    let mut sys = SystemConfig::default();
    sys.grid_limit = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let spec = FeatureSpec::new(300.0, 800.0);
    let net = DenseNet::init_he(&[spec.dim(&sys) + sys.action_dim(), 16, 16, 1], 1.0, &mut rng).unwrap();
    let day = DayProfile {
        date: None,
        pv: vec![0.0; 24],
        load: vec![400.0; 24],
        price: vec![2.0; 24],
    };
    let ctx = DispatchContext::new(&net, &spec, &sys, &settings()).unwrap();
    let traj = run_day(&ctx, &day, &RewardParams::default()).unwrap();
    assert!(traj.total_unbalance() <= 1e-6);
    assert!(traj.steps.iter().all(|s| s.outcome.grid_power.abs() <= 1e-6));
}

#[test]
fn backends_pick_equally_good_actions() {
    if BackendKind::default_kind() != BackendKind::Highs {
        return;
    }
    let sys = SystemConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let spec = FeatureSpec::new(300.0, 800.0);
    let net = DenseNet::init_he(&[spec.dim(&sys) + sys.action_dim(), 8, 8, 1], 1.0, &mut rng).unwrap();
    let s = state(500.0, 50.0, vec![100.0, 200.0, 150.0], vec![0.5]);
    let q = |kind| {
        let st = DispatchSettings {
            backend: Some(kind),
            ..settings()
        };
        let ctx = DispatchContext::new(&net, &spec, &sys, &st).unwrap();
        dispatch_step(&ctx, &s).unwrap().predicted_q
    };
    assert!((q(BackendKind::Highs) - q(BackendKind::Reference)).abs() <= 1e-6);
}

#[test]
fn infeasible_state_names_the_balance() {
    let sys = SystemConfig::default();
    let s = state(5000.0, 0.0, vec![100.0, 200.0, 250.0], vec![0.5]);
    let err = build_constraints(&s, &sys).unwrap_err();
    assert!(err.to_string().contains("power_balance"), "{err}");
    let a = denormalize_action(&[0.0; 4], &sys).unwrap();
    assert!(max_residual(&a, &s, &sys) > 1000.0);
}
