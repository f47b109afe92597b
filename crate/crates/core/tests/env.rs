use mipdqn::env::{reset, step, Action, InitSoc, RewardParams, SystemConfig};
use mipdqn::profiles::{synthesize, SeasonParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quad(a: f64, b: f64, c: f64, p: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        a * p * p + b * p + c
    }
}

#[test]
fn random_rollout_rewards_recompute() {
    let sys = SystemConfig::default();
    let params = RewardParams::default();
    let days = synthesize(12, 3, &SeasonParams::default());
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for day in &days {
        let mut s = reset(day, &sys, InitSoc::Random(&mut rng)).unwrap();
        for t in 0..sys.horizon {
            let a = Action {
                p_dg: sys.dgs.iter().map(|d| rng.random_range(0.0..d.p_max * 1.2)).collect(),
                p_ess: sys.esss.iter().map(|e| rng.random_range(-1.5 * e.p_limit..1.5 * e.p_limit)).collect(),
            };
            let out = step(&s, &a, day, &sys, &params).unwrap();
            let x = &out.executed;
            let dg: f64 = sys
                .dgs
                .iter()
                .zip(&x.p_dg)
                .map(|(d, &p)| quad(d.a_cost, d.b_cost, d.c_cost, p))
                .sum();
            let deficit = day.load[t] - day.pv[t] - x.p_dg.iter().sum::<f64>() + x.p_ess.iter().sum::<f64>();
            let grid = deficit.clamp(-sys.grid_limit, sys.grid_limit);
            let unbalance = (deficit - grid).abs();
            let price = day.price[t];
            let exchange = if grid >= 0.0 { price * grid } else { sys.sell_coeff * price * grid };
            let cost = (dg + exchange) * sys.dt;
            let reward = -params.sigma1 * cost - params.sigma2 * unbalance;
            assert!((out.operating_cost - cost).abs() <= 1e-9 * cost.abs().max(1.0));
            assert!((out.unbalance - unbalance).abs() <= 1e-9);
            assert!((out.reward - reward).abs() <= 1e-9 * reward.abs().max(1.0));
            assert_eq!(out.terminal, t + 1 == sys.horizon);
            s = out.next_state;
        }
    }
}

#[test]
fn executed_actions_respect_unit_limits() {
    let sys = SystemConfig::large_case();
    let params = RewardParams::default();
    let day = &synthesize(4, 1, &SeasonParams::default())[0];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut s = reset(day, &sys, InitSoc::<ChaCha8Rng>::Fixed(vec![0.5; 3])).unwrap();
    for _ in 0..sys.horizon {
        let a = Action {
            p_dg: (0..3).map(|_| rng.random_range(-50.0..600.0)).collect(),
            p_ess: (0..3).map(|_| rng.random_range(-200.0..200.0)).collect(),
        };
        let out = step(&s, &a, day, &sys, &params).unwrap();
        for (i, d) in sys.dgs.iter().enumerate() {
            let p = out.executed.p_dg[i];
            assert!(p >= d.p_min - 1e-9 && p <= d.p_max + 1e-9);
            assert!(p - s.dg_prev[i] <= d.ramp_up + 1e-9 && s.dg_prev[i] - p <= d.ramp_down + 1e-9);
        }
        for (j, e) in sys.esss.iter().enumerate() {
            let soc = out.next_state.soc[j];
            assert!(soc >= e.soc_min - 1e-12 && soc <= e.soc_max + 1e-12);
            assert!(out.executed.p_ess[j].abs() <= e.p_limit + 1e-9);
        }
        s = out.next_state;
    }
}

proptest::proptest! {
    #[test]
    fn soc_stays_in_band_and_energy_matches(soc in 0.2f64..=0.8, p in -100.0f64..=100.0) {
        let ess = SystemConfig::default().esss[0].clone();
        let (next, eff) = ess.apply(soc, p, 1.0).unwrap();
        proptest::prop_assert!(next >= ess.soc_min - 1e-12 && next <= ess.soc_max + 1e-12);
        proptest::prop_assert!(eff.abs() <= p.abs() + 1e-9);
        let stored = (next - soc) * ess.capacity;
        let expected = if eff >= 0.0 { ess.efficiency * eff } else { eff / ess.efficiency };
        proptest::prop_assert!((stored - expected).abs() <= 1e-6);
    }

    #[test]
    fn settled_grid_plus_unbalance_covers_the_deficit(d in -500.0f64..500.0, cap in 0.0f64..100.0) {
        let (g, u) = mipdqn::env::settle_grid(d, cap);
        proptest::prop_assert!(g.abs() <= cap);
        proptest::prop_assert!(((d - g).abs() - u).abs() <= 1e-12);
        proptest::prop_assert!(u >= 0.0);
    }
}
