use mipdqn::mip::bnb::BranchAndBound;
use mipdqn::mip::{
    encode_network, export_lp, fix_inputs, import_lp, propagate_bounds, read_lp, reference_solve, set_objective_max_output,
    solve_polished, write_lp, BackendKind, Cmp, InputConstraint, MipModel, NameMap, ObjSense, SolveOptions, SolveStatus,
    SolverBackend, VarRole,
};
use mipdqn::neural::{param_count, DenseNet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_net(sizes: &[usize], rng: &mut ChaCha8Rng) -> DenseNet {
    DenseNet::from_params(sizes, (0..param_count(sizes)).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn backends() -> Vec<Box<dyn SolverBackend>> {
    let mut v: Vec<Box<dyn SolverBackend>> = vec![Box::new(BranchAndBound)];
    if BackendKind::default_kind() == BackendKind::Highs {
        v.push(BackendKind::Highs.create().unwrap());
    }
    v
}

fn solve(b: &dyn SolverBackend, m: &MipModel) -> (f64, Vec<f64>) {
    let r = solve_polished(b, m, &SolveOptions::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal, "{}", b.name());
    (r.objective.unwrap(), r.values.unwrap())
}

fn single_relu() -> DenseNet {
    DenseNet::from_params(&[1, 1, 1], vec![1.0, 1.0, 0.0, 0.0]).unwrap()
}

#[test]
fn single_unit_fixed_inputs() {
    for b in backends() {
        for (x, y) in [(0.5, 0.5), (-0.3, 0.0)] {
            let mut enc = encode_network(&single_relu(), &[(-1.0, 1.0)]).unwrap();
            fix_inputs(&mut enc, &[0], &[x]).unwrap();
            for sense in [ObjSense::Maximize, ObjSense::Minimize] {
                enc.model.set_objective(sense, vec![(enc.outputs[0], 1.0)], 0.0);
                let (obj, _) = solve(b.as_ref(), &enc.model);
                assert!((obj - y).abs() <= 1e-9, "{} {x}: {obj}", b.name());
            }
        }
    }
}

#[test]
fn single_unit_free_input_maximum_is_one() {
    for b in backends() {
        let mut enc = encode_network(&single_relu(), &[(-1.0, 1.0)]).unwrap();
        set_objective_max_output(&mut enc).unwrap();
        let (obj, x) = solve(b.as_ref(), &enc.model);
        assert!((obj - 1.0).abs() <= 1e-9);
        assert!((x[enc.inputs[0]] - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn constant_net_optimum_is_its_bias() {
    let net = DenseNet::from_params(&[2, 3, 1], vec![0.0; 9].into_iter().chain([0.5, 0.5, 0.5, 2.5]).collect()).unwrap();
    let mut enc = encode_network(&net, &[(-1.0, 1.0), (-1.0, 1.0)]).unwrap();
    set_objective_max_output(&mut enc).unwrap();
    for b in backends() {
        assert!((solve(b.as_ref(), &enc.model).0 - 2.5).abs() <= 1e-9);
    }
}

#[test]
fn fixed_inputs_reproduce_forward_on_random_4_8_8_1() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let backends = backends();
    for _ in 0..20 {
        let net = random_net(&[4, 8, 8, 1], &mut rng);
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut enc = encode_network(&net, &[(-1.0, 1.0); 4]).unwrap();
        fix_inputs(&mut enc, &[0, 1, 2, 3], &x).unwrap();
        let y = net.forward(&x).unwrap()[0];
        for b in &backends {
            for sense in [ObjSense::Maximize, ObjSense::Minimize] {
                enc.model.set_objective(sense, vec![(enc.outputs[0], 1.0)], 0.0);
                let (obj, _) = solve(b.as_ref(), &enc.model);
                assert!((obj - y).abs() <= 1e-6, "{}: {obj} vs {y}", b.name());
            }
        }
    }
}

#[test]
fn fix_none_leaves_model_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let net = random_net(&[3, 4, 1], &mut rng);
    let mut enc = encode_network(&net, &[(-1.0, 1.0); 3]).unwrap();
    let before = enc.model.clone();
    fix_inputs(&mut enc, &[], &[]).unwrap();
    assert_eq!(enc.model, before);
}

#[test]
fn interval_bounds_example() {
    let net = DenseNet::from_params(&[1, 2, 1], vec![1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let b = propagate_bounds(&net, &[(-1.0, 1.0)]).unwrap();
    for j in 0..2 {
        assert_eq!((b.lo[0][j], b.hi[0][j]), (-1.0, 1.0));
        assert_eq!(b.x_bounds(0, j), (0.0, 1.0));
        assert_eq!(b.s_bounds(0, j), (0.0, 1.0));
    }
}

#[test]
fn positive_weights_lower_bound_at_zero_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let sizes = [3, 4, 1];
    let mut net = random_net(&sizes, &mut rng);
    for p in net.params_mut() {
        *p = p.abs();
    }
    let b = propagate_bounds(&net, &[(0.0, 1.0); 3]).unwrap();
    for j in 0..4 {
        assert!((b.lo[0][j] - net.bias(0)[j]).abs() <= 1e-12);
    }
}

#[test]
fn monte_carlo_points_stay_inside_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let net = random_net(&[3, 8, 8, 2], &mut rng);
    let bx = [(-1.0, 0.5), (0.0, 2.0), (-3.0, -1.0)];
    let b = propagate_bounds(&net, &bx).unwrap();
    for _ in 0..100_000 {
        let x: Vec<f64> = bx.iter().map(|&(l, h)| rng.random_range(l..=h)).collect();
        let mut h = x;
        for k in 0..net.num_layers() {
            let n_out = net.layer_sizes()[k + 1];
            let pre: Vec<f64> = (0..n_out)
                .map(|j| net.bias(k)[j] + h.iter().enumerate().map(|(i, v)| net.w(k, j, i) * v).sum::<f64>())
                .collect();
            for j in 0..n_out {
                assert!(pre[j] >= b.lo[k][j] - 1e-9 && pre[j] <= b.hi[k][j] + 1e-9);
            }
            h = pre.into_iter().map(|v| v.max(0.0)).collect();
        }
    }
}

#[test]
fn enumeration_agrees_with_solvers_on_tiny_nets() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let backends = backends();
    for _ in 0..50 {
        let h1 = rng.random_range(2..=5);
        let h2 = rng.random_range(2..=5);
        let net = random_net(&[2, h1, h2, 1], &mut rng);
        let bx = [(-1.0, 1.0); 2];
        let reference = reference_solve(&net, &bx, &[], &[]).unwrap();
        let best = reference.objective.unwrap();
        let arg = reference.values.unwrap();
        assert!((net.forward(&arg).unwrap()[0] - best).abs() <= 1e-9);
        let mut enc = encode_network(&net, &bx).unwrap();
        set_objective_max_output(&mut enc).unwrap();
        for b in &backends {
            let (obj, _) = solve(b.as_ref(), &enc.model);
            assert!((obj - best).abs() <= 1e-5, "{}: {obj} vs {best}", b.name());
        }
    }
}

#[test]
fn grid_sweep_never_beats_the_mip() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..10 {
        let net = random_net(&[3, 6, 6, 1], &mut rng);
        let state: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut enc = encode_network(&net, &[(-1.0, 1.0); 3]).unwrap();
        fix_inputs(&mut enc, &[0, 1], &state).unwrap();
        set_objective_max_output(&mut enc).unwrap();
        let (obj, _) = solve(&BranchAndBound, &enc.model);
        for k in 0..=200 {
            let a = -1.0 + k as f64 / 100.0;
            let y = net.forward(&[state[0], state[1], a]).unwrap()[0];
            assert!(obj >= y - 1e-9);
        }
    }
}

#[test]
fn one_unit_optimum_sits_at_a_corner() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let net = random_net(&[2, 1, 1], &mut rng);
    let r = reference_solve(&net, &[(-1.0, 1.0), (-2.0, 3.0)], &[], &[]).unwrap();
    let best = r.objective.unwrap();
    let corners = [[-1.0, -2.0], [-1.0, 3.0], [1.0, -2.0], [1.0, 3.0]];
    let corner_best = corners.iter().map(|c| net.forward(c).unwrap()[0]).fold(f64::NEG_INFINITY, f64::max);
    assert!((best - corner_best).abs() <= 1e-9);
}

#[test]
fn equality_constraint_slices_the_box() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let net = random_net(&[2, 4, 1], &mut rng);
    let cut = InputConstraint {
        coeffs: vec![1.0, 1.0],
        cmp: Cmp::Eq,
        rhs: 0.3,
    };
    let r = reference_solve(&net, &[(-1.0, 1.0); 2], &[], &[cut]).unwrap();
    let x = r.values.unwrap();
    assert!((x[0] + x[1] - 0.3).abs() <= 1e-9);
}

#[test]
fn contradictory_bounds_are_infeasible() {
    let mut m = MipModel::new();
    let x = m.add_var("x", 0.0, 10.0, VarRole::Aux);
    m.add_constraint("lo", vec![(x, 1.0)], Cmp::Ge, 1.0);
    m.add_constraint("hi", vec![(x, 1.0)], Cmp::Le, 0.0);
    for b in backends() {
        let r = b.solve(&m, &SolveOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible, "{}", b.name());
    }
}

#[test]
fn tiny_time_limit_reports_time_limit() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let net = random_net(&[8, 64, 64, 64, 1], &mut rng);
    let mut enc = encode_network(&net, &[(-1.0, 1.0); 8]).unwrap();
    set_objective_max_output(&mut enc).unwrap();
    let opts = SolveOptions {
        time_limit: Some(0.001),
        ..SolveOptions::default()
    };
    let r = BranchAndBound.solve(&enc.model, &opts).unwrap();
    assert_eq!(r.status, SolveStatus::TimeLimit);
    if let Some(v) = r.values {
        assert!(enc.model.max_violation(&v) <= 1e-6);
    }
}

#[test]
fn lp_round_trip_keeps_the_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let dir = tempfile::tempdir().unwrap();
    for n in 0..5 {
        let net = random_net(&[3, 5, 4, 1], &mut rng);
        let mut enc = encode_network(&net, &[(-1.0, 1.0), (0.0, 2.0), (-0.5, 0.5)]).unwrap();
        fix_inputs(&mut enc, &[0], &[0.25]).unwrap();
        set_objective_max_output(&mut enc).unwrap();
        let path = dir.path().join(format!("m{n}.lp"));
        let side = export_lp(&enc.model, &path, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let map: NameMap = serde_json::from_str(&std::fs::read_to_string(side).unwrap()).unwrap();
        assert_eq!(map.variables.len(), enc.model.vars.len());
        let back = import_lp(&path).unwrap();
        assert_eq!(write_lp(&back), std::fs::read_to_string(&path).unwrap());
        for b in backends() {
            let (o1, _) = solve(b.as_ref(), &enc.model);
            let (o2, _) = solve(b.as_ref(), &back);
            assert!((o1 - o2).abs() <= 1e-9, "{}: {o1} vs {o2}", b.name());
        }
    }
}

#[test]
fn empty_objective_exports_zero_objective() {
    let mut m = MipModel::new();
    let x = m.add_var("x", 0.0, 1.0, VarRole::Aux);
    m.add_constraint("c", vec![(x, 1.0)], Cmp::Le, 0.5);
    let text = write_lp(&m);
    let back = read_lp(&text).unwrap();
    assert!(back.objective.iter().all(|&(_, c)| c == 0.0));
    let r = BranchAndBound.solve(&back, &SolveOptions::default()).unwrap();
    assert_eq!(r.objective, Some(0.0));
}

#[cfg(feature = "highs")]
#[test]
fn highs_reads_our_lp_files() {
    use mipdqn::mip::lpformat::solve_lp_file_with_highs;
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let dir = tempfile::tempdir().unwrap();
    let net = random_net(&[2, 6, 6, 1], &mut rng);
    let mut enc = encode_network(&net, &[(-1.0, 1.0); 2]).unwrap();
    set_objective_max_output(&mut enc).unwrap();
    let path = dir.path().join("net.lp");
    export_lp(&enc.model, &path, Vec::new()).unwrap();
    let ext = solve_lp_file_with_highs(&path).unwrap();
    assert!(ext.optimal);
    let (obj, _) = solve(&BranchAndBound, &enc.model);
    assert!((ext.objective - obj).abs() <= 1e-6, "{} vs {obj}", ext.objective);
    let x: Vec<f64> = ["in_0", "in_1"].iter().map(|n| ext.values[*n]).collect();
    assert!((net.forward(&x).unwrap()[0] - obj).abs() <= 1e-6);
}
