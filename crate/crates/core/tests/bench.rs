use mipdqn::bench::{cmd_export_mip, train_model, BenchConfig};
use mipdqn::dispatch::{dispatch_step, evaluation_start, feasibility_check, run_day, DispatchContext, DispatchSettings};
use mipdqn::env::{RewardParams, SystemConfig};
use mipdqn::mip::lpformat::{read_name_map, sidecar_path};
use mipdqn::mip::{import_lp, solve_polished, BackendKind, SolveOptions};
use mipdqn::neural::DenseNet;
use mipdqn::profiles::{synthesize, SeasonParams};
use mipdqn::rl::{FeatureSpec, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config(out: &std::path::Path) -> BenchConfig {
    BenchConfig {
        synth_seed: 9,
        synth_days: 62,
        out_dir: out.to_path_buf(),
        train: TrainConfig {
            epochs: 12,
            batch_size: 16,
            hidden: vec![8, 8],
            updates_per_epoch: 4,
            ..TrainConfig::default()
        },
        ..BenchConfig::default()
    }
}

#[test]
fn exported_model_reproduces_the_dispatch_optimum() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let sys = cfg.system().unwrap();
    let data = cfg.dataset().unwrap();
    let run = train_model(&sys, &data.train, &cfg.train).unwrap();
    run.model.save(cfg.model_dir()).unwrap();

    let lp = cmd_export_mip(&cfg, None).unwrap();
    let names = read_name_map(sidecar_path(&lp)).unwrap();
    assert_eq!(names.input_labels.len(), run.model.features.dim(&sys) + sys.action_dim());

    let state = evaluation_start(&data.test[0], &sys).unwrap();
    let settings = DispatchSettings {
        backend: Some(BackendKind::Reference),
        options: SolveOptions::default(),
        ..DispatchSettings::default()
    };
    let ctx = DispatchContext::new(&run.model.q_net, &run.model.features, &sys, &settings).unwrap();
    let q = dispatch_step(&ctx, &state).unwrap().predicted_q;

    let back = import_lp(&lp).unwrap();
    let r = solve_polished(&mipdqn::mip::bnb::BranchAndBound, &back, &SolveOptions::default()).unwrap();
    assert!((r.objective.unwrap() - q).abs() <= 1e-6, "{:?} vs {q}", r.objective);

    #[cfg(feature = "highs")]
    {
        let ext = mipdqn::mip::lpformat::solve_lp_file_with_highs(&lp).unwrap();
        assert!(ext.optimal);
        assert!((ext.objective - q).abs() <= 1e-6, "{} vs {q}", ext.objective);
    }

    let again = small_config(&dir.path().join("again"));
    std::fs::create_dir_all(&again.out_dir).unwrap();
    let again = BenchConfig {
        checkpoint_dir: Some(cfg.model_dir()),
        ..again
    };
    let lp2 = cmd_export_mip(&again, None).unwrap();
    assert_eq!(std::fs::read(&lp).unwrap(), std::fs::read(&lp2).unwrap());
    assert_eq!(std::fs::read(sidecar_path(&lp)).unwrap(), std::fs::read(sidecar_path(&lp2)).unwrap());
}

#[test]
fn large_case_day_dispatches_six_set_points_feasibly() {
    let sys = SystemConfig::large_case();
    assert_eq!(sys.action_dim(), 6);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let spec = FeatureSpec::new(300.0, 1500.0);
    let net = DenseNet::init_he(&[spec.dim(&sys) + sys.action_dim(), 12, 12, 1], 1.0, &mut rng).unwrap();
    let day = &synthesize(31, 1, &SeasonParams::default())[0];
    let ctx = DispatchContext::new(&net, &spec, &sys, &DispatchSettings::default()).unwrap();
    let traj = run_day(&ctx, day, &RewardParams::default()).unwrap();
    for st in &traj.steps {
        assert_eq!(st.proposed.flatten().len(), 6);
        assert!(feasibility_check(&st.proposed, &st.state, &sys).is_empty());
    }
    assert!(traj.total_unbalance() <= 1e-6);
}
