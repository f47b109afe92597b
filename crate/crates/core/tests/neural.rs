use mipdqn::neural::checkpoint::{self, CheckpointMeta};
use mipdqn::neural::{AdamState, DenseNet, NeuralError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_net(sizes: &[usize], rng: &mut ChaCha8Rng) -> DenseNet {
    let n = mipdqn::neural::param_count(sizes);
    DenseNet::from_params(sizes, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Plain nested-loop evaluation that reads weights straight from the flat
/// parameter vector (weights of all layers first, then all biases).
fn straight_line(net: &DenseNet, input: &[f64]) -> Vec<f64> {
    let sizes = net.layer_sizes();
    let p = net.params();
    let n_w: usize = sizes.windows(2).map(|w| w[0] * w[1]).sum();
    let (mut w_off, mut b_off) = (0, n_w);
    let mut h = input.to_vec();
    for k in 0..sizes.len() - 1 {
        let (n_in, n_out) = (sizes[k], sizes[k + 1]);
        let mut next = vec![0.0; n_out];
        for j in 0..n_out {
            let mut acc = p[b_off + j];
            for i in 0..n_in {
                acc += p[w_off + j * n_in + i] * h[i];
            }
            next[j] = if k + 2 < sizes.len() { acc.max(0.0) } else { acc };
        }
        w_off += n_in * n_out;
        b_off += n_out;
        h = next;
    }
    h
}

fn pre_activations(net: &DenseNet, input: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    let mut h = input.to_vec();
    for k in 0..net.num_layers() {
        let (n_in, n_out) = (net.layer_sizes()[k], net.layer_sizes()[k + 1]);
        let mut next = vec![0.0; n_out];
        for j in 0..n_out {
            next[j] = net.bias(k)[j] + (0..n_in).map(|i| net.w(k, j, i) * h[i]).sum::<f64>();
        }
        out.extend_from_slice(&next);
        h = next.iter().map(|v| v.max(0.0)).collect();
    }
    out
}

#[test]
fn forward_matches_straight_line_on_4_8_8_1() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = random_net(&[4, 8, 8, 1], &mut rng);
    for _ in 0..100 {
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let a = net.forward(&x).unwrap();
        let b = straight_line(&net, &x);
        assert!((a[0] - b[0]).abs() <= 1e-12, "{a:?} vs {b:?}");
    }
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-5;
    let mut checked = 0;
    while checked < 50 {
        let depth = rng.random_range(1..=3);
        let mut sizes = vec![rng.random_range(1..=4)];
        for _ in 0..depth {
            sizes.push(rng.random_range(2..=6));
        }
        sizes.push(rng.random_range(1..=2));
        let net = random_net(&sizes, &mut rng);
        let x: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        // Stay away from kinks so that ±h never flips a unit.
        if pre_activations(&net, &x).iter().any(|v| v.abs() < 1e-2) {
            continue;
        }
        let up: Vec<f64> = (0..*sizes.last().unwrap()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |n: &DenseNet, x: &[f64]| n.forward(x).unwrap().iter().zip(&up).map(|(o, u)| o * u).sum::<f64>();
        let (dp, dx) = net.gradients(&x, &up).unwrap();
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-3);
        for i in 0..net.params().len() {
            let mut plus = net.clone();
            plus.params_mut()[i] += h;
            let mut minus = net.clone();
            minus.params_mut()[i] -= h;
            let fd = (f(&plus, &x) - f(&minus, &x)) / (2.0 * h);
            assert!(rel(fd, dp[i]) < 1e-4, "param {i}: fd {fd} vs {}", dp[i]);
        }
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (f(&net, &xp) - f(&net, &xm)) / (2.0 * h);
            assert!(rel(fd, dx[i]) < 1e-4, "input {i}: fd {fd} vs {}", dx[i]);
        }
        checked += 1;
    }
}

#[test]
fn adam_runs_are_reproducible() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = random_net(&[3, 5, 1], &mut rng);
        let mut opt = AdamState::new(net.params().len(), 1e-2);
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (g, _) = net.gradients(&x, &[1.0]).unwrap();
            opt.step(net.params_mut(), &g).unwrap();
        }
        net.params().to_vec()
    };
    assert_eq!(run(), run());
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = random_net(&[6, 16, 16, 1], &mut rng);
    let meta = CheckpointMeta {
        epoch: 500,
        seed: 4,
        config_hash: 0xfeed,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("q.ckpt");
    checkpoint::save(&path, &net, &meta).unwrap();
    let back = checkpoint::load(&path).unwrap();
    assert_eq!(back.meta, meta);
    for _ in 0..100 {
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
        assert_eq!(net.forward(&x).unwrap(), back.net.forward(&x).unwrap());
    }
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(checkpoint::load(&path), Err(NeuralError::Corrupt(_))));
}
