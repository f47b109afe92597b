//! Dense ReLU networks, Adam, soft target updates and checkpoints.

mod adam;
pub mod checkpoint;
mod net;

pub use adam::AdamState;
pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use net::{param_count, soft_update, DenseNet, ForwardTrace};

#[derive(Debug, thiserror::Error)]
pub enum NeuralError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("architecture error: {0}")]
    Architecture(String),
    #[error("{0}")]
    Domain(String),
    #[error("non-finite value")]
    NonFinite,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("unsupported checkpoint version {found} (supported: {supported})")]
    Version { found: u32, supported: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_relu() {
        let net = DenseNet::from_params(&[2, 2, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0])
            .unwrap();
        assert_eq!(net.forward(&[1.0, -1.0]).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = DenseNet::zeros(&[3, 5, 1]).unwrap();
        assert_eq!(net.forward(&[4.0, -2.0, 9.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn wrong_input_length() {
        let net = DenseNet::zeros(&[3, 1]).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(NeuralError::Dimension { .. })));
    }

    #[test]
    fn linear_chain_rule() {
        let net = DenseNet::from_params(&[1, 1], vec![2.0, 0.0]).unwrap();
        let (g, gi) = net.gradients(&[3.0], &[1.0]).unwrap();
        assert_eq!(g, vec![3.0, 1.0]);
        assert_eq!(gi, vec![2.0]);
    }

    #[test]
    fn dead_unit_blocks_gradient() {
        // hidden pre-activation = -1·x - 1 < 0 for x = 2
        let net = DenseNet::from_params(&[1, 1, 1], vec![-1.0, 5.0, -1.0, 0.0]).unwrap();
        let (g, gi) = net.gradients(&[2.0], &[1.0]).unwrap();
        assert_eq!(g[0], 0.0);
        assert_eq!(g[2], 0.0);
        assert_eq!(gi, vec![0.0]);
        assert_eq!(g[3], 1.0);
    }

    #[test]
    fn adam_zero_grad_is_noop() {
        let mut p = vec![1.5, -2.0];
        let mut opt = AdamState::new(2, 1e-3);
        opt.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.5, -2.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![0.0];
        let mut opt = AdamState::new(1, 0.1);
        opt.step(&mut p, &[1.0]).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-6, "{}", p[0]);
    }

    #[test]
    fn soft_update_cases() {
        let src = DenseNet::from_params(&[1, 1], vec![1.0, 1.0]).unwrap();
        let mut tgt = DenseNet::zeros(&[1, 1]).unwrap();
        soft_update(&mut tgt, &src, 0.005).unwrap();
        assert!((tgt.params()[0] - 0.005).abs() < 1e-15);

        let mut t1 = DenseNet::zeros(&[1, 1]).unwrap();
        soft_update(&mut t1, &src, 1.0).unwrap();
        assert_eq!(t1, src);

        let mut t0 = DenseNet::zeros(&[1, 1]).unwrap();
        soft_update(&mut t0, &src, 0.0).unwrap();
        assert_eq!(t0.params(), &[0.0, 0.0]);

        let other = DenseNet::zeros(&[2, 1]).unwrap();
        assert!(soft_update(&mut t0, &other, 0.5).is_err());
    }

    #[test]
    fn batch_matches_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DenseNet::init_he(&[4, 8, 8, 2], 1.0, &mut rng).unwrap();
        let xs: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let tr = net.forward_batch(&xs, 5).unwrap();
        for b in 0..5 {
            let y = net.forward(&xs[b * 4..b * 4 + 4]).unwrap();
            for j in 0..2 {
                assert!((y[j] - tr.output()[b * 2 + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn checkpoint_rejects_version_and_truncation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNet::init_he(&[3, 4, 1], 1.0, &mut rng).unwrap();
        let bytes = checkpoint::encode(&net, &CheckpointMeta::default());
        assert_eq!(checkpoint::decode(&bytes).unwrap().net, net);
        assert!(matches!(
            checkpoint::decode(&bytes[..bytes.len() - 3]),
            Err(NeuralError::Corrupt(_))
        ));
        let mut bumped = bytes.clone();
        bumped[8] = 7;
        assert!(matches!(
            checkpoint::decode(&bumped),
            Err(NeuralError::Version { found: 7, .. })
        ));
    }
}
