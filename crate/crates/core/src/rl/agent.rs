use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::neural::{soft_update, AdamState, DenseNet};

use super::replay::Transition;
use super::RlError;

/// Q-network, its target copy and the exploration policy, with optimizers.
///
/// The Q-network reads `state ‖ normalized action` and outputs one value.
/// The policy network outputs pre-squash values; `tanh` maps them to `[−1, 1]`.
#[derive(Debug, Clone)]
pub struct AgentBundle {
    pub q_net: DenseNet,
    pub q_target: DenseNet,
    pub policy_net: DenseNet,
    pub q_opt: AdamState,
    pub policy_opt: AdamState,
    state_dim: usize,
    action_dim: usize,
}

impl AgentBundle {
    pub fn new<R: Rng>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        lr: f64,
        rng: &mut R,
    ) -> Result<Self, RlError> {
        let q_sizes: Vec<usize> = std::iter::once(state_dim + action_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        let p_sizes: Vec<usize> = std::iter::once(state_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(action_dim))
            .collect();
        let q_net = DenseNet::init_he(&q_sizes, 1e-2, rng)?;
        let policy_net = DenseNet::init_he(&p_sizes, 1e-2, rng)?;
        Self::from_nets(q_net.clone(), q_net, policy_net, lr)
    }

    pub fn from_nets(q_net: DenseNet, q_target: DenseNet, policy_net: DenseNet, lr: f64) -> Result<Self, RlError> {
        if !q_net.same_architecture(&q_target) {
            return Err(RlError::Config("q_net and q_target differ in architecture".into()));
        }
        if q_net.output_dim() != 1 {
            return Err(RlError::Config("the Q-network must have a single output".into()));
        }
        let state_dim = policy_net.input_dim();
        let action_dim = policy_net.output_dim();
        if q_net.input_dim() != state_dim + action_dim {
            return Err(RlError::Config(format!(
                "Q-network input {} does not equal state {} + action {}",
                q_net.input_dim(),
                state_dim,
                action_dim
            )));
        }
        Ok(Self {
            q_opt: AdamState::new(q_net.params().len(), lr),
            policy_opt: AdamState::new(policy_net.params().len(), lr),
            q_net,
            q_target,
            policy_net,
            state_dim,
            action_dim,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// Deterministic policy action `tanh(π(s))`.
    pub fn act(&self, s: &[f64]) -> Result<Vec<f64>, RlError> {
        Ok(self.policy_net.forward(s)?.into_iter().map(f64::tanh).collect())
    }

    pub fn q_value(&self, s: &[f64], a: &[f64]) -> Result<f64, RlError> {
        let mut x = s.to_vec();
        x.extend_from_slice(a);
        Ok(self.q_net.forward(&x)?[0])
    }

    /// `π(s) + ε`, `ε ~ N(0, σ)` per component, clamped to `[−1, 1]`.
    pub fn explore<R: Rng>(&self, s: &[f64], sigma: f64, rng: &mut R) -> Result<Vec<f64>, RlError> {
        if !(sigma >= 0.0) {
            return Err(RlError::Config(format!("exploration sigma must be non-negative, got {sigma}")));
        }
        let mut a = self.act(s)?;
        if sigma > 0.0 {
            let noise = Normal::new(0.0, sigma).map_err(|e| RlError::Config(e.to_string()))?;
            for v in &mut a {
                *v = (*v + noise.sample(rng)).clamp(-1.0, 1.0);
            }
        }
        Ok(a)
    }

    fn stack(&self, batch: &[&Transition], next: bool) -> Vec<f64> {
        let mut out = Vec::with_capacity(batch.len() * self.state_dim);
        for t in batch {
            out.extend_from_slice(if next { &t.s_next } else { &t.s });
        }
        out
    }

    fn join(&self, states: &[f64], actions: &[f64], n: usize) -> Vec<f64> {
        let (ds, da) = (self.state_dim, self.action_dim);
        let mut x = Vec::with_capacity(n * (ds + da));
        for b in 0..n {
            x.extend_from_slice(&states[b * ds..(b + 1) * ds]);
            x.extend_from_slice(&actions[b * da..(b + 1) * da]);
        }
        x
    }

    fn check_batch(&self, batch: &[&Transition]) -> Result<(), RlError> {
        if batch.is_empty() {
            return Err(RlError::Config("empty batch".into()));
        }
        for t in batch {
            if t.s.len() != self.state_dim || t.s_next.len() != self.state_dim || t.a.len() != self.action_dim {
                return Err(RlError::Dimension {
                    what: "transition",
                    expected: self.state_dim,
                    got: t.s.len(),
                });
            }
        }
        Ok(())
    }

    /// Bellman targets `r + γ(1 − done)·Q_target(s′, tanh(π(s′)))`.
    pub fn targets(&self, batch: &[&Transition], gamma: f64) -> Result<Vec<f64>, RlError> {
        let n = batch.len();
        let s_next = self.stack(batch, true);
        let a_next: Vec<f64> = self
            .policy_net
            .forward_batch(&s_next, n)?
            .output()
            .iter()
            .map(|v| v.tanh())
            .collect();
        let q_next = self.q_target.forward_batch(&self.join(&s_next, &a_next, n), n)?;
        Ok(batch
            .iter()
            .zip(q_next.output())
            .map(|(t, q)| t.r + if t.done { 0.0 } else { gamma * q })
            .collect())
    }

    /// One Adam step on the mean squared Bellman error; returns the pre-step loss.
    pub fn q_update(&mut self, batch: &[&Transition], gamma: f64) -> Result<f64, RlError> {
        self.check_batch(batch)?;
        let n = batch.len();
        let y = self.targets(batch, gamma)?;
        let s = self.stack(batch, false);
        let mut a = Vec::with_capacity(n * self.action_dim);
        for t in batch {
            a.extend_from_slice(&t.a);
        }
        let trace = self.q_net.forward_batch(&self.join(&s, &a, n), n)?;
        let q = trace.output();
        let mut loss = 0.0;
        let mut upstream = vec![0.0; n];
        for b in 0..n {
            let e = q[b] - y[b];
            loss += e * e;
            upstream[b] = 2.0 * e / n as f64;
        }
        loss /= n as f64;
        if !loss.is_finite() {
            return Err(RlError::Diverged(format!("Q loss became {loss}")));
        }
        let (grads, _) = self.q_net.backward(&trace, &upstream)?;
        self.q_opt.step(self.q_net.params_mut(), &grads)?;
        Ok(loss)
    }

    /// `J = mean Q(s, tanh(π(s)))` and its gradient with respect to the
    /// policy parameters, with the Q-network held fixed.
    pub fn policy_gradient(&self, batch: &[&Transition]) -> Result<(f64, Vec<f64>), RlError> {
        self.check_batch(batch)?;
        let n = batch.len();
        let (ds, da) = (self.state_dim, self.action_dim);
        let s = self.stack(batch, false);
        let p_trace = self.policy_net.forward_batch(&s, n)?;
        let a: Vec<f64> = p_trace.output().iter().map(|v| v.tanh()).collect();
        let q_trace = self.q_net.forward_batch(&self.join(&s, &a, n), n)?;
        let objective = q_trace.output().iter().sum::<f64>() / n as f64;
        let (_, dx) = self.q_net.backward(&q_trace, &vec![1.0 / n as f64; n])?;
        let mut du = vec![0.0; n * da];
        for b in 0..n {
            for k in 0..da {
                let ak = a[b * da + k];
                du[b * da + k] = dx[b * (ds + da) + ds + k] * (1.0 - ak * ak);
            }
        }
        let (grads, _) = self.policy_net.backward(&p_trace, &du)?;
        Ok((objective, grads))
    }

    /// One Adam ascent step on `J`; returns the pre-step objective.
    pub fn policy_update(&mut self, batch: &[&Transition]) -> Result<f64, RlError> {
        let (objective, mut grads) = self.policy_gradient(batch)?;
        if !objective.is_finite() {
            return Err(RlError::Diverged(format!("policy objective became {objective}")));
        }
        // Adam minimizes, so step on −J.
        for g in &mut grads {
            *g = -*g;
        }
        self.policy_opt.step(self.policy_net.params_mut(), &grads)?;
        Ok(objective)
    }

    pub fn soft_update_target(&mut self, tau: f64) -> Result<(), RlError> {
        soft_update(&mut self.q_target, &self.q_net, tau)?;
        Ok(())
    }
}
