use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{reset, step, InitSoc, RewardParams, SystemConfig};
use crate::profiles::DayProfile;

use super::agent::AgentBundle;
use super::features::{denormalize_action, normalize_action, FeatureSpec};
use super::replay::{ReplayBuffer, Transition};
use super::RlError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Number of training episodes (one random training day each).
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub buffer_capacity: usize,
    pub gamma: f64,
    pub tau: f64,
    pub sigma_start: f64,
    pub sigma_end: f64,
    /// Fraction of the run over which σ decays linearly to `sigma_end`.
    pub sigma_decay_fraction: f64,
    /// Fraction of leading episodes that act uniformly at random instead of following the policy.
    pub warmup_fraction: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
    /// Gradient updates (Q, policy, target) after each episode.
    pub updates_per_epoch: usize,
    /// Rewards are multiplied by this factor before entering the buffer.
    pub reward_scale: f64,
    pub reward: RewardParams,
    pub include_time_price: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 256,
            lr: 1e-4,
            buffer_capacity: 50_000,
            gamma: 0.995,
            tau: 0.005,
            sigma_start: 0.1,
            sigma_end: 0.01,
            sigma_decay_fraction: 0.5,
            warmup_fraction: 0.1,
            hidden: vec![64, 64, 64],
            seed: 0,
            updates_per_epoch: 24,
            reward_scale: 1.0,
            reward: RewardParams::default(),
            include_time_price: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 || self.batch_size > self.buffer_capacity {
            return bad("batch size must be positive and not exceed the buffer capacity");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [0, 1]");
        }
        if !(self.lr > 0.0) || !(self.reward_scale > 0.0) {
            return bad("learning rate and reward scale must be positive");
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad("warmup fraction must lie in [0, 1]");
        }
        if self.sigma_start < 0.0 || self.sigma_end < 0.0 || !(self.sigma_decay_fraction > 0.0) {
            return bad("invalid exploration schedule");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layers must be non-empty with positive widths");
        }
        self.reward.validate().map_err(|e| RlError::Config(e.to_string()))
    }

    pub fn sigma_at(&self, epoch: usize) -> f64 {
        let span = (self.epochs as f64 * self.sigma_decay_fraction).max(1.0);
        let frac = (epoch as f64 / span).min(1.0);
        self.sigma_start + (self.sigma_end - self.sigma_start) * frac
    }
}

/// Per-episode learning-curve record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episode: usize,
    /// Mean per-step reward (unscaled).
    pub reward_mean: f64,
    /// Mean per-step operating cost in $.
    pub cost_mean: f64,
    /// Episode total power unbalance in kW summed over steps.
    pub unbalance_kw: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub bundle: AgentBundle,
    pub features: FeatureSpec,
    pub curves: Vec<EpisodeStats>,
}

/// Feature ranges covering the given days.
pub fn feature_spec_for(days: &[DayProfile], include_time_price: bool) -> FeatureSpec {
    let pv_max = days.iter().flat_map(|d| d.pv.iter()).fold(0.0f64, |m, v| m.max(*v));
    let load_max = days.iter().flat_map(|d| d.load.iter()).fold(0.0f64, |m, v| m.max(*v));
    let price_max = days.iter().flat_map(|d| d.price.iter()).fold(0.0f64, |m, v| m.max(*v));
    FeatureSpec {
        pv_max: pv_max.max(1.0),
        load_max: load_max.max(1.0),
        include_time_price,
        price_max: price_max.max(1.0),
    }
}

/// Joint training of the Q-network, its target and the exploration policy.
pub fn train(
    sys: &SystemConfig,
    train_days: &[DayProfile],
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpisodeStats),
) -> Result<TrainOutcome, RlError> {
    cfg.validate()?;
    sys.validate().map_err(|e| RlError::Config(e.to_string()))?;
    if train_days.is_empty() {
        return Err(RlError::Config("training split is empty".into()));
    }
    for d in train_days {
        d.validate(sys.horizon).map_err(|e| RlError::Config(e.to_string()))?;
    }
    let features = feature_spec_for(train_days, cfg.include_time_price);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut bundle = AgentBundle::new(features.dim(sys), sys.action_dim(), &cfg.hidden, cfg.lr, &mut rng)?;
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut curves = Vec::with_capacity(cfg.epochs);

    let warmup = (cfg.epochs as f64 * cfg.warmup_fraction).floor() as usize;
    for epoch in 0..cfg.epochs {
        let sigma = cfg.sigma_at(epoch);
        let day = &train_days[rng.random_range(0..train_days.len())];
        let mut state = reset(day, sys, InitSoc::Random(&mut rng))?;
        let (mut reward_sum, mut cost_sum, mut unbalance_sum) = (0.0, 0.0, 0.0);
        for _ in 0..sys.horizon {
            let s = features.featurize(&state, sys);
            let a = if epoch < warmup {
                (0..sys.action_dim()).map(|_| rng.random_range(-1.0..=1.0)).collect()
            } else {
                bundle.explore(&s, sigma, &mut rng)?
            };
            let action = denormalize_action(&a, sys)?;
            let out = step(&state, &action, day, sys, &cfg.reward)?;
            reward_sum += out.reward;
            cost_sum += out.operating_cost;
            unbalance_sum += out.unbalance;
            buffer.push(Transition {
                s,
                a: normalize_action(&out.executed, sys),
                r: out.reward * cfg.reward_scale,
                s_next: features.featurize(&out.next_state, sys),
                done: out.terminal,
            });
            state = out.next_state;
        }
        for _ in 0..cfg.updates_per_epoch {
            let Some(batch) = buffer.sample(cfg.batch_size, &mut rng) else {
                break;
            };
            bundle
                .q_update(&batch, cfg.gamma)
                .map_err(|e| RlError::Diverged(format!("epoch {}: {e}", epoch + 1)))?;
            bundle
                .policy_update(&batch)
                .map_err(|e| RlError::Diverged(format!("epoch {}: {e}", epoch + 1)))?;
            bundle.soft_update_target(cfg.tau)?;
        }
        let n = sys.horizon as f64;
        let stats = EpisodeStats {
            episode: epoch + 1,
            reward_mean: reward_sum / n,
            cost_mean: cost_sum / n,
            unbalance_kw: unbalance_sum,
        };
        progress(&stats);
        curves.push(stats);
    }
    Ok(TrainOutcome {
        bundle,
        features,
        curves,
    })
}

pub fn write_curves<W: Write>(writer: W, curves: &[EpisodeStats]) -> Result<(), RlError> {
    let mut w = csv::Writer::from_writer(writer);
    for c in curves {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_curves(path: impl AsRef<Path>, curves: &[EpisodeStats]) -> Result<(), RlError> {
    write_curves(std::fs::File::create(path)?, curves)
}
