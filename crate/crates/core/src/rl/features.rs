use serde::{Deserialize, Serialize};

use crate::env::{Action, EnvState, SystemConfig};

use super::RlError;

/// Min-max scaling of the environment state into network features:
/// `[pv, load, dg_prev…, soc…]`, optionally followed by `[hour, price]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub pv_max: f64,
    pub load_max: f64,
    #[serde(default)]
    pub include_time_price: bool,
    #[serde(default = "default_price_max")]
    pub price_max: f64,
}

fn default_price_max() -> f64 {
    10.0
}

impl FeatureSpec {
    pub fn new(pv_max: f64, load_max: f64) -> Self {
        Self {
            pv_max,
            load_max,
            include_time_price: false,
            price_max: default_price_max(),
        }
    }

    pub fn validate(&self) -> Result<(), RlError> {
        if self.pv_max > 0.0 && self.load_max > 0.0 && self.price_max > 0.0 {
            Ok(())
        } else {
            Err(RlError::Config(format!("feature ranges must be positive: {self:?}")))
        }
    }

    pub fn dim(&self, cfg: &SystemConfig) -> usize {
        2 + cfg.dgs.len() + cfg.esss.len() + if self.include_time_price { 2 } else { 0 }
    }

    pub fn featurize(&self, state: &EnvState, cfg: &SystemConfig) -> Vec<f64> {
        let mut f = Vec::with_capacity(self.dim(cfg));
        f.push(state.pv / self.pv_max);
        f.push(state.load / self.load_max);
        for (dg, &p) in cfg.dgs.iter().zip(&state.dg_prev) {
            f.push((p - dg.p_min) / (dg.p_max - dg.p_min));
        }
        for (ess, &s) in cfg.esss.iter().zip(&state.soc) {
            f.push((s - ess.soc_min) / (ess.soc_max - ess.soc_min));
        }
        if self.include_time_price {
            f.push(state.t as f64 / (cfg.horizon.max(2) - 1) as f64);
            f.push(state.price / self.price_max);
        }
        f
    }

    /// Rebuilds a state from features. Without time/price features those
    /// fields are taken from `t` and `price`.
    pub fn inverse_featurize(&self, feats: &[f64], cfg: &SystemConfig, t: usize, price: f64) -> Result<EnvState, RlError> {
        if feats.len() != self.dim(cfg) {
            return Err(RlError::Dimension {
                what: "features",
                expected: self.dim(cfg),
                got: feats.len(),
            });
        }
        let nd = cfg.dgs.len();
        let ne = cfg.esss.len();
        let dg_prev = cfg
            .dgs
            .iter()
            .zip(&feats[2..2 + nd])
            .map(|(dg, f)| dg.p_min + f * (dg.p_max - dg.p_min))
            .collect();
        let soc = cfg
            .esss
            .iter()
            .zip(&feats[2 + nd..2 + nd + ne])
            .map(|(e, f)| e.soc_min + f * (e.soc_max - e.soc_min))
            .collect();
        let (t, price) = if self.include_time_price {
            let h = feats[2 + nd + ne] * (cfg.horizon.max(2) - 1) as f64;
            (h.round() as usize, feats[3 + nd + ne] * self.price_max)
        } else {
            (t, price)
        };
        Ok(EnvState {
            t,
            pv: feats[0] * self.pv_max,
            load: feats[1] * self.load_max,
            price,
            dg_prev,
            soc,
        })
    }
}

/// Affine map of one normalized action component: `p = offset + scale·a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionMap {
    pub offset: f64,
    pub scale: f64,
}

/// Per-component maps, DGs first: DG to `[p_min, p_max]`, ESS to `[−p_limit, p_limit]`.
pub fn action_maps(cfg: &SystemConfig) -> Vec<ActionMap> {
    cfg.dgs
        .iter()
        .map(|d| ActionMap {
            offset: 0.5 * (d.p_max + d.p_min),
            scale: 0.5 * (d.p_max - d.p_min),
        })
        .chain(cfg.esss.iter().map(|e| ActionMap {
            offset: 0.0,
            scale: e.p_limit,
        }))
        .collect()
}

pub fn denormalize_action(a_norm: &[f64], cfg: &SystemConfig) -> Result<Action, RlError> {
    if a_norm.len() != cfg.action_dim() {
        return Err(RlError::Dimension {
            what: "action components",
            expected: cfg.action_dim(),
            got: a_norm.len(),
        });
    }
    let phys: Vec<f64> = action_maps(cfg)
        .iter()
        .zip(a_norm)
        .map(|(m, a)| m.offset + m.scale * a)
        .collect();
    let nd = cfg.dgs.len();
    Ok(Action {
        p_dg: phys[..nd].to_vec(),
        p_ess: phys[nd..].to_vec(),
    })
}

pub fn normalize_action(action: &Action, cfg: &SystemConfig) -> Vec<f64> {
    action_maps(cfg)
        .iter()
        .zip(action.flatten())
        .map(|(m, p)| (p - m.offset) / m.scale)
        .collect()
}
