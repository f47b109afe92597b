//! One-step microgrid dynamics: DG and grid-exchange costs, ESS state of
//! charge, grid settlement, power unbalance and the shaped reward.
//!
//! Sign conventions used throughout the crate:
//!
//! * `Action::p_ess` is positive when the ESS is **charging**, so it enters the
//!   power balance with a minus sign: `Σ p_dg + pv + p_grid − Σ p_ess = load`.
//! * `p_grid` (P^N) is positive when importing from the main network.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profiles::DayProfile;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: expected {expected} {what}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// A dispatchable generator with quadratic operating cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgUnit {
    /// Quadratic cost coefficient, $/kW²h.
    pub a_cost: f64,
    /// Linear cost coefficient, $/kWh.
    pub b_cost: f64,
    /// Fixed cost while running, $/h.
    pub c_cost: f64,
    pub p_min: f64,
    pub p_max: f64,
    /// Maximum increase between consecutive steps, kW.
    pub ramp_up: f64,
    /// Maximum decrease between consecutive steps, kW.
    pub ramp_down: f64,
}

impl DgUnit {
    pub fn validate(&self) -> Result<(), EnvError> {
        let ok = self.p_min >= 0.0
            && self.p_min < self.p_max
            && self.ramp_up > 0.0
            && self.ramp_down > 0.0
            && self.a_cost >= 0.0
            && [self.a_cost, self.b_cost, self.c_cost, self.p_max, self.ramp_up, self.ramp_down]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(EnvError::Config(format!("invalid DG unit {self:?}")))
        }
    }

    /// Operating cost in $/h at output `p`; an idle unit (`p == 0`) costs nothing.
    pub fn cost(&self, p: f64) -> Result<f64, EnvError> {
        dg_cost(self, p)
    }

    /// Feasible output window for the next step given the previous output.
    pub fn window(&self, prev: f64) -> (f64, f64) {
        let lo = self.p_min.max(prev - self.ramp_down);
        let hi = self.p_max.min(prev + self.ramp_up);
        (lo, hi)
    }
}

/// An energy storage system with symmetric power limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssUnit {
    /// Symmetric charge/discharge power bound, kW.
    pub p_limit: f64,
    /// Energy capacity, kWh.
    pub capacity: f64,
    pub efficiency: f64,
    #[serde(default = "default_soc_min")]
    pub soc_min: f64,
    #[serde(default = "default_soc_max")]
    pub soc_max: f64,
}

fn default_soc_min() -> f64 {
    0.2
}

fn default_soc_max() -> f64 {
    0.8
}

impl EssUnit {
    pub fn validate(&self) -> Result<(), EnvError> {
        let ok = self.p_limit > 0.0
            && self.capacity > 0.0
            && self.efficiency > 0.0
            && self.efficiency <= 1.0
            && 0.0 <= self.soc_min
            && self.soc_min < self.soc_max
            && self.soc_max <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(EnvError::Config(format!("invalid ESS unit {self:?}")))
        }
    }

    /// Power window `(−max_discharge, max_charge)` in kW that keeps the SOC
    /// inside `[soc_min, soc_max]` after one step of length `dt`.
    pub fn power_window(&self, soc: f64, dt: f64) -> (f64, f64) {
        let charge_room = ((self.soc_max - soc).max(0.0)) * self.capacity / (self.efficiency * dt);
        let discharge_room = ((soc - self.soc_min).max(0.0)) * self.efficiency * self.capacity / dt;
        (-self.p_limit.min(discharge_room), self.p_limit.min(charge_room))
    }

    /// Unclamped efficiency-corrected SOC after exchanging `p_ess` for `dt` hours.
    pub fn raw_soc_after(&self, soc: f64, p_ess: f64, dt: f64) -> f64 {
        if p_ess >= 0.0 {
            soc + self.efficiency * p_ess * dt / self.capacity
        } else {
            soc + p_ess * dt / (self.efficiency * self.capacity)
        }
    }

    /// Inverse of [`EssUnit::raw_soc_after`]: the power that moves `soc` to `target`.
    pub fn power_for_soc(&self, soc: f64, target: f64, dt: f64) -> f64 {
        let delta = target - soc;
        if delta >= 0.0 {
            delta * self.capacity / (self.efficiency * dt)
        } else {
            delta * self.efficiency * self.capacity / dt
        }
    }

    /// Applies `p_ess` and returns `(new_soc, effective_p_ess)`. When the update
    /// would leave `[soc_min, soc_max]` the SOC is clamped and the effective
    /// power is reduced to the amount that actually fits.
    pub fn apply(&self, soc: f64, p_ess: f64, dt: f64) -> Result<(f64, f64), EnvError> {
        if !p_ess.is_finite() || p_ess.abs() > self.p_limit * (1.0 + 1e-12) {
            return Err(EnvError::Domain(format!(
                "|p_ess| = {} exceeds the ESS power limit {}",
                p_ess.abs(),
                self.p_limit
            )));
        }
        let raw = self.raw_soc_after(soc, p_ess, dt);
        if raw > self.soc_max {
            let clamped = self.soc_max.max(soc);
            Ok((clamped, self.power_for_soc(soc, clamped, dt)))
        } else if raw < self.soc_min {
            let clamped = self.soc_min.min(soc);
            Ok((clamped, self.power_for_soc(soc, clamped, dt)))
        } else {
            Ok((raw, p_ess))
        }
    }
}

/// Physical configuration of the microgrid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub dgs: Vec<DgUnit>,
    pub esss: Vec<EssUnit>,
    /// Import/export limit P̄^C, kW.
    pub grid_limit: f64,
    /// Selling-price coefficient β.
    pub sell_coeff: f64,
    /// Step length, hours.
    pub dt: f64,
    /// Episode length in steps.
    pub horizon: usize,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            dgs: vec![
                DgUnit {
                    a_cost: 0.0034,
                    b_cost: 3.0,
                    c_cost: 30.0,
                    p_min: 10.0,
                    p_max: 150.0,
                    ramp_up: 100.0,
                    ramp_down: 100.0,
                },
                DgUnit {
                    a_cost: 0.001,
                    b_cost: 10.0,
                    c_cost: 40.0,
                    p_min: 50.0,
                    p_max: 375.0,
                    ramp_up: 100.0,
                    ramp_down: 100.0,
                },
                DgUnit {
                    a_cost: 0.001,
                    b_cost: 15.0,
                    c_cost: 70.0,
                    p_min: 100.0,
                    p_max: 500.0,
                    ramp_up: 200.0,
                    ramp_down: 200.0,
                },
            ],
            esss: vec![EssUnit {
                p_limit: 100.0,
                capacity: 500.0,
                efficiency: 0.9,
                soc_min: 0.2,
                soc_max: 0.8,
            }],
            grid_limit: 30.0,
            sell_coeff: 0.5,
            dt: 1.0,
            horizon: 24,
        }
    }
}

impl SystemConfig {
    /// Three DG units and three ESSs, used for the scaling study.
    pub fn large_case() -> Self {
        let mut cfg = Self::default();
        let base = cfg.esss[0].clone();
        cfg.esss = vec![
            base.clone(),
            EssUnit {
                p_limit: 80.0,
                capacity: 400.0,
                ..base.clone()
            },
            EssUnit {
                p_limit: 60.0,
                capacity: 300.0,
                efficiency: 0.92,
                ..base
            },
        ];
        cfg
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.dgs.is_empty() && self.esss.is_empty() {
            return Err(EnvError::Config("system has no controllable units".into()));
        }
        for dg in &self.dgs {
            dg.validate()?;
        }
        for ess in &self.esss {
            ess.validate()?;
        }
        if !(self.grid_limit >= 0.0) {
            return Err(EnvError::Config("grid_limit must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.sell_coeff) {
            return Err(EnvError::Config("sell_coeff must lie in [0, 1]".into()));
        }
        if !(self.dt > 0.0) || self.horizon == 0 {
            return Err(EnvError::Config("dt must be > 0 and horizon >= 1".into()));
        }
        Ok(())
    }

    pub fn action_dim(&self) -> usize {
        self.dgs.len() + self.esss.len()
    }

    pub fn min_generation(&self) -> f64 {
        self.dgs.iter().map(|d| d.p_min).sum()
    }

    pub fn max_generation(&self) -> f64 {
        self.dgs.iter().map(|d| d.p_max).sum()
    }
}

/// Observation of the system at step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub t: usize,
    pub pv: f64,
    pub load: f64,
    pub price: f64,
    pub dg_prev: Vec<f64>,
    pub soc: Vec<f64>,
}

/// Physical set-points for one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub p_dg: Vec<f64>,
    /// Positive = charging.
    pub p_ess: Vec<f64>,
}

impl Action {
    pub fn flatten(&self) -> Vec<f64> {
        self.p_dg.iter().chain(&self.p_ess).copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    pub sigma1: f64,
    pub sigma2: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            sigma1: 0.01,
            sigma2: 20.0,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.sigma1 > 0.0 && self.sigma2 >= 0.0 {
            Ok(())
        } else {
            Err(EnvError::Config(format!("invalid reward parameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub next_state: EnvState,
    /// The set-points actually executed after clipping.
    pub executed: Action,
    pub reward: f64,
    /// DG plus exchange cost for the step, $.
    pub operating_cost: f64,
    pub unbalance: f64,
    pub grid_power: f64,
    /// Set on the last step of the horizon; `next_state.t == horizon` then.
    pub terminal: bool,
}

/// DG operating cost `a·p² + b·p + c` in $/h; zero when the unit is off.
pub fn dg_cost(unit: &DgUnit, p: f64) -> Result<f64, EnvError> {
    if !p.is_finite() || p < 0.0 {
        return Err(EnvError::Domain(format!("DG output must be >= 0, got {p}")));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    Ok(unit.a_cost * p * p + unit.b_cost * p + unit.c_cost)
}

/// Cost of exchanging `p_grid` with the network at `price`; exports are
/// remunerated at `sell_coeff · price`.
pub fn exchange_cost(p_grid: f64, price: f64, sell_coeff: f64) -> f64 {
    if p_grid > 0.0 {
        price * p_grid
    } else if p_grid < 0.0 {
        sell_coeff * price * p_grid
    } else {
        0.0
    }
}

/// SOC after one step, clamped to the unit's SOC window.
pub fn soc_update(ess: &EssUnit, soc: f64, p_ess: f64, dt: f64) -> Result<f64, EnvError> {
    ess.apply(soc, p_ess, dt).map(|(s, _)| s)
}

/// Splits a net deficit into what the grid can cover and the residual unbalance.
pub fn settle_grid(net_deficit: f64, grid_limit: f64) -> (f64, f64) {
    let grid = net_deficit.clamp(-grid_limit, grid_limit);
    (grid, (net_deficit - grid).abs())
}

pub fn reward(total_cost: f64, unbalance: f64, params: &RewardParams) -> f64 {
    -params.sigma1 * total_cost - params.sigma2 * unbalance
}

/// Initial SOC for [`reset`].
#[derive(Debug)]
pub enum InitSoc<'a, R: Rng> {
    Fixed(Vec<f64>),
    Random(&'a mut R),
}

pub fn reset<R: Rng>(
    profile: &DayProfile,
    cfg: &SystemConfig,
    init_soc: InitSoc<'_, R>,
) -> Result<EnvState, EnvError> {
    if profile.len() != cfg.horizon {
        return Err(EnvError::Dimension {
            what: "profile hours",
            expected: cfg.horizon,
            got: profile.len(),
        });
    }
    let soc = match init_soc {
        InitSoc::Fixed(soc) => {
            if soc.len() != cfg.esss.len() {
                return Err(EnvError::Dimension {
                    what: "initial SOC values",
                    expected: cfg.esss.len(),
                    got: soc.len(),
                });
            }
            for (s, ess) in soc.iter().zip(&cfg.esss) {
                if !(ess.soc_min..=ess.soc_max).contains(s) {
                    return Err(EnvError::Domain(format!(
                        "initial SOC {s} outside [{}, {}]",
                        ess.soc_min, ess.soc_max
                    )));
                }
            }
            soc
        }
        InitSoc::Random(rng) => cfg
            .esss
            .iter()
            .map(|e| rng.random_range(e.soc_min..=e.soc_max))
            .collect(),
    };
    Ok(EnvState {
        t: 0,
        pv: profile.pv[0],
        load: profile.load[0],
        price: profile.price[0],
        dg_prev: cfg.dgs.iter().map(|d| d.p_min).collect(),
        soc,
    })
}

/// Clips an action into the physically executable set: DG box and ramp
/// window, ESS power limit and SOC headroom.
pub fn clip_action(state: &EnvState, action: &Action, cfg: &SystemConfig) -> Action {
    let p_dg = cfg
        .dgs
        .iter()
        .zip(&state.dg_prev)
        .zip(&action.p_dg)
        .map(|((dg, &prev), &p)| {
            let (lo, hi) = dg.window(prev);
            p.clamp(lo, hi)
        })
        .collect();
    let p_ess = cfg
        .esss
        .iter()
        .zip(&state.soc)
        .zip(&action.p_ess)
        .map(|((ess, &soc), &p)| {
            let (lo, hi) = ess.power_window(soc, cfg.dt);
            p.clamp(lo, hi)
        })
        .collect();
    Action { p_dg, p_ess }
}

/// Net deficit `load − Σ p_dg − pv + Σ p_ess` the grid has to absorb.
pub fn net_deficit(state: &EnvState, action: &Action) -> f64 {
    state.load - action.p_dg.iter().sum::<f64>() - state.pv + action.p_ess.iter().sum::<f64>()
}

fn check_dims(action: &Action, cfg: &SystemConfig) -> Result<(), EnvError> {
    if action.p_dg.len() != cfg.dgs.len() {
        return Err(EnvError::Dimension {
            what: "DG set-points",
            expected: cfg.dgs.len(),
            got: action.p_dg.len(),
        });
    }
    if action.p_ess.len() != cfg.esss.len() {
        return Err(EnvError::Dimension {
            what: "ESS set-points",
            expected: cfg.esss.len(),
            got: action.p_ess.len(),
        });
    }
    if action.flatten().iter().any(|v| !v.is_finite()) {
        return Err(EnvError::Domain("action contains non-finite values".into()));
    }
    Ok(())
}

pub fn step(
    state: &EnvState,
    action: &Action,
    profile: &DayProfile,
    cfg: &SystemConfig,
    params: &RewardParams,
) -> Result<StepOutcome, EnvError> {
    check_dims(action, cfg)?;
    if state.t >= cfg.horizon {
        return Err(EnvError::Domain(format!(
            "step index {} beyond horizon {}",
            state.t, cfg.horizon
        )));
    }
    if profile.len() != cfg.horizon {
        return Err(EnvError::Dimension {
            what: "profile hours",
            expected: cfg.horizon,
            got: profile.len(),
        });
    }
    let clipped = clip_action(state, action, cfg);

    let mut soc = Vec::with_capacity(cfg.esss.len());
    let mut p_ess = Vec::with_capacity(cfg.esss.len());
    for ((ess, &s), &p) in cfg.esss.iter().zip(&state.soc).zip(&clipped.p_ess) {
        let (next, effective) = ess.apply(s, p, cfg.dt)?;
        soc.push(next);
        p_ess.push(effective);
    }
    let executed = Action {
        p_dg: clipped.p_dg,
        p_ess,
    };

    let (grid_power, unbalance) = settle_grid(net_deficit(state, &executed), cfg.grid_limit);
    let mut cost_rate = exchange_cost(grid_power, state.price, cfg.sell_coeff);
    for (dg, &p) in cfg.dgs.iter().zip(&executed.p_dg) {
        cost_rate += dg_cost(dg, p)?;
    }
    let operating_cost = cost_rate * cfg.dt;
    let r = reward(operating_cost, unbalance, params);

    let next_t = state.t + 1;
    let terminal = next_t >= cfg.horizon;
    let hour = next_t.min(cfg.horizon - 1);
    let next_state = EnvState {
        t: next_t,
        pv: profile.pv[hour],
        load: profile.load[hour],
        price: profile.price[hour],
        dg_prev: executed.p_dg.clone(),
        soc,
    };
    Ok(StepOutcome {
        next_state,
        executed,
        reward: r,
        operating_cost,
        unbalance,
        grid_power,
        terminal,
    })
}
