//! Online execution: for every step, maximize the frozen Q-network over the
//! actions that satisfy the operational constraints.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::env::{step, Action, EnvError, EnvState, RewardParams, StepOutcome, SystemConfig};
use crate::mip::{
    encode_network, set_objective_max_output, solve_polished, BackendKind, Cmp, MipError, MipModel, ObjSense,
    SolveOptions, SolveStatus, SolverBackend, VarRole,
};
use crate::neural::DenseNet;
use crate::profiles::DayProfile;
use crate::rl::{action_maps, denormalize_action, AgentBundle, FeatureSpec};

/// Feasibility tolerance in kW (and SOC fraction) used by the audit.
pub const FEAS_TOL: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum DispatchError {
    #[error("step {t}: constraint '{constraint}' cannot be met: {detail}")]
    Infeasible {
        t: usize,
        constraint: String,
        detail: String,
    },
    #[error("step {t}: solver hit its time limit{}", if .incumbent.is_some() { " (incumbent available)" } else { "" })]
    TimeLimit { t: usize, incumbent: Option<Action> },
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("step {t}: {source}")]
    Solver {
        t: usize,
        #[source]
        source: MipError,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Rl(#[from] crate::rl::RlError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Action windows and the balance requirement for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    /// Physical windows, DGs then ESSs.
    pub windows: Vec<(f64, f64)>,
    /// The same windows in normalized action coordinates.
    pub norm_windows: Vec<(f64, f64)>,
    pub grid_limit: f64,
    /// `load − pv`, to be met by `Σ p_dg − Σ p_ess + P^N`.
    pub net_load: f64,
}

impl ConstraintSet {
    /// Range of `Σ p_dg − Σ p_ess` over the windows.
    pub fn supply_range(&self, n_dg: usize) -> (f64, f64) {
        let (mut lo, mut hi) = (0.0, 0.0);
        for (k, &(l, h)) in self.windows.iter().enumerate() {
            if k < n_dg {
                lo += l;
                hi += h;
            } else {
                lo -= h;
                hi -= l;
            }
        }
        (lo, hi)
    }
}

fn unit_label(cfg: &SystemConfig, k: usize) -> String {
    let nd = cfg.dgs.len();
    if k < nd {
        format!("dg{}", k + 1)
    } else {
        format!("ess{}", k - nd + 1)
    }
}

/// Box, ramp, ESS power and SOC-headroom windows plus the balance data for
/// `state`. Fails with a diagnosis naming the constraint when the feasible
/// set is visibly empty.
pub fn build_constraints(state: &EnvState, cfg: &SystemConfig) -> Result<ConstraintSet, DispatchError> {
    if state.dg_prev.len() != cfg.dgs.len() {
        return Err(DispatchError::Dimension {
            what: "previous DG outputs",
            expected: cfg.dgs.len(),
            got: state.dg_prev.len(),
        });
    }
    if state.soc.len() != cfg.esss.len() {
        return Err(DispatchError::Dimension {
            what: "SOC values",
            expected: cfg.esss.len(),
            got: state.soc.len(),
        });
    }
    let mut windows = Vec::with_capacity(cfg.action_dim());
    for (i, (dg, &prev)) in cfg.dgs.iter().zip(&state.dg_prev).enumerate() {
        let (lo, hi) = dg.window(prev);
        if lo > hi {
            return Err(DispatchError::Infeasible {
                t: state.t,
                constraint: format!("ramp_dg{}", i + 1),
                detail: format!(
                    "ramp window around {prev} kW does not meet [{}, {}]",
                    dg.p_min, dg.p_max
                ),
            });
        }
        windows.push((lo, hi));
    }
    for (j, (ess, &soc)) in cfg.esss.iter().zip(&state.soc).enumerate() {
        let (lo, hi) = ess.power_window(soc, cfg.dt);
        if lo > hi {
            return Err(DispatchError::Infeasible {
                t: state.t,
                constraint: format!("soc_ess{}", j + 1),
                detail: format!("SOC {soc} leaves no admissible power"),
            });
        }
        windows.push((lo, hi));
    }
    let norm_windows = action_maps(cfg)
        .iter()
        .zip(&windows)
        .map(|(m, &(lo, hi))| (((lo - m.offset) / m.scale).max(-1.0), ((hi - m.offset) / m.scale).min(1.0)))
        .collect();
    let cs = ConstraintSet {
        windows,
        norm_windows,
        grid_limit: cfg.grid_limit,
        net_load: state.load - state.pv,
    };
    let (lo, hi) = cs.supply_range(cfg.dgs.len());
    if cs.net_load < lo - cfg.grid_limit - FEAS_TOL || cs.net_load > hi + cfg.grid_limit + FEAS_TOL {
        return Err(DispatchError::Infeasible {
            t: state.t,
            constraint: "power_balance".into(),
            detail: format!(
                "net load {:.3} kW outside achievable supply [{:.3}, {:.3}] kW with grid limit {} kW",
                cs.net_load, lo, hi, cfg.grid_limit
            ),
        });
    }
    Ok(cs)
}

/// One violated operational constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: String,
    pub residual: f64,
}

/// Independent audit of an action against the operational constraints.
///
/// The grid exchange is the one the action implies, clipped to the grid
/// limit; whatever the grid cannot absorb is reported as a single
/// `power_balance` violation. Intervals are closed with tolerance [`FEAS_TOL`].
pub fn feasibility_check(action: &Action, state: &EnvState, cfg: &SystemConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut flag = |name: String, r: f64| {
        if r > FEAS_TOL || r.is_nan() {
            out.push(Violation {
                constraint: name,
                residual: r,
            });
        }
    };
    if action.p_dg.len() != cfg.dgs.len() || action.p_ess.len() != cfg.esss.len() {
        flag("dimensions".into(), f64::INFINITY);
        return out;
    }
    for (i, (dg, &p)) in cfg.dgs.iter().zip(&action.p_dg).enumerate() {
        flag(format!("dg{}_min", i + 1), dg.p_min - p);
        flag(format!("dg{}_max", i + 1), p - dg.p_max);
        if let Some(&prev) = state.dg_prev.get(i) {
            flag(format!("dg{}_ramp_up", i + 1), p - prev - dg.ramp_up);
            flag(format!("dg{}_ramp_down", i + 1), prev - p - dg.ramp_down);
        }
    }
    for (j, (ess, &p)) in cfg.esss.iter().zip(&action.p_ess).enumerate() {
        flag(format!("ess{}_power", j + 1), p.abs() - ess.p_limit);
        if let Some(&soc) = state.soc.get(j) {
            let next = ess.raw_soc_after(soc, p, cfg.dt);
            // SOC residuals are reported in kWh so the kW-scale tolerance applies.
            flag(format!("ess{}_soc_max", j + 1), (next - ess.soc_max) * ess.capacity);
            flag(format!("ess{}_soc_min", j + 1), (ess.soc_min - next) * ess.capacity);
        }
    }
    let deficit = state.load - state.pv - action.p_dg.iter().sum::<f64>() + action.p_ess.iter().sum::<f64>();
    flag("power_balance".into(), deficit.abs() - cfg.grid_limit);
    out
}

/// Largest residual reported by [`feasibility_check`], 0 when feasible.
pub fn max_residual(action: &Action, state: &EnvState, cfg: &SystemConfig) -> f64 {
    let deficit = state.load - state.pv - action.p_dg.iter().sum::<f64>() + action.p_ess.iter().sum::<f64>();
    let mut worst = (deficit.abs() - cfg.grid_limit).max(0.0);
    for v in feasibility_check(action, state, cfg) {
        worst = worst.max(v.residual);
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchSettings {
    #[serde(default)]
    pub backend: Option<BackendKind>,
    #[serde(default = "dispatch_options")]
    pub options: SolveOptions,
    /// Break ties among optimal actions by the lexicographically smallest action.
    #[serde(default)]
    pub lexicographic: bool,
}

/// Dispatch stops at a 1e-4 relative gap: the incumbent is almost always
/// optimal long before the bound closes.
pub fn dispatch_options() -> SolveOptions {
    SolveOptions {
        time_limit: None,
        mip_rel_gap: 1e-4,
        mip_abs_gap: 1e-6,
    }
}

impl Default for DispatchSettings {
    fn default() -> Self {
        Self {
            backend: None,
            options: dispatch_options(),
            lexicographic: false,
        }
    }
}

/// Frozen Q-network plus everything needed to turn states into actions.
pub struct DispatchContext<'a> {
    pub q_net: &'a DenseNet,
    pub features: &'a FeatureSpec,
    pub sys: &'a SystemConfig,
    pub backend: Box<dyn SolverBackend>,
    pub options: SolveOptions,
    pub lexicographic: bool,
}

impl<'a> DispatchContext<'a> {
    pub fn new(
        q_net: &'a DenseNet,
        features: &'a FeatureSpec,
        sys: &'a SystemConfig,
        settings: &DispatchSettings,
    ) -> Result<Self, DispatchError> {
        let expected = features.dim(sys) + sys.action_dim();
        if q_net.input_dim() != expected || q_net.output_dim() != 1 {
            return Err(DispatchError::Dimension {
                what: "Q-network inputs",
                expected,
                got: q_net.input_dim(),
            });
        }
        let kind = BackendKind::resolve(settings.backend).map_err(|e| DispatchError::Solver { t: 0, source: e })?;
        Ok(Self {
            q_net,
            features,
            sys,
            backend: kind.create().map_err(|e| DispatchError::Solver { t: 0, source: e })?,
            options: settings.options,
            lexicographic: settings.lexicographic,
        })
    }

    pub fn with_backend(
        q_net: &'a DenseNet,
        features: &'a FeatureSpec,
        sys: &'a SystemConfig,
        backend: Box<dyn SolverBackend>,
    ) -> Self {
        Self {
            q_net,
            features,
            sys,
            backend,
            options: SolveOptions::default(),
            lexicographic: false,
        }
    }
}

/// The max-Q model for one state, with handles to its action and grid variables.
#[derive(Debug, Clone)]
pub struct DispatchModel {
    pub model: MipModel,
    pub constraints: ConstraintSet,
    pub action_vars: Vec<usize>,
    pub grid_var: usize,
    pub output_var: usize,
    pub input_labels: Vec<String>,
}

pub fn build_dispatch_model(
    q_net: &DenseNet,
    features: &FeatureSpec,
    sys: &SystemConfig,
    state: &EnvState,
) -> Result<DispatchModel, DispatchError> {
    let cs = build_constraints(state, sys)?;
    let s = features.featurize(state, sys);
    let mut input_box: Vec<(f64, f64)> = s.iter().map(|&v| (v, v)).collect();
    input_box.extend(cs.norm_windows.iter().copied());
    let mut enc = encode_network(q_net, &input_box).map_err(|e| DispatchError::Solver { t: state.t, source: e })?;
    set_objective_max_output(&mut enc).map_err(|e| DispatchError::Solver { t: state.t, source: e })?;
    let ds = s.len();
    let action_vars = enc.inputs[ds..].to_vec();
    let grid_var = enc.model.add_var("p_grid", -sys.grid_limit, sys.grid_limit, VarRole::Aux);
    // Σ β_i a_i − Σ L_j a_j + P^N = load − pv − Σ α_i
    let mut terms = Vec::with_capacity(action_vars.len() + 1);
    let mut rhs = cs.net_load;
    let nd = sys.dgs.len();
    for (k, (m, &v)) in action_maps(sys).iter().zip(&action_vars).enumerate() {
        let sign = if k < nd { 1.0 } else { -1.0 };
        terms.push((v, sign * m.scale));
        rhs -= sign * m.offset;
    }
    terms.push((grid_var, 1.0));
    enc.model.add_constraint("balance", terms, Cmp::Eq, rhs);

    let mut labels = vec!["pv".to_string(), "load".to_string()];
    labels.extend((1..=nd).map(|i| format!("dg{i}_prev")));
    labels.extend((1..=sys.esss.len()).map(|j| format!("soc{j}")));
    if features.include_time_price {
        labels.push("hour".into());
        labels.push("price".into());
    }
    labels.extend((1..=nd).map(|i| format!("a_dg{i}")));
    labels.extend((1..=sys.esss.len()).map(|j| format!("a_ess{j}")));
    Ok(DispatchModel {
        output_var: enc.outputs[0],
        model: enc.model,
        constraints: cs,
        action_vars,
        grid_var,
        input_labels: labels,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchResult {
    pub action: Action,
    pub action_norm: Vec<f64>,
    pub grid_power: f64,
    pub predicted_q: f64,
    pub status: SolveStatus,
    pub solve_ms: f64,
    /// Constraints active at the returned action.
    pub binding: Vec<String>,
}

fn extract(
    dm: &DispatchModel,
    values: &[f64],
    sys: &SystemConfig,
) -> Result<(Vec<f64>, Action), DispatchError> {
    let a_norm: Vec<f64> = dm
        .action_vars
        .iter()
        .zip(&dm.constraints.norm_windows)
        .map(|(&v, &(lo, hi))| values[v].clamp(lo, hi))
        .collect();
    let mut action = denormalize_action(&a_norm, sys)?;
    // Snap to the physical windows to remove round-off from the affine map.
    let nd = sys.dgs.len();
    for (k, &(lo, hi)) in dm.constraints.windows.iter().enumerate() {
        let p = if k < nd { &mut action.p_dg[k] } else { &mut action.p_ess[k - nd] };
        *p = p.clamp(lo, hi);
    }
    Ok((a_norm, action))
}

fn solve_model(ctx: &DispatchContext<'_>, model: &MipModel, t: usize) -> Result<crate::mip::SolveResult, DispatchError> {
    solve_polished(ctx.backend.as_ref(), model, &ctx.options).map_err(|e| DispatchError::Solver { t, source: e })
}

/// Solves the max-Q problem for `state` and returns the physical action.
pub fn dispatch_step(ctx: &DispatchContext<'_>, state: &EnvState) -> Result<DispatchResult, DispatchError> {
    let start = Instant::now();
    let t = state.t;
    let mut dm = build_dispatch_model(ctx.q_net, ctx.features, ctx.sys, state)?;
    let res = solve_model(ctx, &dm.model, t)?;
    let mut values = match (res.status, res.values) {
        (SolveStatus::Optimal, Some(v)) => v,
        (SolveStatus::Infeasible, _) => {
            return Err(DispatchError::Infeasible {
                t,
                constraint: "max_q_model".into(),
                detail: format!("{} backend proved the model infeasible", ctx.backend.name()),
            })
        }
        (SolveStatus::TimeLimit, values) => {
            let incumbent = values.and_then(|v| extract(&dm, &v, ctx.sys).ok()).map(|(_, a)| a);
            return Err(DispatchError::TimeLimit { t, incumbent });
        }
        (SolveStatus::Optimal, None) => {
            return Err(DispatchError::Solver {
                t,
                source: MipError::Backend("optimal status without a solution".into()),
            })
        }
    };
    let q_star = values[dm.output_var];
    if ctx.lexicographic {
        let slack = 1e-7 * (1.0 + q_star.abs());
        dm.model
            .add_constraint("q_floor", vec![(dm.output_var, 1.0)], Cmp::Ge, q_star - slack);
        for k in 0..dm.action_vars.len() {
            let v = dm.action_vars[k];
            dm.model.set_objective(ObjSense::Minimize, vec![(v, 1.0)], 0.0);
            let r = solve_model(ctx, &dm.model, t)?;
            match (r.status, r.values) {
                (SolveStatus::Optimal, Some(vals)) => {
                    let best = vals[v];
                    values = vals;
                    dm.model.vars[v].ub = best.max(dm.model.vars[v].lb);
                }
                _ => break,
            }
        }
    }
    let (action_norm, action) = extract(&dm, &values, ctx.sys)?;
    let predicted_q = {
        let mut x = ctx.features.featurize(state, ctx.sys);
        x.extend_from_slice(&action_norm);
        ctx.q_net.forward(&x).map_err(|e| DispatchError::Solver {
            t,
            source: MipError::Domain(e.to_string()),
        })?[0]
    };
    let mut binding = Vec::new();
    for (k, (&a, &(lo, hi))) in action_norm.iter().zip(&dm.constraints.norm_windows).enumerate() {
        if (a - lo).abs() <= 1e-7 {
            binding.push(format!("{}_lower", unit_label(ctx.sys, k)));
        } else if (a - hi).abs() <= 1e-7 {
            binding.push(format!("{}_upper", unit_label(ctx.sys, k)));
        }
    }
    let grid_power = values[dm.grid_var];
    if (grid_power.abs() - ctx.sys.grid_limit).abs() <= 1e-7 {
        binding.push("grid_limit".into());
    }
    Ok(DispatchResult {
        action,
        action_norm,
        grid_power,
        predicted_q,
        status: SolveStatus::Optimal,
        solve_ms: start.elapsed().as_secs_f64() * 1e3,
        binding,
    })
}

/// One executed step of a day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub state: EnvState,
    /// Action proposed by the controller, before the environment executes it.
    pub proposed: Action,
    pub outcome: StepOutcome,
    pub q_value: f64,
    pub solve_ms: f64,
    /// Largest audit residual of the proposed action.
    pub max_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayTrajectory {
    pub label: String,
    pub steps: Vec<StepRecord>,
}

impl DayTrajectory {
    pub fn total_cost(&self) -> f64 {
        self.steps.iter().map(|s| s.outcome.operating_cost).sum()
    }

    pub fn total_unbalance(&self) -> f64 {
        self.steps.iter().map(|s| s.outcome.unbalance).sum()
    }

    pub fn max_unbalance(&self) -> f64 {
        self.steps.iter().map(|s| s.outcome.unbalance).fold(0.0, f64::max)
    }

    pub fn max_residual(&self) -> f64 {
        self.steps.iter().map(|s| s.max_residual).fold(0.0, f64::max)
    }

    pub fn total_solve_ms(&self) -> f64 {
        self.steps.iter().map(|s| s.solve_ms).sum()
    }

    /// Unbalance priced at the step's tariff, in $.
    pub fn unbalance_value(&self, dt: f64) -> f64 {
        self.steps.iter().map(|s| s.outcome.unbalance * s.state.price * dt).sum()
    }
}

/// Initial state used for evaluation days: DGs at `p_min`, ESSs at mid SOC.
pub fn evaluation_start(profile: &DayProfile, sys: &SystemConfig) -> Result<EnvState, EnvError> {
    let soc = sys.esss.iter().map(|e| 0.5 * (e.soc_min + e.soc_max)).collect();
    crate::env::reset::<rand_chacha::ChaCha8Rng>(profile, sys, crate::env::InitSoc::Fixed(soc))
}

/// Rolls a full day with MIP dispatch.
pub fn run_day(
    ctx: &DispatchContext<'_>,
    profile: &DayProfile,
    reward: &RewardParams,
) -> Result<DayTrajectory, DispatchError> {
    let mut state = evaluation_start(profile, ctx.sys)?;
    let mut steps = Vec::with_capacity(ctx.sys.horizon);
    for _ in 0..ctx.sys.horizon {
        let res = dispatch_step(ctx, &state)?;
        let residual = max_residual(&res.action, &state, ctx.sys);
        let outcome = step(&state, &res.action, profile, ctx.sys, reward)?;
        let next = outcome.next_state.clone();
        steps.push(StepRecord {
            state,
            proposed: res.action,
            outcome,
            q_value: res.predicted_q,
            solve_ms: res.solve_ms,
            max_residual: residual,
        });
        state = next;
    }
    Ok(DayTrajectory {
        label: profile.label(),
        steps,
    })
}

/// Rolls a day by executing the policy network directly; the environment
/// clips actions to the physical limits but nothing enforces the balance.
pub fn run_day_policy(
    bundle: &AgentBundle,
    features: &FeatureSpec,
    sys: &SystemConfig,
    profile: &DayProfile,
    reward: &RewardParams,
) -> Result<DayTrajectory, DispatchError> {
    let mut state = evaluation_start(profile, sys)?;
    let mut steps = Vec::with_capacity(sys.horizon);
    for _ in 0..sys.horizon {
        let start = Instant::now();
        let s = features.featurize(&state, sys);
        let a = bundle.act(&s)?;
        let q = bundle.q_value(&s, &a)?;
        let action = denormalize_action(&a, sys)?;
        let solve_ms = start.elapsed().as_secs_f64() * 1e3;
        let residual = max_residual(&action, &state, sys);
        let outcome = step(&state, &action, profile, sys, reward)?;
        let next = outcome.next_state.clone();
        steps.push(StepRecord {
            state,
            proposed: action,
            outcome,
            q_value: q,
            solve_ms,
            max_residual: residual,
        });
        state = next;
    }
    Ok(DayTrajectory {
        label: profile.label(),
        steps,
    })
}

/// Writes `t,p_dg1..n,p_ess1..m,p_grid_kw,soc_1..m,cost_usd,unbalance_kw,q_value,solve_ms`.
pub fn write_trajectory<W: Write>(writer: W, traj: &DayTrajectory, sys: &SystemConfig) -> Result<(), DispatchError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string()];
    header.extend((1..=sys.dgs.len()).map(|i| format!("p_dg{i}")));
    header.extend((1..=sys.esss.len()).map(|j| format!("p_ess{j}")));
    header.push("p_grid_kw".into());
    header.extend((1..=sys.esss.len()).map(|j| format!("soc_{j}")));
    header.extend(["cost_usd", "unbalance_kw", "q_value", "solve_ms"].map(String::from));
    w.write_record(&header)?;
    for s in &traj.steps {
        let o = &s.outcome;
        let mut rec = vec![s.state.t.to_string()];
        rec.extend(o.executed.p_dg.iter().map(|v| v.to_string()));
        rec.extend(o.executed.p_ess.iter().map(|v| v.to_string()));
        rec.push(o.grid_power.to_string());
        rec.extend(o.next_state.soc.iter().map(|v| v.to_string()));
        rec.push(o.operating_cost.to_string());
        rec.push(o.unbalance.to_string());
        rec.push(s.q_value.to_string());
        rec.push(format!("{:.3}", s.solve_ms));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trajectory(path: impl AsRef<Path>, traj: &DayTrajectory, sys: &SystemConfig) -> Result<(), DispatchError> {
    write_trajectory(std::fs::File::create(path)?, traj, sys)
}
