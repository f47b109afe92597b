//! Perfect-forecast scheduling over a whole day: the cost floor that no
//! online controller can beat.
//!
//! The quadratic DG cost is replaced inside the solver by a convex secant
//! piecewise-linear function with `k_seg` equal segments; the reported cost is
//! always recomputed from the exact quadratic.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{dg_cost, exchange_cost, Action, EnvError, SystemConfig};
use crate::mip::{solve_polished, Cmp, MipError, MipModel, ObjSense, SolveOptions, SolveStatus, SolverBackend, VarRole};
use crate::profiles::DayProfile;

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("invalid horizon problem: {0}")]
    Problem(String),
    #[error("day {day} is infeasible; tightest limits: {limits}")]
    Infeasible { day: String, limits: String },
    #[error("horizon solve hit the time limit")]
    TimeLimit,
    #[error(transparent)]
    Solver(#[from] MipError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonProblem {
    pub sys: SystemConfig,
    pub profile: DayProfile,
    pub init_soc: Vec<f64>,
    /// Output of each DG in the hour before the horizon (ramp reference).
    pub init_dg: Vec<f64>,
    pub k_seg: usize,
}

impl HorizonProblem {
    /// Same starting point as evaluation days: DGs at `p_min`, ESSs at mid SOC.
    pub fn new(sys: &SystemConfig, profile: &DayProfile, k_seg: usize) -> Self {
        Self {
            init_soc: sys.esss.iter().map(|e| 0.5 * (e.soc_min + e.soc_max)).collect(),
            init_dg: sys.dgs.iter().map(|d| d.p_min).collect(),
            sys: sys.clone(),
            profile: profile.clone(),
            k_seg,
        }
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        self.sys.validate()?;
        if self.k_seg == 0 {
            return Err(OracleError::Problem("k_seg must be at least 1".into()));
        }
        self.profile
            .validate(self.sys.horizon)
            .map_err(|e| OracleError::Problem(e.to_string()))?;
        if self.init_soc.len() != self.sys.esss.len() || self.init_dg.len() != self.sys.dgs.len() {
            return Err(OracleError::Problem("initial state does not match the system".into()));
        }
        Ok(())
    }

    /// Upper bound on `linearized − exact` total cost: `Σ_i a_i·w_i²/4 · T·Δt`.
    pub fn linearization_bound(&self) -> f64 {
        let per_step: f64 = self
            .sys
            .dgs
            .iter()
            .map(|d| {
                let w = (d.p_max - d.p_min) / self.k_seg as f64;
                d.a_cost * w * w / 4.0
            })
            .sum();
        per_step * self.sys.horizon as f64 * self.sys.dt
    }
}

/// Variable indices of the horizon model, `[t][unit]`.
#[derive(Debug, Clone)]
pub struct HorizonModel {
    pub model: MipModel,
    pub p_dg: Vec<Vec<usize>>,
    pub charge: Vec<Vec<usize>>,
    pub discharge: Vec<Vec<usize>>,
    /// SOC at the end of each step.
    pub soc: Vec<Vec<usize>>,
    pub import: Vec<usize>,
    pub export: Vec<usize>,
}

/// Linear model of the day. With `exclusive_ess`, a binary per (ESS, step)
/// forbids charging and discharging at the same time.
pub fn build_horizon_model(p: &HorizonProblem, exclusive_ess: bool) -> Result<HorizonModel, OracleError> {
    p.validate()?;
    let sys = &p.sys;
    let dt = sys.dt;
    let mut m = MipModel::new();
    let mut obj: Vec<(usize, f64)> = Vec::new();
    let mut offset = 0.0;
    // β = 1 makes simultaneous import/export cost-neutral; a tiny penalty keeps the split clean.
    let export_eps = if sys.sell_coeff >= 1.0 { 1e-6 } else { 0.0 };
    let mut p_dg: Vec<Vec<usize>> = Vec::new();
    let mut charge: Vec<Vec<usize>> = Vec::new();
    let mut discharge: Vec<Vec<usize>> = Vec::new();
    let mut soc: Vec<Vec<usize>> = Vec::new();
    let mut import = Vec::new();
    let mut export = Vec::new();
    for t in 0..sys.horizon {
        let price = p.profile.price[t];
        let mut pd = Vec::with_capacity(sys.dgs.len());
        for (i, dg) in sys.dgs.iter().enumerate() {
            let pv = m.add_var(format!("p_dg{}_{t}", i + 1), dg.p_min, dg.p_max, VarRole::Aux);
            let w = (dg.p_max - dg.p_min) / p.k_seg as f64;
            let mut link = vec![(pv, 1.0)];
            offset += dg_cost(dg, dg.p_min)? * dt;
            for k in 0..p.k_seg {
                let x0 = dg.p_min + k as f64 * w;
                let slope = (dg_cost(dg, x0 + w)? - dg_cost(dg, x0)?) / w;
                let d = m.add_var(format!("seg_dg{}_{t}_{k}", i + 1), 0.0, w, VarRole::Aux);
                obj.push((d, slope * dt));
                link.push((d, -1.0));
            }
            m.add_constraint(format!("seg_link_dg{}_{t}", i + 1), link, Cmp::Eq, dg.p_min);
            let prev = if t == 0 { None } else { Some(p_dg[t - 1][i]) };
            match prev {
                None => {
                    let p0 = p.init_dg[i];
                    m.vars[pv].lb = m.vars[pv].lb.max(p0 - dg.ramp_down);
                    m.vars[pv].ub = m.vars[pv].ub.min(p0 + dg.ramp_up);
                    if m.vars[pv].lb > m.vars[pv].ub {
                        return Err(OracleError::Problem(format!("initial ramp window of DG{} is empty", i + 1)));
                    }
                }
                Some(q) => {
                    m.add_constraint(format!("ramp_up_dg{}_{t}", i + 1), vec![(pv, 1.0), (q, -1.0)], Cmp::Le, dg.ramp_up);
                    m.add_constraint(
                        format!("ramp_down_dg{}_{t}", i + 1),
                        vec![(q, 1.0), (pv, -1.0)],
                        Cmp::Le,
                        dg.ramp_down,
                    );
                }
            }
            pd.push(pv);
        }
        p_dg.push(pd);

        let (mut ch, mut dis, mut so) = (Vec::new(), Vec::new(), Vec::new());
        for (j, ess) in sys.esss.iter().enumerate() {
            let c = m.add_var(format!("p_ch{}_{t}", j + 1), 0.0, ess.p_limit, VarRole::Aux);
            let d = m.add_var(format!("p_dis{}_{t}", j + 1), 0.0, ess.p_limit, VarRole::Aux);
            let s = m.add_var(format!("soc{}_{t}", j + 1), ess.soc_min, ess.soc_max, VarRole::Aux);
            // soc_t = soc_{t-1} + η·c·Δt/E − d·Δt/(η·E)
            let mut terms = vec![
                (s, 1.0),
                (c, -ess.efficiency * dt / ess.capacity),
                (d, dt / (ess.efficiency * ess.capacity)),
            ];
            let rhs = if t == 0 {
                p.init_soc[j]
            } else {
                terms.push((soc[t - 1][j], -1.0));
                0.0
            };
            m.add_constraint(format!("soc_dyn{}_{t}", j + 1), terms, Cmp::Eq, rhs);
            if exclusive_ess {
                let u = m.add_binary(format!("ch_on{}_{t}", j + 1), VarRole::Aux);
                m.add_constraint(format!("ch_excl{}_{t}", j + 1), vec![(c, 1.0), (u, -ess.p_limit)], Cmp::Le, 0.0);
                m.add_constraint(format!("dis_excl{}_{t}", j + 1), vec![(d, 1.0), (u, ess.p_limit)], Cmp::Le, ess.p_limit);
            }
            ch.push(c);
            dis.push(d);
            so.push(s);
        }
        charge.push(ch);
        discharge.push(dis);
        soc.push(so);

        let gi = m.add_var(format!("p_imp_{t}"), 0.0, sys.grid_limit, VarRole::Aux);
        let ge = m.add_var(format!("p_exp_{t}"), 0.0, sys.grid_limit, VarRole::Aux);
        obj.push((gi, price * dt));
        obj.push((ge, (-sys.sell_coeff * price + export_eps) * dt));
        m.add_constraint(format!("grid_net_{t}"), vec![(gi, 1.0), (ge, 1.0)], Cmp::Le, sys.grid_limit);
        import.push(gi);
        export.push(ge);

        // Σ p_dg − Σ (c − d) + P⁺ − P⁻ = load − pv
        let mut bal: Vec<(usize, f64)> = p_dg[t].iter().map(|&v| (v, 1.0)).collect();
        for j in 0..sys.esss.len() {
            bal.push((charge[t][j], -1.0));
            bal.push((discharge[t][j], 1.0));
        }
        bal.push((gi, 1.0));
        bal.push((ge, -1.0));
        m.add_constraint(format!("balance_{t}"), bal, Cmp::Eq, p.profile.load[t] - p.profile.pv[t]);
    }
    m.set_objective(ObjSense::Minimize, obj, offset);
    Ok(HorizonModel {
        model: m,
        p_dg,
        charge,
        discharge,
        soc,
        import,
        export,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonSchedule {
    pub label: String,
    /// `[t][i]`
    pub p_dg: Vec<Vec<f64>>,
    /// Net ESS power `[t][j]`, positive when charging.
    pub p_ess: Vec<Vec<f64>>,
    pub p_grid: Vec<f64>,
    /// SOC at the start of each step plus the final SOC, `[t][j]` for `t = 0..=T`.
    pub soc: Vec<Vec<f64>>,
    /// Exact per-step operating cost in $.
    pub step_cost: Vec<f64>,
    pub dg_cost: f64,
    pub exchange_cost: f64,
    pub total_cost: f64,
    /// Objective of the piecewise-linear model.
    pub linearized_cost: f64,
    pub used_binaries: bool,
    pub solve_ms: f64,
}

impl HorizonSchedule {
    pub fn action(&self, t: usize) -> Action {
        Action {
            p_dg: self.p_dg[t].clone(),
            p_ess: self.p_ess[t].clone(),
        }
    }
}

fn extract(p: &HorizonProblem, hm: &HorizonModel, x: &[f64], solve_ms: f64, used_binaries: bool) -> Result<HorizonSchedule, OracleError> {
    let sys = &p.sys;
    let mut sched = HorizonSchedule {
        label: p.profile.label(),
        p_dg: Vec::new(),
        p_ess: Vec::new(),
        p_grid: Vec::new(),
        soc: vec![p.init_soc.clone()],
        step_cost: Vec::new(),
        dg_cost: 0.0,
        exchange_cost: 0.0,
        total_cost: 0.0,
        linearized_cost: hm.model.objective_value(x),
        used_binaries,
        solve_ms,
    };
    for t in 0..sys.horizon {
        let pd: Vec<f64> = sys
            .dgs
            .iter()
            .zip(&hm.p_dg[t])
            .map(|(d, &v)| x[v].clamp(d.p_min, d.p_max))
            .collect();
        let pe: Vec<f64> = (0..sys.esss.len())
            .map(|j| x[hm.charge[t][j]] - x[hm.discharge[t][j]])
            .collect();
        let pn = x[hm.import[t]] - x[hm.export[t]];
        let mut dgc = 0.0;
        for (d, &v) in sys.dgs.iter().zip(&pd) {
            dgc += dg_cost(d, v)?;
        }
        let exc = exchange_cost(pn, p.profile.price[t], sys.sell_coeff);
        sched.dg_cost += dgc * sys.dt;
        sched.exchange_cost += exc * sys.dt;
        sched.step_cost.push((dgc + exc) * sys.dt);
        sched.soc.push((0..sys.esss.len()).map(|j| x[hm.soc[t][j]]).collect());
        sched.p_dg.push(pd);
        sched.p_ess.push(pe);
        sched.p_grid.push(pn);
    }
    sched.total_cost = sched.dg_cost + sched.exchange_cost;
    Ok(sched)
}

fn simultaneous_ess(hm: &HorizonModel, x: &[f64]) -> bool {
    hm.charge
        .iter()
        .zip(&hm.discharge)
        .any(|(c, d)| c.iter().zip(d).any(|(&ci, &di)| x[ci] > 1e-7 && x[di] > 1e-7))
}

fn diagnose(p: &HorizonProblem) -> String {
    let sys = &p.sys;
    let mut worst = (f64::INFINITY, String::from("none"));
    for t in 0..sys.horizon {
        let net = p.profile.load[t] - p.profile.pv[t];
        let gen_min: f64 = sys.dgs.iter().map(|d| d.p_min).sum();
        let gen_max: f64 = sys.dgs.iter().map(|d| d.p_max).sum();
        let ess: f64 = sys.esss.iter().map(|e| e.p_limit).sum();
        let low = net - (gen_min - ess - sys.grid_limit);
        let high = (gen_max + ess + sys.grid_limit) - net;
        if low < worst.0 {
            worst = (low, format!("hour {t}: net load {net:.1} kW vs minimum supply {:.1} kW", gen_min - ess - sys.grid_limit));
        }
        if high < worst.0 {
            worst = (high, format!("hour {t}: net load {net:.1} kW vs maximum supply {:.1} kW", gen_max + ess + sys.grid_limit));
        }
    }
    format!("{} (ramp and SOC limits may also bind)", worst.1)
}

/// Optimal schedule for the day. Re-solves with exclusive charge/discharge
/// binaries if the LP uses both at once (or whenever an ESS has η = 1).
pub fn solve_horizon(
    p: &HorizonProblem,
    backend: &dyn SolverBackend,
    opts: &SolveOptions,
) -> Result<HorizonSchedule, OracleError> {
    let lossless = p.sys.esss.iter().any(|e| e.efficiency >= 1.0);
    let mut exclusive = lossless;
    loop {
        let hm = build_horizon_model(p, exclusive)?;
        let res = solve_polished(backend, &hm.model, opts)?;
        let x = match (res.status, res.values) {
            (SolveStatus::Optimal, Some(x)) => x,
            (SolveStatus::Infeasible, _) => {
                return Err(OracleError::Infeasible {
                    day: p.profile.label(),
                    limits: diagnose(p),
                })
            }
            _ => return Err(OracleError::TimeLimit),
        };
        if !exclusive && simultaneous_ess(&hm, &x) {
            exclusive = true;
            continue;
        }
        return extract(p, &hm, &x, res.wall_ms, exclusive);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub balance: f64,
    pub dg_box: f64,
    pub ramp: f64,
    pub ess_power: f64,
    pub soc_bounds: f64,
    pub soc_dynamics: f64,
    pub grid_limit: f64,
    /// Recomputed exact cost minus the schedule's reported total.
    pub cost_delta: f64,
}

impl ResidualReport {
    pub fn max_residual(&self) -> f64 {
        [
            self.balance,
            self.dg_box,
            self.ramp,
            self.ess_power,
            self.soc_bounds,
            self.soc_dynamics,
            self.grid_limit,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Recomputes every constraint residual (kW, SOC residuals in kWh) and the
/// exact cost from the schedule's power values.
pub fn validate_schedule(s: &HorizonSchedule, p: &HorizonProblem) -> Result<ResidualReport, OracleError> {
    let sys = &p.sys;
    let mut r = ResidualReport {
        balance: 0.0,
        dg_box: 0.0,
        ramp: 0.0,
        ess_power: 0.0,
        soc_bounds: 0.0,
        soc_dynamics: 0.0,
        grid_limit: 0.0,
        cost_delta: 0.0,
    };
    if s.p_dg.len() != sys.horizon || s.p_ess.len() != sys.horizon || s.soc.len() != sys.horizon + 1 {
        return Err(OracleError::Problem("schedule length does not match the horizon".into()));
    }
    let mut cost = 0.0;
    let mut prev = p.init_dg.clone();
    for t in 0..sys.horizon {
        let (pd, pe, pn) = (&s.p_dg[t], &s.p_ess[t], s.p_grid[t]);
        let supply: f64 = pd.iter().sum::<f64>() - pe.iter().sum::<f64>() + p.profile.pv[t] + pn;
        r.balance = r.balance.max((supply - p.profile.load[t]).abs());
        for (i, d) in sys.dgs.iter().enumerate() {
            r.dg_box = r.dg_box.max(d.p_min - pd[i]).max(pd[i] - d.p_max);
            r.ramp = r.ramp.max(pd[i] - prev[i] - d.ramp_up).max(prev[i] - pd[i] - d.ramp_down);
            cost += dg_cost(d, pd[i].clamp(d.p_min, d.p_max))? * sys.dt;
        }
        for (j, e) in sys.esss.iter().enumerate() {
            r.ess_power = r.ess_power.max(pe[j].abs() - e.p_limit);
            let next = e.raw_soc_after(s.soc[t][j], pe[j], sys.dt);
            r.soc_dynamics = r.soc_dynamics.max((next - s.soc[t + 1][j]).abs() * e.capacity);
            r.soc_bounds = r
                .soc_bounds
                .max((e.soc_min - s.soc[t + 1][j]) * e.capacity)
                .max((s.soc[t + 1][j] - e.soc_max) * e.capacity);
        }
        r.grid_limit = r.grid_limit.max(pn.abs() - sys.grid_limit);
        cost += exchange_cost(pn, p.profile.price[t], sys.sell_coeff) * sys.dt;
        prev.clone_from(pd);
    }
    r.cost_delta = cost - s.total_cost;
    Ok(r)
}

/// Schedule CSV with the same columns as a dispatch trajectory.
pub fn write_schedule<W: Write>(writer: W, s: &HorizonSchedule, sys: &SystemConfig) -> Result<(), OracleError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string()];
    header.extend((1..=sys.dgs.len()).map(|i| format!("p_dg{i}")));
    header.extend((1..=sys.esss.len()).map(|j| format!("p_ess{j}")));
    header.push("p_grid_kw".into());
    header.extend((1..=sys.esss.len()).map(|j| format!("soc_{j}")));
    header.extend(["cost_usd", "unbalance_kw", "q_value", "solve_ms"].map(String::from));
    w.write_record(&header)?;
    for t in 0..s.p_dg.len() {
        let mut rec = vec![t.to_string()];
        rec.extend(s.p_dg[t].iter().map(|v| v.to_string()));
        rec.extend(s.p_ess[t].iter().map(|v| v.to_string()));
        rec.push(s.p_grid[t].to_string());
        rec.extend(s.soc[t + 1].iter().map(|v| v.to_string()));
        rec.push(s.step_cost[t].to_string());
        rec.push("0".into());
        rec.push(String::new());
        rec.push(String::new());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub label: String,
    pub total_cost: f64,
    pub dg_cost: f64,
    pub exchange_cost: f64,
    pub linearized_cost: f64,
    pub linearization_bound: f64,
    pub used_binaries: bool,
}

pub fn save_schedule(dir: impl AsRef<Path>, s: &HorizonSchedule, p: &HorizonProblem) -> Result<(), OracleError> {
    let dir = dir.as_ref();
    let stem = s.label.replace(['/', ' '], "_");
    write_schedule(std::fs::File::create(dir.join(format!("oracle_{stem}.csv")))?, s, &p.sys)?;
    let breakdown = CostBreakdown {
        label: s.label.clone(),
        total_cost: s.total_cost,
        dg_cost: s.dg_cost,
        exchange_cost: s.exchange_cost,
        linearized_cost: s.linearized_cost,
        linearization_bound: p.linearization_bound(),
        used_binaries: s.used_binaries,
    };
    std::fs::write(
        dir.join(format!("oracle_{stem}.json")),
        serde_json::to_string_pretty(&breakdown)? + "\n",
    )?;
    Ok(())
}
