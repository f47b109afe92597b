use std::time::Instant;

use highs::{HighsModelStatus, HighsSolutionStatus, RowProblem, Sense};

use super::backend::{Capabilities, SolveOptions, SolveResult, SolveStatus, SolverBackend};
use super::model::{Cmp, MipModel, ObjSense};
use super::MipError;

/// HiGHS through its Rust bindings.
#[derive(Debug, Clone, Copy, Default)]
pub struct HighsBackend;

impl SolverBackend for HighsBackend {
    fn name(&self) -> &'static str {
        "highs"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            binaries: true,
            indicators: false,
        }
    }

    fn solve(&self, model: &MipModel, opts: &SolveOptions) -> Result<SolveResult, MipError> {
        model.validate()?;
        let start = Instant::now();
        if model.vars.is_empty() {
            return trivial(model, start);
        }
        let mut pb = RowProblem::default();
        let mut cost = vec![0.0; model.vars.len()];
        for &(j, c) in &model.objective {
            cost[j] += c;
        }
        let cols: Vec<_> = model
            .vars
            .iter()
            .zip(&cost)
            .map(|(v, &c)| pb.add_column_with_integrality(c, v.lb..=v.ub, v.integer))
            .collect();
        for r in &model.constraints {
            let terms: Vec<_> = r.terms.iter().map(|&(j, a)| (cols[j], a)).collect();
            match r.cmp {
                Cmp::Le => pb.add_row(..=r.rhs, terms),
                Cmp::Ge => pb.add_row(r.rhs.., terms),
                Cmp::Eq => pb.add_row(r.rhs..=r.rhs, terms),
            }
        }
        let sense = match model.sense {
            ObjSense::Minimize => Sense::Minimise,
            ObjSense::Maximize => Sense::Maximise,
        };
        let mut m = pb
            .try_optimise(sense)
            .map_err(|s| MipError::Backend(format!("HiGHS rejected the model: {s:?}")))?;
        m.make_quiet();
        m.set_option("threads", 1);
        m.set_option("mip_rel_gap", opts.mip_rel_gap);
        m.set_option("mip_abs_gap", opts.mip_abs_gap);
        m.set_option("mip_feasibility_tolerance", 1e-9);
        m.set_option("primal_feasibility_tolerance", 1e-9);
        if let Some(t) = opts.time_limit {
            m.set_option("time_limit", t.max(1e-6));
        }
        let solved = m
            .try_solve()
            .map_err(|s| MipError::Backend(format!("HiGHS run failed: {s:?}")))?;
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        let has_point = solved.primal_solution_status() == HighsSolutionStatus::Feasible;
        let nodes = {
            let mut count: i64 = 0;
            // SAFETY: the pointer stays valid while `solved` is alive.
            let rc = unsafe {
                highs_sys::Highs_getInt64InfoValue(solved.as_ptr() as *mut _, c"mip_node_count".as_ptr(), &mut count)
            };
            if rc == 0 { count.max(0) as u64 } else { 0 }
        };
        let point = || {
            let x = solved.get_solution().columns().to_vec();
            (Some(model.objective_value(&x)), Some(x))
        };
        let status = solved.status();
        match status {
            HighsModelStatus::Optimal => {
                let (objective, values) = point();
                Ok(SolveResult {
                    status: SolveStatus::Optimal,
                    objective,
                    values,
                    wall_ms,
                    nodes,
                })
            }
            HighsModelStatus::Infeasible => Ok(SolveResult::infeasible(wall_ms, nodes)),
            // With every variable bounded the problem cannot be unbounded.
            HighsModelStatus::UnboundedOrInfeasible
                if model.vars.iter().all(|v| v.lb.is_finite() && v.ub.is_finite()) =>
            {
                Ok(SolveResult::infeasible(wall_ms, nodes))
            }
            HighsModelStatus::ReachedTimeLimit
            | HighsModelStatus::ReachedIterationLimit
            | HighsModelStatus::ReachedInterrupt => {
                let (objective, values) = if has_point { point() } else { (None, None) };
                Ok(SolveResult {
                    status: SolveStatus::TimeLimit,
                    objective,
                    values,
                    wall_ms,
                    nodes,
                })
            }
            other => Err(MipError::Backend(format!("HiGHS finished with status {other:?}"))),
        }
    }
}

fn trivial(model: &MipModel, start: Instant) -> Result<SolveResult, MipError> {
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    if model.constraints.iter().any(|c| c.cmp.violation(0.0, c.rhs) > 1e-9) {
        return Ok(SolveResult::infeasible(wall_ms, 0));
    }
    Ok(SolveResult {
        status: SolveStatus::Optimal,
        objective: Some(model.obj_offset),
        values: Some(Vec::new()),
        wall_ms,
        nodes: 0,
    })
}
