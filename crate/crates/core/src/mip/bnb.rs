use std::time::Instant;

use super::backend::{Capabilities, SolveOptions, SolveResult, SolveStatus, SolverBackend};
use super::model::{MipModel, ObjSense};
use super::simplex::{solve_lp, LpProblem, LpRow, LpStatus};
use super::MipError;

const INT_TOL: f64 = 1e-7;

/// Depth-first branch and bound with LP relaxations solved by the in-repo
/// simplex. Branches on the lowest-index fractional integer variable, which
/// for an encoded network means earliest layer first.
#[derive(Debug, Clone, Copy, Default)]
pub struct BranchAndBound;

struct Node {
    lb: Vec<f64>,
    ub: Vec<f64>,
}

fn to_lp(model: &MipModel) -> LpProblem {
    let n = model.vars.len();
    let sign = match model.sense {
        ObjSense::Minimize => 1.0,
        ObjSense::Maximize => -1.0,
    };
    let mut c = vec![0.0; n];
    for &(j, v) in &model.objective {
        c[j] += sign * v;
    }
    LpProblem {
        c,
        lb: model.vars.iter().map(|v| v.lb).collect(),
        ub: model.vars.iter().map(|v| v.ub).collect(),
        rows: model
            .constraints
            .iter()
            .map(|r| LpRow {
                terms: r.terms.clone(),
                cmp: r.cmp,
                rhs: r.rhs,
            })
            .collect(),
    }
}

impl SolverBackend for BranchAndBound {
    fn name(&self) -> &'static str {
        "reference"
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
        let mut lp = to_lp(model);
        let sign = match model.sense {
            ObjSense::Minimize => 1.0,
            ObjSense::Maximize => -1.0,
        };
        let ints: Vec<usize> = (0..model.vars.len()).filter(|&j| model.vars[j].integer).collect();
        for &j in &ints {
            lp.lb[j] = lp.lb[j].ceil();
            lp.ub[j] = lp.ub[j].floor();
        }
        // Minimization of sign·objective throughout.
        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut stack = vec![Node {
            lb: lp.lb.clone(),
            ub: lp.ub.clone(),
        }];
        let mut nodes = 0u64;
        let mut timed_out = false;
        while let Some(node) = stack.pop() {
            if let Some(limit) = opts.time_limit {
                if start.elapsed().as_secs_f64() >= limit {
                    timed_out = true;
                    break;
                }
            }
            nodes += 1;
            lp.lb.clone_from(&node.lb);
            lp.ub.clone_from(&node.ub);
            let sol = solve_lp(&lp)?;
            match sol.status {
                LpStatus::Infeasible => continue,
                LpStatus::Unbounded => {
                    return Err(MipError::Backend("LP relaxation is unbounded".into()));
                }
                LpStatus::Optimal => {}
            }
            if let Some((inc, _)) = &best {
                let gap = opts.mip_abs_gap.max(opts.mip_rel_gap * inc.abs());
                if sol.objective >= inc - gap {
                    continue;
                }
            }
            let frac = ints
                .iter()
                .copied()
                .find(|&j| (sol.x[j] - sol.x[j].round()).abs() > INT_TOL);
            match frac {
                None => {
                    best = Some((sol.objective, sol.x));
                }
                Some(j) => {
                    let v = sol.x[j];
                    let mut down = Node {
                        lb: node.lb.clone(),
                        ub: node.ub.clone(),
                    };
                    down.ub[j] = v.floor();
                    let mut up = node;
                    up.lb[j] = v.ceil();
                    // Explore the nearer side first.
                    if v - v.floor() < 0.5 {
                        stack.push(up);
                        stack.push(down);
                    } else {
                        stack.push(down);
                        stack.push(up);
                    }
                }
            }
        }
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        let status = if timed_out {
            SolveStatus::TimeLimit
        } else if best.is_some() {
            SolveStatus::Optimal
        } else {
            SolveStatus::Infeasible
        };
        Ok(match best {
            Some((obj, mut x)) => {
                for &j in &ints {
                    x[j] = x[j].round();
                }
                SolveResult {
                    status,
                    objective: Some(sign * obj + model.obj_offset),
                    values: Some(x),
                    wall_ms,
                    nodes,
                }
            }
            None => SolveResult {
                status,
                objective: None,
                values: None,
                wall_ms,
                nodes,
            },
        })
    }
}
