//! Exhaustive activation-pattern search, an encoding-independent oracle for
//! small networks.
//!
//! With every unit's on/off state fixed, each pre-activation is an affine
//! function of the inputs, so the network output over one pattern's region
//! is a linear program in the input space alone. Patterns are enumerated
//! unit by unit (earliest layer first) and partial patterns whose region is
//! empty are pruned.

use std::time::Instant;

use crate::neural::DenseNet;

use super::backend::{SolveResult, SolveStatus};
use super::model::Cmp;
use super::simplex::{solve_lp, LpProblem, LpRow, LpStatus};
use super::MipError;

pub const MAX_REFERENCE_UNITS: usize = 20;

/// Linear constraint over the network inputs: `Σ coeffs[i]·in_i cmp rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputConstraint {
    pub coeffs: Vec<f64>,
    pub cmp: Cmp,
    pub rhs: f64,
}

#[derive(Clone)]
struct Affine {
    a: Vec<f64>,
    c: f64,
}

struct Search<'a> {
    net: &'a DenseNet,
    base: LpProblem,
    best: Option<(f64, Vec<f64>)>,
    nodes: u64,
}

impl Search<'_> {
    fn region_lp(&self, rows: &[LpRow], objective: Option<&Affine>) -> Result<Option<(f64, Vec<f64>)>, MipError> {
        let mut lp = self.base.clone();
        lp.rows.extend_from_slice(rows);
        if let Some(obj) = objective {
            lp.c = obj.a.iter().map(|v| -v).collect();
        }
        let sol = solve_lp(&lp)?;
        Ok(match sol.status {
            LpStatus::Optimal => {
                let val = objective.map_or(0.0, |o| o.c + o.a.iter().zip(&sol.x).map(|(a, x)| a * x).sum::<f64>());
                Some((val, sol.x))
            }
            LpStatus::Infeasible => None,
            LpStatus::Unbounded => return Err(MipError::Numerical("pattern LP unbounded over a finite box".into())),
        })
    }

    fn pre_activation(&self, k: usize, j: usize, prev: &[Affine]) -> Affine {
        let n_in = self.net.input_dim();
        let fan_in = self.net.layer_sizes()[k];
        let w = &self.net.weight(k)[j * fan_in..(j + 1) * fan_in];
        let mut out = Affine {
            a: vec![0.0; n_in],
            c: self.net.bias(k)[j],
        };
        for (wi, p) in w.iter().zip(prev) {
            if *wi != 0.0 {
                out.c += wi * p.c;
                out.a.iter_mut().zip(&p.a).for_each(|(o, pa)| *o += wi * pa);
            }
        }
        out
    }

    /// `prev`: post-activations of layer `k − 1`; `cur`: decided units of layer `k`.
    fn dfs(&mut self, k: usize, prev: &[Affine], cur: &mut Vec<Affine>, rows: &mut Vec<LpRow>) -> Result<(), MipError> {
        let layers = self.net.num_layers();
        if k == layers - 1 {
            let out = self.pre_activation(k, 0, prev);
            self.nodes += 1;
            if let Some((val, x)) = self.region_lp(rows, Some(&out))? {
                if self.best.as_ref().is_none_or(|(b, _)| val > *b) {
                    self.best = Some((val, x));
                }
            }
            return Ok(());
        }
        let width = self.net.layer_sizes()[k + 1];
        if cur.len() == width {
            let next_prev = std::mem::take(cur);
            let mut next_cur = Vec::with_capacity(self.net.layer_sizes().get(k + 2).copied().unwrap_or(0));
            self.dfs(k + 1, &next_prev, &mut next_cur, rows)?;
            *cur = next_prev;
            return Ok(());
        }
        let j = cur.len();
        let pre = self.pre_activation(k, j, prev);
        let terms: Vec<(usize, f64)> = pre
            .a
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
            .collect();
        for active in [true, false] {
            rows.push(LpRow {
                terms: terms.clone(),
                cmp: if active { Cmp::Ge } else { Cmp::Le },
                rhs: -pre.c,
            });
            self.nodes += 1;
            if self.region_lp(rows, None)?.is_some() {
                cur.push(if active {
                    pre.clone()
                } else {
                    Affine {
                        a: vec![0.0; pre.a.len()],
                        c: 0.0,
                    }
                });
                self.dfs(k, prev, cur, rows)?;
                cur.pop();
            }
            rows.pop();
        }
        Ok(())
    }
}

/// Maximizes the single output of `net` over the input box, with some
/// inputs fixed and extra linear constraints on the inputs. The returned
/// `values` are the maximizing input vector.
pub fn reference_solve(
    net: &DenseNet,
    input_box: &[(f64, f64)],
    fixed_inputs: &[(usize, f64)],
    extra: &[InputConstraint],
) -> Result<SolveResult, MipError> {
    let start = Instant::now();
    let n_in = net.input_dim();
    if net.output_dim() != 1 {
        return Err(MipError::Model("reference solve needs exactly one output".into()));
    }
    if input_box.len() != n_in {
        return Err(MipError::Dimension {
            what: "input box entries",
            expected: n_in,
            got: input_box.len(),
        });
    }
    let units = net.hidden_units();
    if units > MAX_REFERENCE_UNITS {
        return Err(MipError::Size(format!(
            "reference enumeration supports at most {MAX_REFERENCE_UNITS} hidden units, network has {units}"
        )));
    }
    let mut lb: Vec<f64> = input_box.iter().map(|b| b.0).collect();
    let mut ub: Vec<f64> = input_box.iter().map(|b| b.1).collect();
    for &(i, v) in fixed_inputs {
        if i >= n_in {
            return Err(MipError::Domain(format!("fixed input index {i} out of range")));
        }
        if v < lb[i] - 1e-12 || v > ub[i] + 1e-12 {
            return Err(MipError::Domain(format!("fixed value {v} for input {i} outside its box")));
        }
        lb[i] = v;
        ub[i] = v;
    }
    let mut rows = Vec::with_capacity(extra.len());
    for e in extra {
        if e.coeffs.len() != n_in {
            return Err(MipError::Dimension {
                what: "constraint coefficients",
                expected: n_in,
                got: e.coeffs.len(),
            });
        }
        rows.push(LpRow {
            terms: e.coeffs.iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect(),
            cmp: e.cmp,
            rhs: e.rhs,
        });
    }
    let mut search = Search {
        net,
        base: LpProblem {
            c: vec![0.0; n_in],
            lb,
            ub,
            rows,
        },
        best: None,
        nodes: 0,
    };
    let inputs: Vec<Affine> = (0..n_in)
        .map(|i| {
            let mut a = vec![0.0; n_in];
            a[i] = 1.0;
            Affine { a, c: 0.0 }
        })
        .collect();
    if search.region_lp(&[], None)?.is_some() {
        search.dfs(0, &inputs, &mut Vec::new(), &mut Vec::new())?;
    }
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(match search.best {
        Some((val, x)) => SolveResult {
            status: SolveStatus::Optimal,
            objective: Some(val),
            values: Some(x),
            wall_ms,
            nodes: search.nodes,
        },
        None => SolveResult::infeasible(wall_ms, search.nodes),
    })
}
