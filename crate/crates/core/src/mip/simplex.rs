//! Dense two-phase primal simplex with bounded variables.
//!
//! Small and exact enough to serve as the in-repo LP engine for the
//! reference branch-and-bound backend and the activation-pattern
//! enumerator. Not intended for large models.

use super::model::Cmp;
use super::MipError;

const PIVOT_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 100;
const STALL_BEFORE_BLAND: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct LpRow {
    pub terms: Vec<(usize, f64)>,
    pub cmp: Cmp,
    pub rhs: f64,
}

/// `minimize cᵀx  s.t.  rows,  lb ≤ x ≤ ub`. Bounds may be infinite.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LpProblem {
    pub c: Vec<f64>,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    pub rows: Vec<LpRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

struct Tableau {
    m: usize,
    n_cols: usize,
    /// Original constraint matrix including slack and artificial columns.
    a: Vec<f64>,
    b: Vec<f64>,
    /// B⁻¹A, row-major `m × n_cols`.
    t: Vec<f64>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    x: Vec<f64>,
    basis: Vec<usize>,
    basic_row: Vec<Option<usize>>,
    iterations: usize,
    max_iterations: usize,
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.n_cols + j]
    }

    /// Recomputes `B⁻¹A` and the basic values from scratch.
    fn refactor(&mut self) -> Result<(), MipError> {
        let m = self.m;
        let nc = self.n_cols;
        // Gauss-Jordan on [B | A | rhs] with partial pivoting.
        let width = nc + 1;
        let mut w = vec![0.0; m * width];
        let mut rhs = self.b.clone();
        for j in 0..nc {
            if self.basic_row[j].is_none() && self.x[j] != 0.0 {
                for (i, r) in rhs.iter_mut().enumerate() {
                    *r -= self.a[i * nc + j] * self.x[j];
                }
            }
        }
        for i in 0..m {
            w[i * width..i * width + nc].copy_from_slice(&self.a[i * nc..(i + 1) * nc]);
            w[i * width + nc] = rhs[i];
        }
        // Row `p` of the result must correspond to basis position `p`.
        let mut row_of = vec![usize::MAX; m];
        let mut used = vec![false; m];
        for (p, &col) in self.basis.iter().enumerate() {
            let mut best = usize::MAX;
            let mut best_abs = 0.0;
            for i in 0..m {
                if !used[i] {
                    let v = w[i * width + col].abs();
                    if v > best_abs {
                        best_abs = v;
                        best = i;
                    }
                }
            }
            if best == usize::MAX || best_abs < 1e-12 {
                return Err(MipError::Numerical("singular basis during refactorization".into()));
            }
            used[best] = true;
            row_of[p] = best;
            let piv = w[best * width + col];
            for v in &mut w[best * width..(best + 1) * width] {
                *v /= piv;
            }
            let pivot_row: Vec<f64> = w[best * width..(best + 1) * width].to_vec();
            for i in 0..m {
                if i != best {
                    let f = w[i * width + col];
                    if f != 0.0 {
                        for (v, pv) in w[i * width..(i + 1) * width].iter_mut().zip(&pivot_row) {
                            *v -= f * pv;
                        }
                    }
                }
            }
        }
        for p in 0..m {
            let r = row_of[p];
            self.t[p * nc..(p + 1) * nc].copy_from_slice(&w[r * width..r * width + nc]);
            self.x[self.basis[p]] = w[r * width + nc];
        }
        Ok(())
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let nc = self.n_cols;
        let mut d = cost.to_vec();
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * nc..(i + 1) * nc];
                for (dj, tij) in d.iter_mut().zip(row) {
                    *dj -= cb * tij;
                }
            }
        }
        d
    }

    fn run_phase(&mut self, cost: &[f64]) -> Result<PhaseEnd, MipError> {
        let nc = self.n_cols;
        let mut stall = 0usize;
        let mut since_refactor = 0usize;
        loop {
            if self.iterations >= self.max_iterations {
                return Err(MipError::Numerical(format!(
                    "simplex iteration limit ({}) reached",
                    self.max_iterations
                )));
            }
            if since_refactor >= REFACTOR_EVERY {
                self.refactor()?;
                since_refactor = 0;
            }
            let d = self.reduced_costs(cost);
            let bland = stall >= STALL_BEFORE_BLAND;
            let mut enter = None;
            let mut best = 0.0;
            for j in 0..nc {
                if self.basic_row[j].is_some() || self.lb[j] == self.ub[j] {
                    continue;
                }
                let can_up = self.x[j] < self.ub[j];
                let can_down = self.x[j] > self.lb[j];
                let dir = if d[j] < -OPT_TOL && can_up {
                    1.0
                } else if d[j] > OPT_TOL && can_down {
                    -1.0
                } else {
                    continue;
                };
                if bland {
                    enter = Some((j, dir));
                    break;
                }
                if d[j].abs() > best {
                    best = d[j].abs();
                    enter = Some((j, dir));
                }
            }
            let Some((q, dir)) = enter else {
                return Ok(PhaseEnd::Optimal);
            };

            // Ratio test. Basic value i moves by -dir·θ·t[i][q].
            let mut row_best: Option<(usize, f64, f64)> = None; // (row, limit, bound)
            let mut row_alpha = 0.0;
            for i in 0..self.m {
                let alpha = self.at(i, q);
                if alpha.abs() < PIVOT_TOL {
                    continue;
                }
                let delta = -dir * alpha;
                let bi = self.basis[i];
                let (limit, bound) = if delta < 0.0 {
                    if self.lb[bi] == f64::NEG_INFINITY {
                        continue;
                    }
                    (((self.x[bi] - self.lb[bi]) / -delta).max(0.0), self.lb[bi])
                } else {
                    if self.ub[bi] == f64::INFINITY {
                        continue;
                    }
                    (((self.ub[bi] - self.x[bi]) / delta).max(0.0), self.ub[bi])
                };
                let take = match row_best {
                    None => true,
                    Some((r, best_limit, _)) => {
                        if limit < best_limit - 1e-12 {
                            true
                        } else if limit <= best_limit + 1e-12 {
                            if bland {
                                self.basis[i] < self.basis[r]
                            } else {
                                alpha.abs() > row_alpha
                            }
                        } else {
                            false
                        }
                    }
                };
                if take {
                    row_best = Some((i, limit, bound));
                    row_alpha = alpha.abs();
                }
            }
            let flip = self.ub[q] - self.lb[q];
            let (theta, leave) = match row_best {
                Some((r, limit, bound)) if limit < flip => (limit, Some((r, bound))),
                _ => (flip, None),
            };
            if theta == f64::INFINITY {
                return Ok(PhaseEnd::Unbounded);
            }
            self.iterations += 1;
            since_refactor += 1;
            if theta <= 1e-12 {
                stall += 1;
            } else {
                stall = 0;
            }

            for i in 0..self.m {
                let alpha = self.at(i, q);
                if alpha != 0.0 {
                    self.x[self.basis[i]] -= dir * theta * alpha;
                }
            }
            match leave {
                None => {
                    // Bound flip.
                    self.x[q] = if dir > 0.0 { self.ub[q] } else { self.lb[q] };
                }
                Some((r, bound)) => {
                    let old = self.basis[r];
                    self.x[q] += dir * theta;
                    self.x[old] = bound;
                    self.basic_row[old] = None;
                    self.basic_row[q] = Some(r);
                    self.basis[r] = q;
                    let piv = self.at(r, q);
                    for v in &mut self.t[r * nc..(r + 1) * nc] {
                        *v /= piv;
                    }
                    let pivot_row: Vec<f64> = self.t[r * nc..(r + 1) * nc].to_vec();
                    for i in 0..self.m {
                        if i == r {
                            continue;
                        }
                        let f = self.t[i * nc + q];
                        if f != 0.0 {
                            for (v, pv) in self.t[i * nc..(i + 1) * nc].iter_mut().zip(&pivot_row) {
                                *v -= f * pv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Solves a linear program to optimality, or reports infeasibility/unboundedness.
pub fn solve_lp(p: &LpProblem) -> Result<LpSolution, MipError> {
    let n = p.c.len();
    if p.lb.len() != n || p.ub.len() != n {
        return Err(MipError::Model("bound vectors do not match the cost vector".into()));
    }
    for j in 0..n {
        if p.lb[j].is_nan() || p.ub[j].is_nan() || p.lb[j] == f64::INFINITY || p.ub[j] == f64::NEG_INFINITY {
            return Err(MipError::Model(format!("variable {j} has invalid bounds")));
        }
        if p.lb[j] > p.ub[j] {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: vec![0.0; n],
                objective: f64::NAN,
                iterations: 0,
            });
        }
    }
    let m = p.rows.len();
    let nc = n + 2 * m;
    let mut lb = vec![0.0; nc];
    let mut ub = vec![0.0; nc];
    let mut x = vec![0.0; nc];
    for j in 0..n {
        lb[j] = p.lb[j];
        ub[j] = p.ub[j];
        x[j] = if p.lb[j].is_finite() {
            p.lb[j]
        } else if p.ub[j].is_finite() {
            p.ub[j]
        } else {
            0.0
        };
    }
    let mut a = vec![0.0; m * nc];
    let mut b = vec![0.0; m];
    let mut b_scale: f64 = 1.0;
    for (i, row) in p.rows.iter().enumerate() {
        for &(j, v) in &row.terms {
            if j >= n {
                return Err(MipError::Model(format!("row {i} references variable {j}")));
            }
            a[i * nc + j] += v;
        }
        a[i * nc + n + i] = 1.0;
        let (slo, shi) = match row.cmp {
            Cmp::Le => (0.0, f64::INFINITY),
            Cmp::Ge => (f64::NEG_INFINITY, 0.0),
            Cmp::Eq => (0.0, 0.0),
        };
        lb[n + i] = slo;
        ub[n + i] = shi;
        b[i] = row.rhs;
        b_scale = b_scale.max(row.rhs.abs());
        let resid = row.rhs - (0..n).map(|j| a[i * nc + j] * x[j]).sum::<f64>();
        let sign = if resid >= 0.0 { 1.0 } else { -1.0 };
        a[i * nc + n + m + i] = sign;
        lb[n + m + i] = 0.0;
        ub[n + m + i] = f64::INFINITY;
        x[n + m + i] = resid.abs();
    }
    let mut t = vec![0.0; m * nc];
    for i in 0..m {
        let sign = a[i * nc + n + m + i];
        for j in 0..nc {
            t[i * nc + j] = sign * a[i * nc + j];
        }
    }
    let basis: Vec<usize> = (0..m).map(|i| n + m + i).collect();
    let mut basic_row = vec![None; nc];
    for (i, &bcol) in basis.iter().enumerate() {
        basic_row[bcol] = Some(i);
    }
    let mut tab = Tableau {
        m,
        n_cols: nc,
        a,
        b,
        t,
        lb,
        ub,
        x,
        basis,
        basic_row,
        iterations: 0,
        max_iterations: 20_000 + 50 * (m + n),
    };

    let mut phase1 = vec![0.0; nc];
    phase1[n + m..].iter_mut().for_each(|c| *c = 1.0);
    if m > 0 {
        match tab.run_phase(&phase1)? {
            PhaseEnd::Optimal => {}
            PhaseEnd::Unbounded => return Err(MipError::Numerical("phase one reported unbounded".into())),
        }
        tab.refactor()?;
        let infeas: f64 = tab.x[n + m..].iter().sum();
        if infeas > 1e-7 * b_scale {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                x: tab.x[..n].to_vec(),
                objective: f64::NAN,
                iterations: tab.iterations,
            });
        }
        for j in n + m..nc {
            tab.ub[j] = 0.0;
            if tab.basic_row[j].is_none() {
                tab.x[j] = 0.0;
            }
        }
    }

    let mut phase2 = vec![0.0; nc];
    phase2[..n].copy_from_slice(&p.c);
    let end = tab.run_phase(&phase2)?;
    if m > 0 {
        tab.refactor()?;
    }
    let mut xs = tab.x[..n].to_vec();
    for j in 0..n {
        xs[j] = xs[j].clamp(p.lb[j], p.ub[j]);
    }
    let status = match end {
        PhaseEnd::Optimal => LpStatus::Optimal,
        PhaseEnd::Unbounded => LpStatus::Unbounded,
    };
    let objective = match status {
        LpStatus::Optimal => p.c.iter().zip(&xs).map(|(c, x)| c * x).sum(),
        _ => f64::NEG_INFINITY,
    };
    Ok(LpSolution {
        status,
        x: xs,
        objective,
        iterations: tab.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(terms: &[(usize, f64)], cmp: Cmp, rhs: f64) -> LpRow {
        LpRow {
            terms: terms.to_vec(),
            cmp,
            rhs,
        }
    }

    #[test]
    fn textbook_max() {
        // max 3x + 5y, x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18 → (2, 6), 36
        let p = LpProblem {
            c: vec![-3.0, -5.0],
            lb: vec![0.0, 0.0],
            ub: vec![f64::INFINITY; 2],
            rows: vec![
                row(&[(0, 1.0)], Cmp::Le, 4.0),
                row(&[(1, 2.0)], Cmp::Le, 12.0),
                row(&[(0, 3.0), (1, 2.0)], Cmp::Le, 18.0),
            ],
        };
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective + 36.0).abs() < 1e-9);
        assert!((s.x[0] - 2.0).abs() < 1e-9 && (s.x[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn equality_and_free_vars() {
        // min x + y, x - y = 1, x + y ≥ 3, x,y free → 3
        let p = LpProblem {
            c: vec![1.0, 1.0],
            lb: vec![f64::NEG_INFINITY; 2],
            ub: vec![f64::INFINITY; 2],
            rows: vec![
                row(&[(0, 1.0), (1, -1.0)], Cmp::Eq, 1.0),
                row(&[(0, 1.0), (1, 1.0)], Cmp::Ge, 3.0),
            ],
        };
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective - 3.0).abs() < 1e-9);
        assert!((s.x[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let p = LpProblem {
            c: vec![1.0],
            lb: vec![f64::NEG_INFINITY],
            ub: vec![f64::INFINITY],
            rows: vec![row(&[(0, 1.0)], Cmp::Ge, 1.0), row(&[(0, 1.0)], Cmp::Le, 0.0)],
        };
        assert_eq!(solve_lp(&p).unwrap().status, LpStatus::Infeasible);
        let p = LpProblem {
            c: vec![-1.0],
            lb: vec![0.0],
            ub: vec![f64::INFINITY],
            rows: vec![row(&[(0, 1.0)], Cmp::Ge, 1.0)],
        };
        assert_eq!(solve_lp(&p).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn bound_flips_only() {
        let p = LpProblem {
            c: vec![-1.0, 2.0],
            lb: vec![-1.0, -3.0],
            ub: vec![2.0, 5.0],
            rows: vec![],
        };
        let s = solve_lp(&p).unwrap();
        assert_eq!(s.x, vec![2.0, -3.0]);
        assert_eq!(s.objective, -8.0);
    }
}
