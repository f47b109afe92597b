use serde::{Deserialize, Serialize};

use super::MipError;

/// What a variable stands for in an encoded network (or elsewhere).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VarRole {
    Input { index: usize },
    /// Post-activation of hidden unit `unit` in hidden layer `layer` (1-based).
    X { layer: usize, unit: usize },
    /// Negative part of the pre-activation.
    S { layer: usize, unit: usize },
    /// Activation indicator: 1 means the unit is off.
    Z { layer: usize, unit: usize },
    Output { index: usize },
    Aux,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Var {
    pub name: String,
    pub lb: f64,
    pub ub: f64,
    pub integer: bool,
    pub role: VarRole,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cmp {
    Le,
    Ge,
    Eq,
}

impl Cmp {
    pub fn symbol(self) -> &'static str {
        match self {
            Cmp::Le => "<=",
            Cmp::Ge => ">=",
            Cmp::Eq => "=",
        }
    }

    /// Amount by which `lhs cmp rhs` is violated (0 when satisfied).
    pub fn violation(self, lhs: f64, rhs: f64) -> f64 {
        match self {
            Cmp::Le => (lhs - rhs).max(0.0),
            Cmp::Ge => (rhs - lhs).max(0.0),
            Cmp::Eq => (lhs - rhs).abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(usize, f64)>,
    pub cmp: Cmp,
    pub rhs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjSense {
    Minimize,
    Maximize,
}

/// Solver-agnostic mixed-integer linear program. Integer variables are binary
/// unless their bounds say otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MipModel {
    pub vars: Vec<Var>,
    pub constraints: Vec<Constraint>,
    pub sense: ObjSense,
    pub objective: Vec<(usize, f64)>,
    pub obj_offset: f64,
}

impl Default for MipModel {
    fn default() -> Self {
        Self::new()
    }
}

impl MipModel {
    pub fn new() -> Self {
        Self {
            vars: Vec::new(),
            constraints: Vec::new(),
            sense: ObjSense::Minimize,
            objective: Vec::new(),
            obj_offset: 0.0,
        }
    }

    pub fn add_var(&mut self, name: impl Into<String>, lb: f64, ub: f64, role: VarRole) -> usize {
        self.vars.push(Var {
            name: name.into(),
            lb,
            ub,
            integer: false,
            role,
        });
        self.vars.len() - 1
    }

    pub fn add_binary(&mut self, name: impl Into<String>, role: VarRole) -> usize {
        self.vars.push(Var {
            name: name.into(),
            lb: 0.0,
            ub: 1.0,
            integer: true,
            role,
        });
        self.vars.len() - 1
    }

    pub fn add_constraint(&mut self, name: impl Into<String>, terms: Vec<(usize, f64)>, cmp: Cmp, rhs: f64) -> usize {
        self.constraints.push(Constraint {
            name: name.into(),
            terms,
            cmp,
            rhs,
        });
        self.constraints.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_integers(&self) -> usize {
        self.vars.iter().filter(|v| v.integer).count()
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v.name == name)
    }

    pub fn set_objective(&mut self, sense: ObjSense, terms: Vec<(usize, f64)>, offset: f64) {
        self.sense = sense;
        self.objective = terms;
        self.obj_offset = offset;
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.obj_offset + self.objective.iter().map(|&(j, c)| c * x[j]).sum::<f64>()
    }

    /// Fixes `lb = ub = value`; errors if the value lies outside the current bounds.
    pub fn fix_var(&mut self, j: usize, value: f64) -> Result<(), MipError> {
        let v = self
            .vars
            .get_mut(j)
            .ok_or_else(|| MipError::Model(format!("variable index {j} out of range")))?;
        let tol = 1e-9 * (1.0 + value.abs());
        if !value.is_finite() || value < v.lb - tol || value > v.ub + tol {
            return Err(MipError::Domain(format!(
                "value {value} for {} lies outside [{}, {}]",
                v.name, v.lb, v.ub
            )));
        }
        v.lb = value;
        v.ub = value;
        Ok(())
    }

    /// Structural checks: indices in range, bounds ordered, coefficients finite.
    pub fn validate(&self) -> Result<(), MipError> {
        let n = self.vars.len();
        for v in &self.vars {
            if v.lb.is_nan() || v.ub.is_nan() || v.lb > v.ub {
                return Err(MipError::Model(format!(
                    "variable {} has invalid bounds [{}, {}]",
                    v.name, v.lb, v.ub
                )));
            }
        }
        for c in &self.constraints {
            if !c.rhs.is_finite() {
                return Err(MipError::Model(format!("constraint {} has non-finite rhs", c.name)));
            }
            for &(j, a) in &c.terms {
                if j >= n || !a.is_finite() {
                    return Err(MipError::Model(format!("constraint {} has a bad term ({j}, {a})", c.name)));
                }
            }
        }
        for &(j, a) in &self.objective {
            if j >= n || !a.is_finite() {
                return Err(MipError::Model(format!("objective has a bad term ({j}, {a})")));
            }
        }
        Ok(())
    }

    /// Largest bound, row or integrality violation of a point.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (v, &xv) in self.vars.iter().zip(x) {
            worst = worst.max(v.lb - xv).max(xv - v.ub);
            if v.integer {
                worst = worst.max((xv - xv.round()).abs());
            }
        }
        for c in &self.constraints {
            let lhs: f64 = c.terms.iter().map(|&(j, a)| a * x[j]).sum();
            worst = worst.max(c.cmp.violation(lhs, c.rhs));
        }
        worst
    }
}
