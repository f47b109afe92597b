use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::model::MipModel;
use super::MipError;

/// Environment variable that overrides the configured backend.
pub const SOLVER_ENV: &str = "MIPDQN_SOLVER";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    TimeLimit,
}

/// Outcome of a solve. `values` is `Some` for optimal results and for time
/// limits that found an incumbent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub objective: Option<f64>,
    pub values: Option<Vec<f64>>,
    pub wall_ms: f64,
    pub nodes: u64,
}

impl SolveResult {
    pub fn infeasible(wall_ms: f64, nodes: u64) -> Self {
        Self {
            status: SolveStatus::Infeasible,
            objective: None,
            values: None,
            wall_ms,
            nodes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub binaries: bool,
    pub indicators: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveOptions {
    /// Wall-clock limit in seconds; `None` means unlimited.
    pub time_limit: Option<f64>,
    pub mip_rel_gap: f64,
    pub mip_abs_gap: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            time_limit: None,
            mip_rel_gap: 1e-9,
            mip_abs_gap: 1e-9,
        }
    }
}

pub trait SolverBackend: Send + Sync {
    fn name(&self) -> &'static str;
    fn capabilities(&self) -> Capabilities;
    fn solve(&self, model: &MipModel, opts: &SolveOptions) -> Result<SolveResult, MipError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// In-repo branch-and-bound over the dense simplex.
    Reference,
    Highs,
}

impl BackendKind {
    pub fn default_kind() -> Self {
        if cfg!(feature = "highs") {
            BackendKind::Highs
        } else {
            BackendKind::Reference
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Reference => "reference",
            BackendKind::Highs => "highs",
        }
    }

    /// The configured kind unless `MIPDQN_SOLVER` names another.
    pub fn resolve(configured: Option<BackendKind>) -> Result<Self, MipError> {
        match std::env::var(SOLVER_ENV) {
            Ok(v) if !v.trim().is_empty() => v.parse(),
            _ => Ok(configured.unwrap_or_else(Self::default_kind)),
        }
    }

    pub fn create(self) -> Result<Box<dyn SolverBackend>, MipError> {
        match self {
            BackendKind::Reference => Ok(Box::new(super::bnb::BranchAndBound)),
            #[cfg(feature = "highs")]
            BackendKind::Highs => Ok(Box::new(super::highs_backend::HighsBackend)),
            #[cfg(not(feature = "highs"))]
            BackendKind::Highs => Err(MipError::Backend(
                "the highs backend was not compiled in (enable the `highs` feature)".into(),
            )),
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackendKind {
    type Err = MipError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "reference" | "bnb" => Ok(BackendKind::Reference),
            "highs" => Ok(BackendKind::Highs),
            other => Err(MipError::Backend(format!(
                "unknown solver backend '{other}' (expected 'reference' or 'highs')"
            ))),
        }
    }
}

/// Solves, then re-solves the LP with integers fixed at their rounded
/// values so the returned point satisfies every row to LP precision.
pub fn solve_polished(
    backend: &dyn SolverBackend,
    model: &MipModel,
    opts: &SolveOptions,
) -> Result<SolveResult, MipError> {
    let res = backend.solve(model, opts)?;
    if model.num_integers() == 0 {
        return Ok(res);
    }
    let Some(values) = res.values.as_ref() else {
        return Ok(res);
    };
    let mut fixed = model.clone();
    for (j, v) in fixed.vars.iter_mut().enumerate() {
        if v.integer {
            let r = values[j].round();
            v.lb = r;
            v.ub = r;
            v.integer = false;
        }
    }
    let lp = backend.solve(&fixed, opts)?;
    match (lp.status, lp.values) {
        (SolveStatus::Optimal, Some(vals)) => Ok(SolveResult {
            status: res.status,
            objective: lp.objective,
            values: Some(vals),
            wall_ms: res.wall_ms + lp.wall_ms,
            nodes: res.nodes,
        }),
        _ => Ok(res),
    }
}
