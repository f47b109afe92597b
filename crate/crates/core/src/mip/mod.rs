//! Mixed-integer encoding of ReLU networks and the solver backends.

pub mod backend;
pub mod bnb;
pub mod bounds;
pub mod encode;
pub mod enumerate;
#[cfg(feature = "highs")]
pub mod highs_backend;
pub mod lpformat;
pub mod model;
pub mod simplex;

pub use backend::{
    solve_polished, BackendKind, Capabilities, SolveOptions, SolveResult, SolveStatus, SolverBackend, SOLVER_ENV,
};
pub use bounds::{propagate_bounds, UnitBounds};
pub use encode::{encode_network, fix_inputs, set_objective_max_output, EncodedNet, EncodingStats};
pub use enumerate::{reference_solve, InputConstraint, MAX_REFERENCE_UNITS};
pub use lpformat::{export_lp, import_lp, read_lp, write_lp, NameMap};
pub use model::{Cmp, Constraint, MipModel, ObjSense, Var, VarRole};

#[derive(Debug, thiserror::Error)]
pub enum MipError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{0}")]
    Domain(String),
    #[error("invalid model: {0}")]
    Model(String),
    #[error("model too large: {0}")]
    Size(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("solver backend error: {0}")]
    Backend(String),
    #[error("LP parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
