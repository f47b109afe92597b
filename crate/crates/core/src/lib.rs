//! Microgrid dispatch with a deep Q-network whose ReLU critic is compiled
//! into a mixed-integer program, so every dispatched action satisfies the
//! operational constraints exactly.

pub mod bench;
pub mod dispatch;
pub mod env;
pub mod mip;
pub mod neural;
pub mod oracle;
pub mod profiles;
pub mod rl;
