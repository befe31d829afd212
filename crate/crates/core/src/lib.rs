//! Low-rank adapter dynamics on the matrix-factorization objective.
//!
//! The crate covers the dense linear algebra needed for the experiments, the
//! adapter trainer with classic and asymmetric updates, every initialization
//! scheme including high-rank preheating, closed-form oracles, the Monte
//! Carlo theorem checks and a toy linear fine-tuning task.

mod error;

pub mod adapters;
pub mod hrp;
pub mod linalg;
pub mod nn;
pub mod objective;
pub mod oracle;
pub mod verify;

pub use adapters::{AdapterPair, InitSpec, Side, Trajectory, TrajectoryRecord, UpdateOrder, UpdateVariant};
pub use error::{Error, Result};
pub use hrp::{HrpConfig, PreheatResult};
pub use linalg::{Matrix, RngState, SvdResult};
pub use objective::{FactorTarget, Preset};
pub use oracle::BoundReport;
pub use verify::{McStats, TheoremReport};

