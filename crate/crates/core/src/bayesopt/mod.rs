//! Gaussian-process surrogate optimization over mixed search spaces.

mod acquisition;
mod gp;
mod kernel;
mod space;
mod tune;

pub use acquisition::{
    expected_improvement, normal_cdf, normal_pdf, propose_next, shifted_halton, Proposal, CANDIDATES, REFINE_PASSES,
    REFINE_STARTS,
};
pub use gp::{gp_fit, GpHyper, GpModel};
pub use kernel::{kernel_eval, KernelKind};
pub use space::{lookup, Assignment, Dimension, ParamValue, SearchSpace, SpecEntry};
pub use tune::{best_so_far, tune, TrialLog, TrialRecord, TrialStatus, TuneConfig, TuneResult};
