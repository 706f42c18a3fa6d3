//! Dirichlet-process mixtures of two-parameter probit IRT models.
//!
//! Units (respondents, legislators) are partitioned into latent clusters, each
//! with its own item discriminations and difficulties, so that items may
//! function differently across groups. The crate provides the blocked Gibbs
//! sampler with MAP extraction, starting-value heuristics, a simulator, and
//! post-fit tools for grouping sub-clusters into substantive clusters.

pub mod error;
pub mod gibbs;
pub mod init;
pub mod io;
pub mod math;
pub mod model;
pub mod postfit;
pub mod regression;
pub mod rng;
pub mod simulate;
pub mod truncnorm;

pub use error::{MpsError, Result};
pub use gibbs::{fit_single_cluster, run_chain, ChainTrace, TraceRow};
pub use init::{initial_state, InitMode, InitSpec};
pub use model::{
    irf_prob, log_joint_posterior, log_likelihood, stick_to_probs, AlphaPrior, AssignmentUpdate,
    MapEstimate, MpsConfig, MpsState, ResponseMatrix,
};
pub use postfit::{ClusterGraph, Communities, CrossTab, GapCurve, ParamCount};
pub use simulate::{simulate_dataset, SimSpec, SimTruth};
