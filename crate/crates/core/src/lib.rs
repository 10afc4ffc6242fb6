//! Speculative decoding with token trees.
//!
//! The crate is organised bottom-up:
//!
//! - [`categorical`]: finite distributions, residuals, sampling with and without replacement.
//! - [`verifiers`]: node-level verification (Sequoia, SpecInfer, top-k), recursive tree
//!   verification, sequence speculative decoding and an exact enumeration oracle.
//! - [`tree`]: token-tree topologies, the score function and the closed-form expected
//!   number of generated tokens.
//! - [`planner`]: dynamic programs for the optimal tree under a size budget, with and
//!   without a depth bound, plus a brute-force oracle and handcrafted baselines.
//! - [`optimizer`]: hardware-aware choice of tree size and depth from a measured cost model.
//! - [`simlab`]: seedable toy language models and the experiment runners built on them.

pub mod categorical;
pub mod optimizer;
pub mod planner;
pub mod simlab;
pub mod tree;
pub mod verifiers;

pub use categorical::{Categorical, CategoricalError, TokenId};
pub use optimizer::{CostModel, OptimizerResult};
pub use planner::PlanResult;
pub use tree::{AcceptanceVector, TreeTopology};
pub use verifiers::VerifierKind;
