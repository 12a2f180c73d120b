//! Hierarchical meta-reinforcement learning over procedurally generated
//! trap gridworlds.
//!
//! An options-framework agent (a high-level option-value head, five
//! intra-option action-value heads, and a termination head) is meta-trained
//! with first-order MAML: per-task SGD adaptation followed by an Adam
//! outer update. Count-based intrinsic rewards drive exploration and a
//! success-gated curriculum grows the grids.

pub mod agent;
pub mod curriculum;
pub mod error;
pub mod exploration;
pub mod gridworld;
pub mod harness;
pub mod hpo;
pub mod losses;
pub mod metatrain;
pub mod neuralnet;
pub mod rollout;
pub mod seeding;

pub use error::{Error, Result};
