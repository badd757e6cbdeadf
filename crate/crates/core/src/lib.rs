//! Tabular average-reward learning and planning with options.
//!
//! The crate is organised bottom-up:
//!
//! - [`mdp`]: finite MDPs, options, option execution.
//! - [`fourroom`]: the continuing Four-Room gridworld and hallway options.
//! - [`policy`]: stochastic policies over options.
//! - [`option_model`]: option models and their intra-option learning rule.
//! - [`learners`]: inter- and intra-option Differential learners, the Gosavi
//!   baseline, behaviour policies and interruption.
//! - [`planners`]: sample-based planning and the combined model-learning agent.
//! - [`oracle`]: exact option models, SMDP solvers and policy evaluation.
//! - [`harness`]: experiment configs, seeded runs, sweeps, CSV output.
//!
//! Independent runs are executed through [`par`], which uses rayon when the
//! `parallel` feature is on (the default) and a plain loop otherwise.

pub mod error;
pub mod fourroom;
pub mod harness;
pub mod learners;
pub mod mdp;
pub mod option_model;
pub mod oracle;
pub mod par;
pub mod planners;
pub mod policy;

pub use error::{Error, Result};
pub use mdp::{FiniteMdp, OptionDef, OptionSegment, OptionSet, Rng, Transition};
pub use option_model::OptionModel;
pub use policy::OptionPolicy;
