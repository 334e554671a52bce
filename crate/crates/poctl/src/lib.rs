//! A POCTL* model checker for hidden Markov models.
//!
//! POCTL* is a probabilistic branching-time logic whose next operator carries
//! an observation constraint, so properties can speak about what a hidden
//! Markov model emits as well as where it moves. Checking runs in three
//! stages: a most deeply nested probability subformula is resolved to a state
//! set and replaced by a fresh label ([`checker`]), the model and the path
//! formula are compiled into a labelled Markov chain with the observations
//! folded into the transitions ([`product`]), and the chain is repeatedly
//! rewritten to remove one temporal operator at a time while preserving the
//! probability of satisfaction ([`eliminate`]). An exact brute-force
//! evaluator ([`oracle`]) provides independent ground truth, and [`cli`]
//! exposes both through an interactive session and batch flags.
//!
//! Two measures are supported: per-state evaluation gives every state
//! initial mass one, while π-weighted evaluation keeps the model's initial
//! distribution factor in every probability.
//!
//! The runnable examples under `examples/` walk through each capability;
//! `examples/f1.poctl` and friends are ready-made models for them.

pub mod checker;
pub mod cli;
pub mod eliminate;
pub mod error;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod product;
pub mod syntax;

pub use checker::{model_check, model_check_traced, SatResult};
pub use error::CheckError;
pub use model::{
    cylinder_probability, validate_dtmc, validate_hmm, AtomicProp, Dtmc, FinitePath, Hmm,
    SatMode,
};
pub use syntax::{parse_formula, parse_model_file, render_formula, PathFormula, StateFormula};
