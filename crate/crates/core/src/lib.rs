//! Skill-gain exercise recommendation.
//!
//! Exercises are recommended to learners so as to maximise the gain in
//! their estimated skill mastery. The crate provides:
//!
//! * ingestion and preprocessing of logged learner/exercise interactions
//!   ([`preprocess`], [`context`], [`io`]),
//! * four recommendation policies behind one interface ([`policy`]):
//!   Normal-Inverse-Gamma Thompson sampling, linear Thompson sampling and
//!   user/item collaborative filtering,
//! * an offline replay evaluator ([`replay`]) and a grid-search tuner
//!   ([`tuner`]),
//! * a Bayesian-knowledge-tracing learner simulator ([`synthetic`]) that
//!   produces interaction logs with known ground truth,
//! * end-to-end orchestration ([`experiment`]).
//!
//! Independent replays (grid configurations, seeds) run in parallel through
//! [`exec`] when the `parallel` feature is enabled.

pub mod assistments;
pub mod context;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod io;
pub mod model;
pub mod policy;
pub mod preprocess;
pub mod replay;
pub mod seed;
pub mod synthetic;
pub mod tuner;

pub use error::{Error, Result};
