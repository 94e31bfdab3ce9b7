//! Simulation harness for quantifying how much ranking policies manipulate
//! simulated users' preferences.
//!
//! The harness runs a four-stage loop against a programmable user behavior
//! model: (1) score every document for every user in isolation to obtain
//! initial preferences, (2) collect interaction logs with reference
//! strategies and mix them at a configurable ratio, (3) train desk-scale
//! rankers on the mixed logs and let them interact with the same users, and
//! (4) compute manipulation-aware metrics (CTR, FCTR, ManiScore, Preference
//! Shift) alongside the usual offline AUC/NDCG.
//!
//! Two synthetic scenarios are built in: a three-item slate scenario whose
//! regret-based choice model exhibits the decoy effect, and a topic/budget
//! sequential scenario where recommendations drift user interests over time.

pub mod action;
pub mod config;
pub mod error;
pub mod exec;
pub mod manifest;
pub mod metrics;
pub mod oracles;
pub mod pipeline;
pub mod rankers;
pub mod types;

pub use error::SimError;
