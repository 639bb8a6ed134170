//! Learning a predicate-structured task language for instruction-following
//! reinforcement learning in a deterministic 2D ball-pushing world.
//!
//! The pipeline has four stages:
//! 1. collect (state, next-state, sentence) triplets with a scripted pusher,
//! 2. train a discrete task-language generator by masked sentence
//!    reconstruction conditioned on the state transition,
//! 3. train a variational translator from sentences to task language,
//! 4. train PPO instruction-following policies conditioned on the frozen
//!    translator output, and compare against sentence-embedding baselines.
//!
//! A hierarchical extension reuses the trained policy as a low-level
//! executor for a multi-constraint ball-arrangement task.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod env;
pub mod error;
pub mod eval;
pub mod generator;
pub mod lang;
pub mod nn;
pub mod pipeline;
pub mod plot;
pub mod policy;
pub mod rng;
pub mod translator;
