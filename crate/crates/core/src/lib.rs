//! Referring-expression grounding by iterative shrinking.
//!
//! An agent starts from the whole image and repeatedly removes a strip from
//! one side of the current patch until it stops on the object a query
//! describes. The crate contains everything needed to study that loop at
//! desk scale: synthetic scenes with uniquely grounded queries, a triad
//! parser for the query grammar, the shrinking environment, small
//! feed-forward networks with analytic gradients, the actor-critic agent and
//! its supervised baseline, and an evaluation/ablation harness.

pub mod geometry;
pub mod lexicon;
pub mod query;
pub mod scene;
pub mod nets;
pub mod env;
pub mod gradcheck;
pub mod task;
pub mod agent;
pub mod eval;
pub mod harness;
