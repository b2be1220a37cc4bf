//! Training, evaluation, and artifact plumbing around the model.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod eval;
pub mod optim;
pub mod synth;
pub mod train;
