//! Function-word distillation toolkit: rank words by how easily a language model
//! infers them, strip them from text, put them back with a small scorer, and
//! measure the round trip.

pub mod costmodel;
pub mod distill;
pub mod http;
pub mod inferability;
pub mod lmscore;
pub mod metrics;
mod parallel;
pub mod pipeline;
pub mod reconstruct;
pub mod textcore;
