//! Synthesis of acoustically degraded speech with exact labels, a
//! multi-task transformer producing background-acoustics embeddings, and
//! evaluation of those embeddings.

pub mod audio;
pub mod cli;
pub mod degrade;
pub mod dsp;
pub mod eval;
pub mod features;
pub mod model;
pub mod rir;
pub mod rng;
pub mod speech;
pub mod synth;
pub mod train;
pub mod truth;
