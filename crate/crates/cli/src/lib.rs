//! Command-line front end for the simultaneous-graphical-DLM engine:
//! configuration, on-disk state, and the phase pipeline.

pub mod config;
pub mod persist;
pub mod pipeline;
