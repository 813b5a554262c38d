//! Experiment harness for the preference-learning laboratory: ground-truth
//! generation and the three seeded synthetic studies (margin shaping,
//! negative-temperature sweep, connectivity optimization), each emitting
//! plot-ready CSV.

pub mod config;
pub mod experiments;
pub mod truth;
