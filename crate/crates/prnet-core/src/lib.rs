//! Recovery of outdoor position trajectories and per-sample transportation
//! modes from cellular measurement-record sequences: data model, synthetic
//! data generation, the hierarchical recurrent model with its losses,
//! training, and the evaluation harness.

pub mod autodiff;
pub mod dataset;
pub mod eval;
pub mod experiment;
pub mod geo;
pub mod losses;
pub mod mrdata;
pub mod prnet;
pub mod simgen;
pub mod train;
