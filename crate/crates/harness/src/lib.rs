//! Tooling around the `pupiltrack` detector: synthetic sequences with ground
//! truth, dataset manifests, evaluation curves, calibration routines and the
//! label server.

pub mod calibrate;
pub mod dataset;
pub mod eval;
pub mod runner;
pub mod server;
pub mod synth;
