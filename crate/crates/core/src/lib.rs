//! Prediction-driven pupil detection for high-frame-rate eye cameras.
//!
//! Each frame is processed inside a search area derived from the previous
//! frame's predictions. Candidate edges inside that area are segmented,
//! scored against the predicted pupil appearance and fitted with ellipses;
//! the chosen fit updates the recursive estimator for the next frame.

pub mod classify;
pub mod config;
pub mod contour;
pub mod draw;
pub mod edgemap;
pub mod ellipse;
pub mod estimator;
pub mod geom;
pub mod locate;
pub mod pipeline;
pub mod raster;
pub mod segment;
