//! Training-free active contours driven by multi-scale image features.
//!
//! A closed polygon is turned into a soft mask or a soft distance map by
//! differentiable kernels, features are averaged over those soft regions at
//! five scales, and the nodes are moved by gradient descent on a loss built
//! from the averages. Two procedures are provided:
//!
//! * [`evolution::evolve_unsupervised`] separates inside and outside feature
//!   means (a deep-feature Chan-Vese).
//! * [`evolution::fit_support`] / [`evolution::predict_query`] learn isoline
//!   features from one annotated example and match them on new instances.
//!
//! [`pipeline`] adds candidate extraction, stain normalization and metrics.

pub mod contour_ops;
pub mod error;
pub mod evolution;
pub mod features;
pub mod geometry;
pub mod grid;
pub mod pipeline;
pub mod region_stats;
pub mod synthetic;

pub use error::{Error, Result};
pub use geometry::{Contour, ContourGradient};
pub use grid::PixelGrid;
