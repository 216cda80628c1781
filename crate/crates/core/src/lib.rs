//! Multi-camera tracking of featureless targets through space-time point
//! clouds.
//!
//! The pipeline reconstructs a (3D + 1) cloud of points from three
//! synchronised views, links it into a proximity graph, separates optical
//! occlusions with connected components labeling and splits targets in true
//! 3D proximity with normalized-cut spectral clustering.

pub mod geometry;

pub mod pnm;
pub mod synth;
pub mod imaging;
pub mod reconstruction;
pub mod clustering;
pub mod pipeline;
