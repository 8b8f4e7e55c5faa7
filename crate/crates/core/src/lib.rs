//! Spectral connectivity analysis of point clouds through diffusion maps.

pub mod bandwidth;
pub mod coarsegrain;
pub mod diffusion;
pub mod eigen;
pub mod error;
pub mod geodesic;
pub mod kernel;
pub mod markov;
pub mod nodal;
pub mod nystrom;
pub mod oracle;
pub mod pointcloud;
pub mod rng;

pub use error::{Error, ErrorKind, Result};
