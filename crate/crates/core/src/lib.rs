//! Navigation around negative obstacles using virtual surfaces.
//!
//! The crate is organised as a pipeline:
//!
//! ```text
//! lidar rays -> occupancy (3D voxels) -> heightmap (2.5D, Real/Virtual/Unknown)
//!            -> costmap (Fatal/NonFatal) -> planner (hybrid A*) -> behaviours
//! ```
//!
//! [`sim`] closes the loop with a heightfield world, a tilted rotating lidar and
//! a tracked vehicle, and [`experiment`] runs policy comparison matrices.

pub mod behaviours;
pub mod costmap;
pub mod error;
pub mod experiment;
pub mod geom;
pub mod heightmap;
pub mod io;
pub mod occupancy;
pub mod planner;
pub mod render;
pub mod sim;

pub use error::{Error, Result};
pub use geom::Configuration;
