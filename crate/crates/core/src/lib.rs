//! Parallel occupancy voxel mapping.
//!
//! Rays are integrated into a region-hashed map of dense voxel blocks, each
//! carrying one buffer per enabled layer. Integrators for log-odds
//! occupancy, NDT-OM, NDT-TM, decay rate and TSDF share one batch engine
//! that runs a task per ray segment and resolves concurrent voxel writes
//! with compare-and-swap loops.

pub mod bench;
pub mod cas;
pub mod config;
pub mod engine;
pub mod error;
pub mod io;
mod kernel;
pub mod ndt;
pub mod occupancy;
pub mod store;
pub mod traversal;
pub mod tsdf;

pub use config::MapConfig;
pub use engine::{BatchStats, Engine, ExecutorKind, ExecutorOptions, IntegratorKind};
pub use error::{ConfigError, MapError, Result};
pub use store::{LayerId, LayerSet, VoxelKey, VoxelMap};
pub use traversal::RaySample;
