use nalgebra::Vector3;

use crate::config::MapConfig;
use crate::error::{MapError, Result};

/// Integer coordinate of a region in the region grid.
pub type RegionCoord = [i32; 3];

/// Addresses a single voxel: the region it lives in plus its index inside
/// that region. Local components are always in `[0, region_dim)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelKey {
    pub region: RegionCoord,
    pub local: [u32; 3],
}

impl VoxelKey {
    pub fn new(region: RegionCoord, local: [u32; 3]) -> Self {
        Self { region, local }
    }

    /// Splits a global voxel index into region and local parts using floor
    /// division, so negative indices land in negative regions.
    pub fn from_global(g: [i64; 3], region_dim: u32) -> Self {
        let dim = i64::from(region_dim);
        let mut region = [0i32; 3];
        let mut local = [0u32; 3];
        for i in 0..3 {
            region[i] = g[i].div_euclid(dim) as i32;
            local[i] = g[i].rem_euclid(dim) as u32;
        }
        Self { region, local }
    }

    pub fn global(&self, region_dim: u32) -> [i64; 3] {
        let dim = i64::from(region_dim);
        [0, 1, 2].map(|i| i64::from(self.region[i]) * dim + i64::from(self.local[i]))
    }

    /// Linear index of this voxel inside its region's layer buffers.
    #[inline]
    pub fn linear_index(&self, region_dim: u32) -> usize {
        local_index(self.local, region_dim)
    }
}

#[inline]
pub fn local_index(local: [u32; 3], region_dim: u32) -> usize {
    let d = region_dim as usize;
    local[0] as usize + d * (local[1] as usize + d * local[2] as usize)
}

/// Global voxel index containing `p`.
#[inline]
pub fn global_index(p: &Vector3<f64>, voxel_size: f64) -> [i64; 3] {
    [0, 1, 2].map(|i| (p[i] / voxel_size).floor() as i64)
}

pub fn key_for_point(p: &Vector3<f64>, cfg: &MapConfig) -> Result<VoxelKey> {
    if !p.iter().all(|c| c.is_finite()) {
        return Err(MapError::NonFinite([p.x, p.y, p.z]));
    }
    Ok(VoxelKey::from_global(global_index(p, cfg.voxel_size), cfg.region_dim))
}

pub fn voxel_center(key: &VoxelKey, cfg: &MapConfig) -> Vector3<f64> {
    let g = key.global(cfg.region_dim);
    Vector3::new(
        (g[0] as f64 + 0.5) * cfg.voxel_size,
        (g[1] as f64 + 0.5) * cfg.voxel_size,
        (g[2] as f64 + 0.5) * cfg.voxel_size,
    )
}

/// Minimum corner of the voxel.
pub fn voxel_origin(key: &VoxelKey, cfg: &MapConfig) -> Vector3<f64> {
    let g = key.global(cfg.region_dim);
    Vector3::new(
        g[0] as f64 * cfg.voxel_size,
        g[1] as f64 * cfg.voxel_size,
        g[2] as f64 * cfg.voxel_size,
    )
}
