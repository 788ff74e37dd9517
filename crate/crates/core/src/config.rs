//! Map-wide parameters shared by the store, traversal and integrators.

use crate::error::ConfigError;

/// Parameters for a voxel map and every integrator that writes into it.
///
/// Lengths are in meters, occupancy thresholds in probability or log-odds as
/// named.
#[derive(Debug, Clone, PartialEq)]
pub struct MapConfig {
    pub voxel_size: f64,
    /// Voxels per region edge.
    pub region_dim: u32,
    /// P(hit | occupied) for a return falling in a voxel.
    pub p_hit: f64,
    /// P(hit | occupied) for a ray passing through a voxel.
    pub p_miss: f64,
    pub clamp_min: f32,
    pub clamp_max: f32,
    /// Probability above which a voxel counts as occupied.
    pub occupied_threshold: f64,
    pub max_ray_range: f64,
    pub segment_length: f64,
    pub tsdf_truncation: f64,
    pub tsdf_max_weight: f32,
    /// Sensor noise used to regularise NDT covariances.
    pub ndt_sensor_noise: f64,
    /// Log-odds below which NDT sample statistics are discarded.
    pub ndt_reset_threshold: f32,
    /// Minimum ray/Gaussian likelihood for a pass-through to count as an
    /// NDT-TM miss.
    pub ndt_miss_likelihood: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.1,
            region_dim: 32,
            p_hit: 0.7,
            p_miss: 0.4,
            clamp_min: -2.0,
            clamp_max: 3.5,
            occupied_threshold: 0.5,
            max_ray_range: 20.0,
            segment_length: 10.0,
            tsdf_truncation: 0.3,
            tsdf_max_weight: 100.0,
            ndt_sensor_noise: 0.05,
            ndt_reset_threshold: -1.0,
            ndt_miss_likelihood: 0.2,
        }
    }
}

impl MapConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if !(self.voxel_size.is_finite() && self.voxel_size > 0.0) {
            return fail(format!("voxel_size must be > 0, got {}", self.voxel_size));
        }
        if self.region_dim == 0 || self.region_dim > 1024 {
            return fail(format!("region_dim must be in [1, 1024], got {}", self.region_dim));
        }
        if !(self.clamp_min < 0.0 && self.clamp_max > 0.0) {
            return fail(format!(
                "clamp band must straddle zero, got [{}, {}]",
                self.clamp_min, self.clamp_max
            ));
        }
        if !(self.p_hit > 0.5 && self.p_hit < 1.0) {
            return fail(format!("p_hit must be in (0.5, 1), got {}", self.p_hit));
        }
        if !(self.p_miss > 0.0 && self.p_miss < 0.5) {
            return fail(format!("p_miss must be in (0, 0.5), got {}", self.p_miss));
        }
        if !(self.occupied_threshold > 0.0 && self.occupied_threshold < 1.0) {
            return fail(format!(
                "occupied_threshold must be in (0, 1), got {}",
                self.occupied_threshold
            ));
        }
        if !(self.max_ray_range > 0.0) {
            return fail(format!("max_ray_range must be > 0, got {}", self.max_ray_range));
        }
        if !(self.segment_length > self.voxel_size) {
            return fail(format!(
                "segment_length ({}) must exceed voxel_size ({})",
                self.segment_length, self.voxel_size
            ));
        }
        if !(self.tsdf_truncation >= self.voxel_size) {
            return fail(format!(
                "tsdf_truncation ({}) must be at least voxel_size ({})",
                self.tsdf_truncation, self.voxel_size
            ));
        }
        if !(self.tsdf_max_weight >= 1.0) {
            return fail(format!("tsdf_max_weight must be >= 1, got {}", self.tsdf_max_weight));
        }
        if !(self.ndt_sensor_noise > 0.0) {
            return fail(format!("ndt_sensor_noise must be > 0, got {}", self.ndt_sensor_noise));
        }
        if !(0.0..=1.0).contains(&self.ndt_miss_likelihood) {
            return fail(format!(
                "ndt_miss_likelihood must be in [0, 1], got {}",
                self.ndt_miss_likelihood
            ));
        }
        Ok(())
    }

    /// Edge length of one region in meters.
    pub fn region_size(&self) -> f64 {
        self.voxel_size * f64::from(self.region_dim)
    }

    pub fn voxels_per_region(&self) -> usize {
        let d = self.region_dim as usize;
        d * d * d
    }
}
