//! Projective truncated signed distance integration.
//!
//! Only the band of the ray within `tsdf_truncation` of the return is
//! walked. Each voxel's distance and weight share one 64-bit word so the
//! pair is swapped atomically.

use std::sync::atomic::Ordering;

use nalgebra::Vector3;

use crate::cas::cas_update;
use crate::config::MapConfig;
use crate::kernel::Worker;
use crate::store::{key_for_point, voxel_center, LayerId, VoxelMap};
use crate::traversal::{RaySample, VoxelWalk};

/// Weight contributed by one observation.
pub const OBSERVATION_WEIGHT: f32 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TsdfVoxel {
    pub distance: f32,
    pub weight: f32,
}

impl TsdfVoxel {
    #[inline]
    pub fn to_word(self) -> u64 {
        u64::from(self.distance.to_bits()) | (u64::from(self.weight.to_bits()) << 32)
    }

    #[inline]
    pub fn from_word(w: u64) -> Self {
        Self {
            distance: f32::from_bits(w as u32),
            weight: f32::from_bits((w >> 32) as u32),
        }
    }

    /// Weighted running average with the weight capped at `max_weight`.
    #[inline]
    pub fn merge(self, distance: f32, weight: f32, max_weight: f32) -> Self {
        let total = self.weight + weight;
        Self {
            distance: (self.weight * self.distance + weight * distance) / total,
            weight: total.min(max_weight),
        }
    }
}

/// The part of a sample-carrying segment that can lie within truncation of
/// the return: from `truncation` before the sample (not before the origin)
/// to `truncation` beyond it. `None` for miss-only or zero-length segments.
pub fn truncation_band(seg: &RaySample, cfg: &MapConfig) -> Option<(Vector3<f64>, Vector3<f64>)> {
    let len = seg.length();
    if !seg.has_sample || len <= 0.0 {
        return None;
    }
    let dir = (seg.end - seg.origin) / len;
    let back = cfg.tsdf_truncation.min(len);
    Some((seg.end - dir * back, seg.end + dir * cfg.tsdf_truncation))
}

/// Signed projective distance from `center` to the return along the ray,
/// positive on the sensor side.
#[inline]
pub fn projective_distance(seg: &RaySample, dir: &Vector3<f64>, len: f64, center: &Vector3<f64>) -> f64 {
    len - (center - seg.origin).dot(dir)
}

pub(crate) fn integrate_segment(w: &mut Worker<'_>, seg: &RaySample) {
    let cfg = w.cfg;
    let Some((start, stop)) = truncation_band(seg, cfg) else {
        return;
    };
    let len = seg.length();
    let dir = (seg.end - seg.origin) / len;
    let trunc = cfg.tsdf_truncation;
    let walk = VoxelWalk::between(&start, &stop, cfg);
    w.note_task(walk.len());
    for visit in walk {
        let d = projective_distance(seg, &dir, len, &voxel_center(&visit.key, cfg));
        if d.abs() > trunc {
            continue;
        }
        let d = d.clamp(-trunc, trunc) as f32;
        let region = w.region(&visit.key.region);
        let idx = visit.key.linear_index(cfg.region_dim);
        cas_update(region.w64(LayerId::Tsdf, idx), w.retry_limit, &mut w.cas, |word| {
            TsdfVoxel::from_word(word)
                .merge(d, OBSERVATION_WEIGHT, cfg.tsdf_max_weight)
                .to_word()
        });
    }
}

/// TSDF value of the voxel containing `p`, `None` if never observed.
pub fn tsdf_query(map: &VoxelMap, p: &Vector3<f64>) -> Option<TsdfVoxel> {
    map.has_layer(LayerId::Tsdf).then_some(())?;
    let key = key_for_point(p, map.config()).ok()?;
    let v = map.with_voxel(&key, |r, i| TsdfVoxel::from_word(r.w64(LayerId::Tsdf, i).load(Ordering::Acquire)))?;
    (v.weight > 0.0).then_some(v)
}
