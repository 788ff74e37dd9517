//! Log-odds occupancy with voxel mean, and the decay-rate layer.

use std::sync::atomic::Ordering;

use crate::cas::{cas_update, cas_update_f32, load_f32};
use crate::config::MapConfig;
use crate::error::{MapError, Result};
use crate::kernel::Worker;
use crate::ndt::PendingSample;
use crate::store::{voxel_origin, LayerId, PackedMean, VoxelKey, VoxelMap};
use crate::traversal::{RaySample, VoxelWalk};

pub fn prob_to_logodds(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(MapError::Probability(p));
    }
    Ok((p / (1.0 - p)).ln())
}

pub fn logodds_to_prob(l: f64) -> f64 {
    1.0 / (1.0 + (-l).exp())
}

/// Log-odds increment for a return in the voxel (`hit`) or a ray passing
/// through it.
pub fn logodds_delta(hit: bool, cfg: &MapConfig) -> f64 {
    let p = if hit { cfg.p_hit } else { cfg.p_miss };
    (p / (1.0 - p)).ln()
}

/// Probability-space Bayes update of `prior` for one observation, using the
/// same two-parameter sensor model as [`logodds_delta`].
pub fn bayes_update(prior: f64, hit: bool, cfg: &MapConfig) -> f64 {
    let p_occ = if hit { cfg.p_hit } else { cfg.p_miss };
    let p_emp = 1.0 - p_occ;
    let num = p_occ * prior;
    num / (num + p_emp * (1.0 - prior))
}

#[inline]
pub fn apply_occupancy_update(l: f32, delta: f32, cfg: &MapConfig) -> f32 {
    (l + delta).clamp(cfg.clamp_min, cfg.clamp_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OccupancyState {
    Occupied,
    Free,
    Unknown,
}

/// Classifies a voxel. A voxel is unknown only when it was never updated:
/// exact zero log-odds and, when the mean layer exists, no samples.
pub fn occupancy_state(l: f32, mean_count: Option<u32>, cfg: &MapConfig) -> OccupancyState {
    if l == 0.0 && mean_count.unwrap_or(0) == 0 {
        return OccupancyState::Unknown;
    }
    let threshold = (cfg.occupied_threshold / (1.0 - cfg.occupied_threshold)).ln();
    if f64::from(l) > threshold {
        OccupancyState::Occupied
    } else {
        OccupancyState::Free
    }
}

/// Decay-rate voxel: returns in the voxel and total ray length through it.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DecayVoxel {
    pub hits: u32,
    pub distance: f32,
}

/// Reflections per meter, `None` until some ray has crossed the voxel.
pub fn decay_rate(v: &DecayVoxel) -> Option<f64> {
    (v.distance > 0.0).then(|| f64::from(v.hits) / f64::from(v.distance))
}

/// Voxel-relative offset of `p` in voxel fractions.
pub(crate) fn sub_voxel_offset(p: &nalgebra::Vector3<f64>, key: &VoxelKey, cfg: &MapConfig) -> [f64; 3] {
    let o = voxel_origin(key, cfg);
    [0, 1, 2].map(|i| (p[i] - o[i]) / cfg.voxel_size)
}

/// Reads voxel values from a map.
pub fn occupancy_at(map: &VoxelMap, key: &VoxelKey) -> Option<f32> {
    map.has_layer(LayerId::Occupancy).then_some(())?;
    map.with_voxel(key, |r, i| load_f32(&r.w32(LayerId::Occupancy, i)[0]))
}

pub fn mean_at(map: &VoxelMap, key: &VoxelKey) -> Option<PackedMean> {
    map.has_layer(LayerId::Mean).then_some(())?;
    map.with_voxel(key, |r, i| PackedMean::from_word(r.w64(LayerId::Mean, i).load(Ordering::Acquire)))
}

pub fn decay_at(map: &VoxelMap, key: &VoxelKey) -> Option<DecayVoxel> {
    map.has_layer(LayerId::DecayRate).then_some(())?;
    map.with_voxel(key, |r, i| {
        let w = r.w32(LayerId::DecayRate, i);
        DecayVoxel {
            hits: w[0].load(Ordering::Acquire),
            distance: load_f32(&w[1]),
        }
    })
}

pub fn hit_count_at(map: &VoxelMap, key: &VoxelKey) -> Option<u32> {
    map.has_layer(LayerId::HitCount).then_some(())?;
    map.with_voxel(key, |r, i| r.w32(LayerId::HitCount, i)[0].load(Ordering::Acquire))
}

pub fn occupancy_state_at(map: &VoxelMap, key: &VoxelKey) -> OccupancyState {
    match occupancy_at(map, key) {
        None => OccupancyState::Unknown,
        Some(l) => occupancy_state(l, mean_at(map, key).map(|m| m.count), map.config()),
    }
}

/// Phase 1 for one clipped segment: a miss on every voxel crossed except
/// the end voxel of a sample-carrying segment, which is queued for phase 2.
/// Decay distance is added for every voxel, the end voxel included.
///
/// Running every miss of a batch before any hit keeps clamped results
/// independent of scheduling: a run of same-sign updates saturates the same
/// way in any order.
pub(crate) fn miss_phase_segment(w: &mut Worker<'_>, seg: &RaySample, order: u64, pending: &mut Vec<PendingSample>) {
    let cfg = w.cfg;
    let miss_delta = logodds_delta(false, cfg) as f32;
    let with_decay = w.map.has_layer(LayerId::DecayRate);

    let walk = VoxelWalk::new(seg, cfg);
    let n = walk.len();
    w.note_task(n);
    for (i, visit) in walk.enumerate() {
        let region = w.region(&visit.key.region);
        let idx = visit.key.linear_index(cfg.region_dim);
        let is_hit = seg.has_sample && i + 1 == n;
        if is_hit {
            pending.push(PendingSample {
                key: visit.key,
                order,
                point: seg.end,
                intensity: seg.intensity,
            });
        } else {
            cas_update_f32(&region.w32(LayerId::Occupancy, idx)[0], w.retry_limit, &mut w.cas, |l| {
                apply_occupancy_update(l, miss_delta, cfg)
            });
        }
        let len = visit.path_length as f32;
        if with_decay && len > 0.0 {
            cas_update_f32(&region.w32(LayerId::DecayRate, idx)[1], w.retry_limit, &mut w.cas, |s| s + len);
        }
    }
}

/// Phase 2 for one return: hit update, voxel mean, and the hit counters.
pub(crate) fn hit_phase_sample(w: &mut Worker<'_>, hit: &PendingSample) {
    let cfg = w.cfg;
    let map = w.map;
    let key = &hit.key;
    let region = w.region(&key.region);
    let idx = key.linear_index(cfg.region_dim);
    let hit_delta = logodds_delta(true, cfg) as f32;
    cas_update_f32(&region.w32(LayerId::Occupancy, idx)[0], w.retry_limit, &mut w.cas, |l| {
        apply_occupancy_update(l, hit_delta, cfg)
    });
    if map.has_layer(LayerId::Mean) {
        let offset = sub_voxel_offset(&hit.point, key, cfg);
        cas_update(region.w64(LayerId::Mean, idx), w.retry_limit, &mut w.cas, |word| {
            PackedMean::from_word(word).update(offset).to_word()
        });
    }
    if map.has_layer(LayerId::HitCount) {
        region.w32(LayerId::HitCount, idx)[0].fetch_add(1, Ordering::AcqRel);
    }
    if map.has_layer(LayerId::DecayRate) {
        region.w32(LayerId::DecayRate, idx)[0].fetch_add(1, Ordering::AcqRel);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hit_delta_value() {
        let cfg = MapConfig::default();
        assert!((logodds_delta(true, &cfg) - 0.8473).abs() < 5e-5);
        assert!((logodds_delta(false, &cfg) + 0.4055).abs() < 5e-5);
        assert_eq!(prob_to_logodds(0.5).unwrap(), 0.0);
    }

    #[test]
    fn rejects_degenerate_probabilities() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(prob_to_logodds(p).is_err());
        }
    }

    #[test]
    fn clamping() {
        let cfg = MapConfig::default();
        assert_eq!(apply_occupancy_update(3.4, 0.8473, &cfg), 3.5);
        let miss = logodds_delta(false, &cfg) as f32;
        assert!((apply_occupancy_update(0.0, miss, &cfg) + 0.4055).abs() < 5e-5);
        assert_eq!(apply_occupancy_update(-2.0, miss, &cfg), -2.0);
    }

    #[test]
    fn states() {
        let cfg = MapConfig::default();
        assert_eq!(occupancy_state(0.0, Some(0), &cfg), OccupancyState::Unknown);
        assert_eq!(occupancy_state(0.0, None, &cfg), OccupancyState::Unknown);
        assert_eq!(occupancy_state(3.5, Some(3), &cfg), OccupancyState::Occupied);
        assert_eq!(occupancy_state(-0.4, Some(0), &cfg), OccupancyState::Free);
        // Hit then miss can land on zero; the sample count keeps it known.
        assert_eq!(occupancy_state(0.0, Some(1), &cfg), OccupancyState::Free);
    }

    #[test]
    fn decay_rates() {
        assert_eq!(decay_rate(&DecayVoxel { hits: 3, distance: 6.0 }), Some(0.5));
        assert_eq!(decay_rate(&DecayVoxel { hits: 0, distance: 2.0 }), Some(0.0));
        assert_eq!(decay_rate(&DecayVoxel::default()), None);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1_000))]
        #[test]
        fn logodds_inverse_pair(p in 1e-6f64..(1.0 - 1e-6)) {
            let back = logodds_to_prob(prob_to_logodds(p).unwrap());
            prop_assert!((back - p).abs() <= 1e-12);
        }
    }
}
