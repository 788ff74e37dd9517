//! NDT-OM and NDT-TM voxels.
//!
//! Each voxel keeps a Gaussian of the returns that fell inside it: the
//! packed mean and sample count from the mean layer, and a lower-triangular
//! square root `S` of the population covariance (`Σ = S·Sᵀ`) in the
//! covariance layer. Misses are scaled by how well the ray explains the
//! Gaussian, so rays skimming past a point cluster barely erode it.
//!
//! Updates run in two phases. Phase 1 applies misses from every segment
//! concurrently (occupancy via CAS; `S` and the mean are only read). Phase 2
//! groups the batch's samples by voxel and gives each voxel to exactly one
//! worker, which folds its samples into the Gaussian with rank-one
//! square-root updates.

use std::sync::atomic::Ordering;

use nalgebra::{Matrix3, Vector3};

use crate::cas::{cas_update, cas_update_f32, load_f32, store_f32};
use crate::config::MapConfig;
use crate::kernel::Worker;
use crate::occupancy::{apply_occupancy_update, logodds_delta, sub_voxel_offset};
use crate::store::{voxel_origin, LayerId, PackedMean, Region, VoxelKey, VoxelMap};
use crate::traversal::{RaySample, VoxelWalk};

/// Below this many samples a voxel's Gaussian is not trusted and misses
/// apply in full.
pub const MIN_GAUSSIAN_SAMPLES: u32 = 3;

/// Lower-triangular 3x3 factor stored row-major as
/// `(s11, s21, s22, s31, s32, s33)`.
pub type TriangularSqrt = [f64; 6];

#[inline]
fn tri_to_matrix(s: &TriangularSqrt) -> Matrix3<f64> {
    Matrix3::new(s[0], 0.0, 0.0, s[1], s[2], 0.0, s[3], s[4], s[5])
}

#[inline]
fn matrix_to_tri(m: &Matrix3<f64>) -> TriangularSqrt {
    [m[(0, 0)], m[(1, 0)], m[(1, 1)], m[(2, 0)], m[(2, 1)], m[(2, 2)]]
}

/// Running population mean and square-root covariance of a point set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NdtGaussian {
    pub count: u32,
    pub mean: Vector3<f64>,
    pub sqrt_cov: TriangularSqrt,
}

impl Default for NdtGaussian {
    fn default() -> Self {
        Self {
            count: 0,
            mean: Vector3::zeros(),
            sqrt_cov: [0.0; 6],
        }
    }
}

impl NdtGaussian {
    pub fn covariance(&self) -> Matrix3<f64> {
        let s = tri_to_matrix(&self.sqrt_cov);
        s * s.transpose()
    }

    /// Adds one sample.
    ///
    /// With `d = x - μ` and `n` prior samples the population covariance
    /// obeys `Σ' = n/(n+1)·Σ + n/(n+1)²·d·dᵀ`. In square-root form that is
    /// `S'·S'ᵀ = [a·S | b·d]·[a·S | b·d]ᵀ`; Givens rotations fold the extra
    /// column back into lower-triangular form with a non-negative diagonal.
    /// Only rotations are applied, so `S'·S'ᵀ` stays positive semi-definite.
    pub fn add_sample(&mut self, x: &Vector3<f64>) {
        match self.count {
            0 => {
                *self = Self {
                    count: 1,
                    mean: *x,
                    sqrt_cov: [0.0; 6],
                };
                return;
            }
            u32::MAX => return,
            _ => {}
        }
        let n = f64::from(self.count);
        let d = x - self.mean;
        let a = (n / (n + 1.0)).sqrt();
        let b = n.sqrt() / (n + 1.0);

        let mut m = tri_to_matrix(&self.sqrt_cov) * a;
        let mut w = d * b;
        for j in 0..3 {
            let r = m[(j, j)].hypot(w[j]);
            if r == 0.0 {
                continue;
            }
            let c = m[(j, j)] / r;
            let s = w[j] / r;
            for i in j..3 {
                let p = m[(i, j)];
                let q = w[i];
                m[(i, j)] = c * p + s * q;
                w[i] = c * q - s * p;
            }
            m[(j, j)] = r;
            w[j] = 0.0;
        }
        self.sqrt_cov = matrix_to_tri(&m);
        self.mean += d / (n + 1.0);
        self.count += 1;
    }

    /// Likelihood of the segment `origin → end` under this Gaussian with
    /// covariance regularised by `sigma²·I`, evaluated at the segment point
    /// of smallest Mahalanobis distance. In `(0, 1]`.
    pub fn ray_likelihood(&self, origin: &Vector3<f64>, end: &Vector3<f64>, sigma: f64) -> f64 {
        let cov = self.covariance() + Matrix3::identity() * (sigma * sigma);
        // Regularised covariance is positive definite.
        let Some(info) = cov.cholesky().map(|c| c.inverse()) else {
            return 1.0;
        };
        let dir = end - origin;
        let pd = info * dir;
        let denom = dir.dot(&pd);
        let t = if denom > 0.0 {
            ((self.mean - origin).dot(&pd) / denom).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let r = origin + dir * t - self.mean;
        let m2 = r.dot(&(info * r));
        (-0.5 * m2).exp()
    }
}

/// Multiplier for the plain miss delta; 1 while the voxel has too few
/// samples for its Gaussian to be meaningful.
pub fn miss_scale(g: &NdtGaussian, origin: &Vector3<f64>, end: &Vector3<f64>, cfg: &MapConfig) -> f64 {
    if g.count < MIN_GAUSSIAN_SAMPLES {
        1.0
    } else {
        g.ray_likelihood(origin, end, cfg.ndt_sensor_noise)
    }
}

/// Occupancy delta for an NDT miss: the plain miss scaled by the ray/voxel
/// likelihood.
pub fn ndt_miss_update(g: &NdtGaussian, ray: &RaySample, cfg: &MapConfig) -> f64 {
    miss_scale(g, &ray.origin, &ray.end, cfg) * logodds_delta(false, cfg)
}

/// Folds `samples` into the voxel Gaussian one at a time.
pub fn ndt_hit_update(g: &mut NdtGaussian, samples: &[Vector3<f64>]) {
    for s in samples {
        g.add_sample(s);
    }
}

/// NDT-TM hit and miss counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TraversalCounts {
    pub hits: u32,
    pub misses: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraversalEvent {
    Hit,
    /// A pass-through with the phase-1 likelihood the ray achieved.
    Miss,
}

impl TraversalCounts {
    #[inline]
    pub fn to_word(self) -> u64 {
        u64::from(self.hits) | (u64::from(self.misses) << 32)
    }

    #[inline]
    pub fn from_word(w: u64) -> Self {
        Self {
            hits: w as u32,
            misses: (w >> 32) as u32,
        }
    }

    /// Hits always count. A miss counts only when the ray came close enough
    /// to the voxel's points (`likelihood >= ndt_miss_likelihood`).
    pub fn update(self, event: TraversalEvent, likelihood: f64, cfg: &MapConfig) -> Self {
        match event {
            TraversalEvent::Hit => Self {
                hits: self.hits.saturating_add(1),
                ..self
            },
            TraversalEvent::Miss if likelihood >= cfg.ndt_miss_likelihood => Self {
                misses: self.misses.saturating_add(1),
                ..self
            },
            TraversalEvent::Miss => self,
        }
    }

    /// Fraction of interrogating rays that returned from the voxel.
    pub fn permeability(&self) -> Option<f64> {
        let total = u64::from(self.hits) + u64::from(self.misses);
        (total > 0).then(|| f64::from(self.hits) / total as f64)
    }
}

/// Single-pass intensity mean and M2 (Welford).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IntensityStats {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
}

impl IntensityStats {
    pub fn add(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    /// `(mean, population variance)`.
    pub fn stats(&self) -> Option<(f64, f64)> {
        (self.count > 0).then(|| (self.mean, (self.m2 / self.count as f64).max(0.0)))
    }
}

/// True when occupancy has fallen far enough that sample statistics should
/// be discarded.
#[inline]
pub fn should_reset(log_odds: f32, cfg: &MapConfig) -> bool {
    log_odds < cfg.ndt_reset_threshold
}

/// Everything an NDT-TM voxel stores, decoded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NdtVoxel {
    pub log_odds: f32,
    pub gaussian: NdtGaussian,
    pub counts: TraversalCounts,
    pub intensity: IntensityStats,
}

/// Clears sample statistics when occupancy is below the reset threshold;
/// occupancy itself is kept.
pub fn maybe_reset_ndt(v: NdtVoxel, cfg: &MapConfig) -> NdtVoxel {
    if should_reset(v.log_odds, cfg) {
        NdtVoxel {
            log_odds: v.log_odds,
            gaussian: NdtGaussian::default(),
            counts: TraversalCounts::default(),
            intensity: IntensityStats::default(),
        }
    } else {
        v
    }
}

fn read_gaussian(region: &Region, idx: usize, key: &VoxelKey, cfg: &MapConfig) -> NdtGaussian {
    let pm = PackedMean::from_word(region.w64(LayerId::Mean, idx).load(Ordering::Acquire));
    if pm.count == 0 {
        return NdtGaussian::default();
    }
    let frac = crate::store::unpack_mean(pm.packed);
    let origin = voxel_origin(key, cfg);
    let mean = Vector3::new(
        origin.x + frac[0] * cfg.voxel_size,
        origin.y + frac[1] * cfg.voxel_size,
        origin.z + frac[2] * cfg.voxel_size,
    );
    let s = region.w32(LayerId::Covariance, idx);
    NdtGaussian {
        count: pm.count,
        mean,
        sqrt_cov: [0, 1, 2, 3, 4, 5].map(|i| f64::from(load_f32(&s[i]))),
    }
}

fn write_gaussian(region: &Region, idx: usize, key: &VoxelKey, cfg: &MapConfig, g: &NdtGaussian) {
    let pm = if g.count == 0 {
        PackedMean::default()
    } else {
        PackedMean::from_mean(sub_voxel_offset(&g.mean, key, cfg), g.count)
    };
    region.w64(LayerId::Mean, idx).store(pm.to_word(), Ordering::Release);
    let s = region.w32(LayerId::Covariance, idx);
    for (w, v) in s.iter().zip(g.sqrt_cov) {
        store_f32(w, v as f32);
    }
}

fn read_intensity(region: &Region, idx: usize, count: u32) -> IntensityStats {
    let w = region.w32(LayerId::Intensity, idx);
    IntensityStats {
        count: u64::from(count),
        mean: f64::from(load_f32(&w[0])),
        m2: f64::from(load_f32(&w[1])),
    }
}

fn clear_statistics(region: &Region, idx: usize, traversal: bool) {
    region.w64(LayerId::Mean, idx).store(0, Ordering::Release);
    for w in region.w32(LayerId::Covariance, idx) {
        w.store(0, Ordering::Release);
    }
    if traversal {
        region.w64(LayerId::Traversal, idx).store(0, Ordering::Release);
        for w in region.w32(LayerId::Intensity, idx) {
            w.store(0, Ordering::Release);
        }
    }
}

/// A return waiting for phase 2.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PendingSample {
    pub key: VoxelKey,
    /// Position in the batch, for a deterministic order within a voxel.
    pub order: u64,
    pub point: Vector3<f64>,
    pub intensity: f32,
}

/// Phase 1 for one segment: likelihood-scaled misses on every crossed voxel
/// except a sample voxel, which is queued for phase 2.
pub(crate) fn miss_phase_segment(
    w: &mut Worker<'_>,
    seg: &RaySample,
    order: u64,
    traversal: bool,
    pending: &mut Vec<PendingSample>,
) {
    let cfg = w.cfg;
    let miss_delta = logodds_delta(false, cfg);
    let walk = VoxelWalk::new(seg, cfg);
    let n = walk.len();
    w.note_task(n);
    for (i, visit) in walk.enumerate() {
        if seg.has_sample && i + 1 == n {
            pending.push(PendingSample {
                key: visit.key,
                order,
                point: seg.end,
                intensity: seg.intensity,
            });
            break;
        }
        let region = w.region(&visit.key.region);
        let idx = visit.key.linear_index(cfg.region_dim);
        let g = read_gaussian(region, idx, &visit.key, cfg);
        let scale = miss_scale(&g, &seg.origin, &seg.end, cfg);
        let delta = (scale * miss_delta) as f32;
        let (_, l) = cas_update_f32(&region.w32(LayerId::Occupancy, idx)[0], w.retry_limit, &mut w.cas, |l| {
            apply_occupancy_update(l, delta, cfg)
        });
        if should_reset(l, cfg) {
            // The miss counter would be cleared straight away, so skip it.
            let dirty = g.count != 0
                || (traversal && region.w64(LayerId::Traversal, idx).load(Ordering::Acquire) != 0);
            if dirty {
                clear_statistics(region, idx, traversal);
            }
        } else if traversal {
            cas_update(region.w64(LayerId::Traversal, idx), w.retry_limit, &mut w.cas, |word| {
                TraversalCounts::from_word(word)
                    .update(TraversalEvent::Miss, scale, cfg)
                    .to_word()
            });
        }
    }
}

/// Phase 2 for one voxel: `samples` are all of this batch's returns in the
/// voxel, in batch order. The caller guarantees exclusive ownership.
pub(crate) fn hit_phase_voxel(w: &mut Worker<'_>, key: &VoxelKey, samples: &[PendingSample], traversal: bool) {
    let cfg = w.cfg;
    let region = w.region(&key.region);
    let idx = key.linear_index(cfg.region_dim);
    let hit_delta = logodds_delta(true, cfg) as f32;

    let occ = &region.w32(LayerId::Occupancy, idx)[0];
    let mut voxel = NdtVoxel {
        log_odds: load_f32(occ),
        gaussian: read_gaussian(region, idx, key, cfg),
        counts: TraversalCounts::default(),
        intensity: IntensityStats::default(),
    };
    if traversal {
        voxel.counts = TraversalCounts::from_word(region.w64(LayerId::Traversal, idx).load(Ordering::Acquire));
        voxel.intensity = read_intensity(region, idx, voxel.counts.hits);
    }
    for s in samples {
        voxel.log_odds = apply_occupancy_update(voxel.log_odds, hit_delta, cfg);
        voxel = maybe_reset_ndt(voxel, cfg);
        voxel.gaussian.add_sample(&s.point);
        if traversal {
            voxel.counts = voxel.counts.update(TraversalEvent::Hit, 1.0, cfg);
            voxel.intensity.add(f64::from(s.intensity));
        }
    }
    store_f32(occ, voxel.log_odds);
    write_gaussian(region, idx, key, cfg, &voxel.gaussian);
    if traversal {
        region
            .w64(LayerId::Traversal, idx)
            .store(voxel.counts.to_word(), Ordering::Release);
        let iw = region.w32(LayerId::Intensity, idx);
        store_f32(&iw[0], voxel.intensity.mean as f32);
        store_f32(&iw[1], voxel.intensity.m2 as f32);
    }
    if w.map.has_layer(LayerId::HitCount) {
        region.w32(LayerId::HitCount, idx)[0].fetch_add(samples.len() as u32, Ordering::AcqRel);
    }
}

/// Decoded NDT voxel, or `None` if its region was never created.
pub fn ndt_at(map: &VoxelMap, key: &VoxelKey) -> Option<NdtVoxel> {
    map.require(crate::store::LayerSet::of(&[LayerId::Occupancy, LayerId::Mean, LayerId::Covariance]))
        .ok()?;
    map.with_voxel(key, |r, i| decode_voxel(map, r, i, key))
}

/// Decodes voxel `idx` of `region`, whose map has at least the NDT-OM layers.
pub(crate) fn decode_voxel(map: &VoxelMap, r: &Region, i: usize, key: &VoxelKey) -> NdtVoxel {
    let traversal = map.has_layer(LayerId::Traversal) && map.has_layer(LayerId::Intensity);
    let counts = if traversal {
        TraversalCounts::from_word(r.w64(LayerId::Traversal, i).load(Ordering::Acquire))
    } else {
        TraversalCounts::default()
    };
    NdtVoxel {
        log_odds: load_f32(&r.w32(LayerId::Occupancy, i)[0]),
        gaussian: read_gaussian(r, i, key, map.config()),
        counts,
        intensity: if traversal {
            read_intensity(r, i, counts.hits)
        } else {
            IntensityStats::default()
        },
    }
}
