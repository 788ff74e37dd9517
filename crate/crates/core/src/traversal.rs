//! Grid line walking for rays: voxel visits with path lengths, ray clipping
//! and segmentation, and the same walk at region resolution for prefetch.
//!
//! Both walks share one DDA. Cell faces are always computed as
//! `voxel_face_index * voxel_size`, so a region walk crosses a region face at
//! the same parameter value as the voxel walk crossing that face. This is
//! what keeps every voxel-walk region inside the region walk.
//!
//! Ties between axes (a ray through an edge or corner) step x, then y, then
//! z. The voxels entered at the tie get a zero-length visit.

use nalgebra::Vector3;

use crate::config::MapConfig;
use crate::store::{global_index, RegionCoord, VoxelKey};

/// One ray (or ray segment) from the sensor origin to `end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySample {
    pub origin: Vector3<f64>,
    pub end: Vector3<f64>,
    pub intensity: f32,
    /// `end` is a real sensor return. False for miss-only rays and for all
    /// but the last segment of a split ray.
    pub has_sample: bool,
    pub second_return: bool,
    pub timestamp: f64,
}

impl RaySample {
    pub fn hit(origin: Vector3<f64>, end: Vector3<f64>) -> Self {
        Self {
            origin,
            end,
            intensity: 0.0,
            has_sample: true,
            second_return: false,
            timestamp: 0.0,
        }
    }

    pub fn miss(origin: Vector3<f64>, end: Vector3<f64>) -> Self {
        Self {
            has_sample: false,
            ..Self::hit(origin, end)
        }
    }

    pub fn with_intensity(mut self, intensity: f32) -> Self {
        self.intensity = intensity;
        self
    }

    pub fn at(mut self, timestamp: f64) -> Self {
        self.timestamp = timestamp;
        self
    }

    pub fn length(&self) -> f64 {
        (self.end - self.origin).norm()
    }

    pub fn is_finite(&self) -> bool {
        self.origin.iter().chain(self.end.iter()).all(|c| c.is_finite())
    }

    /// Point at parameter `t` in `[0, 1]`.
    pub fn point_at(&self, t: f64) -> Vector3<f64> {
        self.origin + (self.end - self.origin) * t
    }
}

/// A voxel crossed by a ray. `entry_t`/`exit_t` are ray parameters in
/// `[0, 1]`; `path_length` is the distance travelled inside the voxel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelVisit {
    pub key: VoxelKey,
    pub entry_t: f64,
    pub exit_t: f64,
    pub path_length: f64,
}

#[inline]
fn floor_div(a: i64, b: i64) -> i64 {
    a.div_euclid(b)
}

/// DDA over cells that are `cell_voxels` voxels wide.
#[derive(Debug, Clone)]
struct CellWalk {
    origin: [f64; 3],
    delta: [f64; 3],
    voxel_size: f64,
    cell_voxels: i64,
    cell: [i64; 3],
    step: [i64; 3],
    remaining: [i64; 3],
    entry_t: f64,
    done: bool,
}

impl CellWalk {
    fn new(origin: &Vector3<f64>, end: &Vector3<f64>, voxel_size: f64, cell_voxels: i64) -> Self {
        let start_v = global_index(origin, voxel_size);
        let end_v = global_index(end, voxel_size);
        let mut cell = [0; 3];
        let mut step = [0; 3];
        let mut remaining = [0; 3];
        for a in 0..3 {
            cell[a] = floor_div(start_v[a], cell_voxels);
            let last = floor_div(end_v[a], cell_voxels);
            step[a] = (last - cell[a]).signum();
            remaining[a] = (last - cell[a]).abs();
        }
        Self {
            origin: [origin.x, origin.y, origin.z],
            delta: [end.x - origin.x, end.y - origin.y, end.z - origin.z],
            voxel_size,
            cell_voxels,
            cell,
            step,
            remaining,
            entry_t: 0.0,
            done: false,
        }
    }

    /// Ray parameter where the walk leaves the current cell along `axis`.
    #[inline]
    fn face_t(&self, axis: usize) -> f64 {
        let face_cell = self.cell[axis] + i64::from(self.step[axis] > 0);
        let face = (face_cell * self.cell_voxels) as f64 * self.voxel_size;
        (face - self.origin[axis]) / self.delta[axis]
    }

    fn total_steps(&self) -> usize {
        self.remaining.iter().sum::<i64>() as usize + 1
    }
}

impl Iterator for CellWalk {
    /// (cell, entry_t, exit_t)
    type Item = ([i64; 3], f64, f64);

    #[inline]
    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let mut axis = usize::MAX;
        let mut best = f64::INFINITY;
        for a in 0..3 {
            if self.remaining[a] > 0 {
                let t = self.face_t(a);
                // Strict comparison: on ties the lower axis wins.
                if axis == usize::MAX || t < best {
                    axis = a;
                    best = t;
                }
            }
        }
        let cell = self.cell;
        let entry = self.entry_t;
        if axis == usize::MAX {
            self.done = true;
            return Some((cell, entry, 1.0));
        }
        let exit = best.clamp(entry, 1.0);
        self.cell[axis] += self.step[axis];
        self.remaining[axis] -= 1;
        self.entry_t = exit;
        Some((cell, entry, exit))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        if self.done {
            (0, Some(0))
        } else {
            let n = self.total_steps();
            (n, Some(n))
        }
    }
}

impl ExactSizeIterator for CellWalk {}

/// Iterator over the voxels crossed by a ray, origin first, end voxel last.
#[derive(Debug, Clone)]
pub struct VoxelWalk {
    inner: CellWalk,
    region_dim: u32,
    length: f64,
}

impl VoxelWalk {
    pub fn new(ray: &RaySample, cfg: &MapConfig) -> Self {
        Self::between(&ray.origin, &ray.end, cfg)
    }

    pub fn between(origin: &Vector3<f64>, end: &Vector3<f64>, cfg: &MapConfig) -> Self {
        Self {
            inner: CellWalk::new(origin, end, cfg.voxel_size, 1),
            region_dim: cfg.region_dim,
            length: (end - origin).norm(),
        }
    }
}

impl Iterator for VoxelWalk {
    type Item = VoxelVisit;

    #[inline]
    fn next(&mut self) -> Option<VoxelVisit> {
        let (g, entry_t, exit_t) = self.inner.next()?;
        Some(VoxelVisit {
            key: VoxelKey::from_global(g, self.region_dim),
            entry_t,
            exit_t,
            path_length: (exit_t - entry_t) * self.length,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.inner.size_hint()
    }
}

impl ExactSizeIterator for VoxelWalk {}

/// Every voxel whose interior the ray crosses, in order. A zero-length ray
/// yields its origin voxel with a zero path.
pub fn walk_voxels(ray: &RaySample, cfg: &MapConfig) -> Vec<VoxelVisit> {
    VoxelWalk::new(ray, cfg).collect()
}

/// The regions crossed by a ray, in order.
pub fn walk_regions(ray: &RaySample, cfg: &MapConfig) -> Vec<RegionCoord> {
    regions_between(&ray.origin, &ray.end, cfg).collect()
}

pub fn regions_between<'a>(
    origin: &Vector3<f64>,
    end: &Vector3<f64>,
    cfg: &'a MapConfig,
) -> impl Iterator<Item = RegionCoord> + 'a {
    CellWalk::new(origin, end, cfg.voxel_size, i64::from(cfg.region_dim))
        .map(|(c, _, _)| c.map(|v| v as i32))
}

/// Shortens rays beyond `max_ray_range`. The clipped end is not a return,
/// so the ray becomes miss-only.
pub fn clip_ray(ray: &RaySample, cfg: &MapConfig) -> RaySample {
    let len = ray.length();
    if len <= cfg.max_ray_range {
        return *ray;
    }
    let dir = (ray.end - ray.origin) / len;
    RaySample {
        end: ray.origin + dir * cfg.max_ray_range,
        has_sample: false,
        ..*ray
    }
}

/// Relative slack when deciding whether a ray is an exact multiple of the
/// segment length, so a 20 m ray splits into two 10 m segments and not two
/// plus a sliver.
const SEGMENT_SLACK: f64 = 1e-9;

/// Number of segments [`segment_ray`] produces for a ray of `length`.
pub fn segment_count(length: f64, segment_length: f64) -> usize {
    let n = length / segment_length;
    let whole = n.floor();
    if n - whole <= SEGMENT_SLACK * n.max(1.0) {
        (whole as usize).max(1)
    } else {
        whole as usize + 1
    }
}

/// Splits a ray into consecutive segments of at most `segment_length`. Only
/// the last segment keeps the original sample flag.
pub fn segment_ray(ray: &RaySample, cfg: &MapConfig) -> Vec<RaySample> {
    let mut out = Vec::new();
    segment_ray_into(ray, cfg, &mut out);
    out
}

pub fn segment_ray_into(ray: &RaySample, cfg: &MapConfig, out: &mut Vec<RaySample>) {
    let len = ray.length();
    let n = segment_count(len, cfg.segment_length);
    if n <= 1 {
        out.push(*ray);
        return;
    }
    let dir = (ray.end - ray.origin) / len;
    let mut start = ray.origin;
    for i in 0..n {
        let last = i + 1 == n;
        let end = if last {
            ray.end
        } else {
            ray.origin + dir * (cfg.segment_length * (i + 1) as f64)
        };
        out.push(RaySample {
            origin: start,
            end,
            has_sample: last && ray.has_sample,
            ..*ray
        });
        start = end;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    fn locals(visits: &[VoxelVisit]) -> Vec<[u32; 3]> {
        visits.iter().map(|v| v.key.local).collect()
    }

    /// Voxels containing points sampled every `step` meters.
    fn dense_sample(ray: &RaySample, cfg: &MapConfig, step: f64) -> Vec<VoxelKey> {
        let n = (ray.length() / step).ceil() as usize;
        let mut out: Vec<VoxelKey> = Vec::new();
        for i in 0..=n {
            let p = ray.point_at((i as f64 / n.max(1) as f64).min(1.0));
            let k = VoxelKey::from_global(global_index(&p, cfg.voxel_size), cfg.region_dim);
            if out.last() != Some(&k) {
                out.push(k);
            }
        }
        out
    }

    #[test]
    fn axis_ray() {
        let cfg = MapConfig::default();
        let ray = RaySample::hit(v(0.05, 0.05, 0.05), v(0.35, 0.05, 0.05));
        let visits = walk_voxels(&ray, &cfg);
        assert_eq!(locals(&visits), vec![[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]]);
        for (got, want) in visits.iter().zip([0.05, 0.1, 0.1, 0.05]) {
            assert!((got.path_length - want).abs() < 1e-12, "{got:?}");
        }
        let oracle = dense_sample(&ray, &cfg, 1e-4);
        assert_eq!(oracle, visits.iter().map(|v| v.key).collect::<Vec<_>>());
    }

    #[test]
    fn zero_length_ray() {
        let cfg = MapConfig::default();
        let p = v(0.05, 0.05, 0.05);
        let visits = walk_voxels(&RaySample::hit(p, p), &cfg);
        assert_eq!(visits.len(), 1);
        assert_eq!(visits[0].key.local, [0, 0, 0]);
        assert_eq!(visits[0].path_length, 0.0);
    }

    #[test]
    fn corner_tie_steps_x_first() {
        let cfg = MapConfig::default();
        let ray = RaySample::hit(v(0.05, 0.05, 0.05), v(0.15, 0.15, 0.05));
        let visits = walk_voxels(&ray, &cfg);
        assert_eq!(locals(&visits), vec![[0, 0, 0], [1, 0, 0], [1, 1, 0]]);
        assert!(visits[1].path_length.abs() < 1e-12);
        let total: f64 = visits.iter().map(|v| v.path_length).sum();
        assert!((total - ray.length()).abs() < 1e-12);
    }

    #[test]
    fn negative_direction() {
        let cfg = MapConfig::default();
        let ray = RaySample::hit(v(0.05, 0.05, 0.05), v(-0.25, 0.05, 0.05));
        let visits = walk_voxels(&ray, &cfg);
        let g: Vec<i64> = visits.iter().map(|v| v.key.global(32)[0]).collect();
        assert_eq!(g, vec![0, -1, -2, -3]);
    }

    #[test]
    fn segmentation_lengths() {
        let cfg = MapConfig::default();
        let o = v(1.0, 2.0, 3.0);
        let dir = v(3.0, 4.0, 12.0) / 13.0;

        let segs = segment_ray(&RaySample::hit(o, o + dir * 25.0), &cfg);
        let lens: Vec<f64> = segs.iter().map(RaySample::length).collect();
        assert_eq!(segs.len(), 3);
        for (l, e) in lens.iter().zip([10.0, 10.0, 5.0]) {
            assert!((l - e).abs() < 1e-9);
        }
        assert_eq!(segs.iter().map(|s| s.has_sample).collect::<Vec<_>>(), vec![false, false, true]);
        assert_eq!(segs[2].end, o + dir * 25.0);

        let short = RaySample::hit(o, o + dir * 5.0);
        assert_eq!(segment_ray(&short, &cfg), vec![short]);

        let exact = segment_ray(&RaySample::hit(o, o + dir * 20.0), &cfg);
        assert_eq!(exact.len(), 2);
        assert!((exact[0].length() - 10.0).abs() < 1e-9);
        assert!((exact[1].length() - 10.0).abs() < 1e-9);
        assert!(!exact[0].has_sample && exact[1].has_sample);
    }

    #[test]
    fn clipping() {
        let cfg = MapConfig::default();
        let o = v(0.0, 0.0, 0.0);
        let long = RaySample::hit(o, v(0.0, 35.0, 0.0));
        let c = clip_ray(&long, &cfg);
        assert!((c.end - v(0.0, 20.0, 0.0)).norm() < 1e-12);
        assert!(!c.has_sample);

        let mid = RaySample::hit(o, v(12.0, 0.0, 0.0));
        assert_eq!(clip_ray(&mid, &cfg), mid);
        let edge = RaySample::hit(o, v(0.0, 0.0, 20.0));
        assert_eq!(clip_ray(&edge, &cfg), edge);
    }

    #[test]
    fn region_walks() {
        let cfg = MapConfig::default();
        let inside = RaySample::hit(v(0.5, 0.5, 0.5), v(1.5, 0.5, 0.5));
        assert_eq!(walk_regions(&inside, &cfg), vec![[0, 0, 0]]);
        let across = RaySample::hit(v(0.1, 0.1, 0.1), v(6.0, 0.1, 0.1));
        assert_eq!(walk_regions(&across, &cfg), vec![[0, 0, 0], [1, 0, 0]]);
    }

    fn arb_ray() -> impl Strategy<Value = RaySample> {
        (
            prop::array::uniform3(-30.0f64..30.0),
            prop::array::uniform3(-1.0f64..1.0),
            0.0f64..20.0,
        )
            .prop_filter_map("degenerate direction", |(o, d, len)| {
                let d = Vector3::from(d);
                let n = d.norm();
                (n > 1e-3).then(|| {
                    let o = Vector3::from(o);
                    RaySample::hit(o, o + d / n * len)
                })
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2_000))]

        #[test]
        fn visits_are_contiguous_and_conserve_length(ray in arb_ray()) {
            let cfg = MapConfig::default();
            let visits = walk_voxels(&ray, &cfg);
            prop_assert_eq!(visits[0].entry_t, 0.0);
            prop_assert_eq!(visits.last().unwrap().exit_t, 1.0);
            for w in visits.windows(2) {
                prop_assert_eq!(w[0].exit_t, w[1].entry_t);
                // Neighbouring visits differ by one step along one axis.
                let a = w[0].key.global(32);
                let b = w[1].key.global(32);
                let d: i64 = (0..3).map(|i| (a[i] - b[i]).abs()).sum();
                prop_assert_eq!(d, 1);
            }
            let total: f64 = visits.iter().map(|v| v.path_length).sum();
            let len = ray.length();
            prop_assert!((total - len).abs() <= 1e-9 * len.max(1e-300) + 1e-15);
            let end_key = crate::store::key_for_point(&ray.end, &cfg).unwrap();
            prop_assert_eq!(visits.last().unwrap().key, end_key);
        }

        #[test]
        fn region_walk_contains_voxel_regions(ray in arb_ray()) {
            let cfg = MapConfig::default();
            let regions = walk_regions(&ray, &cfg);
            for visit in walk_voxels(&ray, &cfg) {
                prop_assert!(regions.contains(&visit.key.region));
            }
        }

        #[test]
        fn segments_partition_the_walk(ray in arb_ray()) {
            let cfg = MapConfig { segment_length: 3.0, ..Default::default() };
            let whole: Vec<VoxelKey> = walk_voxels(&ray, &cfg).into_iter().map(|v| v.key).collect();
            let mut joined: Vec<VoxelKey> = Vec::new();
            for seg in segment_ray(&ray, &cfg) {
                for v in walk_voxels(&seg, &cfg) {
                    if joined.last() != Some(&v.key) {
                        joined.push(v.key);
                    }
                }
            }
            // Seams may differ by a zero-length corner visit; compare the
            // voxels actually entered with positive length.
            let positive = |r: &RaySample| -> std::collections::BTreeSet<VoxelKey> {
                walk_voxels(r, &cfg).into_iter().filter(|v| v.path_length > 1e-6).map(|v| v.key).collect()
            };
            let mut seg_set = std::collections::BTreeSet::new();
            for seg in segment_ray(&ray, &cfg) {
                seg_set.extend(positive(&seg));
            }
            prop_assert_eq!(seg_set, positive(&ray));
            prop_assert_eq!(joined.first(), whole.first());
            prop_assert_eq!(joined.last(), whole.last());
        }

        #[test]
        fn reverse_walk_visits_same_voxels(ray in arb_ray()) {
            let cfg = MapConfig::default();
            let rev = RaySample::hit(ray.end, ray.origin);
            let fwd: std::collections::BTreeSet<VoxelKey> =
                walk_voxels(&ray, &cfg).into_iter().filter(|v| v.path_length > 1e-6).map(|v| v.key).collect();
            let bwd: std::collections::BTreeSet<VoxelKey> =
                walk_voxels(&rev, &cfg).into_iter().filter(|v| v.path_length > 1e-6).map(|v| v.key).collect();
            prop_assert_eq!(fwd, bwd);
        }
    }
}
