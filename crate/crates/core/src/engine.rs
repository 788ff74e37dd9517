//! Batch scheduling: clip and segment rays, create every region the batch
//! can touch, then integrate one task per segment.
//!
//! The region hash map is frozen while tasks run; workers only update voxel
//! words through bounded CAS loops. Occupancy, decay and NDT batches run in
//! two phases separated by a full barrier: misses for every segment, then
//! hits. NDT hits are grouped so each voxel's returns go to one worker.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::cas::CasCounters;
use crate::config::MapConfig;
use crate::error::{ConfigError, Result};
use crate::kernel::Worker;
use crate::ndt::{self, PendingSample};
use crate::store::{LayerId, LayerSet, RegionCoord, VoxelMap};
use crate::traversal::{clip_ray, regions_between, segment_ray_into, RaySample};
use crate::{occupancy, tsdf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IntegratorKind {
    Occupancy,
    NdtOm,
    NdtTm,
    Decay,
    Tsdf,
}

impl IntegratorKind {
    pub const ALL: [IntegratorKind; 5] = [
        IntegratorKind::Occupancy,
        IntegratorKind::NdtOm,
        IntegratorKind::NdtTm,
        IntegratorKind::Decay,
        IntegratorKind::Tsdf,
    ];

    /// Layers the integrator writes and cannot run without.
    pub fn required_layers(self) -> LayerSet {
        use LayerId::*;
        match self {
            IntegratorKind::Occupancy => LayerSet::of(&[Occupancy]),
            IntegratorKind::Decay => LayerSet::of(&[Occupancy, DecayRate]),
            IntegratorKind::NdtOm => LayerSet::of(&[Occupancy, Mean, Covariance]),
            IntegratorKind::NdtTm => LayerSet::of(&[Occupancy, Mean, Covariance, Traversal, Intensity]),
            IntegratorKind::Tsdf => LayerSet::of(&[Tsdf]),
        }
    }

    /// Layers a map built for this integrator normally carries.
    pub fn default_layers(self) -> LayerSet {
        match self {
            IntegratorKind::Occupancy | IntegratorKind::Decay => {
                self.required_layers().with(LayerId::Mean)
            }
            _ => self.required_layers(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            IntegratorKind::Occupancy => "occupancy",
            IntegratorKind::NdtOm => "ndt-om",
            IntegratorKind::NdtTm => "ndt-tm",
            IntegratorKind::Decay => "decay",
            IntegratorKind::Tsdf => "tsdf",
        }
    }

}

impl fmt::Display for IntegratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IntegratorKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown integrator mode '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecutorKind {
    /// One worker, rays in input order. The reference for equivalence tests.
    Sequential,
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecutorOptions {
    pub worker_count: usize,
    pub cas_retry_limit: u32,
    pub kind: ExecutorKind,
}

pub const DEFAULT_CAS_RETRY_LIMIT: u32 = 20;

impl ExecutorOptions {
    pub fn sequential() -> Self {
        Self {
            worker_count: 1,
            cas_retry_limit: DEFAULT_CAS_RETRY_LIMIT,
            kind: ExecutorKind::Sequential,
        }
    }

    pub fn parallel(workers: usize) -> Self {
        Self {
            worker_count: workers,
            cas_retry_limit: DEFAULT_CAS_RETRY_LIMIT,
            kind: ExecutorKind::Parallel,
        }
    }

    pub fn with_retry_limit(mut self, limit: u32) -> Self {
        self.cas_retry_limit = limit;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.worker_count == 0 {
            return Err(ConfigError::Invalid("worker_count must be at least 1".into()));
        }
        if self.kind == ExecutorKind::Sequential && self.worker_count != 1 {
            return Err(ConfigError::Invalid("the sequential executor has exactly one worker".into()));
        }
        if self.cas_retry_limit == 0 {
            return Err(ConfigError::Invalid("cas_retry_limit must be at least 1".into()));
        }
        Ok(())
    }
}

/// Counters for one submitted batch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchStats {
    pub rays_in: u64,
    pub rays_processed: u64,
    /// Non-finite or zero-length rays.
    pub rays_skipped: u64,
    pub segments: u64,
    pub cas_retries: u64,
    pub cas_failures: u64,
    pub regions_created: u64,
    /// Largest number of voxel visits in a single task.
    pub max_task_visits: u64,
    /// Seconds spent integrating (clip, segment, prefetch, dispatch).
    pub wall_time: f64,
    pub rays_per_second: f64,
}

impl BatchStats {
    pub const CSV_HEADER: &'static str =
        "rays_in,rays_processed,rays_skipped,segments,cas_retries,cas_failures,regions_created,max_task_visits,wall_time_s,rays_per_second";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{:.6},{:.1}",
            self.rays_in,
            self.rays_processed,
            self.rays_skipped,
            self.segments,
            self.cas_retries,
            self.cas_failures,
            self.regions_created,
            self.max_task_visits,
            self.wall_time,
            self.rays_per_second
        )
    }

    /// Accumulates another batch; the rate is recomputed from the totals.
    pub fn merge(&mut self, o: &BatchStats) {
        self.rays_in += o.rays_in;
        self.rays_processed += o.rays_processed;
        self.rays_skipped += o.rays_skipped;
        self.segments += o.segments;
        self.cas_retries += o.cas_retries;
        self.cas_failures += o.cas_failures;
        self.regions_created += o.regions_created;
        self.max_task_visits = self.max_task_visits.max(o.max_task_visits);
        self.wall_time += o.wall_time;
        self.rays_per_second = rate(self.rays_processed, self.wall_time);
    }
}

fn rate(rays: u64, secs: f64) -> f64 {
    if secs > 0.0 {
        rays as f64 / secs
    } else {
        0.0
    }
}

/// Clipped, segmented rays plus the count of rays dropped as degenerate.
pub fn prepare_segments(rays: &[RaySample], cfg: &MapConfig) -> (Vec<RaySample>, u64) {
    let mut segments = Vec::with_capacity(rays.len());
    let mut skipped = 0;
    for ray in rays {
        if !ray.is_finite() || ray.length() == 0.0 {
            skipped += 1;
            continue;
        }
        segment_ray_into(&clip_ray(ray, cfg), cfg, &mut segments);
    }
    (segments, skipped)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Prefetch {
    /// Regions made resident by this call (created or reloaded).
    pub created: usize,
    /// Distinct regions the segments can touch.
    pub touched: usize,
}

/// Makes every region that integrating `segments` with `kind` can touch
/// resident, stamping each with the current batch.
pub fn prefetch_regions(map: &mut VoxelMap, segments: &[RaySample], kind: IntegratorKind) -> Result<Prefetch> {
    let cfg = map.config().clone();
    let mut wanted: HashSet<RegionCoord> = HashSet::new();
    let mut last: Option<RegionCoord> = None;
    let mut add = |c: RegionCoord| {
        if last != Some(c) {
            wanted.insert(c);
            last = Some(c);
        }
    };
    for seg in segments {
        if kind == IntegratorKind::Tsdf {
            if let Some((a, b)) = tsdf::truncation_band(seg, &cfg) {
                regions_between(&a, &b, &cfg).for_each(&mut add);
            }
        } else {
            regions_between(&seg.origin, &seg.end, &cfg).for_each(&mut add);
        }
    }
    let mut coords: Vec<_> = wanted.into_iter().collect();
    coords.sort_unstable();
    let mut created = 0;
    for c in &coords {
        if map.ensure_resident(*c)?.1 {
            created += 1;
        }
    }
    Ok(Prefetch {
        created,
        touched: coords.len(),
    })
}

struct TaskTotals {
    cas: CasCounters,
    max_visits: usize,
    pending: Vec<PendingSample>,
}

impl TaskTotals {
    fn from_worker(w: Worker<'_>, pending: Vec<PendingSample>) -> Self {
        Self {
            cas: w.cas,
            max_visits: w.max_task_visits,
            pending,
        }
    }

    fn join(mut self, mut other: TaskTotals) -> Self {
        self.cas.merge(other.cas);
        self.max_visits = self.max_visits.max(other.max_visits);
        if self.pending.len() < other.pending.len() {
            std::mem::swap(&mut self.pending, &mut other.pending);
        }
        self.pending.append(&mut other.pending);
        self
    }

    fn empty() -> Self {
        Self {
            cas: CasCounters::default(),
            max_visits: 0,
            pending: Vec::new(),
        }
    }
}

/// Runs batches against maps with a fixed executor configuration.
pub struct Engine {
    opts: ExecutorOptions,
    pool: Option<rayon::ThreadPool>,
}

impl fmt::Debug for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Engine").field("opts", &self.opts).finish()
    }
}

/// Minimum segments per parallel task, to amortise scheduling.
const MIN_SEGMENTS_PER_TASK: usize = 64;

impl Engine {
    pub fn new(opts: ExecutorOptions) -> Result<Self> {
        opts.validate()?;
        let pool = match opts.kind {
            ExecutorKind::Sequential => None,
            ExecutorKind::Parallel => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(opts.worker_count)
                    .thread_name(|i| format!("raymap-worker-{i}"))
                    .build()
                    .map_err(|e| ConfigError::Invalid(format!("could not start workers: {e}")))?,
            ),
        };
        Ok(Self { opts, pool })
    }

    pub fn sequential() -> Self {
        Self::new(ExecutorOptions::sequential()).expect("sequential options are valid")
    }

    pub fn options(&self) -> &ExecutorOptions {
        &self.opts
    }

    /// Integrates `rays` into `map`.
    pub fn submit_batch(&self, map: &mut VoxelMap, rays: &[RaySample], kind: IntegratorKind) -> Result<BatchStats> {
        map.require(kind.required_layers())?;
        let mut stats = BatchStats {
            rays_in: rays.len() as u64,
            ..Default::default()
        };
        if rays.is_empty() {
            return Ok(stats);
        }
        let start = Instant::now();
        map.begin_batch();
        let (segments, skipped) = prepare_segments(rays, map.config());
        stats.rays_skipped = skipped;
        stats.rays_processed = stats.rays_in - skipped;
        stats.segments = segments.len() as u64;
        stats.regions_created = prefetch_regions(map, &segments, kind)?.created as u64;

        let map: &VoxelMap = map;
        let totals = match kind {
            IntegratorKind::Tsdf => self.run_tasks(map, &segments, |w, _, seg, _| tsdf::integrate_segment(w, seg)),
            IntegratorKind::NdtOm | IntegratorKind::NdtTm => {
                let traversal = kind == IntegratorKind::NdtTm;
                let mut phase1 = self.run_tasks(map, &segments, |w, i, seg, pending| {
                    ndt::miss_phase_segment(w, seg, i as u64, traversal, pending)
                });
                let mut pending = std::mem::take(&mut phase1.pending);
                pending.sort_unstable_by_key(|p| (p.key, p.order));
                let groups = group_by_voxel(&pending);
                let phase2 = self.run_tasks(map, &groups, |w, _, range, _| {
                    let samples = &pending[range.0..range.1];
                    ndt::hit_phase_voxel(w, &samples[0].key, samples, traversal)
                });
                phase1.join(phase2)
            }
            IntegratorKind::Occupancy | IntegratorKind::Decay => {
                let mut phase1 = self.run_tasks(map, &segments, |w, i, seg, pending| {
                    occupancy::miss_phase_segment(w, seg, i as u64, pending)
                });
                let pending = std::mem::take(&mut phase1.pending);
                let phase2 = self.run_tasks(map, &pending, |w, _, hit, _| occupancy::hit_phase_sample(w, hit));
                phase1.join(phase2)
            }
        };

        stats.cas_retries = totals.cas.retries;
        stats.cas_failures = totals.cas.failures;
        stats.max_task_visits = totals.max_visits as u64;
        stats.wall_time = start.elapsed().as_secs_f64();
        stats.rays_per_second = rate(stats.rays_processed, stats.wall_time);
        Ok(stats)
    }

    fn run_tasks<T, F>(&self, map: &VoxelMap, items: &[T], task: F) -> TaskTotals
    where
        T: Sync,
        F: Fn(&mut Worker<'_>, usize, &T, &mut Vec<PendingSample>) + Sync,
    {
        let limit = self.opts.cas_retry_limit;
        match &self.pool {
            None => {
                let mut w = Worker::new(map, limit);
                let mut pending = Vec::new();
                for (i, item) in items.iter().enumerate() {
                    task(&mut w, i, item, &mut pending);
                }
                TaskTotals::from_worker(w, pending)
            }
            Some(pool) => pool.install(|| {
                items
                    .par_iter()
                    .enumerate()
                    .with_min_len(MIN_SEGMENTS_PER_TASK)
                    .fold(
                        || (Worker::new(map, limit), Vec::new()),
                        |(mut w, mut pending), (i, item)| {
                            task(&mut w, i, item, &mut pending);
                            (w, pending)
                        },
                    )
                    .map(|(w, pending)| TaskTotals::from_worker(w, pending))
                    .reduce(TaskTotals::empty, TaskTotals::join)
            }),
        }
    }
}

/// Half-open index ranges of equal keys in a key-sorted sample list.
fn group_by_voxel(sorted: &[PendingSample]) -> Vec<(usize, usize)> {
    let mut groups = Vec::new();
    let mut start = 0;
    for i in 1..=sorted.len() {
        if i == sorted.len() || sorted[i].key != sorted[start].key {
            groups.push((start, i));
            start = i;
        }
    }
    groups
}

/// Canonical single-worker integration in input order.
pub fn sequential_reference(map: &mut VoxelMap, rays: &[RaySample], kind: IntegratorKind) -> Result<BatchStats> {
    Engine::sequential().submit_batch(map, rays, kind)
}

/// Occupancy integration of one batch with the reference executor.
pub fn integrate_batch_occupancy(map: &mut VoxelMap, rays: &[RaySample]) -> Result<BatchStats> {
    sequential_reference(map, rays, IntegratorKind::Occupancy)
}
