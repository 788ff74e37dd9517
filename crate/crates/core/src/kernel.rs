use crate::cas::CasCounters;
use crate::config::MapConfig;
use crate::store::{Region, RegionCoord, VoxelMap};

/// Per-worker state for integrating ray segments into a map whose region
/// topology is frozen for the batch.
pub(crate) struct Worker<'a> {
    pub map: &'a VoxelMap,
    pub cfg: &'a MapConfig,
    pub retry_limit: u32,
    pub cas: CasCounters,
    /// Largest number of voxel visits made by a single task.
    pub max_task_visits: usize,
    cached: Option<(RegionCoord, &'a Region)>,
}

impl<'a> Worker<'a> {
    pub fn new(map: &'a VoxelMap, retry_limit: u32) -> Self {
        Self {
            map,
            cfg: map.config(),
            retry_limit,
            cas: CasCounters::default(),
            max_task_visits: 0,
            cached: None,
        }
    }

    /// Region lookup with a one-entry cache; consecutive visits almost
    /// always share a region.
    #[inline]
    pub fn region(&mut self, c: &RegionCoord) -> &'a Region {
        if let Some((cc, r)) = self.cached {
            if cc == *c {
                return r;
            }
        }
        let r = self
            .map
            .region(c)
            .unwrap_or_else(|| panic!("region {c:?} was not prefetched"));
        self.cached = Some((*c, r));
        r
    }

    pub fn note_task(&mut self, visits: usize) {
        self.max_task_visits = self.max_task_visits.max(visits);
    }
}
