use std::borrow::Cow;
use std::collections::HashMap;
use std::path::PathBuf;

use super::key::{RegionCoord, VoxelKey};
use super::layer::{LayerId, LayerSet};
use super::region::Region;
use super::spill::SpillStore;
use crate::config::MapConfig;
use crate::error::{ConfigError, Result};

/// Region-hashed voxel map.
///
/// Region creation and eviction need `&mut self`; voxel payloads inside
/// existing regions are atomics and can be updated through `&self` from any
/// number of workers.
#[derive(Debug)]
pub struct VoxelMap {
    cfg: MapConfig,
    layers: LayerSet,
    regions: HashMap<RegionCoord, Region>,
    batch: u64,
    spill: Option<SpillStore>,
}

impl VoxelMap {
    pub fn new(cfg: MapConfig, layers: LayerSet) -> Result<Self> {
        cfg.validate()?;
        if layers.is_empty() {
            return Err(ConfigError::Invalid("a map needs at least one layer".into()).into());
        }
        Ok(Self {
            cfg,
            layers,
            regions: HashMap::new(),
            batch: 0,
            spill: None,
        })
    }

    /// Enables eviction of stale regions to `dir`.
    pub fn with_spill_dir(mut self, dir: impl Into<PathBuf>) -> Result<Self> {
        self.spill = Some(SpillStore::new(dir)?);
        Ok(self)
    }

    pub fn config(&self) -> &MapConfig {
        &self.cfg
    }

    pub fn layers(&self) -> LayerSet {
        self.layers
    }

    pub fn has_layer(&self, id: LayerId) -> bool {
        self.layers.contains(id)
    }

    pub fn require(&self, required: LayerSet) -> Result<(), ConfigError> {
        match required.iter().find(|id| !self.layers.contains(*id)) {
            Some(id) => Err(ConfigError::MissingLayer(id)),
            None => Ok(()),
        }
    }

    /// Current batch counter.
    pub fn batch(&self) -> u64 {
        self.batch
    }

    /// Advances the batch counter; regions touched afterwards are stamped
    /// with the new value.
    pub fn begin_batch(&mut self) -> u64 {
        self.batch += 1;
        self.batch
    }

    /// Resident plus spilled regions.
    pub fn region_count(&self) -> usize {
        self.regions.len() + self.spill.as_ref().map_or(0, SpillStore::len)
    }

    pub fn resident_region_count(&self) -> usize {
        self.regions.len()
    }

    pub fn is_spilled(&self, c: &RegionCoord) -> bool {
        self.spill.as_ref().is_some_and(|s| s.contains(c))
    }

    /// All region coordinates (resident and spilled), sorted.
    pub fn region_coords(&self) -> Vec<RegionCoord> {
        let mut v: Vec<_> = self.regions.keys().copied().collect();
        if let Some(s) = &self.spill {
            v.extend(s.coords().copied());
        }
        v.sort_unstable();
        v
    }

    /// Returns the region, reloading it from the spill store or creating it
    /// as needed, and stamps it with the current batch.
    pub fn get_or_create_region(&mut self, c: RegionCoord) -> Result<&Region> {
        Ok(self.ensure_resident(c)?.0)
    }

    /// Like [`VoxelMap::get_or_create_region`], also reporting whether the
    /// region was newly created (not reloaded).
    pub fn ensure_resident(&mut self, c: RegionCoord) -> Result<(&Region, bool)> {
        let batch = self.batch;
        let mut created = false;
        if !self.regions.contains_key(&c) {
            let voxels = self.cfg.voxels_per_region();
            let region = match self.spill.as_mut() {
                Some(s) if s.contains(&c) => s.take(c, self.layers, voxels, batch)?,
                _ => {
                    created = true;
                    Region::new(c, self.layers, voxels, batch)?
                }
            };
            self.regions.insert(c, region);
        }
        let region = self.regions.get_mut(&c).expect("inserted above");
        region.last_access = batch;
        Ok((region, created))
    }

    /// Resident region lookup; never touches the spill store.
    #[inline]
    pub fn region(&self, c: &RegionCoord) -> Option<&Region> {
        self.regions.get(c)
    }

    /// Resident or spilled region, read-only. Spilled regions are decoded
    /// into a temporary copy.
    pub fn region_view(&self, c: &RegionCoord) -> Option<Cow<'_, Region>> {
        if let Some(r) = self.regions.get(c) {
            return Some(Cow::Borrowed(r));
        }
        let spill = self.spill.as_ref().filter(|s| s.contains(c))?;
        match spill.read(*c, self.layers, self.cfg.voxels_per_region(), self.batch) {
            Ok(r) => Some(Cow::Owned(r)),
            Err(e) => {
                log::warn!("failed to read spilled region {c:?}: {e}");
                None
            }
        }
    }

    /// Runs `f` on the voxel's region and linear index. `None` when the
    /// region has never been created.
    pub fn with_voxel<T>(&self, key: &VoxelKey, f: impl FnOnce(&Region, usize) -> T) -> Option<T> {
        let region = self.region_view(&key.region)?;
        Some(f(&region, key.linear_index(self.cfg.region_dim)))
    }

    pub(crate) fn insert_region(&mut self, region: Region) {
        self.regions.insert(region.coord, region);
    }

    /// Moves regions not accessed for at least `age` batches into the spill
    /// store. Regions whose spill write fails stay resident.
    pub fn evict_stale_regions(&mut self, age: u64) -> Result<usize> {
        let Some(spill) = self.spill.as_mut() else {
            return Err(ConfigError::Invalid("eviction requires a spill directory".into()).into());
        };
        let now = self.batch;
        let mut stale: Vec<RegionCoord> = self
            .regions
            .values()
            .filter(|r| now.saturating_sub(r.last_access) >= age)
            .map(|r| r.coord)
            .collect();
        stale.sort_unstable();
        let mut evicted = 0;
        for c in stale {
            match spill.write(&self.regions[&c]) {
                Ok(()) => {
                    self.regions.remove(&c);
                    evicted += 1;
                }
                Err(e) => log::warn!("keeping region {c:?} resident: {e}"),
            }
        }
        Ok(evicted)
    }

    /// Visits every voxel of every region (resident and spilled) in sorted
    /// region order, then linear voxel order.
    pub fn for_each_voxel(&self, mut f: impl FnMut(VoxelKey, &Region, usize)) {
        let dim = self.cfg.region_dim;
        for c in self.region_coords() {
            let Some(region) = self.region_view(&c) else { continue };
            for z in 0..dim {
                for y in 0..dim {
                    for x in 0..dim {
                        let key = VoxelKey::new(c, [x, y, z]);
                        f(key, &region, key.linear_index(dim));
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::Ordering;

    use super::*;

    fn occ_map() -> VoxelMap {
        VoxelMap::new(MapConfig::default(), LayerSet::of(&[LayerId::Occupancy, LayerId::Mean])).unwrap()
    }

    #[test]
    fn creates_unknown_region() {
        let mut map = occ_map();
        let r = map.get_or_create_region([0, 0, 0]).unwrap();
        let occ = r.layer(LayerId::Occupancy).unwrap().w32();
        assert_eq!(occ.len(), 32 * 32 * 32);
        assert!(occ.iter().all(|w| f32::from_bits(w.load(Ordering::Relaxed)) == 0.0));
        assert!(r.layer(LayerId::Tsdf).is_none());
    }

    #[test]
    fn creation_is_idempotent() {
        let mut map = occ_map();
        map.get_or_create_region([0, 0, 0]).unwrap();
        map.get_or_create_region([0, 0, 0]).unwrap();
        assert_eq!(map.region_count(), 1);
    }

    #[test]
    fn thousand_distinct_regions() {
        let mut map = VoxelMap::new(
            MapConfig { region_dim: 4, ..Default::default() },
            LayerSet::of(&[LayerId::Occupancy]),
        )
        .unwrap();
        let mut expected = 0;
        for x in 0..10 {
            for y in 0..10 {
                for z in 0..10 {
                    map.get_or_create_region([x - 5, y, -z]).unwrap();
                    expected += 1;
                }
            }
        }
        assert_eq!(map.region_count(), expected);
        assert_eq!(expected, 1000);
    }

    #[test]
    fn eviction_bookkeeping_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut map = occ_map().with_spill_dir(dir.path()).unwrap();
        map.begin_batch();
        for x in 0..4 {
            map.get_or_create_region([x, 0, 0]).unwrap();
        }
        assert_eq!(map.evict_stale_regions(1).unwrap(), 0);

        let key = VoxelKey::new([2, 0, 0], [3, 4, 5]);
        let idx = key.linear_index(32);
        map.region(&[2, 0, 0]).unwrap().w32(LayerId::Occupancy, idx)[0]
            .store(1.25f32.to_bits(), Ordering::Relaxed);
        let before = map.region(&[2, 0, 0]).unwrap().clone();

        map.begin_batch();
        map.get_or_create_region([0, 0, 0]).unwrap();
        assert_eq!(map.evict_stale_regions(1).unwrap(), 3);
        assert_eq!(map.resident_region_count(), 1);
        assert_eq!(map.region_count(), 4);
        assert!(map.is_spilled(&[2, 0, 0]));

        let v = map
            .with_voxel(&key, |r, i| f32::from_bits(r.w32(LayerId::Occupancy, i)[0].load(Ordering::Relaxed)))
            .unwrap();
        assert_eq!(v, 1.25);

        let after = map.get_or_create_region([2, 0, 0]).unwrap();
        assert!(after.same_contents(&before));
        assert!(!map.is_spilled(&[2, 0, 0]));
    }

    #[test]
    fn eviction_without_spill_dir_is_an_error() {
        let mut map = occ_map();
        assert!(map.evict_stale_regions(0).is_err());
    }

    #[test]
    fn failed_spill_write_keeps_region() {
        let dir = tempfile::tempdir().unwrap();
        let spill = dir.path().join("spill");
        let mut map = occ_map().with_spill_dir(&spill).unwrap();
        map.get_or_create_region([0, 0, 0]).unwrap();
        std::fs::remove_dir_all(&spill).unwrap();
        // A plain file where the directory was makes every write fail.
        std::fs::write(&spill, b"x").unwrap();
        map.begin_batch();
        assert_eq!(map.evict_stale_regions(1).unwrap(), 0);
        assert_eq!(map.resident_region_count(), 1);
    }

    #[test]
    fn missing_layer_is_reported() {
        let map = occ_map();
        assert!(map.require(LayerSet::of(&[LayerId::Occupancy])).is_ok());
        assert!(matches!(
            map.require(LayerSet::of(&[LayerId::Tsdf])),
            Err(ConfigError::MissingLayer(LayerId::Tsdf))
        ));
    }
}
