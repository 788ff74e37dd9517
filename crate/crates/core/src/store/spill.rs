//! On-disk tier for regions that have not been touched recently.
//!
//! One deflate-compressed file per region, named after its coordinate.

use std::collections::HashSet;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;

use super::key::RegionCoord;
use super::layer::LayerSet;
use super::region::Region;
use crate::error::{MapError, Result};

#[derive(Debug)]
pub struct SpillStore {
    dir: PathBuf,
    stored: HashSet<RegionCoord>,
}

impl SpillStore {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| MapError::io(&dir, e))?;
        Ok(Self {
            dir,
            stored: HashSet::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, c: RegionCoord) -> PathBuf {
        self.dir.join(format!("r_{}_{}_{}.bin.z", c[0], c[1], c[2]))
    }

    pub fn contains(&self, c: &RegionCoord) -> bool {
        self.stored.contains(c)
    }

    pub fn len(&self) -> usize {
        self.stored.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stored.is_empty()
    }

    pub fn coords(&self) -> impl Iterator<Item = &RegionCoord> {
        self.stored.iter()
    }

    pub fn write(&mut self, region: &Region) -> Result<()> {
        let path = self.path(region.coord);
        let mut raw = Vec::new();
        region.write_layers(&mut raw);
        let write = || -> std::io::Result<()> {
            let file = fs::File::create(&path)?;
            let mut enc = DeflateEncoder::new(file, Compression::fast());
            enc.write_all(&raw)?;
            enc.finish()?.sync_data()
        };
        write().map_err(|e| MapError::io(&path, e))?;
        self.stored.insert(region.coord);
        Ok(())
    }

    /// Reads a spilled region without removing it from the store.
    pub fn read(&self, c: RegionCoord, layers: LayerSet, voxels: usize, batch: u64) -> Result<Region> {
        let path = self.path(c);
        let mut raw = Vec::new();
        fs::File::open(&path)
            .and_then(|f| DeflateDecoder::new(f).read_to_end(&mut raw))
            .map_err(|e| MapError::io(&path, e))?;
        Region::read_layers(c, layers, voxels, &raw, batch)
    }

    /// Reads and deletes a spilled region.
    pub fn take(&mut self, c: RegionCoord, layers: LayerSet, voxels: usize, batch: u64) -> Result<Region> {
        let region = self.read(c, layers, voxels, batch)?;
        self.stored.remove(&c);
        let path = self.path(c);
        if let Err(e) = fs::remove_file(&path) {
            log::warn!("could not remove spill file {}: {e}", path.display());
        }
        Ok(region)
    }
}
