//! Raw map file format.
//!
//! ```text
//! magic        5 bytes  "OHMR1"
//! voxel_size   f64
//! region_dim   u32
//! layer_count  u8, then layer_count layer ids (u8, ascending)
//! region_count u64
//! per region (sorted by coordinate):
//!   x, y, z    i64 each
//!   raw little-endian buffer of every enabled layer, in layer-id order
//! ```
//!
//! All integers little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::layer::{LayerId, LayerSet};
use super::map::VoxelMap;
use super::region::{region_bytes, Region};
use crate::config::MapConfig;
use crate::error::{MapError, Result};

pub const MAP_MAGIC: &[u8; 5] = b"OHMR1";

pub fn write_map(map: &VoxelMap, mut w: impl Write) -> std::io::Result<()> {
    let cfg = map.config();
    w.write_all(MAP_MAGIC)?;
    w.write_all(&cfg.voxel_size.to_le_bytes())?;
    w.write_all(&cfg.region_dim.to_le_bytes())?;
    let layers: Vec<u8> = map.layers().iter().map(|id| id as u8).collect();
    w.write_all(&[layers.len() as u8])?;
    w.write_all(&layers)?;
    let coords = map.region_coords();
    w.write_all(&(coords.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(region_bytes(map.layers(), cfg.voxels_per_region()));
    for c in coords {
        let region = map
            .region_view(&c)
            .ok_or_else(|| std::io::Error::other(format!("region {c:?} unreadable")))?;
        for v in c {
            w.write_all(&i64::from(v).to_le_bytes())?;
        }
        buf.clear();
        region.write_layers(&mut buf);
        w.write_all(&buf)?;
    }
    w.flush()
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|e| MapError::format("map file", format!("truncated: {e}")))?;
    Ok(b)
}

/// Reads a map. Fields not stored in the file come from `base`.
pub fn read_map(mut r: impl Read, base: &MapConfig) -> Result<VoxelMap> {
    let magic: [u8; 5] = read_exact(&mut r)?;
    if &magic != MAP_MAGIC {
        return Err(MapError::format("map file", "bad magic"));
    }
    let voxel_size = f64::from_le_bytes(read_exact(&mut r)?);
    let region_dim = u32::from_le_bytes(read_exact(&mut r)?);
    let [n_layers] = read_exact::<1>(&mut r)?;
    let mut layers = LayerSet::empty();
    for _ in 0..n_layers {
        let [id] = read_exact::<1>(&mut r)?;
        let id = LayerId::from_u8(id).ok_or_else(|| MapError::format("map file", format!("unknown layer id {id}")))?;
        layers = layers.with(id);
    }
    let cfg = MapConfig {
        voxel_size,
        region_dim,
        ..base.clone()
    };
    let mut map = VoxelMap::new(cfg, layers)?;
    let voxels = map.config().voxels_per_region();
    let n_regions = u64::from_le_bytes(read_exact(&mut r)?);
    let mut buf = vec![0u8; region_bytes(layers, voxels)];
    for _ in 0..n_regions {
        let mut coord = [0i32; 3];
        for c in coord.iter_mut() {
            let v = i64::from_le_bytes(read_exact(&mut r)?);
            *c = i32::try_from(v).map_err(|_| MapError::format("map file", format!("region coordinate {v} out of range")))?;
        }
        r.read_exact(&mut buf)
            .map_err(|e| MapError::format("map file", format!("truncated region: {e}")))?;
        map.insert_region(Region::read_layers(coord, layers, voxels, &buf, 0)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| MapError::format("map file", e.to_string()))? != 0 {
        return Err(MapError::format("map file", "trailing data"));
    }
    Ok(map)
}

impl VoxelMap {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| MapError::io(path, e))?;
        write_map(self, BufWriter::new(file)).map_err(|e| MapError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, base: &MapConfig) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| MapError::io(path, e))?;
        read_map(BufReader::new(file), base)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::Ordering;

    use super::*;

    #[test]
    fn header_layout() {
        let map = VoxelMap::new(MapConfig::default(), LayerSet::of(&[LayerId::Occupancy, LayerId::Tsdf])).unwrap();
        let mut bytes = Vec::new();
        write_map(&map, &mut bytes).unwrap();
        assert_eq!(&bytes[..5], b"OHMR1");
        assert_eq!(f64::from_le_bytes(bytes[5..13].try_into().unwrap()), 0.1);
        assert_eq!(u32::from_le_bytes(bytes[13..17].try_into().unwrap()), 32);
        assert_eq!(&bytes[17..20], &[2, 0, 4]);
        assert_eq!(u64::from_le_bytes(bytes[20..28].try_into().unwrap()), 0);
        assert_eq!(bytes.len(), 28);
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let cfg = MapConfig { region_dim: 8, ..Default::default() };
        let mut map = VoxelMap::new(cfg.clone(), LayerSet::of(&[LayerId::Occupancy, LayerId::Mean])).unwrap();
        for c in [[0, 0, 0], [-3, 1, 7]] {
            let r = map.get_or_create_region(c).unwrap();
            r.w32(LayerId::Occupancy, 17)[0].store((-0.4f32).to_bits(), Ordering::Relaxed);
            r.w64(LayerId::Mean, 3).store(0x0000_0005_2008_0200, Ordering::Relaxed);
        }
        let mut a = Vec::new();
        write_map(&map, &mut a).unwrap();
        let back = read_map(a.as_slice(), &cfg).unwrap();
        let mut b = Vec::new();
        write_map(&back, &mut b).unwrap();
        assert_eq!(a, b);
        assert_eq!(back.region_count(), 2);
    }

    #[test]
    fn rejects_corrupt_input() {
        let cfg = MapConfig::default();
        assert!(read_map(&b"NOPE1"[..], &cfg).is_err());
        let map = VoxelMap::new(cfg.clone(), LayerSet::of(&[LayerId::Occupancy])).unwrap();
        let mut bytes = Vec::new();
        write_map(&map, &mut bytes).unwrap();
        bytes.push(0);
        assert!(read_map(bytes.as_slice(), &cfg).is_err());
    }
}
