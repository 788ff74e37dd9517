use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

use crate::error::{MapError, Result};

/// Per-voxel data channels. The discriminant is the on-disk layer id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum LayerId {
    /// Log-odds occupancy, one `f32`.
    Occupancy = 0,
    /// Packed sub-voxel mean and sample count, one 64-bit word.
    Mean = 1,
    /// Lower-triangular covariance square root, six `f32`.
    Covariance = 2,
    /// Hit count (`u32`) and accumulated path length (`f32`).
    DecayRate = 3,
    /// Signed distance and weight packed into one 64-bit word.
    Tsdf = 4,
    /// NDT-TM hit and miss counters packed into one 64-bit word.
    Traversal = 5,
    /// NDT-TM intensity mean and M2 accumulator, two `f32`.
    Intensity = 6,
    /// Unclamped count of applied hit updates, one `u32`.
    HitCount = 7,
}

pub const LAYER_COUNT: usize = 8;

impl LayerId {
    pub const ALL: [LayerId; LAYER_COUNT] = [
        LayerId::Occupancy,
        LayerId::Mean,
        LayerId::Covariance,
        LayerId::DecayRate,
        LayerId::Tsdf,
        LayerId::Traversal,
        LayerId::Intensity,
        LayerId::HitCount,
    ];

    pub fn from_u8(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    /// Storage word width and words per voxel.
    pub fn layout(self) -> (WordWidth, usize) {
        match self {
            LayerId::Occupancy | LayerId::HitCount => (WordWidth::W32, 1),
            LayerId::Mean | LayerId::Tsdf | LayerId::Traversal => (WordWidth::W64, 1),
            LayerId::Covariance => (WordWidth::W32, 6),
            LayerId::DecayRate | LayerId::Intensity => (WordWidth::W32, 2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WordWidth {
    W32,
    W64,
}

/// Set of enabled layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct LayerSet(u16);

impl LayerSet {
    pub const fn empty() -> Self {
        LayerSet(0)
    }

    pub fn with(mut self, id: LayerId) -> Self {
        self.0 |= 1 << id as u16;
        self
    }

    pub fn of(ids: &[LayerId]) -> Self {
        ids.iter().fold(Self::empty(), |s, &id| s.with(id))
    }

    pub fn contains(&self, id: LayerId) -> bool {
        self.0 & (1 << id as u16) != 0
    }

    pub fn union(self, other: LayerSet) -> Self {
        LayerSet(self.0 | other.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = LayerId> + '_ {
        LayerId::ALL.into_iter().filter(|id| self.contains(*id))
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }
}

/// Contiguous atomic storage for one layer of one region.
#[derive(Debug)]
pub enum LayerBuffer {
    W32(Box<[AtomicU32]>),
    W64(Box<[AtomicU64]>),
}

fn alloc<T>(n: usize, make: impl Fn() -> T) -> Result<Box<[T]>> {
    let mut v = Vec::new();
    v.try_reserve_exact(n)
        .map_err(|_| MapError::Allocation(n * std::mem::size_of::<T>()))?;
    v.extend((0..n).map(|_| make()));
    Ok(v.into_boxed_slice())
}

impl LayerBuffer {
    /// Zero-filled buffer: zero is the "unknown" value of every layer.
    pub fn zeroed(id: LayerId, voxels: usize) -> Result<Self> {
        let (width, stride) = id.layout();
        let n = voxels * stride;
        Ok(match width {
            WordWidth::W32 => LayerBuffer::W32(alloc(n, || AtomicU32::new(0))?),
            WordWidth::W64 => LayerBuffer::W64(alloc(n, || AtomicU64::new(0))?),
        })
    }

    pub fn word_count(&self) -> usize {
        match self {
            LayerBuffer::W32(b) => b.len(),
            LayerBuffer::W64(b) => b.len(),
        }
    }

    #[inline]
    pub fn w32(&self) -> &[AtomicU32] {
        match self {
            LayerBuffer::W32(b) => b,
            LayerBuffer::W64(_) => panic!("layer holds 64-bit words"),
        }
    }

    #[inline]
    pub fn w64(&self) -> &[AtomicU64] {
        match self {
            LayerBuffer::W64(b) => b,
            LayerBuffer::W32(_) => panic!("layer holds 32-bit words"),
        }
    }

    /// Little-endian raw bytes of the whole buffer.
    pub fn write_le(&self, out: &mut Vec<u8>) {
        match self {
            LayerBuffer::W32(b) => {
                out.reserve(b.len() * 4);
                for w in b.iter() {
                    out.extend_from_slice(&w.load(Ordering::Relaxed).to_le_bytes());
                }
            }
            LayerBuffer::W64(b) => {
                out.reserve(b.len() * 8);
                for w in b.iter() {
                    out.extend_from_slice(&w.load(Ordering::Relaxed).to_le_bytes());
                }
            }
        }
    }

    /// Inverse of [`LayerBuffer::write_le`]; `bytes` must be exactly the
    /// buffer size.
    pub fn read_le(id: LayerId, voxels: usize, bytes: &[u8]) -> Result<Self> {
        let (width, stride) = id.layout();
        let n = voxels * stride;
        let word = match width {
            WordWidth::W32 => 4,
            WordWidth::W64 => 8,
        };
        if bytes.len() != n * word {
            return Err(MapError::format(
                "layer buffer",
                format!("{id:?}: expected {} bytes, got {}", n * word, bytes.len()),
            ));
        }
        Ok(match width {
            WordWidth::W32 => LayerBuffer::W32(
                bytes
                    .chunks_exact(4)
                    .map(|c| AtomicU32::new(u32::from_le_bytes(c.try_into().unwrap())))
                    .collect(),
            ),
            WordWidth::W64 => LayerBuffer::W64(
                bytes
                    .chunks_exact(8)
                    .map(|c| AtomicU64::new(u64::from_le_bytes(c.try_into().unwrap())))
                    .collect(),
            ),
        })
    }

    pub fn byte_len(&self) -> usize {
        match self {
            LayerBuffer::W32(b) => b.len() * 4,
            LayerBuffer::W64(b) => b.len() * 8,
        }
    }
}

impl Clone for LayerBuffer {
    fn clone(&self) -> Self {
        match self {
            LayerBuffer::W32(b) => LayerBuffer::W32(
                b.iter().map(|w| AtomicU32::new(w.load(Ordering::Relaxed))).collect(),
            ),
            LayerBuffer::W64(b) => LayerBuffer::W64(
                b.iter().map(|w| AtomicU64::new(w.load(Ordering::Relaxed))).collect(),
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_set_ops() {
        let s = LayerSet::of(&[LayerId::Occupancy, LayerId::Tsdf]);
        assert!(s.contains(LayerId::Occupancy));
        assert!(!s.contains(LayerId::Mean));
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![LayerId::Occupancy, LayerId::Tsdf]);
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn ids_round_trip() {
        for id in LayerId::ALL {
            assert_eq!(LayerId::from_u8(id as u8), Some(id));
        }
        assert_eq!(LayerId::from_u8(99), None);
    }

    #[test]
    fn raw_bytes_round_trip() {
        let buf = LayerBuffer::zeroed(LayerId::Covariance, 8).unwrap();
        buf.w32()[5].store(0xdead_beef, Ordering::Relaxed);
        let mut bytes = Vec::new();
        buf.write_le(&mut bytes);
        assert_eq!(bytes.len(), 8 * 6 * 4);
        let back = LayerBuffer::read_le(LayerId::Covariance, 8, &bytes).unwrap();
        assert_eq!(back.w32()[5].load(Ordering::Relaxed), 0xdead_beef);
        assert!(LayerBuffer::read_le(LayerId::Covariance, 9, &bytes).is_err());
    }
}
