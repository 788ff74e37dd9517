use std::sync::atomic::{AtomicU32, AtomicU64};

use super::key::RegionCoord;
use super::layer::{LayerBuffer, LayerId, LayerSet, LAYER_COUNT};
use crate::error::Result;

/// A dense block of `region_dim³` voxels with one contiguous buffer per
/// enabled layer.
#[derive(Debug, Clone)]
pub struct Region {
    pub coord: RegionCoord,
    layers: [Option<LayerBuffer>; LAYER_COUNT],
    /// Batch counter value at the last access.
    pub last_access: u64,
}

impl Region {
    pub fn new(coord: RegionCoord, layers: LayerSet, voxels: usize, batch: u64) -> Result<Self> {
        let mut buffers: [Option<LayerBuffer>; LAYER_COUNT] = Default::default();
        for id in layers.iter() {
            buffers[id as usize] = Some(LayerBuffer::zeroed(id, voxels)?);
        }
        Ok(Self {
            coord,
            layers: buffers,
            last_access: batch,
        })
    }

    pub(crate) fn from_buffers(
        coord: RegionCoord,
        layers: [Option<LayerBuffer>; LAYER_COUNT],
        batch: u64,
    ) -> Self {
        Self {
            coord,
            layers,
            last_access: batch,
        }
    }

    #[inline]
    pub fn layer(&self, id: LayerId) -> Option<&LayerBuffer> {
        self.layers[id as usize].as_ref()
    }

    /// 32-bit words of `id` for voxel `index`. Panics when the layer is
    /// disabled; callers validate layers before entering the hot path.
    #[inline]
    pub fn w32(&self, id: LayerId, index: usize) -> &[AtomicU32] {
        let (_, stride) = id.layout();
        let buf = self.layers[id as usize]
            .as_ref()
            .unwrap_or_else(|| panic!("layer {id:?} not enabled"))
            .w32();
        &buf[index * stride..(index + 1) * stride]
    }

    #[inline]
    pub fn w64(&self, id: LayerId, index: usize) -> &AtomicU64 {
        let buf = self.layers[id as usize]
            .as_ref()
            .unwrap_or_else(|| panic!("layer {id:?} not enabled"))
            .w64();
        &buf[index]
    }

    /// Serialised layer buffers in layer-id order.
    pub fn write_layers(&self, out: &mut Vec<u8>) {
        for buf in self.layers.iter().flatten() {
            buf.write_le(out);
        }
    }

    pub fn read_layers(
        coord: RegionCoord,
        layers: LayerSet,
        voxels: usize,
        bytes: &[u8],
        batch: u64,
    ) -> Result<Self> {
        let mut buffers: [Option<LayerBuffer>; LAYER_COUNT] = Default::default();
        let mut at = 0;
        for id in layers.iter() {
            let len = layer_bytes(id, voxels);
            let end = (at + len).min(bytes.len());
            buffers[id as usize] = Some(LayerBuffer::read_le(id, voxels, &bytes[at..end])?);
            at += len;
        }
        if at != bytes.len() {
            return Err(crate::error::MapError::format(
                "region",
                format!("{} trailing bytes", bytes.len().saturating_sub(at)),
            ));
        }
        Ok(Self::from_buffers(coord, buffers, batch))
    }

    /// Bytewise equality of all layer buffers.
    pub fn same_contents(&self, other: &Region) -> bool {
        let mut a = Vec::new();
        let mut b = Vec::new();
        self.write_layers(&mut a);
        other.write_layers(&mut b);
        a == b
    }
}

pub fn layer_bytes(id: LayerId, voxels: usize) -> usize {
    let (width, stride) = id.layout();
    let word = match width {
        super::layer::WordWidth::W32 => 4,
        super::layer::WordWidth::W64 => 8,
    };
    voxels * stride * word
}

pub fn region_bytes(layers: LayerSet, voxels: usize) -> usize {
    layers.iter().map(|id| layer_bytes(id, voxels)).sum()
}
