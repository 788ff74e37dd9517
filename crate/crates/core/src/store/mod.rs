//! Region-hashed, layered voxel storage.

mod key;
mod layer;
mod map;
mod packed_mean;
mod persist;
mod region;
mod spill;

pub use key::{global_index, key_for_point, local_index, voxel_center, voxel_origin, RegionCoord, VoxelKey};
pub use layer::{LayerBuffer, LayerId, LayerSet, WordWidth, LAYER_COUNT};
pub use map::VoxelMap;
pub use packed_mean::{pack_mean, unpack_mean, PackedMean};
pub use persist::{read_map, write_map, MAP_MAGIC};
pub use region::Region;
pub use spill::SpillStore;
