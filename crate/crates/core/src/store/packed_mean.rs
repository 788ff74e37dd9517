//! Sub-voxel mean position quantised to 10 bits per axis.
//!
//! Bits 0..10 hold x, 10..20 hold y, 20..30 hold z; the top two bits are
//! always zero. Each axis stores the bucket index `floor(offset * 1024)` and
//! decodes to the bucket midpoint, so the worst-case error is half a bucket.

const BITS: u32 = 10;
const BUCKETS: f64 = (1u32 << BITS) as f64;
const MASK: u32 = (1 << BITS) - 1;

/// Offsets further than this outside `[0, 1)` are treated as caller bugs
/// rather than floating-point noise at a voxel face.
const RANGE_SLACK: f64 = 1e-6;

fn quantise(v: f64) -> u32 {
    if cfg!(debug_assertions) && !(-RANGE_SLACK..1.0 + RANGE_SLACK).contains(&v) {
        log::warn!("sub-voxel offset {v} outside [0, 1); clamping");
    }
    let q = (v * BUCKETS).floor();
    if q.is_nan() {
        return 0;
    }
    q.clamp(0.0, f64::from(MASK)) as u32
}

/// Packs a voxel-relative offset (each axis a fraction of the voxel edge).
pub fn pack_mean(offset: [f64; 3]) -> u32 {
    quantise(offset[0]) | (quantise(offset[1]) << BITS) | (quantise(offset[2]) << (2 * BITS))
}

pub fn unpack_mean(packed: u32) -> [f64; 3] {
    [0, 1, 2].map(|i| (f64::from((packed >> (i * BITS)) & MASK) + 0.5) / BUCKETS)
}

/// Packed mean plus the number of samples folded into it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PackedMean {
    pub packed: u32,
    pub count: u32,
}

impl PackedMean {
    /// Layer word: packed pattern in the low half, count in the high half.
    #[inline]
    pub fn to_word(self) -> u64 {
        u64::from(self.packed) | (u64::from(self.count) << 32)
    }

    #[inline]
    pub fn from_word(word: u64) -> Self {
        Self {
            packed: word as u32,
            count: (word >> 32) as u32,
        }
    }

    pub fn from_mean(mean: [f64; 3], count: u32) -> Self {
        Self {
            packed: pack_mean(mean),
            count,
        }
    }

    /// Decoded mean as voxel fractions; `None` before the first sample.
    pub fn mean(&self) -> Option<[f64; 3]> {
        (self.count > 0).then(|| unpack_mean(self.packed))
    }

    /// Folds one sample into the running mean. A saturated counter freezes
    /// the mean.
    pub fn update(self, sample: [f64; 3]) -> Self {
        match self.count {
            0 => Self::from_mean(sample, 1),
            u32::MAX => self,
            n => {
                let m = unpack_mean(self.packed);
                let k = f64::from(n) + 1.0;
                let next = [0, 1, 2].map(|i| m[i] + (sample[i] - m[i]) / k);
                Self::from_mean(next, n + 1)
            }
        }
    }
}
