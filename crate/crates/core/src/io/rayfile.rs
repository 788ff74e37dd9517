//! Binary ray-set files.
//!
//! Header: magic `OHMB1`, version (u32), record count (u64). Each record is
//! 40 bytes: timestamp f64, origin 3×f32, end 3×f32, intensity f32 and a
//! flags word (bit 0 has_sample, bit 1 second return). Little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{MapError, Result};
use crate::traversal::RaySample;

pub const RAY_MAGIC: &[u8; 5] = b"OHMB1";
pub const RAY_VERSION: u32 = 1;
pub const RECORD_BYTES: usize = 40;

const FLAG_SAMPLE: u32 = 1;
const FLAG_SECOND: u32 = 2;

fn encode(ray: &RaySample, out: &mut [u8; RECORD_BYTES]) {
    out[0..8].copy_from_slice(&ray.timestamp.to_le_bytes());
    let coords = ray.origin.iter().chain(ray.end.iter());
    for (i, v) in coords.enumerate() {
        out[8 + 4 * i..12 + 4 * i].copy_from_slice(&(*v as f32).to_le_bytes());
    }
    out[32..36].copy_from_slice(&ray.intensity.to_le_bytes());
    let flags = (u32::from(ray.has_sample) * FLAG_SAMPLE) | (u32::from(ray.second_return) * FLAG_SECOND);
    out[36..40].copy_from_slice(&flags.to_le_bytes());
}

fn decode(b: &[u8; RECORD_BYTES]) -> RaySample {
    let f = |i: usize| f64::from(f32::from_le_bytes(b[i..i + 4].try_into().unwrap()));
    let flags = u32::from_le_bytes(b[36..40].try_into().unwrap());
    RaySample {
        origin: Vector3::new(f(8), f(12), f(16)),
        end: Vector3::new(f(20), f(24), f(28)),
        intensity: f32::from_le_bytes(b[32..36].try_into().unwrap()),
        has_sample: flags & FLAG_SAMPLE != 0,
        second_return: flags & FLAG_SECOND != 0,
        timestamp: f64::from_le_bytes(b[0..8].try_into().unwrap()),
    }
}

pub fn write_rays<W: Write>(mut w: W, rays: &[RaySample]) -> std::io::Result<()> {
    w.write_all(RAY_MAGIC)?;
    w.write_all(&RAY_VERSION.to_le_bytes())?;
    w.write_all(&(rays.len() as u64).to_le_bytes())?;
    let mut buf = [0u8; RECORD_BYTES];
    for ray in rays {
        encode(ray, &mut buf);
        w.write_all(&buf)?;
    }
    w.flush()
}

/// Reads a ray set, checking the header, the record count and timestamp
/// order.
pub fn read_rays<R: Read>(mut r: R, source: &Path) -> Result<Vec<RaySample>> {
    let io = |e| MapError::io(source, e);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != RAY_MAGIC {
        return Err(MapError::format("ray file", "bad magic"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(io)?;
    let version = u32::from_le_bytes(word);
    if version != RAY_VERSION {
        return Err(MapError::format("ray file", format!("unsupported version {version}")));
    }
    let mut count = [0u8; 8];
    r.read_exact(&mut count).map_err(io)?;
    let count = u64::from_le_bytes(count);

    let mut rays = Vec::with_capacity(count.min(1 << 24) as usize);
    let mut buf = [0u8; RECORD_BYTES];
    let mut last_t = f64::NEG_INFINITY;
    for i in 0..count {
        r.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                MapError::format("ray file", format!("header says {count} records, found {i}"))
            } else {
                io(e)
            }
        })?;
        let ray = decode(&buf);
        if ray.timestamp < last_t {
            return Err(MapError::format("ray file", format!("timestamp decreases at record {i}")));
        }
        last_t = ray.timestamp;
        rays.push(ray);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra).map_err(io)? != 0 {
        return Err(MapError::format("ray file", "trailing data after last record"));
    }
    Ok(rays)
}

pub fn save_rays(path: &Path, rays: &[RaySample]) -> Result<()> {
    let f = File::create(path).map_err(|e| MapError::io(path, e))?;
    write_rays(BufWriter::new(f), rays).map_err(|e| MapError::io(path, e))
}

pub fn load_rays(path: &Path) -> Result<Vec<RaySample>> {
    let f = File::open(path).map_err(|e| MapError::io(path, e))?;
    read_rays(BufReader::new(f), path)
}
