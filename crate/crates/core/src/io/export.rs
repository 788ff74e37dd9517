//! Text exports of a map: occupied voxels as an ASCII PLY point cloud and
//! per-voxel CSV dumps of the NDT, TSDF and decay-rate layers.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::atomic::Ordering;

use nalgebra::Vector3;

use crate::cas::load_f32;
use crate::error::{ConfigError, Result};
use crate::ndt::{self, NdtVoxel};
use crate::occupancy::{decay_rate, occupancy_state, DecayVoxel, OccupancyState};
use crate::store::{voxel_center, voxel_origin, LayerId, LayerSet, PackedMean, Region, VoxelKey, VoxelMap};
use crate::tsdf::TsdfVoxel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExportFormat {
    OccupiedPly,
    NdtCsv,
    TsdfCsv,
    DecayCsv,
}

impl ExportFormat {
    pub const ALL: [ExportFormat; 4] = [
        ExportFormat::OccupiedPly,
        ExportFormat::NdtCsv,
        ExportFormat::TsdfCsv,
        ExportFormat::DecayCsv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExportFormat::OccupiedPly => "occupied-ply",
            ExportFormat::NdtCsv => "ndt-csv",
            ExportFormat::TsdfCsv => "tsdf-csv",
            ExportFormat::DecayCsv => "decay-csv",
        }
    }

    pub fn required_layers(self) -> LayerSet {
        match self {
            ExportFormat::OccupiedPly => LayerSet::of(&[LayerId::Occupancy]),
            ExportFormat::NdtCsv => LayerSet::of(&[LayerId::Occupancy, LayerId::Mean, LayerId::Covariance]),
            ExportFormat::TsdfCsv => LayerSet::of(&[LayerId::Tsdf]),
            ExportFormat::DecayCsv => LayerSet::of(&[LayerId::DecayRate]),
        }
    }
}

impl fmt::Display for ExportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExportFormat {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown export format '{s}'")))
    }
}

pub const NDT_CSV_HEADER: &str =
    "x,y,z,n,mean_x,mean_y,mean_z,cov_xx,cov_xy,cov_xz,cov_yy,cov_yz,cov_zz,log_odds,hits,misses,permeability,intensity_mean,intensity_var";
pub const TSDF_CSV_HEADER: &str = "x,y,z,distance,weight";
pub const DECAY_CSV_HEADER: &str = "x,y,z,hits,distance,rate";

/// Writes `format` for `map` to `out`. Voxels are emitted in key order, so
/// equal maps give byte-identical output.
pub fn export<W: Write>(map: &VoxelMap, format: ExportFormat, out: W) -> Result<()> {
    map.require(format.required_layers())?;
    let path = std::path::Path::new("<export>");
    let io = |e| crate::MapError::io(path, e);
    match format {
        ExportFormat::OccupiedPly => occupied_ply(map, out).map_err(io),
        ExportFormat::NdtCsv => ndt_csv(map, out).map_err(io),
        ExportFormat::TsdfCsv => tsdf_csv(map, out).map_err(io),
        ExportFormat::DecayCsv => decay_csv(map, out).map_err(io),
    }
}

/// Calls `f` for every voxel of every region (resident or spilled) in
/// sorted key order.
fn each_voxel(map: &VoxelMap, mut f: impl FnMut(&VoxelKey, &Region, usize) -> std::io::Result<()>) -> std::io::Result<()> {
    let dim = map.config().region_dim;
    for coord in map.region_coords() {
        let Some(region) = map.region_view(&coord) else {
            continue;
        };
        for z in 0..dim {
            for y in 0..dim {
                for x in 0..dim {
                    let key = VoxelKey::new(coord, [x, y, z]);
                    f(&key, &region, key.linear_index(dim))?;
                }
            }
        }
    }
    Ok(())
}

/// Position for an occupied voxel: its sample mean when the mean layer
/// holds samples, else the voxel center.
pub fn occupied_position(map: &VoxelMap, key: &VoxelKey, region: &Region, idx: usize) -> Vector3<f64> {
    let cfg = map.config();
    if map.has_layer(LayerId::Mean) {
        let pm = PackedMean::from_word(region.w64(LayerId::Mean, idx).load(Ordering::Acquire));
        if let Some(frac) = pm.mean() {
            let o = voxel_origin(key, cfg);
            return Vector3::new(
                o.x + frac[0] * cfg.voxel_size,
                o.y + frac[1] * cfg.voxel_size,
                o.z + frac[2] * cfg.voxel_size,
            );
        }
    }
    voxel_center(key, cfg)
}

fn occupied_points(map: &VoxelMap) -> std::io::Result<Vec<Vector3<f64>>> {
    let cfg = map.config();
    let with_mean = map.has_layer(LayerId::Mean);
    let mut pts = Vec::new();
    each_voxel(map, |key, r, i| {
        let l = load_f32(&r.w32(LayerId::Occupancy, i)[0]);
        let count = with_mean.then(|| PackedMean::from_word(r.w64(LayerId::Mean, i).load(Ordering::Acquire)).count);
        if occupancy_state(l, count, cfg) == OccupancyState::Occupied {
            pts.push(occupied_position(map, key, r, i));
        }
        Ok(())
    })?;
    Ok(pts)
}

fn occupied_ply<W: Write>(map: &VoxelMap, mut out: W) -> std::io::Result<()> {
    let pts = occupied_points(map)?;
    writeln!(out, "ply")?;
    writeln!(out, "format ascii 1.0")?;
    writeln!(out, "element vertex {}", pts.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(out, "property double {axis}")?;
    }
    writeln!(out, "end_header")?;
    for p in pts {
        writeln!(out, "{} {} {}", p.x, p.y, p.z)?;
    }
    out.flush()
}

fn ndt_csv<W: Write>(map: &VoxelMap, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{NDT_CSV_HEADER}")?;
    let cfg = map.config();
    let mut rows: Vec<(VoxelKey, NdtVoxel)> = Vec::new();
    each_voxel(map, |key, r, i| {
        let v = ndt::decode_voxel(map, r, i, key);
        if v.gaussian.count > 0 {
            rows.push((*key, v));
        }
        Ok(())
    })?;
    for (key, v) in rows {
        let c = voxel_center(&key, cfg);
        let m = v.gaussian.mean;
        let s = v.gaussian.covariance();
        let p = v.counts.permeability().map_or(String::new(), |p| p.to_string());
        let (im, iv) = v
            .intensity
            .stats()
            .map_or((String::new(), String::new()), |(m, var)| (m.to_string(), var.to_string()));
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            c.x,
            c.y,
            c.z,
            v.gaussian.count,
            m.x,
            m.y,
            m.z,
            s[(0, 0)],
            s[(0, 1)],
            s[(0, 2)],
            s[(1, 1)],
            s[(1, 2)],
            s[(2, 2)],
            v.log_odds,
            v.counts.hits,
            v.counts.misses,
            p,
            im,
            iv
        )?;
    }
    out.flush()
}

fn tsdf_csv<W: Write>(map: &VoxelMap, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{TSDF_CSV_HEADER}")?;
    let cfg = map.config();
    each_voxel(map, |key, r, i| {
        let v = TsdfVoxel::from_word(r.w64(LayerId::Tsdf, i).load(Ordering::Acquire));
        if v.weight > 0.0 {
            let c = voxel_center(key, cfg);
            writeln!(out, "{},{},{},{},{}", c.x, c.y, c.z, v.distance, v.weight)?;
        }
        Ok(())
    })?;
    out.flush()
}

fn decay_csv<W: Write>(map: &VoxelMap, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{DECAY_CSV_HEADER}")?;
    let cfg = map.config();
    each_voxel(map, |key, r, i| {
        let w = r.w32(LayerId::DecayRate, i);
        let v = DecayVoxel {
            hits: w[0].load(Ordering::Acquire),
            distance: load_f32(&w[1]),
        };
        if let Some(rate) = decay_rate(&v) {
            let c = voxel_center(key, cfg);
            writeln!(out, "{},{},{},{},{},{}", c.x, c.y, c.z, v.hits, v.distance, rate)?;
        }
        Ok(())
    })?;
    out.flush()
}
