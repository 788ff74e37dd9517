use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use raymap::bench::{replay, ReplayOptions, ReplayReport, DEFAULT_BATCH_DURATION, DEFAULT_QUEUE_CAPACITY};
use raymap::io::{export, generate_scene, load_rays, save_rays, ExportFormat, SceneKind, SceneSpec};
use raymap::{Engine, ExecutorOptions, IntegratorKind, MapConfig, MapError, RaySample, VoxelMap};

#[derive(Parser, Debug)]
#[command(name = "raymap", version, about = "Parallel occupancy voxel mapping benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate a ray file or generated scene and report throughput.
    Bench(BenchArgs),
    /// Write a synthetic ray set.
    Generate(GenerateArgs),
    /// Export a saved map.
    Export(ExportArgs),
}

#[derive(Args, Debug)]
struct SceneArgs {
    /// Generate this scene instead of reading a ray file.
    #[arg(long)]
    scene: Option<SceneKind>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scene duration in seconds.
    #[arg(long, default_value_t = 1.0)]
    duration: f64,
    /// Generated rays per second.
    #[arg(long, default_value_t = 300_000.0)]
    rate: f64,
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
}

#[derive(Args, Debug)]
struct MapArgs {
    #[arg(long)]
    voxel_size: Option<f64>,
    #[arg(long)]
    max_range: Option<f64>,
    #[arg(long)]
    segment_length: Option<f64>,
}

impl MapArgs {
    fn config(&self) -> MapConfig {
        let mut cfg = MapConfig::default();
        if let Some(v) = self.voxel_size {
            cfg.voxel_size = v;
        }
        if let Some(v) = self.max_range {
            cfg.max_ray_range = v;
        }
        if let Some(v) = self.segment_length {
            cfg.segment_length = v;
        }
        cfg
    }
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Ray file to replay.
    #[arg(long, conflicts_with = "scene", required_unless_present = "scene")]
    input: Option<PathBuf>,
    #[command(flatten)]
    scene: SceneArgs,
    #[command(flatten)]
    map: MapArgs,
    /// occupancy, ndt-om, ndt-tm, decay or tsdf.
    #[arg(long, default_value = "occupancy")]
    mode: IntegratorKind,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Replay at the ray timestamps, dropping batches when behind.
    #[arg(long)]
    online: bool,
    /// Online playback speed relative to the timestamps.
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    /// Seconds of rays per batch.
    #[arg(long, default_value_t = DEFAULT_BATCH_DURATION)]
    batch: f64,
    /// Online queue capacity in batches.
    #[arg(long, default_value_t = DEFAULT_QUEUE_CAPACITY)]
    queue: usize,
    /// Output directory for summary.csv, series.csv, map.ohm and exports.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also export the finished map in this format (needs --out).
    #[arg(long, requires = "out")]
    export: Option<ExportFormat>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, default_value = "corridor")]
    scene: SceneKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    duration: f64,
    #[arg(long, default_value_t = 300_000.0)]
    rate: f64,
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    #[arg(long, default_value_t = 20.0)]
    max_range: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExportArgs {
    /// Map file written by `bench --out`.
    map: PathBuf,
    #[arg(long)]
    export: ExportFormat,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Io(String),
}

impl From<MapError> for Failure {
    fn from(e: MapError) -> Self {
        match e {
            MapError::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Io(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bench(a) => bench(a),
        Command::Generate(a) => generate(a),
        Command::Export(a) => export_map(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn scene_rays(a: &SceneArgs, kind: SceneKind, max_range: f64) -> Result<Vec<RaySample>, Failure> {
    let spec = SceneSpec {
        kind,
        rays_per_second: a.rate,
        duration: a.duration,
        noise_sigma: a.noise,
        max_range,
        seed: a.seed,
        ..SceneSpec::default()
    };
    generate_scene(&spec).map_err(|e| Failure::Usage(e.to_string()))
}

fn bench(a: BenchArgs) -> Result<(), Failure> {
    let cfg = a.map.config();
    let mut map = VoxelMap::new(cfg.clone(), a.mode.default_layers())?;
    let engine = Engine::new(ExecutorOptions::parallel(a.workers))?;
    let opts = ReplayOptions {
        kind: a.mode,
        batch_duration: a.batch,
        online: a.online,
        speed: a.speed,
        queue_capacity: a.queue,
    };
    opts.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let rays = match (&a.input, a.scene.scene) {
        (Some(path), _) => load_rays(path)?,
        (None, Some(kind)) => scene_rays(&a.scene, kind, cfg.max_ray_range)?,
        (None, None) => return Err(Failure::Usage("either --input or --scene is required".into())),
    };
    log::info!("replaying {} rays with {} worker(s)", rays.len(), a.workers);
    let report = replay(&engine, &mut map, &rays, &opts)?;
    println!("{}", ReplayReport::SUMMARY_HEADER);
    println!("{}", report.summary_row());

    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
        let summary = format!("{}\n{}\n", ReplayReport::SUMMARY_HEADER, report.summary_row());
        write(&dir.join("summary.csv"), summary.as_bytes())?;
        write(&dir.join("series.csv"), report.series_csv().as_bytes())?;
        map.save(dir.join("map.ohm"))?;
        if let Some(format) = a.export {
            write_export(&map, format, &dir.join(export_name(format)))?;
        }
    }
    Ok(())
}

fn generate(a: GenerateArgs) -> Result<(), Failure> {
    let spec = SceneSpec {
        kind: a.scene,
        rays_per_second: a.rate,
        duration: a.duration,
        noise_sigma: a.noise,
        max_range: a.max_range,
        seed: a.seed,
        ..SceneSpec::default()
    };
    let rays = generate_scene(&spec).map_err(|e| Failure::Usage(e.to_string()))?;
    save_rays(&a.out, &rays)?;
    log::info!("wrote {} rays to {}", rays.len(), a.out.display());
    Ok(())
}

fn export_map(a: ExportArgs) -> Result<(), Failure> {
    let map = VoxelMap::load(&a.map, &MapConfig::default())?;
    write_export(&map, a.export, &a.out)
}

fn export_name(format: ExportFormat) -> String {
    let ext = if format == ExportFormat::OccupiedPly { "ply" } else { "csv" };
    format!("{format}.{ext}")
}

fn write_export(map: &VoxelMap, format: ExportFormat, path: &Path) -> Result<(), Failure> {
    let mut buf = Vec::new();
    export(map, format, &mut buf)?;
    write(path, &buf)
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| io_failure(path, e))
}
