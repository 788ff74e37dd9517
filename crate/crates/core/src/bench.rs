//! Replay harness: feeds a ray set to an engine in fixed-duration batches,
//! either as fast as possible (offline) or paced by the ray timestamps with
//! a bounded hand-off queue that drops batches when integration falls
//! behind (online).

use std::ops::Range;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, TrySendError};

use crate::engine::{BatchStats, Engine, IntegratorKind};
use crate::error::{ConfigError, Result};
use crate::store::VoxelMap;
use crate::traversal::RaySample;

/// Seconds of sensor data per submitted batch.
pub const DEFAULT_BATCH_DURATION: f64 = 0.1;
/// Batches the online queue holds before new ones are dropped.
pub const DEFAULT_QUEUE_CAPACITY: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOptions {
    pub kind: IntegratorKind,
    pub batch_duration: f64,
    pub online: bool,
    /// Online playback speed relative to the ray timestamps.
    pub speed: f64,
    pub queue_capacity: usize,
}

impl ReplayOptions {
    pub fn offline(kind: IntegratorKind) -> Self {
        Self {
            kind,
            batch_duration: DEFAULT_BATCH_DURATION,
            online: false,
            speed: 1.0,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
        }
    }

    pub fn online(kind: IntegratorKind, speed: f64) -> Self {
        Self {
            online: true,
            speed,
            ..Self::offline(kind)
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.batch_duration.is_finite() && self.batch_duration > 0.0) {
            return Err(ConfigError::Invalid(format!("batch duration must be positive, got {}", self.batch_duration)));
        }
        if !(self.speed.is_finite() && self.speed > 0.0) {
            return Err(ConfigError::Invalid(format!("playback speed must be positive, got {}", self.speed)));
        }
        if self.queue_capacity == 0 {
            return Err(ConfigError::Invalid("queue capacity must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per data-second counters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SecondStats {
    pub second: u64,
    pub rays_in: u64,
    pub rays_integrated: u64,
    pub rays_dropped: u64,
    /// Integration time spent on this second's batches.
    pub busy_time: f64,
}

impl SecondStats {
    pub fn rays_per_second(&self) -> f64 {
        if self.busy_time > 0.0 {
            self.rays_integrated as f64 / self.busy_time
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub kind: IntegratorKind,
    pub workers: usize,
    pub online: bool,
    pub rays_in: u64,
    pub rays_dropped: u64,
    pub batches: u64,
    pub batches_dropped: u64,
    /// Engine counters summed over integrated batches.
    pub totals: BatchStats,
    /// Elapsed time of the whole replay.
    pub wall_time: f64,
    pub series: Vec<SecondStats>,
}

impl ReplayReport {
    pub const SUMMARY_HEADER: &'static str =
        "mode,workers,online,rays_in,rays_integrated,rays_dropped,drop_percent,mean_rays_per_second,cas_retries,cas_failures,wall_time_s";
    pub const SERIES_HEADER: &'static str = "second,rays_in,rays_integrated,rays_dropped,busy_s,rays_per_second";

    pub fn rays_integrated(&self) -> u64 {
        self.totals.rays_in
    }

    pub fn drop_percent(&self) -> f64 {
        if self.rays_in == 0 {
            0.0
        } else {
            100.0 * self.rays_dropped as f64 / self.rays_in as f64
        }
    }

    /// Integrated rays per second of integration time.
    pub fn mean_rays_per_second(&self) -> f64 {
        self.totals.rays_per_second
    }

    pub fn summary_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.3},{:.1},{},{},{:.6}",
            self.kind,
            self.workers,
            self.online,
            self.rays_in,
            self.rays_integrated(),
            self.rays_dropped,
            self.drop_percent(),
            self.mean_rays_per_second(),
            self.totals.cas_retries,
            self.totals.cas_failures,
            self.wall_time
        )
    }

    pub fn series_csv(&self) -> String {
        let mut s = String::from(Self::SERIES_HEADER);
        s.push('\n');
        for p in &self.series {
            s.push_str(&format!(
                "{},{},{},{},{:.6},{:.1}\n",
                p.second,
                p.rays_in,
                p.rays_integrated,
                p.rays_dropped,
                p.busy_time,
                p.rays_per_second()
            ));
        }
        s
    }
}

/// Splits time-ordered rays into consecutive batches spanning
/// `batch_duration` seconds each, measured from the first timestamp.
pub fn split_batches(rays: &[RaySample], batch_duration: f64) -> Vec<Range<usize>> {
    let Some(first) = rays.first() else {
        return Vec::new();
    };
    let base = first.timestamp;
    let slot = |r: &RaySample| ((r.timestamp - base) / batch_duration).floor() as u64;
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=rays.len() {
        if i == rays.len() || slot(&rays[i]) != slot(&rays[start]) {
            out.push(start..i);
            start = i;
        }
    }
    out
}

struct Series {
    base: f64,
    seconds: Vec<SecondStats>,
}

impl Series {
    fn new(rays: &[RaySample]) -> Self {
        Self {
            base: rays.first().map_or(0.0, |r| r.timestamp),
            seconds: Vec::new(),
        }
    }

    fn bucket(&mut self, batch: &[RaySample]) -> &mut SecondStats {
        let s = batch.first().map_or(0, |r| (r.timestamp - self.base).max(0.0) as u64) as usize;
        while self.seconds.len() <= s {
            let second = self.seconds.len() as u64;
            self.seconds.push(SecondStats {
                second,
                ..Default::default()
            });
        }
        &mut self.seconds[s]
    }

    fn integrated(&mut self, batch: &[RaySample], stats: &BatchStats) {
        let b = self.bucket(batch);
        b.rays_in += batch.len() as u64;
        b.rays_integrated += stats.rays_in;
        b.busy_time += stats.wall_time;
    }

    fn dropped(&mut self, batch: &[RaySample]) {
        let b = self.bucket(batch);
        b.rays_in += batch.len() as u64;
        b.rays_dropped += batch.len() as u64;
    }
}

/// Replays `rays` into `map` according to `opts`.
pub fn replay(engine: &Engine, map: &mut VoxelMap, rays: &[RaySample], opts: &ReplayOptions) -> Result<ReplayReport> {
    opts.validate()?;
    map.require(opts.kind.required_layers())?;
    let batches = split_batches(rays, opts.batch_duration);
    let mut series = Series::new(rays);
    let mut totals = BatchStats::default();
    let start = Instant::now();

    let dropped = if opts.online {
        replay_online(engine, map, rays, &batches, opts, &mut series, &mut totals)?
    } else {
        for range in &batches {
            let batch = &rays[range.clone()];
            let stats = engine.submit_batch(map, batch, opts.kind)?;
            series.integrated(batch, &stats);
            totals.merge(&stats);
        }
        Vec::new()
    };

    let rays_dropped = dropped.iter().map(|&i| batches[i].len() as u64).sum();
    Ok(ReplayReport {
        kind: opts.kind,
        workers: engine.options().worker_count,
        online: opts.online,
        rays_in: rays.len() as u64,
        rays_dropped,
        batches: batches.len() as u64,
        batches_dropped: dropped.len() as u64,
        totals,
        wall_time: start.elapsed().as_secs_f64(),
        series: series.seconds,
    })
}

/// A producer thread releases each batch once its last timestamp has passed
/// on the (sped-up) replay clock, and drops it if the queue is full. The
/// calling thread integrates whatever reaches the queue. Returns the indices
/// of dropped batches.
fn replay_online(
    engine: &Engine,
    map: &mut VoxelMap,
    rays: &[RaySample],
    batches: &[Range<usize>],
    opts: &ReplayOptions,
    series: &mut Series,
    totals: &mut BatchStats,
) -> Result<Vec<usize>> {
    let (tx, rx) = bounded::<usize>(opts.queue_capacity);
    let base = rays.first().map_or(0.0, |r| r.timestamp);
    std::thread::scope(|scope| {
        let producer = scope.spawn(move || {
            let t0 = Instant::now();
            let mut dropped = Vec::new();
            for (i, range) in batches.iter().enumerate() {
                let due = (rays[range.end - 1].timestamp - base).max(0.0) / opts.speed;
                let now = t0.elapsed().as_secs_f64();
                if due > now {
                    std::thread::sleep(Duration::from_secs_f64(due - now));
                }
                match tx.try_send(i) {
                    Ok(()) => {}
                    Err(TrySendError::Full(i)) => dropped.push(i),
                    Err(TrySendError::Disconnected(_)) => break,
                }
            }
            dropped
        });

        let mut result = Ok(());
        for i in rx.iter() {
            let batch = &rays[batches[i].clone()];
            match engine.submit_batch(map, batch, opts.kind) {
                Ok(stats) => {
                    series.integrated(batch, &stats);
                    totals.merge(&stats);
                }
                Err(e) => {
                    result = Err(e);
                    break;
                }
            }
        }
        drop(rx);
        let dropped = producer.join().expect("replay producer panicked");
        for &i in &dropped {
            series.dropped(&rays[batches[i].clone()]);
        }
        result.map(|()| dropped)
    })
}
