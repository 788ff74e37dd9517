use std::sync::atomic::Ordering;

use nalgebra::Vector3;
use raymap::cas::load_f32;
use raymap::engine::{prefetch_regions, prepare_segments, sequential_reference};
use raymap::io::{generate_scene, SceneKind, SceneSpec};
use raymap::occupancy::{decay_at, hit_count_at, logodds_delta, mean_at, occupancy_at};
use raymap::store::{key_for_point, write_map, VoxelKey};
use raymap::traversal::{walk_voxels, VoxelWalk};
use raymap::tsdf::tsdf_query;
use raymap::{Engine, ExecutorOptions, IntegratorKind, LayerId, LayerSet, MapConfig, RaySample, VoxelMap};

fn scene(kind: SceneKind, rays: usize, seed: u64) -> Vec<RaySample> {
    let spec = SceneSpec {
        duration: rays as f64 / 300_000.0,
        seed,
        ..SceneSpec::new(kind)
    };
    generate_scene(&spec).unwrap()
}

fn map_for(kind: IntegratorKind) -> VoxelMap {
    VoxelMap::new(MapConfig::default(), kind.default_layers().with(LayerId::HitCount)).unwrap()
}

fn map_bytes(map: &VoxelMap) -> Vec<u8> {
    let mut v = Vec::new();
    write_map(map, &mut v).unwrap();
    v
}

/// Calls `f` with every voxel key of every region of `map`.
fn each_key(map: &VoxelMap, mut f: impl FnMut(&VoxelKey)) {
    let dim = map.config().region_dim;
    for c in map.region_coords() {
        for z in 0..dim {
            for y in 0..dim {
                for x in 0..dim {
                    f(&VoxelKey::new(c, [x, y, z]));
                }
            }
        }
    }
}

fn parallel(workers: usize) -> Engine {
    Engine::new(ExecutorOptions::parallel(workers)).unwrap()
}

#[test]
fn parallel_occupancy_matches_sequential() {
    let rays = scene(SceneKind::Corridor, 30_000, 1);
    let mut seq = map_for(IntegratorKind::Occupancy);
    sequential_reference(&mut seq, &rays, IntegratorKind::Occupancy).unwrap();
    let mut par = map_for(IntegratorKind::Occupancy);
    let stats = parallel(8).submit_batch(&mut par, &rays, IntegratorKind::Occupancy).unwrap();
    assert_eq!(stats.cas_failures, 0);
    assert_eq!(seq.region_coords(), par.region_coords());
    each_key(&seq, |k| {
        let (a, b) = (occupancy_at(&seq, k).unwrap(), occupancy_at(&par, k).unwrap());
        assert!((a - b).abs() <= 1e-4, "{k:?}: {a} vs {b}");
        assert_eq!(hit_count_at(&seq, k), hit_count_at(&par, k));
        assert_eq!(mean_at(&seq, k).unwrap().count, mean_at(&par, k).unwrap().count);
    });
}

#[test]
fn no_lost_hits() {
    let rays = scene(SceneKind::Mixed, 20_000, 2);
    let mut map = map_for(IntegratorKind::Occupancy);
    let engine = Engine::new(ExecutorOptions::parallel(8).with_retry_limit(1)).unwrap();
    let stats = engine.submit_batch(&mut map, &rays, IntegratorKind::Occupancy).unwrap();
    let (segments, _) = prepare_segments(&rays, map.config());
    let expected = segments.iter().filter(|s| s.has_sample).count() as u64;
    let mut total = 0u64;
    each_key(&map, |k| total += u64::from(hit_count_at(&map, k).unwrap()));
    assert_eq!(total, expected);
    assert_eq!(stats.segments, segments.len() as u64);
}

#[test]
fn parallel_decay_matches_sequential() {
    let rays = scene(SceneKind::ThinPoles, 20_000, 3);
    let mut seq = map_for(IntegratorKind::Decay);
    sequential_reference(&mut seq, &rays, IntegratorKind::Decay).unwrap();
    let mut par = map_for(IntegratorKind::Decay);
    parallel(4).submit_batch(&mut par, &rays, IntegratorKind::Decay).unwrap();
    each_key(&seq, |k| {
        let (a, b) = (decay_at(&seq, k).unwrap(), decay_at(&par, k).unwrap());
        assert_eq!(a.hits, b.hits);
        assert!((a.distance - b.distance).abs() <= 1e-5 * a.distance.max(1.0), "{k:?}");
    });
}

#[test]
fn ndt_phase_two_is_exact_under_parallelism() {
    let rays = scene(SceneKind::Corridor, 30_000, 4);
    let mut seq = map_for(IntegratorKind::NdtTm);
    sequential_reference(&mut seq, &rays, IntegratorKind::NdtTm).unwrap();
    for workers in [2, 8] {
        let mut par = map_for(IntegratorKind::NdtTm);
        parallel(workers).submit_batch(&mut par, &rays, IntegratorKind::NdtTm).unwrap();
        each_key(&seq, |k| {
            let word = |m: &VoxelMap, id| m.with_voxel(k, |r, i| r.w64(id, i).load(Ordering::Relaxed)).unwrap();
            let cov = |m: &VoxelMap| {
                m.with_voxel(k, |r, i| r.w32(LayerId::Covariance, i).iter().map(load_f32).collect::<Vec<_>>())
                    .unwrap()
            };
            assert_eq!(word(&seq, LayerId::Mean), word(&par, LayerId::Mean), "{k:?}");
            assert_eq!(cov(&seq), cov(&par), "{k:?}");
            let hits = |m: &VoxelMap| word(m, LayerId::Traversal) as u32;
            assert_eq!(hits(&seq), hits(&par), "{k:?}");
        });
    }
}

#[test]
fn sequential_runs_are_bit_identical() {
    let rays = scene(SceneKind::Mixed, 10_000, 5);
    for kind in IntegratorKind::ALL {
        let mut a = map_for(kind);
        let mut b = map_for(kind);
        sequential_reference(&mut a, &rays, kind).unwrap();
        sequential_reference(&mut b, &rays, kind).unwrap();
        assert!(map_bytes(&a) == map_bytes(&b), "{kind}");
    }
}

#[test]
fn single_ray_hand_example() {
    let mut map = map_for(IntegratorKind::Occupancy);
    let cfg = map.config().clone();
    let end = Vector3::new(0.35, 0.05, 0.05);
    let ray = RaySample::hit(Vector3::new(0.05, 0.05, 0.05), end);
    sequential_reference(&mut map, &[ray], IntegratorKind::Occupancy).unwrap();
    let miss = logodds_delta(false, &cfg) as f32;
    let hit = logodds_delta(true, &cfg) as f32;
    for x in 0..3 {
        let k = VoxelKey::new([0, 0, 0], [x, 0, 0]);
        assert_eq!(occupancy_at(&map, &k), Some(miss));
    }
    let k = VoxelKey::new([0, 0, 0], [3, 0, 0]);
    assert_eq!(occupancy_at(&map, &k), Some(hit));
    let mean = mean_at(&map, &k).unwrap();
    assert_eq!(mean.count, 1);
    let m = mean.mean().unwrap();
    for (got, want) in m.iter().zip([0.5, 0.5, 0.5]) {
        assert!((got - want).abs() <= 1.0 / 1024.0);
    }
}

#[test]
fn repeated_batch_doubles_log_odds() {
    let rays: Vec<_> = (0..20)
        .map(|i| {
            let y = 0.05 + 0.1 * f64::from(i);
            RaySample::hit(Vector3::new(0.05, y, 0.05), Vector3::new(1.55, y, 0.05))
        })
        .collect();
    let mut once = map_for(IntegratorKind::Occupancy);
    sequential_reference(&mut once, &rays, IntegratorKind::Occupancy).unwrap();
    let mut twice = map_for(IntegratorKind::Occupancy);
    sequential_reference(&mut twice, &rays, IntegratorKind::Occupancy).unwrap();
    sequential_reference(&mut twice, &rays, IntegratorKind::Occupancy).unwrap();
    let mut touched = 0;
    each_key(&once, |k| {
        let a = occupancy_at(&once, k).unwrap();
        if a != 0.0 {
            touched += 1;
            assert_eq!(occupancy_at(&twice, k).unwrap(), 2.0 * a);
        }
    });
    assert_eq!(touched, 20 * 16);
}

#[test]
fn task_work_is_bounded() {
    let rays = scene(SceneKind::OpenField, 20_000, 6);
    let mut map = map_for(IntegratorKind::Occupancy);
    let cfg = map.config().clone();
    let stats = parallel(4).submit_batch(&mut map, &rays, IntegratorKind::Occupancy).unwrap();
    let bound = (cfg.segment_length / cfg.voxel_size).ceil() as u64 * 3;
    assert!(stats.max_task_visits > 0 && stats.max_task_visits <= bound, "{}", stats.max_task_visits);
    assert!(stats.rays_processed <= stats.rays_in);
    let rate = stats.rays_processed as f64 / stats.wall_time;
    assert!((stats.rays_per_second - rate).abs() <= 1e-9 * rate);
}

#[test]
fn prefetch_covers_every_visit() {
    let rays = scene(SceneKind::Mixed, 5_000, 7);
    for kind in [IntegratorKind::Occupancy, IntegratorKind::Tsdf] {
        let mut map = map_for(kind);
        let (segments, _) = prepare_segments(&rays, map.config());
        prefetch_regions(&mut map, &segments, kind).unwrap();
        let cfg = map.config().clone();
        for seg in &segments {
            let visits: Vec<_> = match kind {
                IntegratorKind::Tsdf => match raymap::tsdf::truncation_band(seg, &cfg) {
                    Some((a, b)) => VoxelWalk::between(&a, &b, &cfg).collect(),
                    None => Vec::new(),
                },
                _ => walk_voxels(seg, &cfg),
            };
            for v in visits {
                assert!(map.region(&v.key.region).is_some());
            }
        }
    }
}

#[test]
fn prefetch_examples() {
    let mut map = map_for(IntegratorKind::Occupancy);
    let one = [RaySample::hit(Vector3::new(0.2, 0.2, 0.2), Vector3::new(1.2, 0.2, 0.2))];
    assert_eq!(prefetch_regions(&mut map, &one, IntegratorKind::Occupancy).unwrap().created, 1);
    let two = [RaySample::hit(Vector3::new(0.1, 0.1, 0.1), Vector3::new(6.0, 0.1, 0.1))];
    let p = prefetch_regions(&mut map, &two, IntegratorKind::Occupancy).unwrap();
    assert_eq!(p.touched, 2);
    assert_eq!(prefetch_regions(&mut map, &two, IntegratorKind::Occupancy).unwrap().created, 0);
}

#[test]
fn tsdf_examples() {
    let mut map = VoxelMap::new(MapConfig::default(), LayerSet::of(&[LayerId::Tsdf])).unwrap();
    let cfg = map.config().clone();
    let end = Vector3::new(2.05, 0.05, 0.05);
    sequential_reference(&mut map, &[RaySample::hit(Vector3::new(0.05, 0.05, 0.05), end)], IntegratorKind::Tsdf).unwrap();
    let surface = tsdf_query(&map, &end).unwrap();
    assert!(surface.distance.abs() <= 1e-6 && surface.weight == 1.0);
    assert!(surface.distance.abs() as f64 <= cfg.voxel_size);
    let before = tsdf_query(&map, &Vector3::new(1.85, 0.05, 0.05)).unwrap();
    assert!((before.distance - 0.2).abs() < 1e-6);
    assert!(tsdf_query(&map, &Vector3::new(1.0, 0.05, 0.05)).is_none());
    assert!(tsdf_query(&map, &Vector3::new(50.0, 0.0, 0.0)).is_none());
}

#[test]
fn tsdf_weight_saturates() {
    let mut map = VoxelMap::new(MapConfig::default(), LayerSet::of(&[LayerId::Tsdf])).unwrap();
    let cfg = map.config().clone();
    let end = Vector3::new(1.05, 0.05, 0.05);
    let rays = vec![RaySample::hit(Vector3::new(0.05, 0.05, 0.05), end); cfg.tsdf_max_weight as usize + 20];
    sequential_reference(&mut map, &rays, IntegratorKind::Tsdf).unwrap();
    assert_eq!(tsdf_query(&map, &end).unwrap().weight, cfg.tsdf_max_weight);
}

#[test]
fn eviction_between_batches_is_transparent() {
    let rays = scene(SceneKind::Mixed, 40_000, 8);
    let dir = tempfile::tempdir().unwrap();
    let mut plain = map_for(IntegratorKind::Occupancy);
    let mut spilling = map_for(IntegratorKind::Occupancy).with_spill_dir(dir.path()).unwrap();
    let mut evicted = 0;
    for chunk in rays.chunks(5_000) {
        sequential_reference(&mut plain, chunk, IntegratorKind::Occupancy).unwrap();
        sequential_reference(&mut spilling, chunk, IntegratorKind::Occupancy).unwrap();
        evicted += spilling.evict_stale_regions(1).unwrap();
    }
    assert!(evicted > 0);
    assert!(map_bytes(&plain) == map_bytes(&spilling));
    let k = key_for_point(&rays[0].end, plain.config()).unwrap();
    assert_eq!(occupancy_at(&plain, &k), occupancy_at(&spilling, &k));
}
