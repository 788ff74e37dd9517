//! Synthetic ray sets: a 16-beam spinning scanner moving through analytic
//! geometry.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::ConfigError;
use crate::traversal::RaySample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SceneKind {
    Corridor,
    OpenField,
    ThinPoles,
    /// Corridor for the first half of the extent, open ground with poles
    /// and blocks after it.
    Mixed,
}

impl SceneKind {
    pub const ALL: [SceneKind; 4] = [SceneKind::Corridor, SceneKind::OpenField, SceneKind::ThinPoles, SceneKind::Mixed];

    pub fn name(self) -> &'static str {
        match self {
            SceneKind::Corridor => "corridor",
            SceneKind::OpenField => "open-field",
            SceneKind::ThinPoles => "thin-poles",
            SceneKind::Mixed => "mixed",
        }
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SceneKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown scene '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub kind: SceneKind,
    /// Length of the scene along x, meters. The sensor travels from x = 1
    /// to 90% of it over the run.
    pub extent: f64,
    pub rays_per_second: f64,
    pub duration: f64,
    /// Standard deviation of range noise, meters.
    pub noise_sigma: f64,
    /// Sensor range; rays without a return closer than this end here with
    /// no sample.
    pub max_range: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            kind: SceneKind::Corridor,
            extent: 40.0,
            rays_per_second: 300_000.0,
            duration: 1.0,
            noise_sigma: 0.01,
            max_range: 20.0,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn new(kind: SceneKind) -> Self {
        Self {
            kind,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |v: f64, name: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!("{name} must be positive, got {v}")))
            }
        };
        positive(self.extent, "extent")?;
        positive(self.rays_per_second, "rays_per_second")?;
        positive(self.duration, "duration")?;
        positive(self.max_range, "max_range")?;
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(ConfigError::Invalid(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }

    pub fn ray_count(&self) -> usize {
        (self.rays_per_second * self.duration).round() as usize
    }
}

pub const BEAM_COUNT: usize = 16;
const LOWEST_BEAM_DEG: f64 = -15.0;
const BEAM_SPACING_DEG: f64 = 2.0;
const SPIN_HZ: f64 = 10.0;
const SENSOR_HEIGHT: f64 = 1.2;
const HIT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Block {
        min: Vector3<f64>,
        max: Vector3<f64>,
        intensity: f32,
    },
    /// Vertical cylinder.
    Pole {
        x: f64,
        y: f64,
        radius: f64,
        height: f64,
        intensity: f32,
    },
}

impl Primitive {
    fn block(min: [f64; 3], max: [f64; 3], intensity: f32) -> Self {
        Primitive::Block {
            min: min.into(),
            max: max.into(),
            intensity,
        }
    }

    /// Distance along unit `d` to the first entry into the primitive.
    pub fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        match *self {
            Primitive::Block { min, max, .. } => {
                let mut near = f64::NEG_INFINITY;
                let mut far = f64::INFINITY;
                for a in 0..3 {
                    if d[a] == 0.0 {
                        if o[a] < min[a] || o[a] > max[a] {
                            return None;
                        }
                        continue;
                    }
                    let t0 = (min[a] - o[a]) / d[a];
                    let t1 = (max[a] - o[a]) / d[a];
                    near = near.max(t0.min(t1));
                    far = far.min(t0.max(t1));
                }
                (near > HIT_EPS && near <= far).then_some(near)
            }
            Primitive::Pole { x, y, radius, height, .. } => {
                let a = d.x * d.x + d.y * d.y;
                if a == 0.0 {
                    return None;
                }
                let (px, py) = (o.x - x, o.y - y);
                let b = 2.0 * (px * d.x + py * d.y);
                let c = px * px + py * py - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc < 0.0 || c < 0.0 {
                    return None;
                }
                let t = (-b - disc.sqrt()) / (2.0 * a);
                let z = o.z + t * d.z;
                (t > HIT_EPS && (0.0..=height).contains(&z)).then_some(t)
            }
        }
    }

    pub fn intensity(&self) -> f32 {
        match *self {
            Primitive::Block { intensity, .. } | Primitive::Pole { intensity, .. } => intensity,
        }
    }
}

/// Static geometry plus a straight-line sensor path.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
    pub start: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

impl Scene {
    pub fn build(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Self {
        let len = spec.extent;
        let mut prims = vec![Primitive::block([-500.0, -500.0, -1.0], [500.0, 500.0, 0.0], 20.0)];
        match spec.kind {
            SceneKind::Corridor => corridor(&mut prims, len, true),
            SceneKind::OpenField => blocks(&mut prims, rng, 0.0, len, 12),
            SceneKind::ThinPoles => poles(&mut prims, 2.0, len),
            SceneKind::Mixed => {
                corridor(&mut prims, len / 2.0, false);
                poles(&mut prims, len / 2.0 + 2.0, len);
                blocks(&mut prims, rng, len / 2.0 + 2.0, len, 6);
            }
        }
        let start = Vector3::new(1.0, 0.0, SENSOR_HEIGHT);
        let travel = (0.9 * len - 1.0).max(0.0);
        Self {
            primitives: prims,
            start,
            velocity: Vector3::new(travel / spec.duration, 0.0, 0.0),
        }
    }

    /// Nearest surface along unit `d` from `o`, with its base intensity.
    pub fn cast(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, f32)> {
        self.primitives
            .iter()
            .filter_map(|p| p.intersect(o, d).map(|t| (t, p.intensity())))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }
}

fn corridor(prims: &mut Vec<Primitive>, len: f64, closed: bool) {
    let (w, h, t) = (1.5, 2.5, 0.2);
    if closed {
        prims.push(Primitive::block([len, -w - t, 0.0], [len + t, w + t, h], 80.0));
    }
    prims.push(Primitive::block([-2.0, w, 0.0], [len, w + t, h], 60.0));
    prims.push(Primitive::block([-2.0, -w - t, 0.0], [len, -w, h], 60.0));
    prims.push(Primitive::block([-2.0, -w - t, h], [len, w + t, h + t], 40.0));
    prims.push(Primitive::block([-2.0 - t, -w - t, 0.0], [-2.0, w + t, h], 80.0));
    // Door frames along the walls every 5 m.
    let mut x = 3.0;
    while x < len - 1.0 {
        prims.push(Primitive::block([x, w - 0.1, 0.0], [x + 0.2, w, h], 90.0));
        prims.push(Primitive::block([x, -w, 0.0], [x + 0.2, -w + 0.1, h], 90.0));
        x += 5.0;
    }
}

fn poles(prims: &mut Vec<Primitive>, x0: f64, x1: f64) {
    let mut x = x0;
    while x < x1 {
        for y in [-3.0, -1.0, 1.0, 3.0] {
            prims.push(Primitive::Pole {
                x,
                y,
                radius: 0.02,
                height: 3.0,
                intensity: 120.0,
            });
        }
        x += 2.0;
    }
}

fn blocks(prims: &mut Vec<Primitive>, rng: &mut ChaCha8Rng, x0: f64, x1: f64, n: usize) {
    for _ in 0..n {
        let cx = rng.random_range(x0..x1.max(x0 + 1.0));
        let cy = rng.random_range(8.0..30.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        let half = rng.random_range(0.5..2.0);
        let h = rng.random_range(1.0..4.0);
        prims.push(Primitive::block([cx - half, cy - half, 0.0], [cx + half, cy + half, h], 70.0));
    }
}

/// Beam direction for ray `i` of the scan at time `t`.
pub fn beam_direction(i: usize, t: f64) -> Vector3<f64> {
    let beam = i % BEAM_COUNT;
    let el = (LOWEST_BEAM_DEG + BEAM_SPACING_DEG * beam as f64).to_radians();
    let az = TAU * SPIN_HZ * t;
    Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
}

/// Generates the ray set for `spec`. Deterministic for a given spec.
pub fn generate_scene(spec: &SceneSpec) -> Result<Vec<RaySample>, ConfigError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scene = Scene::build(spec, &mut rng);
    let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
    let shade = Normal::new(0.0, 2.0).expect("constant sigma");
    let n = spec.ray_count();
    let mut rays = Vec::with_capacity(n);
    for i in 0..n {
        // Rays of one firing share a timestamp.
        let t = (i - i % BEAM_COUNT) as f64 / spec.rays_per_second;
        let o = scene.start + scene.velocity * t;
        let d = beam_direction(i, t);
        let ray = match scene.cast(&o, &d) {
            Some((range, intensity)) if range <= spec.max_range => {
                let r = (range + noise.sample(&mut rng)).clamp(HIT_EPS, spec.max_range);
                let i = (f64::from(intensity) + shade.sample(&mut rng)).max(0.0);
                RaySample::hit(o, o + d * r).with_intensity(i as f32)
            }
            _ => RaySample::miss(o, o + d * spec.max_range),
        };
        rays.push(ray.at(t));
    }
    Ok(rays)
}
