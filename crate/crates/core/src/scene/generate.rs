use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::analytic::{AnalyticScene, Primitive, Shape};
use super::dataset::{normalize_time, Bounds, Frame, SceneDataset, Split};
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Vec3};
use crate::image::Image;
use crate::losses::Correspondence;
use crate::render::Camera;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScenePreset {
    Sphere,
    Slab,
    Pour,
}

impl std::str::FromStr for ScenePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(Self::Sphere),
            "slab" => Ok(Self::Slab),
            "pour" => Ok(Self::Pour),
            _ => Err(Error::InvalidInput(format!("unknown scene preset '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenOptions {
    pub views: usize,
    pub times: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub correspondences: usize,
    /// Every view whose index is `k - 1 (mod k)` is held out for testing.
    pub test_every: Option<usize>,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self {
            views: 20,
            times: 10,
            width: 32,
            height: 32,
            seed: 0,
            correspondences: 512,
            test_every: Some(5),
        }
    }
}

pub const CAMERA_DISTANCE: f64 = 4.0;
pub const FIELD_OF_VIEW: f64 = 45.0 * std::f64::consts::PI / 180.0;

impl ScenePreset {
    pub fn scene(self) -> AnalyticScene {
        match self {
            Self::Sphere => AnalyticScene::translating_sphere(),
            Self::Slab => AnalyticScene::constant_slab(),
            Self::Pour => AnalyticScene::two_body_pour(),
        }
    }

    pub fn bounds(self) -> Bounds {
        let aabb = match self {
            Self::Sphere => Aabb {
                min: Vec3::new(-1.3, -0.7, -0.7),
                max: Vec3::new(1.3, 0.7, 0.7),
            },
            Self::Slab => Aabb {
                min: Vec3::new(-1.5, -1.5, -0.5),
                max: Vec3::new(1.5, 1.5, 0.5),
            },
            Self::Pour => Aabb {
                min: Vec3::new(-0.9, -0.45, -0.9),
                max: Vec3::new(0.9, 0.45, 1.5),
            },
        };
        Bounds {
            aabb,
            t_near: 2.0,
            t_far: 6.0,
        }
    }

    /// Cameras on a spiral over the upper hemisphere, all aimed at the origin.
    pub fn cameras(self, views: usize, width: usize, height: usize) -> Result<Vec<Camera>> {
        let (lo, hi) = match self {
            Self::Slab => (50.0f64, 80.0f64),
            _ => (10.0, 60.0),
        };
        let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
        (0..views)
            .map(|j| {
                let frac = if views > 1 { j as f64 / (views - 1) as f64 } else { 0.5 };
                let elev = (lo + (hi - lo) * frac).to_radians();
                let azim = j as f64 * golden;
                let eye = Vec3::new(elev.cos() * azim.cos(), elev.cos() * azim.sin(), elev.sin())
                    * CAMERA_DISTANCE;
                Camera::look_at(eye, Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0), FIELD_OF_VIEW, width, height)
            })
            .collect()
    }
}

/// Renders every (view, time) pair analytically and samples correspondences.
pub fn gen_scene(
    scene: &AnalyticScene,
    bounds: Bounds,
    cameras: &[Camera],
    raw_times: &[f64],
    opts: &GenOptions,
) -> Result<SceneDataset> {
    if cameras.is_empty() || raw_times.is_empty() {
        return Err(Error::InvalidInput("need at least one camera and one time".into()));
    }
    let range = [
        raw_times.iter().copied().fold(f64::INFINITY, f64::min),
        raw_times.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    ];
    let background = scene.background.map(|v| v as f32);
    let mut frames = Vec::with_capacity(cameras.len() * raw_times.len());
    for (ti, &raw) in raw_times.iter().enumerate() {
        let time = normalize_time(raw, range);
        for (vi, cam) in cameras.iter().enumerate() {
            let (w, h) = (cam.width, cam.height);
            let rays = cam.all_rays(time, bounds.t_near, bounds.t_far)?;
            let comps: Vec<_> = rays.iter().map(|r| scene.render(r)).collect();
            let rgb = comps.iter().flat_map(|c| c.color.map(|v| v as f32)).collect();
            let split = match opts.test_every {
                Some(k) if k > 0 && vi % k == k - 1 => Split::Test,
                _ => Split::Train,
            };
            frames.push(Frame {
                file: format!("images/v{vi:03}_t{ti:03}.png"),
                camera: cam.clone(),
                raw_time: raw,
                time,
                split,
                image: Image::new(w, h, rgb)?.quantized(),
                depth: Some(comps.iter().map(|c| c.depth as f32).collect()),
            });
        }
    }
    let times: Vec<f64> = raw_times.iter().map(|&r| normalize_time(r, range)).collect();
    let correspondences = sample_correspondences(scene, &times, opts.correspondences, opts.seed)?;
    let ds = SceneDataset {
        width: cameras[0].width,
        height: cameras[0].height,
        bounds,
        raw_time_range: range,
        background,
        frames,
        correspondences,
        analytic: Some(scene.clone()),
    };
    ds.validate()?;
    Ok(ds)
}

/// Generates the preset's dataset with `opts` (raw times `0..times`).
pub fn gen_preset(preset: ScenePreset, opts: &GenOptions) -> Result<SceneDataset> {
    let cams = preset.cameras(opts.views, opts.width, opts.height)?;
    let raw: Vec<f64> = (0..opts.times).map(|i| i as f64).collect();
    gen_scene(&preset.scene(), preset.bounds(), &cams, &raw, opts)
}

fn sample_inside(p: &Primitive, t: f64, rng: &mut impl Rng) -> Vec3 {
    let c = p.center_at(t);
    let half = match p.shape {
        Shape::Sphere { radius } => Vec3::new(radius, radius, radius),
        Shape::Box { half_extents } => half_extents,
    };
    loop {
        let q = c + Vec3::new(
            rng.gen_range(-half.x..=half.x),
            rng.gen_range(-half.y..=half.y),
            rng.gen_range(-half.z..=half.z),
        );
        if p.contains(q, t) {
            return q;
        }
    }
}

/// Points inside moving solids paired with their exact positions at another frame time.
pub fn sample_correspondences(
    scene: &AnalyticScene,
    times: &[f64],
    n: usize,
    seed: u64,
) -> Result<Vec<Correspondence>> {
    let movers: Vec<&Primitive> = scene.primitives.iter().collect();
    if n == 0 || movers.is_empty() {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let p = movers[rng.gen_range(0..movers.len())];
        let i = rng.gen_range(0..times.len());
        let j = if times.len() > 1 {
            (i + rng.gen_range(1..times.len())) % times.len()
        } else {
            i
        };
        let (ts, tg) = (times[i], times[j]);
        let xs = sample_inside(p, ts, &mut rng);
        let xg = xs + p.velocity * (tg - ts);
        out.push(Correspondence {
            x_s: xs.to_f32(),
            t_s: ts as f32,
            x_g: xg.to_f32(),
            t_g: tg as f32,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Degrade {
    /// Gaussian noise with this standard deviation in 8-bit units.
    Noise { stddev: f64 },
    /// Box-filter downsampling; the factor must be a positive integer.
    Downsample { factor: f64 },
}

/// Corrupts every frame; camera intrinsics follow a downsample.
pub fn degrade(ds: &SceneDataset, mode: Degrade, seed: u64) -> Result<SceneDataset> {
    let mut out = ds.clone();
    match mode {
        Degrade::Noise { stddev } => {
            if !(stddev >= 0.0) {
                return Err(Error::InvalidInput("noise stddev must be non-negative".into()));
            }
            if stddev == 0.0 {
                return Ok(out);
            }
            let normal = Normal::new(0.0, stddev).map_err(|e| Error::InvalidInput(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(11);
            for f in &mut out.frames {
                let noisy: Vec<u8> = f
                    .image
                    .to_u8()
                    .iter()
                    .map(|&v| (v as f64 + normal.sample(&mut rng)).round().clamp(0.0, 255.0) as u8)
                    .collect();
                f.image = Image::from_u8(f.image.width, f.image.height, &noisy)?;
            }
        }
        Degrade::Downsample { factor } => {
            if !(factor >= 1.0) || factor.fract() != 0.0 {
                return Err(Error::InvalidInput(format!(
                    "downsample factor must be a positive integer, got {factor}"
                )));
            }
            let k = factor as usize;
            if ds.width % k != 0 || ds.height % k != 0 {
                return Err(Error::InvalidInput(format!(
                    "factor {k} does not divide {}x{}",
                    ds.width, ds.height
                )));
            }
            out.width = ds.width / k;
            out.height = ds.height / k;
            for f in &mut out.frames {
                f.image = f.image.downsample(k)?;
                f.camera = f.camera.resized(out.width, out.height);
                f.depth = f.depth.as_ref().map(|d| box_filter(d, ds.width, ds.height, k));
            }
        }
    }
    Ok(out)
}

fn box_filter(values: &[f32], w: usize, h: usize, k: usize) -> Vec<f32> {
    let (ow, oh) = (w / k, h / k);
    let mut out = vec![0.0; ow * oh];
    for r in 0..oh {
        for c in 0..ow {
            let mut s = 0.0;
            for dr in 0..k {
                for dc in 0..k {
                    s += values[(r * k + dr) * w + c * k + dc];
                }
            }
            out[r * ow + c] = s / (k * k) as f32;
        }
    }
    out
}
