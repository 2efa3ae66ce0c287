//! Rays, sampling along rays, and volume compositing.

mod camera;
mod composite;
mod sampling;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use camera::{Camera, Ray};
pub use composite::{
    composite, composite_graph, transmittance_profile, Composite, CompositeVars, RaySamples,
    DEPTH_EPSILON,
};
pub use sampling::{sample_deltas, stratified_sample};

use crate::error::Result;
use crate::fields::RadianceField;
use crate::image::Image;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub samples_per_ray: usize,
    pub background: [f32; 3],
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            samples_per_ray: 128,
            background: [0.0; 3],
        }
    }
}

#[derive(Clone, Debug)]
pub struct RenderedImage {
    pub rgb: Image,
    pub depth: Vec<f32>,
    pub alpha: Vec<f32>,
}

/// Depths and deltas for one ray, jittered when `rng` is given.
pub fn ray_depths<R: Rng + ?Sized>(ray: &Ray, n: usize, rng: Option<&mut R>) -> (Vec<f64>, Vec<f64>) {
    let depths = stratified_sample(ray.t_near, ray.t_far, n, rng);
    let deltas = sample_deltas(&depths, ray.t_near, ray.t_far);
    (depths, deltas)
}

/// Composites each ray through the radiance field with frozen parameters.
pub fn render_rays(field: &RadianceField, rays: &[Ray], cfg: &RenderConfig) -> Result<Vec<Composite>> {
    let n = cfg.samples_per_ray;
    let bg = cfg.background.map(f64::from);
    let rays_per_chunk = (16384 / n).max(1);
    let mut out = Vec::with_capacity(rays.len());
    for chunk in rays.chunks(rays_per_chunk) {
        let mut points = Vec::with_capacity(chunk.len() * n);
        let mut times = Vec::with_capacity(chunk.len() * n);
        let mut dirs = Vec::with_capacity(chunk.len() * n);
        let mut layout = Vec::with_capacity(chunk.len());
        for ray in chunk {
            let (depths, deltas) = ray_depths::<rand_chacha::ChaCha8Rng>(ray, n, None);
            for &d in &depths {
                points.push(ray.at(d).to_f32());
                times.push(ray.time as f32);
                dirs.push(ray.direction.to_f32());
            }
            layout.push((depths, deltas));
        }
        let samples = field.query(&points, &times, &dirs)?;
        for (i, (depths, deltas)) in layout.into_iter().enumerate() {
            let s = &samples[i * n..(i + 1) * n];
            let rs = RaySamples {
                depths,
                deltas,
                sigmas: s.iter().map(|x| x.sigma as f64).collect(),
                colors: s.iter().map(|x| x.color().map(f64::from)).collect(),
            };
            out.push(composite(&rs, bg)?);
        }
    }
    Ok(out)
}

pub fn render_image(
    cam: &Camera,
    time: f64,
    field: &RadianceField,
    t_near: f64,
    t_far: f64,
    cfg: &RenderConfig,
) -> Result<RenderedImage> {
    cam.validate()?;
    let rays = cam.all_rays(time, t_near, t_far)?;
    let comps = render_rays(field, &rays, cfg)?;
    let rgb = comps
        .iter()
        .flat_map(|c| c.color.map(|v| v as f32))
        .collect();
    Ok(RenderedImage {
        rgb: Image::new(cam.width, cam.height, rgb)?,
        depth: comps.iter().map(|c| c.depth as f32).collect(),
        alpha: comps.iter().map(|c| c.alpha as f32).collect(),
    })
}
