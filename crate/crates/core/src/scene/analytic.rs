use serde::{Deserialize, Serialize};

use crate::geometry::{Aabb, Vec3};
use crate::error::Result;
use crate::render::{composite, ray_depths, Composite, Ray, RaySamples, DEPTH_EPSILON};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    Sphere { radius: f64 },
    Box { half_extents: Vec3 },
}

/// Constant-density solid translating with constant velocity.
///
/// `center` is the position at normalized time `-1`, so the center at time
/// `t` is `center + velocity * (t + 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: Shape,
    pub center: Vec3,
    pub velocity: Vec3,
    pub density: f64,
    pub color: [f64; 3],
}

impl Primitive {
    pub fn center_at(&self, t: f64) -> Vec3 {
        self.center + self.velocity * (t + 1.0)
    }

    pub fn contains(&self, p: Vec3, t: f64) -> bool {
        let local = p - self.center_at(t);
        match self.shape {
            Shape::Sphere { radius } => local.norm() <= radius,
            Shape::Box { half_extents: h } => {
                local.x.abs() <= h.x && local.y.abs() <= h.y && local.z.abs() <= h.z
            }
        }
    }

    /// Entry and exit distances of `ray` through the solid at the ray's time.
    pub fn chord(&self, ray: &Ray) -> Option<(f64, f64)> {
        let c = self.center_at(ray.time);
        match self.shape {
            Shape::Sphere { radius } => {
                let oc = ray.origin - c;
                let b = oc.dot(ray.direction);
                let disc = b * b - (oc.dot(oc) - radius * radius);
                if disc <= 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                Some((-b - s, -b + s))
            }
            Shape::Box { half_extents: h } => Aabb {
                min: c - h,
                max: c + h,
            }
            .intersect(ray.origin, ray.direction),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    TranslatingSphere,
    ConstantSlab,
    TwoBodyPour,
}

/// Piecewise-constant emission-absorption scene with linear motion, so
/// renders, depth, and flow all have closed forms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticScene {
    pub kind: SceneKind,
    pub primitives: Vec<Primitive>,
    pub background: [f64; 3],
}

impl AnalyticScene {
    /// Radius-0.5 sphere moving from `(-0.6, 0, 0)` to `(0.6, 0, 0)`.
    pub fn translating_sphere() -> Self {
        Self {
            kind: SceneKind::TranslatingSphere,
            primitives: vec![Primitive {
                shape: Shape::Sphere { radius: 0.5 },
                center: Vec3::new(-0.6, 0.0, 0.0),
                velocity: Vec3::new(0.6, 0.0, 0.0),
                density: 20.0,
                color: [0.85, 0.45, 0.15],
            }],
            background: [0.3, 0.3, 0.3],
        }
    }

    /// Static slab of unit density and unit thickness across `z`.
    pub fn constant_slab() -> Self {
        Self {
            kind: SceneKind::ConstantSlab,
            primitives: vec![Primitive {
                shape: Shape::Box {
                    half_extents: Vec3::new(1.5, 1.5, 0.5),
                },
                center: Vec3::ZERO,
                velocity: Vec3::ZERO,
                density: 1.0,
                color: [0.2, 0.6, 0.9],
            }],
            background: [0.0; 3],
        }
    }

    /// A box sliding sideways under a column of small spheres falling into it.
    pub fn two_body_pour() -> Self {
        let drop = |z: f64| Primitive {
            shape: Shape::Sphere { radius: 0.12 },
            center: Vec3::new(0.25, 0.0, z),
            velocity: Vec3::new(0.0, 0.0, -0.45),
            density: 25.0,
            color: [0.95, 0.85, 0.2],
        };
        let mut primitives = vec![Primitive {
            shape: Shape::Box {
                half_extents: Vec3::new(0.35, 0.35, 0.3),
            },
            center: Vec3::new(-0.45, 0.0, -0.5),
            velocity: Vec3::new(0.3, 0.0, 0.0),
            density: 15.0,
            color: [0.2, 0.4, 0.85],
        }];
        primitives.extend([0.75, 1.05, 1.35].map(drop));
        Self {
            kind: SceneKind::TwoBodyPour,
            primitives,
            background: [0.3, 0.3, 0.3],
        }
    }

    pub fn density_at(&self, p: Vec3, t: f64) -> f64 {
        self.primitives
            .iter()
            .filter(|q| q.contains(p, t))
            .map(|q| q.density)
            .sum()
    }

    /// Density-weighted mix of the colors of every solid containing `p`.
    pub fn color_at(&self, p: Vec3, t: f64) -> [f64; 3] {
        let mut mix = [0.0; 3];
        let mut sigma = 0.0;
        for q in self.primitives.iter().filter(|q| q.contains(p, t)) {
            sigma += q.density;
            for k in 0..3 {
                mix[k] += q.density * q.color[k];
            }
        }
        if sigma > 0.0 {
            mix.map(|v| v / sigma)
        } else {
            mix
        }
    }

    /// Point samples of the scene at the `n` bin midpoints of `ray`.
    pub fn ray_samples(&self, ray: &Ray, n: usize) -> RaySamples {
        let (depths, deltas) = ray_depths::<rand_chacha::ChaCha8Rng>(ray, n, None);
        let points: Vec<Vec3> = depths.iter().map(|&s| ray.at(s)).collect();
        RaySamples {
            sigmas: points.iter().map(|&p| self.density_at(p, ray.time)).collect(),
            colors: points.iter().map(|&p| self.color_at(p, ray.time)).collect(),
            depths,
            deltas,
        }
    }

    /// Quadrature rendering of `ray` with `n` midpoint samples, the estimate
    /// that [`AnalyticScene::render`] computes exactly.
    pub fn render_quadrature(&self, ray: &Ray, n: usize) -> Result<Composite> {
        composite(&self.ray_samples(ray, n), self.background)
    }

    /// True scene flow: the velocity of the solid containing `p`, zero in empty space.
    pub fn velocity_at(&self, p: Vec3, t: f64) -> Vec3 {
        self.primitives
            .iter()
            .find(|q| q.contains(p, t))
            .map_or(Vec3::ZERO, |q| q.velocity)
    }

    /// Exact volume rendering of `ray` over `[t_near, t_far]`.
    ///
    /// Overlapping solids add densities and mix colors in proportion to density.
    pub fn render(&self, ray: &Ray) -> Composite {
        let hits: Vec<(f64, f64, &Primitive)> = self
            .primitives
            .iter()
            .filter_map(|p| {
                let (a, b) = p.chord(ray)?;
                let (a, b) = (a.max(ray.t_near), b.min(ray.t_far));
                (a < b).then_some((a, b, p))
            })
            .collect();
        let mut breaks: Vec<f64> = hits.iter().flat_map(|&(a, b, _)| [a, b]).collect();
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let mut color = [0.0; 3];
        let mut depth = 0.0;
        let mut optical = 0.0f64;
        for w in breaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            let mid = 0.5 * (a + b);
            let mut sigma = 0.0;
            let mut mix = [0.0; 3];
            for &(lo, hi, p) in &hits {
                if lo <= mid && mid <= hi {
                    sigma += p.density;
                    for k in 0..3 {
                        mix[k] += p.density * p.color[k];
                    }
                }
            }
            if sigma <= 0.0 {
                continue;
            }
            let len = b - a;
            let t = (-optical).exp();
            let absorbed = -(-sigma * len).exp_m1();
            for k in 0..3 {
                color[k] += t * absorbed * mix[k] / sigma;
            }
            // Integral of s * sigma * exp(-sigma (s - a)) over [a, b].
            let first_moment = a * absorbed + (absorbed - sigma * len * (-sigma * len).exp()) / sigma;
            depth += t * first_moment;
            optical += sigma * len;
        }
        let remaining = (-optical).exp();
        for k in 0..3 {
            color[k] += remaining * self.background[k];
        }
        let alpha = 1.0 - remaining;
        Composite {
            color,
            alpha,
            depth: depth / alpha.max(DEPTH_EPSILON),
        }
    }
}
