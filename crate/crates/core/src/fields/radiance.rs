use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use dynrf_autodiff::{Graph, ParamTensor, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoding::{encode, encoded_len};
use super::mlp::{BoundLinear, Linear};
use super::{RadianceSample, SpaceTimePoint, ViewDirection};
use crate::error::{Error, Result};

/// Initial bias of the specular output layer, so that
/// `c_diffuse + c_specular` starts inside the clamp's unsaturated range.
pub const SPECULAR_BIAS_INIT: f32 = -3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadianceConfig {
    /// Encoding frequencies for `(x, y, z, t)`.
    pub pos_freqs: usize,
    /// Encoding frequencies for the view direction.
    pub dir_freqs: usize,
    pub depth: usize,
    pub width: usize,
    /// Trunk layer whose input is re-concatenated with the encoded point.
    pub skip_layer: Option<usize>,
    pub specular_width: usize,
}

impl RadianceConfig {
    /// Eight 256-wide layers with a skip into layer 5.
    pub fn full_size() -> Self {
        Self {
            pos_freqs: 10,
            dir_freqs: 4,
            depth: 8,
            width: 256,
            skip_layer: Some(5),
            specular_width: 128,
        }
    }

    pub fn point_encoding_len(&self) -> usize {
        encoded_len(4, self.pos_freqs, true)
    }

    pub fn dir_encoding_len(&self) -> usize {
        encoded_len(3, self.dir_freqs, true)
    }
}

impl Default for RadianceConfig {
    fn default() -> Self {
        Self {
            pos_freqs: 10,
            dir_freqs: 4,
            depth: 4,
            width: 64,
            skip_layer: Some(2),
            specular_width: 32,
        }
    }
}

/// `R(x, y, z, t, d) -> (sigma, c_diffuse, c_specular)`.
///
/// Density and diffuse color come off the trunk, which never sees the
/// view direction; only the specular head does.
#[derive(Debug)]
pub struct RadianceField {
    config: RadianceConfig,
    trunk: Vec<Linear>,
    density: Linear,
    diffuse: Linear,
    specular_hidden: Linear,
    specular_out: Linear,
    evaluated_points: Arc<AtomicU64>,
}

impl Clone for RadianceField {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            trunk: self.trunk.clone(),
            density: self.density.clone(),
            diffuse: self.diffuse.clone(),
            specular_hidden: self.specular_hidden.clone(),
            specular_out: self.specular_out.clone(),
            evaluated_points: Arc::new(AtomicU64::new(0)),
        }
    }
}

impl RadianceField {
    pub fn new(config: RadianceConfig, seed: u64) -> Result<Self> {
        if config.depth == 0 || config.width == 0 || config.specular_width == 0 {
            return Err(Error::Config("radiance network needs depth and width >= 1".into()));
        }
        if matches!(config.skip_layer, Some(s) if s == 0 || s >= config.depth) {
            return Err(Error::Config("skip layer must lie inside the trunk".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let enc = config.point_encoding_len();
        let trunk = (0..config.depth)
            .map(|i| {
                let fan_in = match i {
                    0 => enc,
                    _ if config.skip_layer == Some(i) => config.width + enc,
                    _ => config.width,
                };
                Linear::init(&format!("radiance.trunk{i}"), fan_in, config.width, &mut rng)
            })
            .collect();
        let density = Linear::init("radiance.density", config.width, 1, &mut rng);
        let diffuse = Linear::init("radiance.diffuse", config.width, 3, &mut rng);
        let specular_hidden = Linear::init(
            "radiance.specular0",
            config.width + config.dir_encoding_len(),
            config.specular_width,
            &mut rng,
        );
        let mut specular_out =
            Linear::init("radiance.specular1", config.specular_width, 3, &mut rng);
        specular_out.bias.value = Tensor::full([3], SPECULAR_BIAS_INIT);
        Ok(Self {
            config,
            trunk,
            density,
            diffuse,
            specular_hidden,
            specular_out,
            evaluated_points: Arc::new(AtomicU64::new(0)),
        })
    }

    pub fn config(&self) -> &RadianceConfig {
        &self.config
    }

    /// Number of points pushed through the network since construction.
    pub fn evaluated_points(&self) -> u64 {
        self.evaluated_points.load(Ordering::Relaxed)
    }

    fn layers(&self) -> impl Iterator<Item = &Linear> {
        self.trunk.iter().chain([
            &self.density,
            &self.diffuse,
            &self.specular_hidden,
            &self.specular_out,
        ])
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Linear> {
        self.trunk.iter_mut().chain([
            &mut self.density,
            &mut self.diffuse,
            &mut self.specular_hidden,
            &mut self.specular_out,
        ])
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        self.layers().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.layers_mut().flat_map(|l| l.params_mut()).collect()
    }

    /// Binds parameters as gradient-carrying leaves.
    pub fn bind(&mut self, g: &mut Graph) -> BoundRadiance {
        let counter = self.evaluated_points.clone();
        let config = self.config.clone();
        let trunk = self.trunk.iter_mut().map(|l| l.bind(g)).collect();
        BoundRadiance {
            config,
            trunk,
            density: self.density.bind(g),
            diffuse: self.diffuse.bind(g),
            specular_hidden: self.specular_hidden.bind(g),
            specular_out: self.specular_out.bind(g),
            counter,
        }
    }

    /// Binds parameters as constants (inference).
    pub fn bind_frozen(&self, g: &mut Graph) -> BoundRadiance {
        BoundRadiance {
            config: self.config.clone(),
            trunk: self.trunk.iter().map(|l| l.bind_frozen(g)).collect(),
            density: self.density.bind_frozen(g),
            diffuse: self.diffuse.bind_frozen(g),
            specular_hidden: self.specular_hidden.bind_frozen(g),
            specular_out: self.specular_out.bind_frozen(g),
            counter: self.evaluated_points.clone(),
        }
    }

    /// Evaluates one point.
    pub fn eval(&self, p: SpaceTimePoint, d: ViewDirection) -> Result<RadianceSample> {
        if !p.position.is_finite() || !p.time.is_finite() {
            return Err(Error::NonFinite("radiance query point".into()));
        }
        let out = self.query(&[p.position.to_f32()], &[p.time as f32], &[d.as_vec().to_f32()])?;
        Ok(out[0])
    }

    /// Evaluates a batch of points with frozen parameters.
    pub fn query(
        &self,
        points: &[[f32; 3]],
        times: &[f32],
        dirs: &[[f32; 3]],
    ) -> Result<Vec<RadianceSample>> {
        if points.len() != times.len() || points.len() != dirs.len() {
            return Err(Error::InvalidInput("query batch lengths differ".into()));
        }
        const CHUNK: usize = 8192;
        let mut out = Vec::with_capacity(points.len());
        for start in (0..points.len()).step_by(CHUNK) {
            let end = (start + CHUNK).min(points.len());
            let n = end - start;
            let mut g = Graph::new();
            let bound = self.bind_frozen(&mut g);
            let p = g.constant(Tensor::new([n, 3], points[start..end].concat())?);
            let t = g.constant(Tensor::new([n, 1], times[start..end].to_vec())?);
            let d = g.constant(Tensor::new([n, 3], dirs[start..end].concat())?);
            let r = bound.forward(&mut g, p, t, d)?;
            let (s, cd, cs) = (g.value(r.sigma), g.value(r.diffuse), g.value(r.specular));
            for i in 0..n {
                out.push(RadianceSample {
                    sigma: s.data()[i],
                    diffuse: [cd.data()[3 * i], cd.data()[3 * i + 1], cd.data()[3 * i + 2]],
                    specular: [cs.data()[3 * i], cs.data()[3 * i + 1], cs.data()[3 * i + 2]],
                });
            }
        }
        Ok(out)
    }
}

/// Graph handles for one binding of a [`RadianceField`].
pub struct BoundRadiance {
    config: RadianceConfig,
    trunk: Vec<BoundLinear>,
    density: BoundLinear,
    diffuse: BoundLinear,
    specular_hidden: BoundLinear,
    specular_out: BoundLinear,
    counter: Arc<AtomicU64>,
}

/// Per-point outputs: `sigma: [B, 1]`, `diffuse` and `specular`: `[B, 3]`.
#[derive(Clone, Copy, Debug)]
pub struct RadianceOutput {
    pub sigma: Var,
    pub diffuse: Var,
    pub specular: Var,
}

impl BoundRadiance {
    /// Trunk features for `points: [B, 3]` at `times: [B, 1]`.
    pub fn features(&self, g: &mut Graph, points: Var, times: Var) -> Result<Var> {
        let rows = g.shape(points)[0] as u64;
        self.counter.fetch_add(rows, Ordering::Relaxed);
        let xt = g.concat(&[points, times], 1)?;
        let enc = encode(g, xt, self.config.pos_freqs, true)?;
        let mut h = enc;
        for (i, layer) in self.trunk.iter().enumerate() {
            if i > 0 && self.config.skip_layer == Some(i) {
                h = g.concat(&[h, enc], 1)?;
            }
            let z = layer.forward(g, h)?;
            h = g.relu(z);
        }
        Ok(h)
    }

    /// Density (softplus) and diffuse color (sigmoid) from trunk features.
    pub fn density_diffuse_heads(&self, g: &mut Graph, features: Var) -> Result<(Var, Var)> {
        let s = self.density.forward(g, features)?;
        let c = self.diffuse.forward(g, features)?;
        Ok((g.softplus(s), g.sigmoid(c)))
    }

    pub fn specular_head(&self, g: &mut Graph, features: Var, dirs: Var) -> Result<Var> {
        let enc = encode(g, dirs, self.config.dir_freqs, true)?;
        let x = g.concat(&[features, enc], 1)?;
        let h = self.specular_hidden.forward(g, x)?;
        let h = g.relu(h);
        let s = self.specular_out.forward(g, h)?;
        Ok(g.sigmoid(s))
    }

    pub fn forward(&self, g: &mut Graph, points: Var, times: Var, dirs: Var) -> Result<RadianceOutput> {
        let f = self.features(g, points, times)?;
        let (sigma, diffuse) = self.density_diffuse_heads(g, f)?;
        let specular = self.specular_head(g, f, dirs)?;
        Ok(RadianceOutput {
            sigma,
            diffuse,
            specular,
        })
    }

    /// `sigma` and `c_diffuse` only; the view direction is never consulted.
    pub fn density_diffuse(&self, g: &mut Graph, points: Var, times: Var) -> Result<(Var, Var)> {
        let f = self.features(g, points, times)?;
        self.density_diffuse_heads(g, f)
    }
}

/// `clamp(c_diffuse + c_specular, 0, 1)`.
pub fn total_color(g: &mut Graph, out: &RadianceOutput) -> Result<Var> {
    let c = g.add(out.diffuse, out.specular)?;
    Ok(g.clamp(c, 0.0, 1.0))
}
