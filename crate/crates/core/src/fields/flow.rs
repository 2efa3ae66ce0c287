use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use dynrf_autodiff::{Graph, ParamTensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{BoundLinear, Linear};
use super::{FlowVector, SpaceTimePoint};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::integrate::VectorField;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub depth: usize,
    pub width: usize,
}

impl FlowConfig {
    /// Six 128-wide hidden layers.
    pub fn full_size() -> Self {
        Self {
            depth: 6,
            width: 128,
        }
    }
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            width: 64,
        }
    }
}

/// `F(x, y, z, t) -> (dx/dt, dy/dt, dz/dt)`.
///
/// The raw coordinates feed the first layer directly and the output is
/// left unsquashed.
#[derive(Debug)]
pub struct FlowField {
    config: FlowConfig,
    hidden: Vec<Linear>,
    out: Linear,
    evaluated_points: Arc<AtomicU64>,
}

impl Clone for FlowField {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            hidden: self.hidden.clone(),
            out: self.out.clone(),
            evaluated_points: Arc::new(AtomicU64::new(0)),
        }
    }
}

impl FlowField {
    pub fn new(config: FlowConfig, seed: u64) -> Result<Self> {
        if config.depth == 0 || config.width == 0 {
            return Err(Error::Config("flow network needs depth and width >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        let hidden = (0..config.depth)
            .map(|i| {
                let fan_in = if i == 0 { 4 } else { config.width };
                Linear::init(&format!("flow.hidden{i}"), fan_in, config.width, &mut rng)
            })
            .collect();
        let out = Linear::init("flow.out", config.width, 3, &mut rng);
        Ok(Self {
            config,
            hidden,
            out,
            evaluated_points: Arc::new(AtomicU64::new(0)),
        })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn evaluated_points(&self) -> u64 {
        self.evaluated_points.load(Ordering::Relaxed)
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        self.hidden
            .iter()
            .chain([&self.out])
            .flat_map(|l| l.params())
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.hidden
            .iter_mut()
            .chain([&mut self.out])
            .flat_map(|l| l.params_mut())
            .collect()
    }

    pub fn bind(&mut self, g: &mut Graph) -> BoundFlow {
        BoundFlow {
            hidden: self.hidden.iter_mut().map(|l| l.bind(g)).collect(),
            out: self.out.bind(g),
            counter: self.evaluated_points.clone(),
        }
    }

    pub fn bind_frozen(&self, g: &mut Graph) -> BoundFlow {
        BoundFlow {
            hidden: self.hidden.iter().map(|l| l.bind_frozen(g)).collect(),
            out: self.out.bind_frozen(g),
            counter: self.evaluated_points.clone(),
        }
    }

    pub fn eval(&self, p: SpaceTimePoint) -> Result<FlowVector> {
        if !p.position.is_finite() || !p.time.is_finite() {
            return Err(Error::NonFinite("flow query point".into()));
        }
        let [x, y, z] = p.position.to_f32();
        let f = self.eval_row([x, y, z, p.time as f32]);
        Ok(FlowVector(Vec3::new(f[0] as f64, f[1] as f64, f[2] as f64)))
    }

    /// Evaluates `(x, y, z, t)` rows with frozen parameters.
    pub fn query(&self, rows: &[[f32; 4]]) -> Vec<[f32; 3]> {
        rows.iter().map(|&r| self.eval_row(r)).collect()
    }

    fn eval_row(&self, row: [f32; 4]) -> [f32; 3] {
        self.evaluated_points.fetch_add(1, Ordering::Relaxed);
        let mut h = row.to_vec();
        for layer in &self.hidden {
            h = dense(layer, &h);
            h.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        let o = dense(&self.out, &h);
        [o[0], o[1], o[2]]
    }
}

fn dense(layer: &Linear, x: &[f32]) -> Vec<f32> {
    let out = layer.fan_out();
    let mut y = layer.bias.value.data().to_vec();
    for (xi, w) in x.iter().zip(layer.weight.value.data().chunks_exact(out)) {
        for (yj, wj) in y.iter_mut().zip(w) {
            *yj += xi * wj;
        }
    }
    y
}

impl VectorField for FlowField {
    fn velocity(&self, p: Vec3, t: f64) -> Result<Vec3> {
        Ok(self.eval(SpaceTimePoint::new(p, t))?.0)
    }
}

/// Graph handles for one binding of a [`FlowField`].
pub struct BoundFlow {
    hidden: Vec<BoundLinear>,
    out: BoundLinear,
    counter: Arc<AtomicU64>,
}

impl BoundFlow {
    /// `xyzt: [B, 4]` to flow `[B, 3]`.
    pub fn forward(&self, g: &mut Graph, xyzt: Var) -> Result<Var> {
        self.counter
            .fetch_add(g.shape(xyzt)[0] as u64, Ordering::Relaxed);
        let mut h = xyzt;
        for layer in &self.hidden {
            let z = layer.forward(g, h)?;
            h = g.relu(z);
        }
        self.out.forward(g, h)
    }

    /// Flow at `points: [B, 3]` and `times: [B, 1]`.
    pub fn at(&self, g: &mut Graph, points: Var, times: Var) -> Result<Var> {
        let x = g.concat(&[points, times], 1)?;
        self.forward(g, x)
    }
}
