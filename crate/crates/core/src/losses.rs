//! Training objectives built as graph nodes.
//!
//! Every loss is a mean of squared L2 norms. The smoothness term estimates
//! the flow Jacobian with central differences so that only first-order
//! gradients are needed.

use dynrf_autodiff::{Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{BoundFlow, BoundRadiance};
use crate::integrate::integrate_graph;

/// Transmittance above which a sample counts as empty space.
pub const EMPTY_SPACE_TRANSMITTANCE: f32 = 0.99;
/// Central-difference step of the smoothness stencil, in scene units.
pub const SMOOTHNESS_STEP: f32 = 1e-2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Appearance consistency.
    pub alpha: f64,
    /// Density consistency.
    pub beta: f64,
    pub corr_weight: f64,
    pub specular_l2: f64,
    pub flow_weight: f64,
    pub acc_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::combined()
    }
}

impl LossWeights {
    /// `0.001` on appearance, density, and correspondence terms.
    pub fn combined() -> Self {
        Self {
            alpha: 0.001,
            beta: 0.001,
            corr_weight: 0.001,
            specular_l2: 0.1,
            flow_weight: 1.0,
            acc_weight: 1.0,
        }
    }

    /// `0.001` on appearance and density only; correspondence at full weight.
    pub fn main_text() -> Self {
        Self {
            corr_weight: 1.0,
            ..Self::combined()
        }
    }

    /// `0.001` on correspondence and density only; appearance at full weight.
    pub fn appendix() -> Self {
        Self {
            alpha: 1.0,
            ..Self::combined()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "combined" => Some(Self::combined()),
            "main" => Some(Self::main_text()),
            "appendix" => Some(Self::appendix()),
            _ => None,
        }
    }
}

/// Source and target of one 3D correspondence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub x_s: [f32; 3],
    pub t_s: f32,
    pub x_g: [f32; 3],
    pub t_g: f32,
}

/// Points at their own time and the times they are carried to.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyBatch {
    pub points: Vec<[f32; 3]>,
    pub times: Vec<f32>,
    pub target_times: Vec<f32>,
}

/// Mean over rows of the squared norm of each row of `x: [B, C]`.
fn mean_sq_norm(g: &mut Graph, x: Var) -> Result<Var> {
    let sq = g.square(x);
    let per_row = g.sum(sq, Some(1))?;
    Ok(g.mean(per_row, None)?)
}

fn column(g: &mut Graph, v: &[f32]) -> Result<Var> {
    Ok(g.constant(Tensor::new([v.len(), 1], v.to_vec())?))
}

fn rows3(g: &mut Graph, v: &[[f32; 3]]) -> Result<Var> {
    Ok(g.constant(Tensor::new([v.len(), 3], v.concat())?))
}

/// Mean squared error over every channel of every pixel.
pub fn render_loss(g: &mut Graph, predicted: Var, target: Var) -> Result<Var> {
    if g.shape(predicted) != g.shape(target) {
        return Err(Error::InvalidInput(format!(
            "render_loss shapes differ: {:?} vs {:?}",
            g.shape(predicted),
            g.shape(target)
        )));
    }
    let d = g.sub(predicted, target)?;
    let sq = g.square(d);
    Ok(g.mean(sq, None)?)
}

/// Mean squared distance between integrated sources and their targets.
pub fn corr_loss(g: &mut Graph, flow: &BoundFlow, records: &[Correspondence]) -> Result<Var> {
    if records.is_empty() {
        return Err(Error::InvalidInput("corr_loss needs at least one record".into()));
    }
    let xs: Vec<[f32; 3]> = records.iter().map(|r| r.x_s).collect();
    let xg: Vec<[f32; 3]> = records.iter().map(|r| r.x_g).collect();
    let ts: Vec<f32> = records.iter().map(|r| r.t_s).collect();
    let tg: Vec<f32> = records.iter().map(|r| r.t_g).collect();
    let start = rows3(g, &xs)?;
    let end = integrate_graph(g, flow, start, &ts, &tg)?;
    let target = rows3(g, &xg)?;
    let d = g.sub(end, target)?;
    mean_sq_norm(g, d)
}

/// Appearance and density consistency along flow trajectories.
///
/// Both the source and the carried point receive gradients.
pub fn consistency_losses(
    g: &mut Graph,
    radiance: &BoundRadiance,
    flow: &BoundFlow,
    batch: &ConsistencyBatch,
) -> Result<(Var, Var)> {
    let b = batch.points.len();
    if b == 0 || batch.times.len() != b || batch.target_times.len() != b {
        return Err(Error::InvalidInput("malformed consistency batch".into()));
    }
    let x = rows3(g, &batch.points)?;
    let t = column(g, &batch.times)?;
    let tc = column(g, &batch.target_times)?;
    let xc = integrate_graph(g, flow, x, &batch.times, &batch.target_times)?;
    let both_x = g.concat(&[x, xc], 0)?;
    let both_t = g.concat(&[t, tc], 0)?;
    let (sigma, diffuse) = radiance.density_diffuse(g, both_x, both_t)?;
    let (s0, s1) = (g.slice(sigma, 0, 0, b)?, g.slice(sigma, 0, b, 2 * b)?);
    let (c0, c1) = (g.slice(diffuse, 0, 0, b)?, g.slice(diffuse, 0, b, 2 * b)?);
    let dc = g.sub(c1, c0)?;
    let rgb = mean_sq_norm(g, dc)?;
    let ds = g.sub(s1, s0)?;
    let density = mean_sq_norm(g, ds)?;
    Ok((rgb, density))
}

/// Per ray, the longest prefix of samples with transmittance above
/// [`EMPTY_SPACE_TRANSMITTANCE`], capped at `k`. Returns `(ray, sample)` pairs.
pub fn select_empty_space(transmittance: &[f32], samples_per_ray: usize, k: usize) -> Vec<(usize, usize)> {
    transmittance
        .chunks_exact(samples_per_ray)
        .enumerate()
        .flat_map(|(r, t)| {
            t.iter()
                .take(k)
                .take_while(|&&x| x > EMPTY_SPACE_TRANSMITTANCE)
                .enumerate()
                .map(move |(i, _)| (r, i))
        })
        .collect()
}

/// Mean squared flow magnitude at the selected empty-space points.
///
/// Returns `None` when nothing was selected; such a batch contributes zero.
pub fn empty_space_flow_loss(
    g: &mut Graph,
    flow: &BoundFlow,
    points: &[[f32; 3]],
    times: &[f32],
) -> Result<Option<Var>> {
    if points.is_empty() {
        return Ok(None);
    }
    let x = rows3(g, points)?;
    let t = column(g, times)?;
    let f = flow.at(g, x, t)?;
    Ok(Some(mean_sq_norm(g, f)?))
}

/// Mean squared Frobenius norm of the central-difference Jacobian of the
/// flow with respect to `(x, y, z, t)`.
pub fn smoothness_loss(g: &mut Graph, flow: &BoundFlow, points: &[[f32; 4]]) -> Result<Var> {
    let b = points.len();
    if b == 0 {
        return Err(Error::InvalidInput("smoothness_loss needs at least one point".into()));
    }
    let h = SMOOTHNESS_STEP;
    let mut stencil = Vec::with_capacity(8 * b * 4);
    for axis in 0..4 {
        for sign in [1.0f32, -1.0] {
            for p in points {
                let mut q = *p;
                q[axis] += sign * h;
                stencil.extend_from_slice(&q);
            }
        }
    }
    let x = g.constant(Tensor::new([8 * b, 4], stencil)?);
    let f = flow.forward(g, x)?;
    let mut total = None;
    for axis in 0..4 {
        let plus = g.slice(f, 0, 2 * axis * b, (2 * axis + 1) * b)?;
        let minus = g.slice(f, 0, (2 * axis + 1) * b, (2 * axis + 2) * b)?;
        let d = g.sub(plus, minus)?;
        let d = g.scale(d, 1.0 / (2.0 * h));
        let sq = g.square(d);
        total = Some(match total {
            None => sq,
            Some(acc) => g.add(acc, sq)?,
        });
    }
    let per_row = g.sum(total.expect("four axes"), Some(1))?;
    Ok(g.mean(per_row, None)?)
}

/// Mean squared magnitude of post-activation specular color, `specular: [B, 3]`.
pub fn specular_reg(g: &mut Graph, specular: Var) -> Result<Var> {
    mean_sq_norm(g, specular)
}

/// Loss terms for one step; absent terms were not evaluated.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossVars {
    pub render: Option<Var>,
    pub corr: Option<Var>,
    pub rgb: Option<Var>,
    pub density: Option<Var>,
    pub flow: Option<Var>,
    pub acc: Option<Var>,
    pub spec: Option<Var>,
}

/// Scalar values of each term, zero where absent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub render: f64,
    pub corr: f64,
    pub rgb: f64,
    pub density: f64,
    pub flow: f64,
    pub acc: f64,
    pub spec: f64,
}

impl LossValues {
    /// `render + corr_w*corr + alpha*rgb + beta*density + flow_w*flow + acc_w*acc + spec_w*spec`.
    pub fn total(&self, w: &LossWeights) -> f64 {
        self.render
            + w.corr_weight * self.corr
            + w.alpha * self.rgb
            + w.beta * self.density
            + w.flow_weight * self.flow
            + w.acc_weight * self.acc
            + w.specular_l2 * self.spec
    }

    fn named(&self) -> [(&'static str, f64); 7] {
        [
            ("l_render", self.render),
            ("l_corr", self.corr),
            ("l_rgb", self.rgb),
            ("l_density", self.density),
            ("l_flow", self.flow),
            ("l_acc", self.acc),
            ("l_spec", self.spec),
        ]
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.named().iter().find(|(_, v)| !v.is_finite()) {
            Some((name, _)) => Err(Error::NonFinite(format!("loss component {name}"))),
            None => Ok(()),
        }
    }
}

impl LossVars {
    fn terms(&self, w: &LossWeights) -> [(Option<Var>, f64); 7] {
        [
            (self.render, 1.0),
            (self.corr, w.corr_weight),
            (self.rgb, w.alpha),
            (self.density, w.beta),
            (self.flow, w.flow_weight),
            (self.acc, w.acc_weight),
            (self.spec, w.specular_l2),
        ]
    }

    pub fn values(&self, g: &Graph) -> LossValues {
        let v = |x: Option<Var>| x.map_or(0.0, |x| g.value(x).data()[0] as f64);
        LossValues {
            render: v(self.render),
            corr: v(self.corr),
            rgb: v(self.rgb),
            density: v(self.density),
            flow: v(self.flow),
            acc: v(self.acc),
            spec: v(self.spec),
        }
    }

    /// Weighted sum as a graph node. Rejects non-finite components by name.
    pub fn total(&self, g: &mut Graph, w: &LossWeights) -> Result<Var> {
        self.values(g).check_finite()?;
        let mut acc: Option<Var> = None;
        for (term, weight) in self.terms(w) {
            let Some(term) = term else { continue };
            let scaled = g.scale(term, weight as f32);
            acc = Some(match acc {
                None => scaled,
                Some(a) => g.add(a, scaled)?,
            });
        }
        acc.ok_or_else(|| Error::InvalidInput("total loss has no components".into()))
    }
}
