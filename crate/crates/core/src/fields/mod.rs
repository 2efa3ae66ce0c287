//! The radiance and flow networks and the encoding they share.

pub mod encoding;
mod flow;
pub mod mlp;
mod radiance;

use dynrf_autodiff::{ParamTensor, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

pub use flow::{BoundFlow, FlowConfig, FlowField};
pub use radiance::{
    total_color, BoundRadiance, RadianceConfig, RadianceField, RadianceOutput, SPECULAR_BIAS_INIT,
};

/// A position with its normalized time in `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimePoint {
    pub position: Vec3,
    pub time: f64,
}

impl SpaceTimePoint {
    pub fn new(position: Vec3, time: f64) -> Self {
        Self { position, time }
    }
}

/// Unit viewing direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewDirection(Vec3);

impl ViewDirection {
    /// Accepts `d` only if it is unit length within `1e-6`.
    pub fn new(d: Vec3) -> Result<Self> {
        if !d.is_finite() || (d.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!("view direction {d:?} is not unit")));
        }
        Ok(Self(d))
    }

    pub fn normalize(d: Vec3) -> Result<Self> {
        let n = d.norm();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::InvalidInput("cannot normalize a zero direction".into()));
        }
        Ok(Self(d * (1.0 / n)))
    }

    pub fn as_vec(self) -> Vec3 {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadianceSample {
    pub sigma: f32,
    pub diffuse: [f32; 3],
    pub specular: [f32; 3],
}

impl RadianceSample {
    /// `clamp(diffuse + specular, 0, 1)`.
    pub fn color(&self) -> [f32; 3] {
        std::array::from_fn(|i| (self.diffuse[i] + self.specular[i]).clamp(0.0, 1.0))
    }
}

/// Instantaneous velocity, scene units per unit of normalized time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowVector(pub Vec3);

/// Overwrites parameter values in order, checking count and shapes.
pub fn assign_params(params: Vec<&mut ParamTensor>, values: Vec<Tensor>) -> Result<()> {
    if params.len() != values.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter tensors, found {}",
            params.len(),
            values.len()
        )));
    }
    if let Some((p, v)) = params.iter().zip(&values).find(|(p, v)| p.shape() != v.shape()) {
        return Err(Error::Checkpoint(format!(
            "{}: stored shape {:?} does not match {:?}",
            p.name,
            v.shape(),
            p.shape()
        )));
    }
    for (p, v) in params.into_iter().zip(values) {
        p.value = v;
        p.grad = None;
    }
    Ok(())
}
