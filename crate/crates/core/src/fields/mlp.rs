use dynrf_autodiff::{Graph, ParamTensor, Tensor, Var};
use rand::Rng;

use crate::error::Result;

/// Dense layer `y = x W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamTensor,
    pub bias: ParamTensor,
}

impl Linear {
    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero bias.
    pub fn init(name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in as f32).sqrt();
        let w = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Self {
            weight: ParamTensor::new(
                format!("{name}.weight"),
                Tensor::new([fan_in, fan_out], w).expect("sized buffer"),
            ),
            bias: ParamTensor::new(format!("{name}.bias"), Tensor::zeros([fan_out])),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn bind(&mut self, g: &mut Graph) -> BoundLinear {
        BoundLinear {
            weight: g.param(&mut self.weight),
            bias: g.param(&mut self.bias),
        }
    }

    pub fn bind_frozen(&self, g: &mut Graph) -> BoundLinear {
        BoundLinear {
            weight: g.constant(self.weight.value.clone()),
            bias: g.constant(self.bias.value.clone()),
        }
    }

    pub fn params(&self) -> [&ParamTensor; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut ParamTensor; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Var,
}

impl BoundLinear {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let y = g.matmul(x, self.weight)?;
        Ok(g.add(y, self.bias)?)
    }
}
