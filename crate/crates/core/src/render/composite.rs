use dynrf_autodiff::{Graph, Tensor, Var};

use crate::error::{Error, Result};

/// Guard against dividing by the opacity of a fully transparent ray.
pub const DEPTH_EPSILON: f64 = 1e-6;

/// Per-sample quantities along one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySamples {
    pub depths: Vec<f64>,
    pub deltas: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub colors: Vec<[f64; 3]>,
}

impl RaySamples {
    fn validate(&self) -> Result<()> {
        let n = self.depths.len();
        if n == 0 || self.deltas.len() != n || self.sigmas.len() != n || self.colors.len() != n {
            return Err(Error::InvalidInput("ray sample arrays must be non-empty and equal length".into()));
        }
        if self.deltas.iter().any(|&d| !(d > 0.0)) || self.sigmas.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::InvalidInput("deltas must be positive and densities non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Composite {
    pub color: [f64; 3],
    pub alpha: f64,
    pub depth: f64,
}

/// `T_i = prod_{j<i} exp(-sigma_j delta_j)` for every sample.
pub fn transmittance_profile(samples: &RaySamples) -> Result<Vec<f64>> {
    samples.validate()?;
    let mut acc = 0.0f64;
    Ok(samples
        .sigmas
        .iter()
        .zip(&samples.deltas)
        .map(|(s, d)| {
            let t = (-acc).exp();
            acc += s * d;
            t
        })
        .collect())
}

/// Front-to-back alpha compositing over `background`.
pub fn composite(samples: &RaySamples, background: [f64; 3]) -> Result<Composite> {
    samples.validate()?;
    let mut color = [0.0; 3];
    let mut depth = 0.0;
    let mut optical = 0.0f64;
    for i in 0..samples.depths.len() {
        let t = (-optical).exp();
        let tau = samples.sigmas[i] * samples.deltas[i];
        let w = t * -(-tau).exp_m1();
        for (c, s) in color.iter_mut().zip(samples.colors[i]) {
            *c += w * s;
        }
        depth += w * samples.depths[i];
        optical += tau;
    }
    let remaining = (-optical).exp();
    for (c, b) in color.iter_mut().zip(background) {
        *c += remaining * b;
    }
    let alpha = 1.0 - remaining;
    Ok(Composite {
        color,
        alpha,
        depth: depth / alpha.max(DEPTH_EPSILON),
    })
}

/// Graph nodes produced by [`composite_graph`].
#[derive(Clone, Copy, Debug)]
pub struct CompositeVars {
    /// `[R, 3]`
    pub color: Var,
    /// `[R, N]`
    pub weights: Var,
    /// `[R, N]` transmittance before each sample.
    pub transmittance: Var,
    /// `[R]`
    pub alpha: Var,
}

/// Differentiable compositing of `R` rays with `N` samples each.
///
/// `sigma` is `[R*N, 1]` or `[R, N]`, `colors` is `[R*N, 3]`, `deltas` is a
/// constant `[R, N]`. The exclusive cumulative optical depth is a matmul
/// with a strictly upper-triangular ones matrix.
pub fn composite_graph(
    g: &mut Graph,
    sigma: Var,
    colors: Var,
    deltas: &Tensor,
    background: [f32; 3],
) -> Result<CompositeVars> {
    let (r, n) = (deltas.shape()[0], deltas.shape()[1]);
    let sigma = g.reshape(sigma, &[r, n])?;
    let deltas = g.constant(deltas.clone());
    let tau = g.mul(sigma, deltas)?;
    let mut upper = vec![0.0f32; n * n];
    for j in 0..n {
        for i in j + 1..n {
            upper[j * n + i] = 1.0;
        }
    }
    let upper = g.constant(Tensor::new([n, n], upper)?);
    let before = g.matmul(tau, upper)?;
    let neg_before = g.scale(before, -1.0);
    let transmittance = g.exp(neg_before);
    let neg_tau = g.scale(tau, -1.0);
    let survive = g.exp(neg_tau);
    let absorbed = g.scale(survive, -1.0);
    let absorbed = g.add_scalar(absorbed, 1.0);
    let weights = g.mul(transmittance, absorbed)?;
    let w3 = g.reshape(weights, &[r, n, 1])?;
    let c3 = g.reshape(colors, &[r, n, 3])?;
    let wc = g.mul(w3, c3)?;
    let color = g.sum(wc, Some(1))?;
    let alpha = g.sum(weights, Some(1))?;
    let alpha_col = g.reshape(alpha, &[r, 1])?;
    let neg_alpha = g.scale(alpha_col, -1.0);
    let remaining = g.add_scalar(neg_alpha, 1.0);
    let bg = g.constant(Tensor::new([3], background.to_vec())?);
    let bg = g.mul(remaining, bg)?;
    let color = g.add(color, bg)?;
    Ok(CompositeVars {
        color,
        weights,
        transmittance,
        alpha,
    })
}
