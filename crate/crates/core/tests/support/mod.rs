//! Independent f64 reference implementations used as test oracles, plus a
//! finite-difference gradient checker over network parameters.

#![allow(dead_code)]

pub mod micro;

use std::f64::consts::PI;

use dynrf_autodiff::{Gradients, ParamTensor};
use dynrf_core::fields::{FlowConfig, RadianceConfig};

pub struct Layer {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Layer {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.fan_in);
        (0..self.fan_out)
            .map(|j| self.b[j] + (0..self.fan_in).map(|i| x[i] * self.w[i * self.fan_out + j]).sum::<f64>())
            .collect()
    }
}

/// Flattened parameters, in `params()` order, with the tensor shapes needed to rebuild layers.
#[derive(Clone)]
pub struct Flat {
    pub values: Vec<f64>,
    pub shapes: Vec<Vec<usize>>,
}

impl Flat {
    pub fn of(params: &[&ParamTensor]) -> Self {
        Self {
            values: params.iter().flat_map(|p| p.value.data().iter().map(|&v| v as f64)).collect(),
            shapes: params.iter().map(|p| p.value.shape().to_vec()).collect(),
        }
    }

    pub fn layers(&self) -> Vec<Layer> {
        let mut out = Vec::new();
        let mut at = 0;
        for pair in self.shapes.chunks(2) {
            let (fan_in, fan_out) = (pair[0][0], pair[0][1]);
            let w = self.values[at..at + fan_in * fan_out].to_vec();
            at += fan_in * fan_out;
            let b = self.values[at..at + fan_out].to_vec();
            at += fan_out;
            out.push(Layer { w, b, fan_in, fan_out });
        }
        out
    }
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

fn min_abs(v: &[f64]) -> f64 {
    v.iter().fold(f64::INFINITY, |m, x| m.min(x.abs()))
}

/// Smallest |pre-activation| over every ReLU of the radiance network.
pub fn radiance_relu_margin(cfg: &RadianceConfig, layers: &[Layer], p: [f64; 3], t: f64, d: [f64; 3]) -> f64 {
    let enc = encode(&[p[0], p[1], p[2], t], cfg.pos_freqs);
    let mut h = enc.clone();
    let mut margin = f64::INFINITY;
    for (i, layer) in layers[..cfg.depth].iter().enumerate() {
        if i > 0 && cfg.skip_layer == Some(i) {
            h.extend_from_slice(&enc);
        }
        let z = layer.apply(&h);
        margin = margin.min(min_abs(&z));
        h = relu(z);
    }
    h.extend(encode(&d, cfg.dir_freqs));
    margin.min(min_abs(&layers[cfg.depth + 2].apply(&h)))
}

/// Smallest |pre-activation| over every ReLU of the flow network.
pub fn flow_relu_margin(cfg: &FlowConfig, layers: &[Layer], xyzt: [f64; 4]) -> f64 {
    let mut h = xyzt.to_vec();
    let mut margin = f64::INFINITY;
    for layer in &layers[..cfg.depth] {
        let z = layer.apply(&h);
        margin = margin.min(min_abs(&z));
        h = relu(z);
    }
    margin
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn encode(v: &[f64], freqs: usize) -> Vec<f64> {
    let mut out = v.to_vec();
    for k in 0..freqs {
        let f = (1u64 << k) as f64 * PI;
        out.extend(v.iter().map(|x| (f * x).sin()));
        out.extend(v.iter().map(|x| (f * x).cos()));
    }
    out
}

#[derive(Clone, Copy, Debug)]
pub struct RadOut {
    pub sigma: f64,
    pub diffuse: [f64; 3],
    pub specular: [f64; 3],
}

impl RadOut {
    pub fn color(&self) -> [f64; 3] {
        std::array::from_fn(|k| (self.diffuse[k] + self.specular[k]).clamp(0.0, 1.0))
    }
}

pub fn radiance(cfg: &RadianceConfig, layers: &[Layer], p: [f64; 3], t: f64, d: [f64; 3]) -> RadOut {
    let enc = encode(&[p[0], p[1], p[2], t], cfg.pos_freqs);
    let mut h = enc.clone();
    for (i, layer) in layers[..cfg.depth].iter().enumerate() {
        if i > 0 && cfg.skip_layer == Some(i) {
            h.extend_from_slice(&enc);
        }
        h = relu(layer.apply(&h));
    }
    let rest = &layers[cfg.depth..];
    let sigma = softplus(rest[0].apply(&h)[0]);
    let dc = rest[1].apply(&h);
    let mut hs = h.clone();
    hs.extend(encode(&d, cfg.dir_freqs));
    let s = rest[3].apply(&relu(rest[2].apply(&hs)));
    RadOut {
        sigma,
        diffuse: std::array::from_fn(|k| sigmoid(dc[k])),
        specular: std::array::from_fn(|k| sigmoid(s[k])),
    }
}

pub fn flow(cfg: &FlowConfig, layers: &[Layer], xyzt: [f64; 4]) -> [f64; 3] {
    let mut h = xyzt.to_vec();
    for layer in &layers[..cfg.depth] {
        h = relu(layer.apply(&h));
    }
    let o = layers[cfg.depth].apply(&h);
    [o[0], o[1], o[2]]
}

/// Classic RK4 with `max(4, ceil(32 |dt|))` steps taken as the maximum over `batch`.
pub fn rk4_batch(
    f: impl Fn([f64; 3], f64) -> [f64; 3],
    starts: &[[f64; 3]],
    t0: &[f64],
    t1: &[f64],
) -> Vec<[f64; 3]> {
    let steps = t0
        .iter()
        .zip(t1)
        .map(|(a, b)| ((b - a).abs() * 32.0).ceil().max(4.0) as usize)
        .max()
        .unwrap();
    let add = |y: [f64; 3], k: [f64; 3], s: f64| std::array::from_fn::<f64, 3, _>(|i| y[i] + s * k[i]);
    starts
        .iter()
        .zip(t0.iter().zip(t1))
        .map(|(&y0, (&a, &b))| {
            let h = (b - a) / steps as f64;
            let mut y = y0;
            for i in 0..steps {
                let t = a + i as f64 * h;
                let k1 = f(y, t);
                let k2 = f(add(y, k1, h / 2.0), t + h / 2.0);
                let k3 = f(add(y, k2, h / 2.0), t + h / 2.0);
                let k4 = f(add(y, k3, h), t + h);
                y = std::array::from_fn(|j| y[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]));
            }
            y
        })
        .collect()
}

/// Front-to-back compositing with background weight `1 - sum(w)`.
pub fn composite(sigmas: &[f64], colors: &[[f64; 3]], deltas: &[f64], bg: [f64; 3]) -> ([f64; 3], Vec<f64>) {
    let mut out = [0.0; 3];
    let mut acc = 0.0f64;
    let mut optical = 0.0f64;
    let mut trans = Vec::with_capacity(sigmas.len());
    for i in 0..sigmas.len() {
        let t = (-optical).exp();
        trans.push(t);
        let w = t * (1.0 - (-sigmas[i] * deltas[i]).exp());
        for k in 0..3 {
            out[k] += w * colors[i][k];
        }
        acc += w;
        optical += sigmas[i] * deltas[i];
    }
    for k in 0..3 {
        out[k] += (1.0 - acc) * bg[k];
    }
    (out, trans)
}

pub fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

pub const H: f64 = 1e-3;

/// Pulls each parameter's gradient out of `grads` in `params_mut()` order.
pub fn collect_grads(params: Vec<&mut ParamTensor>, grads: &Gradients) -> Vec<f64> {
    let mut out = Vec::new();
    for p in params {
        p.zero_grad();
        grads.accumulate(p).expect("parameter bound in this graph");
        out.extend(p.grad.as_ref().expect("gradient").data().iter().map(|&v| v as f64));
    }
    out
}

/// Compares `analytic` against central differences of `objective` around
/// `base`; passes when `|a - n| <= max(abs_tol, rel_tol * max(|a|, |n|))`.
/// Returns the number of parameters checked.
pub fn gradcheck(
    base: &Flat,
    analytic: &[f64],
    objective: impl Fn(&Flat) -> f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<usize, String> {
    assert_eq!(base.values.len(), analytic.len());
    for i in 0..base.values.len() {
        let mut plus = base.clone();
        plus.values[i] += H;
        let mut minus = base.clone();
        minus.values[i] -= H;
        let numeric = (objective(&plus) - objective(&minus)) / (2.0 * H);
        let a = analytic[i];
        let diff = (a - numeric).abs();
        if diff > abs_tol && diff > rel_tol * a.abs().max(numeric.abs()) {
            return Err(format!("parameter {i}: analytic {a:e} vs numeric {numeric:e}"));
        }
    }
    Ok(base.values.len())
}
