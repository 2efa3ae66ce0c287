//! Micro radiance and flow networks checked against central finite
//! differences of the f64 references.

use dynrf_autodiff::{Graph, Tensor};
use dynrf_core::fields::{total_color, FlowConfig, FlowField, RadianceConfig, RadianceField, ViewDirection};
use dynrf_core::geometry::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{collect_grads, flow, flow_relu_margin, gradcheck, radiance, radiance_relu_margin, Flat};

pub fn micro_radiance() -> RadianceConfig {
    RadianceConfig {
        pos_freqs: 2,
        dir_freqs: 1,
        depth: 3,
        width: 8,
        skip_layer: Some(2),
        specular_width: 8,
    }
}

pub fn micro_flow() -> FlowConfig {
    FlowConfig { depth: 3, width: 8 }
}

pub struct Batch {
    pub points: Vec<[f32; 3]>,
    pub times: Vec<f32>,
    pub dirs: Vec<[f32; 3]>,
}

pub fn random_batch(n: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Batch {
        points: Vec::new(),
        times: Vec::new(),
        dirs: Vec::new(),
    };
    for _ in 0..n {
        b.points.push(std::array::from_fn(|_| rng.gen_range(-1.0f32..1.0)));
        b.times.push(rng.gen_range(-1.0f32..1.0));
        let d = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        b.dirs.push(ViewDirection::normalize(d).unwrap().as_vec().to_f32());
    }
    b
}

/// Moves biases off zero so no ReLU input sits exactly on its kink.
pub fn jitter_biases(params: Vec<&mut dynrf_autodiff::ParamTensor>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in params.into_iter().filter(|p| p.name.ends_with(".bias")) {
        for v in p.value.data_mut() {
            *v += rng.gen_range(-0.2f32..0.2);
        }
    }
}

/// Inputs whose ReLU pre-activations are this far from zero cannot cross a
/// kink under a finite-difference step.
pub const KINK_MARGIN: f64 = 0.02;

pub fn to64<const N: usize>(v: [f32; N]) -> [f64; N] {
    v.map(|x| x as f64)
}

/// Radiance micro-network outputs vs the f64 reference; returns the parameter count.
pub fn radiance_gradcheck() -> Result<usize, String> {
    let cfg = micro_radiance();
    let mut field = RadianceField::new(cfg.clone(), 5).unwrap();
    jitter_biases(field.params_mut(), 1);
    let layers = Flat::of(&field.params()).layers();
    let pool = random_batch(200, 2);
    let mut b = random_batch(0, 0);
    for i in 0..pool.points.len() {
        let (p, t, d) = (to64(pool.points[i]), pool.times[i] as f64, to64(pool.dirs[i]));
        if b.points.len() < 6 && radiance_relu_margin(&cfg, &layers, p, t, d) > KINK_MARGIN {
            b.points.push(pool.points[i]);
            b.times.push(pool.times[i]);
            b.dirs.push(pool.dirs[i]);
        }
    }
    if b.points.len() < 6 {
        return Err("not enough kink-free radiance inputs".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let weights: Vec<[f32; 7]> = (0..6)
        .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0f32..1.0)))
        .collect();

    let mut g = Graph::new();
    let bound = field.bind(&mut g);
    let p = g.constant(Tensor::new([6, 3], b.points.concat()).unwrap());
    let t = g.constant(Tensor::new([6, 1], b.times.clone()).unwrap());
    let d = g.constant(Tensor::new([6, 3], b.dirs.concat()).unwrap());
    let out = bound.forward(&mut g, p, t, d).unwrap();
    let color = total_color(&mut g, &out).unwrap();
    let all = g.concat(&[out.sigma, color, out.specular], 1).unwrap();
    let w = g.constant(Tensor::new([6, 7], weights.concat()).unwrap());
    let prod = g.mul(all, w).unwrap();
    let loss = g.sum(prod, None).unwrap();
    let grads = g.backward(loss).unwrap();

    let base = Flat::of(&field.params());
    let analytic = collect_grads(field.params_mut(), &grads);
    let objective = |f: &Flat| {
        let layers = f.layers();
        (0..6)
            .map(|i| {
                let r = radiance(&cfg, &layers, to64(b.points[i]), b.times[i] as f64, to64(b.dirs[i]));
                let c = r.color();
                let v = [r.sigma, c[0], c[1], c[2], r.specular[0], r.specular[1], r.specular[2]];
                v.iter().zip(&weights[i]).map(|(a, &w)| a * w as f64).sum::<f64>()
            })
            .sum()
    };
    gradcheck(&base, &analytic, objective, 1e-4, 1e-6)
}

/// Flow micro-network outputs vs the f64 reference; returns the parameter count.
pub fn flow_gradcheck() -> Result<usize, String> {
    let cfg = micro_flow();
    let mut field = FlowField::new(cfg.clone(), 4).unwrap();
    jitter_biases(field.params_mut(), 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let layers = Flat::of(&field.params()).layers();
    let xs: Vec<[f32; 4]> = std::iter::repeat_with(|| std::array::from_fn(|_| rng.gen_range(-1.0f32..1.0)))
        .filter(|x: &[f32; 4]| flow_relu_margin(&cfg, &layers, to64(*x)) > KINK_MARGIN)
        .take(8)
        .collect();
    let weights: Vec<[f32; 3]> = (0..8)
        .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0f32..1.0)))
        .collect();

    let mut g = Graph::new();
    let bound = field.bind(&mut g);
    let x = g.constant(Tensor::new([8, 4], xs.concat()).unwrap());
    let f = bound.forward(&mut g, x).unwrap();
    let w = g.constant(Tensor::new([8, 3], weights.concat()).unwrap());
    let prod = g.mul(f, w).unwrap();
    let loss = g.sum(prod, None).unwrap();
    let grads = g.backward(loss).unwrap();

    let base = Flat::of(&field.params());
    let analytic = collect_grads(field.params_mut(), &grads);
    let objective = |p: &Flat| {
        let layers = p.layers();
        xs.iter()
            .zip(&weights)
            .map(|(x, w)| {
                let v = flow(&cfg, &layers, to64(*x));
                (0..3).map(|k| v[k] * w[k] as f64).sum::<f64>()
            })
            .sum()
    };
    gradcheck(&base, &analytic, objective, 1e-4, 1e-6)
}
