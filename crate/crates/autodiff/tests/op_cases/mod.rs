//! Every op and a small perceptron checked against central finite
//! differences of independent f64 reimplementations.

#![allow(dead_code)]

use dynrf_autodiff::{Graph, Tensor, UnaryOp, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-6;

pub fn close(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff < ABS_TOL || diff <= REL_TOL * analytic.abs().max(numeric.abs())
}

/// Random values bounded away from zero (relu/clamp kinks sit near 0).
pub fn random_values(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let mag = rng.gen_range(0.1f32..1.2);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

pub struct Case {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    /// Builds the op on the graph from input vars.
    pub build: Box<dyn Fn(&mut Graph, &[Var]) -> Var>,
    /// f64 reference of the same op; returns the flat output.
    pub reference: Box<dyn Fn(&[Vec<f64>]) -> Vec<f64>>,
}

/// Checks d/dinputs of sum(op(inputs) * weights) against central differences.
pub fn check(case: &Case, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Vec<f32>> = case
        .shapes
        .iter()
        .map(|s| random_values(&mut rng, s.iter().product()))
        .collect();

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .zip(&case.shapes)
        .map(|(v, s)| g.variable(Tensor::new(s.clone(), v.clone()).unwrap()))
        .collect();
    let out = (case.build)(&mut g, &vars);
    let out_shape = g.shape(out).to_vec();
    let n_out: usize = out_shape.iter().product();
    let weights: Vec<f32> = (0..n_out).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    let w = g.constant(Tensor::new(out_shape, weights.clone()).unwrap());
    let prod = g.mul(out, w).unwrap();
    let loss = g.sum(prod, None).unwrap();
    let grads = g.backward(loss).unwrap();

    let objective = |xs: &[Vec<f64>]| -> f64 {
        let y = (case.reference)(xs);
        assert_eq!(y.len(), weights.len(), "{}: reference output length", case.name);
        y.iter().zip(&weights).map(|(a, &b)| a * b as f64).sum()
    };
    let base: Vec<Vec<f64>> = inputs
        .iter()
        .map(|v| v.iter().map(|&x| x as f64).collect())
        .collect();

    // forward values agree with the reference too
    let fwd: Vec<f64> = g.value(out).data().iter().map(|&x| x as f64).collect();
    for (a, b) in fwd.iter().zip((case.reference)(&base)) {
        if (a - b).abs() > 1e-5 * (1.0 + b.abs()) {
            return Err(format!("{}: forward {a} vs {b}", case.name));
        }
    }
    let mut checked = 0;

    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("gradient present");
        for i in 0..base[k].len() {
            let mut plus = base.clone();
            plus[k][i] += H;
            let mut minus = base.clone();
            minus[k][i] -= H;
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * H);
            let a = analytic.data()[i] as f64;
            if !close(a, numeric) {
                return Err(format!("{}: input {k} elem {i}: analytic {a} vs numeric {numeric}", case.name));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

pub fn matmul_ref(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
        }
    }
    out
}

pub fn sigmoid64(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn unary_ref(op: UnaryOp, x: f64) -> f64 {
    match op {
        UnaryOp::Relu => x.max(0.0),
        UnaryOp::Sigmoid => sigmoid64(x),
        UnaryOp::Softplus => (1.0 + x.exp()).ln(),
        UnaryOp::Sin => x.sin(),
        UnaryOp::Cos => x.cos(),
        UnaryOp::Exp => x.exp(),
        UnaryOp::Square => x * x,
    }
}

pub fn all_cases() -> Vec<Case> {
    let mut cases = vec![
        Case {
            name: "matmul",
            shapes: vec![vec![3, 4], vec![4, 2]],
            build: Box::new(|g, v| g.matmul(v[0], v[1]).unwrap()),
            reference: Box::new(|x| matmul_ref(&x[0], &x[1], 3, 4, 2)),
        },
        Case {
            name: "add (same shape)",
            shapes: vec![vec![2, 3], vec![2, 3]],
            build: Box::new(|g, v| g.add(v[0], v[1]).unwrap()),
            reference: Box::new(|x| x[0].iter().zip(&x[1]).map(|(a, b)| a + b).collect()),
        },
        Case {
            name: "add (row broadcast)",
            shapes: vec![vec![3, 4], vec![4]],
            build: Box::new(|g, v| g.add(v[0], v[1]).unwrap()),
            reference: Box::new(|x| (0..12).map(|i| x[0][i] + x[1][i % 4]).collect()),
        },
        Case {
            name: "sub (column broadcast)",
            shapes: vec![vec![3, 4], vec![3, 1]],
            build: Box::new(|g, v| g.sub(v[0], v[1]).unwrap()),
            reference: Box::new(|x| (0..12).map(|i| x[0][i] - x[1][i / 4]).collect()),
        },
        Case {
            name: "mul (outer broadcast)",
            shapes: vec![vec![3, 1], vec![1, 4]],
            build: Box::new(|g, v| g.mul(v[0], v[1]).unwrap()),
            reference: Box::new(|x| (0..12).map(|i| x[0][i / 4] * x[1][i % 4]).collect()),
        },
        Case {
            name: "mul (3d by 2d)",
            shapes: vec![vec![2, 3, 1], vec![3, 2]],
            build: Box::new(|g, v| g.mul(v[0], v[1]).unwrap()),
            reference: Box::new(|x| {
                (0..12)
                    .map(|i| {
                        let (b, r, c) = (i / 6, (i / 2) % 3, i % 2);
                        x[0][b * 3 + r] * x[1][r * 2 + c]
                    })
                    .collect()
            }),
        },
        Case {
            name: "scale",
            shapes: vec![vec![5]],
            build: Box::new(|g, v| g.scale(v[0], -2.5)),
            reference: Box::new(|x| x[0].iter().map(|a| -2.5 * a).collect()),
        },
        Case {
            name: "add_scalar",
            shapes: vec![vec![5]],
            build: Box::new(|g, v| g.add_scalar(v[0], 0.75)),
            reference: Box::new(|x| x[0].iter().map(|a| a + 0.75).collect()),
        },
        Case {
            name: "clamp",
            shapes: vec![vec![8]],
            build: Box::new(|g, v| g.clamp(v[0], -0.5, 0.5)),
            reference: Box::new(|x| x[0].iter().map(|a| a.clamp(-0.5, 0.5)).collect()),
        },
        Case {
            name: "concat",
            shapes: vec![vec![2, 3], vec![2, 2]],
            build: Box::new(|g, v| g.concat(&[v[0], v[1]], 1).unwrap()),
            reference: Box::new(|x| {
                let mut out = Vec::new();
                for r in 0..2 {
                    out.extend_from_slice(&x[0][r * 3..r * 3 + 3]);
                    out.extend_from_slice(&x[1][r * 2..r * 2 + 2]);
                }
                out
            }),
        },
        Case {
            name: "slice",
            shapes: vec![vec![3, 5]],
            build: Box::new(|g, v| g.slice(v[0], 1, 1, 4).unwrap()),
            reference: Box::new(|x| {
                (0..3)
                    .flat_map(|r| x[0][r * 5 + 1..r * 5 + 4].to_vec())
                    .collect()
            }),
        },
        Case {
            name: "reshape",
            shapes: vec![vec![2, 6]],
            build: Box::new(|g, v| g.reshape(v[0], &[3, 2, 2]).unwrap()),
            reference: Box::new(|x| x[0].clone()),
        },
        Case {
            name: "broadcast",
            shapes: vec![vec![3]],
            build: Box::new(|g, v| g.broadcast_to(v[0], &[4, 3]).unwrap()),
            reference: Box::new(|x| (0..12).map(|i| x[0][i % 3]).collect()),
        },
        Case {
            name: "sum (all)",
            shapes: vec![vec![3, 4]],
            build: Box::new(|g, v| g.sum(v[0], None).unwrap()),
            reference: Box::new(|x| vec![x[0].iter().sum()]),
        },
        Case {
            name: "sum (axis 1 of 3d)",
            shapes: vec![vec![2, 3, 2]],
            build: Box::new(|g, v| g.sum(v[0], Some(1)).unwrap()),
            reference: Box::new(|x| {
                (0..4)
                    .map(|i| {
                        let (b, c) = (i / 2, i % 2);
                        (0..3).map(|r| x[0][b * 6 + r * 2 + c]).sum()
                    })
                    .collect()
            }),
        },
        Case {
            name: "mean (all)",
            shapes: vec![vec![3, 4]],
            build: Box::new(|g, v| g.mean(v[0], None).unwrap()),
            reference: Box::new(|x| vec![x[0].iter().sum::<f64>() / 12.0]),
        },
        Case {
            name: "mean (axis 0)",
            shapes: vec![vec![3, 4]],
            build: Box::new(|g, v| g.mean(v[0], Some(0)).unwrap()),
            reference: Box::new(|x| {
                (0..4)
                    .map(|c| (0..3).map(|r| x[0][r * 4 + c]).sum::<f64>() / 3.0)
                    .collect()
            }),
        },
        Case {
            name: "l2norm",
            shapes: vec![vec![4, 3]],
            build: Box::new(|g, v| g.l2norm(v[0]).unwrap()),
            reference: Box::new(|x| {
                x[0].chunks(3)
                    .map(|r| r.iter().map(|a| a * a).sum::<f64>().sqrt())
                    .collect()
            }),
        },
    ];
    for op in UnaryOp::ALL {
        cases.push(Case {
            name: op.name(),
            shapes: vec![vec![3, 4]],
            build: Box::new(move |g, v| g.unary(op, v[0])),
            reference: Box::new(move |x| x[0].iter().map(|&a| unary_ref(op, a)).collect()),
        });
    }
    cases
}

/// Runs every op case at three seeds; returns the number of scalars checked.
pub fn check_all_ops() -> Result<usize, String> {
    let mut n = 0;
    for case in all_cases() {
        for seed in 0..3 {
            n += check(&case, seed)?;
        }
    }
    Ok(n)
}

/// Two-layer perceptron, parameters as leaves; reference forward in f64.
pub fn check_perceptron() -> Result<usize, String> {
    let (batch, input, hidden, output) = (5, 3, 8, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x: Vec<f32> = (0..batch * input).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let target: Vec<f32> = (0..batch * output).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let shapes = [
        vec![input, hidden],
        vec![hidden],
        vec![hidden, output],
        vec![output],
    ];
    let params: Vec<Vec<f32>> = shapes
        .iter()
        .map(|s| {
            (0..s.iter().product::<usize>())
                .map(|_| rng.gen_range(-0.8..0.8))
                .collect()
        })
        .collect();

    let mut g = Graph::new();
    let xv = g.constant(Tensor::new([batch, input], x.clone()).unwrap());
    let tv = g.constant(Tensor::new([batch, output], target.clone()).unwrap());
    let pv: Vec<Var> = params
        .iter()
        .zip(&shapes)
        .map(|(p, s)| g.variable(Tensor::new(s.clone(), p.clone()).unwrap()))
        .collect();
    let h = g.matmul(xv, pv[0]).unwrap();
    let h = g.add(h, pv[1]).unwrap();
    let h = g.relu(h);
    let y = g.matmul(h, pv[2]).unwrap();
    let y = g.add(y, pv[3]).unwrap();
    let d = g.sub(y, tv).unwrap();
    let d2 = g.square(d);
    let loss = g.mean(d2, None).unwrap();
    let grads = g.backward(loss).unwrap();

    let reference = |p: &[Vec<f64>]| -> f64 {
        let mut total = 0.0;
        for b in 0..batch {
            let hid: Vec<f64> = (0..hidden)
                .map(|j| {
                    let z: f64 = (0..input)
                        .map(|i| x[b * input + i] as f64 * p[0][i * hidden + j])
                        .sum::<f64>()
                        + p[1][j];
                    z.max(0.0)
                })
                .collect();
            for o in 0..output {
                let yo: f64 = (0..hidden).map(|j| hid[j] * p[2][j * output + o]).sum::<f64>()
                    + p[3][o];
                total += (yo - target[b * output + o] as f64).powi(2);
            }
        }
        total / (batch * output) as f64
    };
    let base: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.iter().map(|&v| v as f64).collect())
        .collect();
    if (reference(&base) - g.value(loss).data()[0] as f64).abs() >= 1e-5 {
        return Err("perceptron forward disagrees with reference".into());
    }
    let mut checked = 0;
    for (k, var) in pv.iter().enumerate() {
        let analytic = grads.get(*var).unwrap();
        for i in 0..base[k].len() {
            let mut plus = base.clone();
            plus[k][i] += H;
            let mut minus = base.clone();
            minus[k][i] -= H;
            let numeric = (reference(&plus) - reference(&minus)) / (2.0 * H);
            let a = analytic.data()[i] as f64;
            if !close(a, numeric) {
                return Err(format!("param {k}[{i}]: {a} vs {numeric}"));
            }
            checked += 1;
        }
    }
    Ok(checked)
}
