use std::f32::consts::PI;

use dynrf_autodiff::{Graph, Tensor, Var};

use crate::error::Result;

/// Width of the encoding of a `dim`-vector.
pub fn encoded_len(dim: usize, num_freqs: usize, include_input: bool) -> usize {
    dim * (usize::from(include_input) + 2 * num_freqs)
}

/// `[v, sin(2^0 pi v), cos(2^0 pi v), ..., sin(2^(L-1) pi v), cos(2^(L-1) pi v)]`,
/// each block spanning every component of `v`.
pub fn positional_encode(v: &[f32], num_freqs: usize, include_input: bool) -> Vec<f32> {
    let mut out = Vec::with_capacity(encoded_len(v.len(), num_freqs, include_input));
    encode_into(v, num_freqs, include_input, &mut out);
    out
}

fn encode_into(v: &[f32], num_freqs: usize, include_input: bool, out: &mut Vec<f32>) {
    if include_input {
        out.extend_from_slice(v);
    }
    for k in 0..num_freqs {
        let freq = (1u64 << k) as f32 * PI;
        out.extend(v.iter().map(|x| (freq * x).sin()));
        out.extend(v.iter().map(|x| (freq * x).cos()));
    }
}

/// Row-wise encoding of a `[batch, dim]` var.
///
/// Constant inputs are encoded directly into a constant node; inputs that
/// carry gradient are built from differentiable sin/cos ops.
pub fn encode(g: &mut Graph, x: Var, num_freqs: usize, include_input: bool) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let (rows, dim) = (shape[0], shape[1]);
    let width = encoded_len(dim, num_freqs, include_input);
    if !g.requires_grad(x) {
        let mut data = Vec::with_capacity(rows * width);
        for row in g.value(x).data().chunks_exact(dim) {
            encode_into(row, num_freqs, include_input, &mut data);
        }
        return Ok(g.constant(Tensor::new([rows, width], data)?));
    }
    let mut parts = Vec::with_capacity(2 * num_freqs + 1);
    if include_input {
        parts.push(x);
    }
    for k in 0..num_freqs {
        let scaled = g.scale(x, (1u64 << k) as f32 * PI);
        parts.push(g.sin(scaled));
        parts.push(g.cos(scaled));
    }
    Ok(g.concat(&parts, 1)?)
}
