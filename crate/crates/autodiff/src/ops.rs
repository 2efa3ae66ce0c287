//! Numeric kernels shared by the forward and backward passes.

use crate::error::{AdError, Result};
use crate::tensor::{broadcast_index, is_suffix, numel, Tensor};

pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f32) -> f32 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Strided read-only matrix view for [`gemm`].
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    data: &'a [f32],
    row_stride: isize,
    col_stride: isize,
}

impl<'a> Mat<'a> {
    /// Row-major matrix with `cols` columns.
    pub fn row_major(data: &'a [f32], cols: usize) -> Self {
        Self {
            data,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    /// Transpose of a row-major matrix that has `cols` columns.
    pub fn transposed(data: &'a [f32], cols: usize) -> Self {
        Self {
            data,
            row_stride: 1,
            col_stride: cols as isize,
        }
    }
}

/// `out[m, n] = a[m, k] * b[k, n] + beta * out`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: Mat, b: Mat, out: &mut [f32], beta: f32) {
    assert_eq!(out.len(), m * n);
    assert!(a.data.len() >= m * k && b.data.len() >= k * n);
    // SAFETY: the asserts above bound every index the kernel touches: `a` is
    // read at (i, p) for i < m, p < k through its strides, which for both
    // row-major and transposed views of an m*k buffer stay below m*k; the
    // same holds for `b` with k*n, and `out` is a dense m*n row-major buffer.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Elementwise `f(a, b)` with both operands broadcast to `out_shape`.
pub(crate) fn zip_broadcast(
    a: &Tensor,
    b: &Tensor,
    out_shape: &[usize],
    f: impl Fn(f32, f32) -> f32,
) -> Tensor {
    let n = numel(out_shape);
    let (ad, bd) = (a.data(), b.data());
    let mut out = Vec::with_capacity(n);
    if a.shape() == out_shape && b.shape() == out_shape {
        out.extend(ad.iter().zip(bd).map(|(&x, &y)| f(x, y)));
    } else if a.shape() == out_shape && is_suffix(b.shape(), out_shape) {
        for chunk in ad.chunks_exact(bd.len()) {
            out.extend(chunk.iter().zip(bd).map(|(&x, &y)| f(x, y)));
        }
    } else if b.shape() == out_shape && is_suffix(a.shape(), out_shape) {
        for chunk in bd.chunks_exact(ad.len()) {
            out.extend(ad.iter().zip(chunk).map(|(&x, &y)| f(x, y)));
        }
    } else {
        let ia = broadcast_index(a.shape(), out_shape);
        let ib = broadcast_index(b.shape(), out_shape);
        out.extend(ia.iter().zip(&ib).map(|(&i, &j)| f(ad[i], bd[j])));
    }
    Tensor::from_parts(out_shape.to_vec(), out)
}

pub(crate) fn reduce_sum(t: &Tensor, axis: Option<usize>) -> Result<Tensor> {
    let Some(axis) = axis else {
        return Ok(Tensor::scalar(t.data().iter().sum()));
    };
    let shape = t.shape();
    if axis >= shape.len() {
        return Err(AdError::InvalidArgument {
            op: "sum",
            msg: format!("axis {axis} out of range for shape {shape:?}"),
        });
    }
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![0.0f32; outer * inner];
    for o in 0..outer {
        let dst = &mut out[o * inner..(o + 1) * inner];
        for j in 0..len {
            let src = &t.data()[(o * len + j) * inner..(o * len + j + 1) * inner];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape.remove(axis);
    Ok(Tensor::from_parts(out_shape, out))
}

/// Inverse of [`reduce_sum`] for gradients: repeats `g` along the reduced axis.
pub(crate) fn spread(g: &Tensor, in_shape: &[usize], axis: Option<usize>, factor: f32) -> Tensor {
    let Some(axis) = axis else {
        let v = g.data()[0] * factor;
        return Tensor::full(in_shape.to_vec(), v);
    };
    let outer: usize = in_shape[..axis].iter().product();
    let len = in_shape[axis];
    let inner: usize = in_shape[axis + 1..].iter().product();
    let mut data = Vec::with_capacity(numel(in_shape));
    for o in 0..outer {
        let src = &g.data()[o * inner..(o + 1) * inner];
        for _ in 0..len {
            data.extend(src.iter().map(|x| x * factor));
        }
    }
    Tensor::from_parts(in_shape.to_vec(), data)
}
