//! Layer algebra: same-padded temporal convolution, max pooling, fully
//! connected and ReLU stages.
//!
//! Activations are laid out `[batch, time, channels]` row-major. The batched
//! kernels are crate-internal; the public functions below are the
//! single-window forms.

use super::gemm::{gemm, transpose};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Geometry of a temporal convolution over a batch.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub time: usize,
    pub cin: usize,
    pub kernel: usize,
    pub filters: usize,
}

impl ConvDims {
    fn rows(&self) -> usize {
        self.batch * self.time
    }

    fn width(&self) -> usize {
        self.kernel * self.cin
    }
}

/// Unrolls each output position's receptive field into one row of `col`.
fn im2col(d: &ConvDims, input: &[f64], col: &mut Vec<f64>) {
    let pad = d.kernel / 2;
    let w = d.width();
    col.clear();
    col.resize(d.rows() * w, 0.0);
    for b in 0..d.batch {
        let sample = &input[b * d.time * d.cin..(b + 1) * d.time * d.cin];
        for t in 0..d.time {
            let row = &mut col[(b * d.time + t) * w..(b * d.time + t + 1) * w];
            for m in 0..d.kernel {
                let src = t + m;
                if src < pad || src - pad >= d.time {
                    continue;
                }
                let s = (src - pad) * d.cin;
                row[m * d.cin..(m + 1) * d.cin].copy_from_slice(&sample[s..s + d.cin]);
            }
        }
    }
}

/// `out = conv(input) + bias`; leaves the unrolled input in `col` for the
/// backward pass and uses `scratch` for the transposed kernel.
pub(crate) fn conv_forward_batch(
    d: &ConvDims,
    input: &[f64],
    kernels: &[f64],
    bias: &[f64],
    col: &mut Vec<f64>,
    scratch: &mut Vec<f64>,
    out: &mut Vec<f64>,
) {
    im2col(d, input, col);
    transpose(kernels, d.filters, d.width(), scratch);
    out.clear();
    out.resize(d.rows() * d.filters, 0.0);
    gemm(d.rows(), d.filters, d.width(), col, d.width(), 1, scratch, out, false);
    for row in out.chunks_exact_mut(d.filters) {
        for (x, b) in row.iter_mut().zip(bias) {
            *x += b;
        }
    }
}

/// Accumulates kernel and bias gradients; writes the input gradient when
/// `d_input` is given.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward_batch(
    d: &ConvDims,
    col: &[f64],
    kernels: &[f64],
    d_out: &[f64],
    d_kernels: &mut [f64],
    d_bias: &mut [f64],
    d_col: &mut Vec<f64>,
    d_input: Option<&mut Vec<f64>>,
) {
    let (rows, w, f) = (d.rows(), d.width(), d.filters);
    gemm(f, w, rows, d_out, 1, f, col, d_kernels, true);
    for row in d_out.chunks_exact(f) {
        for (g, x) in d_bias.iter_mut().zip(row) {
            *g += x;
        }
    }
    let Some(d_input) = d_input else {
        return;
    };
    d_col.clear();
    d_col.resize(rows * w, 0.0);
    gemm(rows, w, f, d_out, f, 1, kernels, d_col, false);
    d_input.clear();
    d_input.resize(d.batch * d.time * d.cin, 0.0);
    let pad = d.kernel / 2;
    for b in 0..d.batch {
        for t in 0..d.time {
            let row = &d_col[(b * d.time + t) * w..(b * d.time + t + 1) * w];
            for m in 0..d.kernel {
                let src = t + m;
                if src < pad || src - pad >= d.time {
                    continue;
                }
                let dst = (b * d.time + src - pad) * d.cin;
                for (g, x) in d_input[dst..dst + d.cin]
                    .iter_mut()
                    .zip(&row[m * d.cin..(m + 1) * d.cin])
                {
                    *g += x;
                }
            }
        }
    }
}

/// Non-overlapping max pooling along time. `argmax` receives, for every
/// output element, the flat input index that produced it (first maximum wins).
pub(crate) fn pool_forward_batch(
    batch: usize,
    time: usize,
    channels: usize,
    pool: usize,
    input: &[f64],
    out: &mut Vec<f64>,
    argmax: &mut Vec<usize>,
) {
    let t_out = time / pool;
    out.clear();
    argmax.clear();
    out.reserve(batch * t_out * channels);
    argmax.reserve(batch * t_out * channels);
    for b in 0..batch {
        for i in 0..t_out {
            for c in 0..channels {
                let mut best = (b * time + i * pool) * channels + c;
                for m in 1..pool {
                    let idx = (b * time + i * pool + m) * channels + c;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                argmax.push(best);
            }
        }
    }
}

pub(crate) fn pool_backward_batch(
    input_len: usize,
    argmax: &[usize],
    d_out: &[f64],
    d_input: &mut Vec<f64>,
) {
    d_input.clear();
    d_input.resize(input_len, 0.0);
    for (&i, g) in argmax.iter().zip(d_out) {
        d_input[i] += g;
    }
}

/// `out[b] = W x[b] + bias` with `W` shaped `units x n`.
pub(crate) fn fc_forward_batch(
    batch: usize,
    n: usize,
    units: usize,
    input: &[f64],
    weights: &[f64],
    bias: &[f64],
    scratch: &mut Vec<f64>,
    out: &mut Vec<f64>,
) {
    transpose(weights, units, n, scratch);
    out.clear();
    out.resize(batch * units, 0.0);
    gemm(batch, units, n, input, n, 1, scratch, out, false);
    for row in out.chunks_exact_mut(units) {
        for (x, b) in row.iter_mut().zip(bias) {
            *x += b;
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn fc_backward_batch(
    batch: usize,
    n: usize,
    units: usize,
    input: &[f64],
    weights: &[f64],
    d_out: &[f64],
    d_weights: &mut [f64],
    d_bias: &mut [f64],
    d_input: Option<&mut Vec<f64>>,
) {
    gemm(units, n, batch, d_out, 1, units, input, d_weights, true);
    for row in d_out.chunks_exact(units) {
        for (g, x) in d_bias.iter_mut().zip(row) {
            *g += x;
        }
    }
    if let Some(d_input) = d_input {
        d_input.clear();
        d_input.resize(batch * n, 0.0);
        gemm(batch, n, units, d_out, units, 1, weights, d_input, false);
    }
}

pub(crate) fn relu_in_place(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Masks `grad` where the ReLU output was not positive.
pub(crate) fn relu_backward_in_place(output: &[f64], grad: &mut [f64]) {
    for (g, &y) in grad.iter_mut().zip(output) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Same-padded correlation of a `time x channels` window with
/// `filters x kernel x channels` kernels.
pub fn conv_forward(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if input.rank() != 2 || kernels.rank() != 3 || bias.rank() != 1 {
        return Err(Error::Shape("conv expects [time, ch], [f, k, ch], [f]".into()));
    }
    let (time, cin) = (input.shape()[0], input.shape()[1]);
    let (filters, kernel) = (kernels.shape()[0], kernels.shape()[1]);
    kernels.expect_shape("conv kernels", &[filters, kernel, cin])?;
    bias.expect_shape("conv bias", &[filters])?;
    if kernel > time {
        return Err(Error::Shape(format!("kernel {kernel} longer than input {time}")));
    }
    let d = ConvDims {
        batch: 1,
        time,
        cin,
        kernel,
        filters,
    };
    let (mut col, mut scratch, mut out) = (Vec::new(), Vec::new(), Vec::new());
    conv_forward_batch(&d, input.data(), kernels.data(), bias.data(), &mut col, &mut scratch, &mut out);
    Tensor::new(vec![time, filters], out)
}

/// Output of [`maxpool_forward`] with the winning input positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    pub output: Tensor,
    /// Flat index into the input for each output element.
    pub argmax: Vec<usize>,
}

pub fn maxpool_forward(input: &Tensor, pool: usize) -> Result<Pooled> {
    if input.rank() != 2 {
        return Err(Error::Shape("maxpool expects [time, ch]".into()));
    }
    let (time, ch) = (input.shape()[0], input.shape()[1]);
    if pool == 0 || pool > time {
        return Err(Error::Shape(format!("pool {pool} invalid for time extent {time}")));
    }
    let (mut out, mut argmax) = (Vec::new(), Vec::new());
    pool_forward_batch(1, time, ch, pool, input.data(), &mut out, &mut argmax);
    Ok(Pooled {
        output: Tensor::new(vec![time / pool, ch], out)?,
        argmax,
    })
}

pub fn fc_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if weights.rank() != 2 {
        return Err(Error::Shape("fc weights must be [units, n]".into()));
    }
    let (units, n) = (weights.shape()[0], weights.shape()[1]);
    if input.len() != n {
        return Err(Error::Shape(format!("fc input has {} values, weights expect {n}", input.len())));
    }
    bias.expect_shape("fc bias", &[units])?;
    let (mut scratch, mut out) = (Vec::new(), Vec::new());
    fc_forward_batch(1, n, units, input.data(), weights.data(), bias.data(), &mut scratch, &mut out);
    Tensor::new(vec![units], out)
}

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    relu_in_place(out.data_mut());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv_difference_kernel() {
        let out = conv_forward(&t(&[3, 1], &[1.0, 2.0, 3.0]), &t(&[1, 3, 1], &[1.0, 0.0, -1.0]), &t(&[1], &[0.0])).unwrap();
        assert_eq!(out.at(&[1, 0]), -2.0);
        // zero padding at the edges
        assert_eq!(out.data(), &[-2.0, -2.0, 2.0]);
    }

    #[test]
    fn conv_identity_tap() {
        let x = t(&[4, 1], &[0.5, -1.0, 2.0, 7.0]);
        let out = conv_forward(&x, &t(&[1, 3, 1], &[0.0, 1.0, 0.0]), &t(&[1], &[0.0])).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn conv_shape_errors() {
        let x = t(&[2, 1], &[1.0, 2.0]);
        assert!(conv_forward(&x, &t(&[1, 3, 1], &[0.0; 3]), &t(&[1], &[0.0])).is_err());
        assert!(conv_forward(&x, &t(&[1, 1, 2], &[0.0; 2]), &t(&[1], &[0.0])).is_err());
    }

    #[test]
    fn pool_examples() {
        let p = maxpool_forward(&t(&[4, 1], &[1.0, 4.0, 2.0, 3.0]), 2).unwrap();
        assert_eq!(p.output.data(), &[4.0, 3.0]);
        assert_eq!(p.argmax, vec![1, 3]);
        let c = maxpool_forward(&t(&[5, 2], &[2.5; 10]), 2).unwrap();
        assert_eq!(c.output.shape(), &[2, 2]);
        assert!(c.output.data().iter().all(|&x| x == 2.5));
        assert!(maxpool_forward(&t(&[1, 1], &[1.0]), 2).is_err());
    }

    #[test]
    fn fc_examples() {
        let x = t(&[2], &[2.0, -3.0]);
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(fc_forward(&x, &eye, &t(&[2], &[0.0, 0.0])).unwrap().data(), &[2.0, -3.0]);
        let y = fc_forward(&t(&[2], &[1.0, 2.0]), &t(&[1, 2], &[1.0, 1.0]), &t(&[1], &[0.5])).unwrap();
        assert_eq!(y.data(), &[3.5]);
        let z = fc_forward(&x, &t(&[2, 2], &[0.0; 4]), &t(&[2], &[0.25, -1.0])).unwrap();
        assert_eq!(z.data(), &[0.25, -1.0]);
        assert!(fc_forward(&t(&[3], &[0.0; 3]), &eye, &t(&[2], &[0.0; 2])).is_err());
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&t(&[3], &[-2.0, 0.0, 3.0])).data(), &[0.0, 0.0, 3.0]);
        assert!(relu(&t(&[2], &[-1.0, -5.0])).data().iter().all(|&x| x == 0.0));
        let x = t(&[4], &[-0.3, 1.2, 0.0, -9.0]);
        assert_eq!(relu(&relu(&x)), relu(&x));
    }
}
